#include "fox/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fox {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

namespace blob {

namespace {

void put_le32(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_le32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

nlohmann::json write(const std::string& path, const std::vector<Entry>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    nlohmann::json table = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const auto& e : entries) {
        table.push_back({{"name", e.name},
                         {"shape", e.shape},
                         {"offset", offset},
                         {"elements", e.elements}});
        if constexpr (std::endian::native == std::endian::little) {
            os.write(reinterpret_cast<const char*>(e.data),
                     static_cast<std::streamsize>(e.elements) * 4);
        } else {
            for (std::int64_t i = 0; i < e.elements; ++i)
                put_le32(os, std::bit_cast<std::uint32_t>(e.data[i]));
        }
        offset += e.elements * 4;
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
    return table;
}

void read_into(const std::string& path, const nlohmann::json& table, const std::string& name,
               float* dst, std::int64_t elements) {
    for (const auto& row : table) {
        if (row.at("name").get<std::string>() != name) continue;
        if (row.at("elements").get<std::int64_t>() != elements)
            throw std::runtime_error("checkpoint: element count mismatch for " + name);
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("checkpoint: cannot open blob: " + path);
        is.seekg(row.at("offset").get<std::int64_t>());
        if constexpr (std::endian::native == std::endian::little) {
            is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(elements) * 4);
        } else {
            std::vector<unsigned char> buf(static_cast<std::size_t>(elements) * 4);
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
            for (std::int64_t i = 0; i < elements; ++i)
                dst[i] = std::bit_cast<float>(get_le32(buf.data() + i * 4));
        }
        if (!is) throw std::runtime_error("checkpoint: short read for " + name);
        return;
    }
    throw std::runtime_error("checkpoint: tensor not found: " + name);
}

}  // namespace blob

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"hidden_dim", c.hidden_dim},
            {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},
            {"n_kv_heads", c.n_kv_heads},
            {"head_dim", c.head_dim},
            {"ffn_hidden_dim", c.ffn_hidden_dim},
            {"max_seq_len", c.max_seq_len},
            {"rope_theta", c.rope_theta},
            {"norm_eps", c.norm_eps},
            {"tie_embeddings", c.tie_embeddings}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::int64_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::int64_t>();
    c.n_layers = j.at("n_layers").get<std::int64_t>();
    c.n_heads = j.at("n_heads").get<std::int64_t>();
    c.n_kv_heads = j.at("n_kv_heads").get<std::int64_t>();
    c.head_dim = j.at("head_dim").get<std::int64_t>();
    c.ffn_hidden_dim = j.at("ffn_hidden_dim").get<std::int64_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::int64_t>();
    c.rope_theta = j.at("rope_theta").get<double>();
    c.norm_eps = j.at("norm_eps").get<double>();
    c.tie_embeddings = j.at("tie_embeddings").get<bool>();
    c.validate();
    return c;
}

namespace {

std::string basename_of(const std::string& path) {
    auto pos = path.find_last_of('/');
    return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace

void save_checkpoint(const std::string& stem, const ParameterSet& params,
                     const ModelConfig& config) {
    std::vector<blob::Entry> entries;
    const_cast<ParameterSet&>(params).visit([&](const std::string& name, Tensor& t) {
        entries.push_back({name, t.shape(), t.data(), t.size()});
    });
    nlohmann::json table = blob::write(stem + ".bin", entries);
    nlohmann::json manifest = {{"format", "fox-checkpoint"},
                               {"version", 1},
                               {"config", config_to_json(config)},
                               {"blob", basename_of(stem) + ".bin"},
                               {"tensors", table}};
    std::ofstream os(stem + ".json", std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + stem + ".json");
    os << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& stem) {
    std::ifstream is(stem + ".json");
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + stem + ".json");
    nlohmann::json manifest = nlohmann::json::parse(is);
    if (manifest.at("format").get<std::string>() != "fox-checkpoint")
        throw std::runtime_error("checkpoint: unrecognized format tag");
    LoadedCheckpoint out;
    out.config = config_from_json(manifest.at("config"));
    out.params = init_parameters<float>(out.config, 0);
    const std::string dir =
        stem.find_last_of('/') == std::string::npos ? "" : stem.substr(0, stem.find_last_of('/') + 1);
    const std::string blob_path = dir + manifest.at("blob").get<std::string>();
    const auto& table = manifest.at("tensors");
    out.params.visit([&](const std::string& name, Tensor& t) {
        blob::read_into(blob_path, table, name, t.data(), t.size());
    });
    return out;
}

}  // namespace fox
