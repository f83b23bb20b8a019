#pragma once

#include <string>
#include <vector>

#include "fox/config.hpp"
#include "fox/params.hpp"

#include <json.hpp>

namespace fox {

// Checkpoint layout: "<stem>.json" carries the config and a named tensor
// table (shape + byte offset), "<stem>.bin" is the raw little-endian
// float32 blob the table points into. load(save(p)) is bit-identical.

void save_checkpoint(const std::string& stem, const ParameterSet& params,
                     const ModelConfig& config);

struct LoadedCheckpoint {
    ModelConfig config;
    ParameterSet params;
};

LoadedCheckpoint load_checkpoint(const std::string& stem);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Raw float32 blob helpers shared with the optimizer-state checkpoint.
namespace blob {

struct Entry {
    std::string name;
    std::vector<std::int64_t> shape;
    const float* data;
    std::int64_t elements;
};

// Writes entries back to back; returns the tensor table (name/shape/offset).
nlohmann::json write(const std::string& path, const std::vector<Entry>& entries);

// Reads one named tensor from a blob previously written by write().
void read_into(const std::string& path, const nlohmann::json& table, const std::string& name,
               float* dst, std::int64_t elements);

}  // namespace blob

}  // namespace fox
