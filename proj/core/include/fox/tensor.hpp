#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fox/rng.hpp"

namespace fox {

// Dense row-major tensor owning its storage.
template <class T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(element_count(shape_)), T(0));
    }

    TensorT(std::initializer_list<std::int64_t> shape, std::vector<T> data)
        : shape_(shape), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != element_count(shape_))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static TensorT zeros(std::vector<std::int64_t> shape) { return TensorT(std::move(shape)); }

    static TensorT randn(std::vector<std::int64_t> shape, RandomSource& rng, double stddev) {
        TensorT t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.next_normal() * stddev);
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T& at2(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    const T& at2(std::int64_t i, std::int64_t j) const {
        return data_[static_cast<std::size_t>(i * shape_[1] + j)];
    }

    void fill(T v) { data_.assign(data_.size(), v); }

    static std::int64_t element_count(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (std::int64_t d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor: shape dimensions must be positive");
            n *= d;
        }
        return n;
    }

private:
    std::vector<std::int64_t> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;

}  // namespace fox
