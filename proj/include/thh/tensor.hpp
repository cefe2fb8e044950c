#pragma once

#include <cstddef>
#include <vector>

namespace thh {

// Dense row-major 2-D buffer. Everything in the library is expressed as
// [rows, cols]: batches are rows, flattened channel-major signals are cols.
template <typename T>
struct TensorT {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    TensorT() = default;
    TensorT(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    std::size_t size() const { return data.size(); }
    T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }
    void fill(T v) { data.assign(data.size(), v); }
};

using Tensor = TensorT<float>;

} // namespace thh
