#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mqar {

// Row-major dense matrix. Rows index time steps, columns index channels,
// matching u[i,:] style indexing throughout.
template <typename T>
struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(size_t r, size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(size_t i, size_t j) { return data[i * cols + j]; }
    const T& operator()(size_t i, size_t j) const { return data[i * cols + j]; }

    T* row(size_t i) { return data.data() + i * cols; }
    const T* row(size_t i) const { return data.data() + i * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

using SeqTensor = Mat<double>;

// d convolution filters, one per channel, stored like a SeqTensor:
// row = tap index, column = channel, so h(j,t) is tap j of channel t.
using FilterBank = Mat<double>;

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void require_same_shape(const SeqTensor& a, const SeqTensor& b, const char* what) {
    require(a.rows == b.rows && a.cols == b.cols,
            std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                std::to_string(b.cols) + ")");
}

}  // namespace mqar
