#include "mqar/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace mqar {

namespace {

size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

void check_conv_shapes(const SeqTensor& u, const FilterBank& h) {
    require(u.rows >= 1 && u.cols >= 1, "conv: empty input");
    require(h.rows == u.rows, "conv: filter length " + std::to_string(h.rows) +
                                  " != sequence length " + std::to_string(u.rows));
    require(h.cols == u.cols, "conv: filter channels " + std::to_string(h.cols) +
                                  " != input channels " + std::to_string(u.cols));
}

}  // namespace

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    if (n <= 1) return;
    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                std::complex<double> x = a[i + j];
                std::complex<double> y = a[i + j + len / 2] * w;
                a[i + j] = x + y;
                a[i + j + len / 2] = x - y;
                w *= wl;
            }
        }
    }
    if (inverse) {
        double inv = 1.0 / static_cast<double>(n);
        for (auto& v : a) v *= inv;
    }
}

SeqTensor causal_conv_direct(const SeqTensor& u, const FilterBank& h) {
    check_conv_shapes(u, h);
    const size_t n = u.rows, d = u.cols;
    SeqTensor y(n, d);
    for (size_t t = 0; t < d; ++t) {
        for (size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (size_t j = 0; j <= i; ++j) acc += h(j, t) * u(i - j, t);
            y(i, t) = acc;
        }
    }
    return y;
}

SeqTensor causal_conv_fft(const SeqTensor& u, const FilterBank& h) {
    check_conv_shapes(u, h);
    const size_t n = u.rows, d = u.cols;
    // fft_size = 2 * seqlen, rounded up to a power of two for the radix-2 kernel
    const size_t m = next_pow2(2 * n);
    SeqTensor y(n, d);
    std::vector<std::complex<double>> fu(m), fh(m);
    for (size_t t = 0; t < d; ++t) {
        std::fill(fu.begin(), fu.end(), std::complex<double>(0.0, 0.0));
        std::fill(fh.begin(), fh.end(), std::complex<double>(0.0, 0.0));
        for (size_t i = 0; i < n; ++i) {
            fu[i] = u(i, t);
            fh[i] = h(i, t);
        }
        fft_inplace(fu, false);
        fft_inplace(fh, false);
        for (size_t i = 0; i < m; ++i) fu[i] *= fh[i];
        fft_inplace(fu, true);
        for (size_t i = 0; i < n; ++i) y(i, t) = fu[i].real();
    }
    return y;
}

SeqTensor causal_conv(const SeqTensor& u, const FilterBank& h) {
    return u.rows >= 32 ? causal_conv_fft(u, h) : causal_conv_direct(u, h);
}

SeqTensor circular_conv(const SeqTensor& u, const FilterBank& h) {
    check_conv_shapes(u, h);
    const size_t n = u.rows, d = u.cols;
    SeqTensor y(n, d);
    if (n < 32) {
        for (size_t t = 0; t < d; ++t)
            for (size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (size_t j = 0; j < n; ++j) acc += h(j, t) * u((i + n - j) % n, t);
                y(i, t) = acc;
            }
        return y;
    }
    // length-2N linear transform, fold the tail back (mod X^N - 1)
    SeqTensor lin = causal_conv_fft(u, h);
    std::vector<std::complex<double>> fu, fh;
    const size_t m = next_pow2(2 * n);
    fu.assign(m, {0.0, 0.0});
    fh.assign(m, {0.0, 0.0});
    for (size_t t = 0; t < d; ++t) {
        std::fill(fu.begin(), fu.end(), std::complex<double>(0.0, 0.0));
        std::fill(fh.begin(), fh.end(), std::complex<double>(0.0, 0.0));
        for (size_t i = 0; i < n; ++i) {
            fu[i] = u(i, t);
            fh[i] = h(i, t);
        }
        fft_inplace(fu, false);
        fft_inplace(fh, false);
        for (size_t i = 0; i < m; ++i) fu[i] *= fh[i];
        fft_inplace(fu, true);
        for (size_t i = 0; i < n; ++i) {
            double v = fu[i].real();
            if (i + n < 2 * n - 1) v += fu[i + n].real();
            y(i, t) = v;
        }
    }
    return y;
}

std::vector<double> autocorrelation(const std::vector<double>& v) {
    const size_t n = v.size();
    require(n >= 1, "autocorrelation: empty input");
    std::vector<double> w(n, 0.0);
    for (size_t s = 0; s < n; ++s) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += v[i] * v[(i + s) % n];
        w[s] = acc;
    }
    return w;
}

SeqTensor softmax_rows(const SeqTensor& m) {
    SeqTensor y(m.rows, m.cols);
    for (size_t i = 0; i < m.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < m.cols; ++j) mx = std::max(mx, m(i, j));
        if (!std::isfinite(mx)) {
            // whole row masked: define as uniform to keep rows summing to one
            for (size_t j = 0; j < m.cols; ++j) y(i, j) = 1.0 / static_cast<double>(m.cols);
            continue;
        }
        double sum = 0.0;
        for (size_t j = 0; j < m.cols; ++j) {
            double e = std::exp(m(i, j) - mx);
            y(i, j) = e;
            sum += e;
        }
        for (size_t j = 0; j < m.cols; ++j) y(i, j) /= sum;
    }
    return y;
}

SeqTensor one_hot_embed(const TokenSequence& tokens, size_t vocab) {
    SeqTensor y(tokens.size(), vocab);
    for (size_t i = 0; i < tokens.size(); ++i) {
        require(tokens[i] >= 0 && static_cast<size_t>(tokens[i]) < vocab,
                "one_hot_embed: token " + std::to_string(tokens[i]) + " out of range at row " +
                    std::to_string(i));
        y(i, static_cast<size_t>(tokens[i])) = 1.0;
    }
    return y;
}

SeqTensor matmul(const SeqTensor& a, const SeqTensor& b) {
    require(a.cols == b.rows, "matmul: inner dimensions " + std::to_string(a.cols) + " vs " +
                                  std::to_string(b.rows));
    SeqTensor y(a.rows, b.cols);
    for (size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* yr = y.row(i);
        for (size_t k = 0; k < a.cols; ++k) {
            double av = ar[k];
            if (av == 0.0) continue;
            const double* br = b.row(k);
            for (size_t j = 0; j < b.cols; ++j) yr[j] += av * br[j];
        }
    }
    return y;
}

SeqTensor transpose(const SeqTensor& a) {
    SeqTensor y(a.cols, a.rows);
    for (size_t i = 0; i < a.rows; ++i)
        for (size_t j = 0; j < a.cols; ++j) y(j, i) = a(i, j);
    return y;
}

SeqTensor hadamard(const SeqTensor& a, const SeqTensor& b) {
    require_same_shape(a, b, "hadamard");
    SeqTensor y(a.rows, a.cols);
    for (size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] * b.data[i];
    return y;
}

SeqTensor add(const SeqTensor& a, const SeqTensor& b) {
    require_same_shape(a, b, "add");
    SeqTensor y(a.rows, a.cols);
    for (size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
}

double max_abs_diff(const SeqTensor& a, const SeqTensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace mqar
