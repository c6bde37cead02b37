#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "mqar/tensor.hpp"

namespace mqar {

using TokenSequence = std::vector<int32_t>;

// In-place iterative radix-2 FFT over complex doubles. n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

// Per-channel causal (linear, truncated) convolution:
//   y(i,t) = sum_{j=0..i} h(j,t) * u(i-j,t)
// The fast path pads to a length-2N transform; the direct O(N^2) path is always
// available and serves as the test oracle.
SeqTensor causal_conv(const SeqTensor& u, const FilterBank& h);
SeqTensor causal_conv_direct(const SeqTensor& u, const FilterBank& h);
SeqTensor causal_conv_fft(const SeqTensor& u, const FilterBank& h);

// Per-channel circular convolution: y(i,t) = sum_j h(j,t) * u((i-j) mod N, t).
SeqTensor circular_conv(const SeqTensor& u, const FilterBank& h);

// Cyclic autocorrelation: w[s] = sum_i v[i] * v[(i+s) mod N]; w[0] = |v|^2.
std::vector<double> autocorrelation(const std::vector<double>& v);

// Row-wise softmax with max subtraction. -inf entries get probability zero.
SeqTensor softmax_rows(const SeqTensor& m);

// Row i = standard basis vector of token i. Rejects out-of-range tokens.
SeqTensor one_hot_embed(const TokenSequence& tokens, size_t vocab);

// Dense helpers shared by the mixers and constructions.
// matmul: (n x k) * (k x m) -> (n x m)
SeqTensor matmul(const SeqTensor& a, const SeqTensor& b);
SeqTensor transpose(const SeqTensor& a);
SeqTensor hadamard(const SeqTensor& a, const SeqTensor& b);
SeqTensor add(const SeqTensor& a, const SeqTensor& b);

double max_abs_diff(const SeqTensor& a, const SeqTensor& b);

}  // namespace mqar
