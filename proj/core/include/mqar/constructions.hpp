#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mqar/mixers.hpp"
#include "mqar/numerics.hpp"
#include "mqar/oracle.hpp"

namespace mqar {

enum class ConvMode : uint8_t { causal, circular };

// One exact-weight gated-convolution layer. Construction stacks never use the
// residual path.
struct BaseConvLayer {
    SeqTensor w;       // d x d
    SeqTensor b1;      // N x d
    SeqTensor b2;      // N x d
    FilterBank filter; // N x d
    ConvMode mode = ConvMode::causal;
};

struct BaseConvStack {
    std::vector<BaseConvLayer> layers;

    SeqTensor evaluate(const SeqTensor& input) const;
    size_t depth() const { return layers.size(); }
};

// y shifted down by s (zeros enter at the top); one layer.
BaseConvStack build_shift_down(size_t s, size_t seq_len, size_t dim);
// y shifted up by s (zeros enter at the bottom); three layers, the first one
// circular.
BaseConvStack build_shift_up(size_t s, size_t seq_len, size_t dim);

// Input layout [x; S; 0] with x, S of n rows. Output [1^n; S+x; 0]; two layers.
BaseConvStack build_add(size_t block_rows, size_t seq_len, size_t dim);

// Input layout [x (n rows); 0^s; v (m rows); 0]. Output [p .* (x conv h); v; 0];
// five layers (two gating layers plus an up-shift). The filter must satisfy
// len(h) <= min(s, t) + 1 so the convolved blocks fit their windows, and the
// stack needs seq_len >= 3n + 2s + 2m + t of working room.
BaseConvStack build_remember(size_t n, size_t m, size_t s, size_t t, const FilterBank& conv_filter,
                             const SeqTensor& gate, size_t seq_len, size_t dim);

// Runs one Hyena gating stage (order 1) through the remember construction and
// returns the first N rows, which match hyena_forward(u) elementwise.
SeqTensor simulate_hyena_layer(const HyenaParams& params, const SeqTensor& u);

// Key/value/query triples laid out one role per row: row 3i is the key of
// triple i in channels [0,c), row 3i+1 the value in [c,2c), row 3i+2 the
// query in [2c,3c).
struct TripleEncoding {
    size_t num_triples = 0;
    size_t vocab = 0;  // c
    SeqTensor onehot;  // 3T x 3c

    static TripleEncoding from_triples(const std::vector<Triple>& triples, size_t vocab);
};

// Exact two-layer softmax-free attention solver. Parameter matrices depend
// only on the vocabulary size, never on the sequence length.
struct AttentionSolver {
    size_t vocab = 0;
    SeqTensor w_v1;              // layer 1 value projection (3c x 3c)
    SeqTensor w_q2, w_k2, w_v2;  // layer 2 projections (3c x 3c)

    explicit AttentionSolver(size_t vocab);

    // per-query value token, or nothing when the output row decodes to zero
    std::vector<std::optional<int64_t>> solve(const TripleEncoding& enc) const;
};

inline std::vector<std::optional<int64_t>> solve_mqar_attention(const TripleEncoding& enc) {
    return AttentionSolver(enc.vocab).solve(enc);
}

// Sum of per-channel cyclic autocorrelations of a one-hot encoding, lag 0
// zeroed; returns the t lags with the largest mass, ties toward smaller lag.
std::vector<size_t> top_shifts(const SeqTensor& u_onehot, size_t t);

struct AutocorrResult {
    std::vector<std::optional<int64_t>> answers;  // per query
    std::vector<size_t> shifts_used;              // row-distance shifts
};

// Input-dependent-kernel solver over one-hot rows (N x c). Builds the two
// gated layers y = Q .* (h_k * K), z = E .* (h_v * V) over a t-block stack of
// row shifts, sums the blocks, and decodes values at query rows. Shifts can be
// supplied (row distances, each in [1, N)) or derived via top_shifts.
AutocorrResult solve_mqar_autocorr(const SeqTensor& onehot_rows, size_t t,
                                   const std::vector<size_t>& shifts = {});

}  // namespace mqar
