#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mqar/numerics.hpp"

namespace mqar {

struct AttentionOpts {
    bool causal = true;
    bool use_softmax = true;
    std::optional<SeqTensor> bias;  // N x N additive score bias
    size_t num_heads = 1;           // channel-split heads, per-head 1/sqrt(d/H) scale
    std::optional<double> scale;    // override for the 1/sqrt(d/H) score scale
};

struct AttentionParams {
    SeqTensor w_q, w_k, w_v;  // d x d
};

// y = softmax(q k^T / sqrt(d)) v with optional causal mask and score bias.
// With use_softmax off, masked scores are zeroed instead of -inf.
SeqTensor attention_forward(const SeqTensor& u, const AttentionParams& params,
                            const AttentionOpts& opts = {});

struct BaseConvParams {
    SeqTensor w;    // d x d
    SeqTensor b1;   // N x d
    SeqTensor b2;   // N x d
    FilterBank h;   // N x d
    bool residual = true;
};

// y = (u W + b1) .* (h * u + b2) [+ u]
SeqTensor baseconv_forward(const SeqTensor& u, const BaseConvParams& params);

struct ImplicitFilterParams {
    size_t emb_dim = 3;  // odd, >= 3: [t, Re, Im] positional features
    SeqTensor w1;        // emb_dim x hidden
    std::vector<double> bias1;
    SeqTensor w2;        // hidden x d
    std::vector<double> bias2;
};

// Positional features z = [t, Re(exp(-i f w)), Im(exp(-i f w))] fed through a
// two-layer ReLU MLP, one filter tap per position.
SeqTensor implicit_filter_features(size_t emb_dim, size_t seq_len);
FilterBank implicit_filter(const ImplicitFilterParams& params, size_t seq_len);

struct HyenaParams {
    size_t order = 1;                  // recurrence depth L
    SeqTensor w_proj;                  // d x (L+1)d
    FilterBank short_filter;           // taps x (L+1)d, causal (default length 3)
    std::vector<FilterBank> filters;   // L long filters, each N x d
};

// Projection to (L+1)d channels + short conv, split into p^1..p^L, v, then
// z^l = p^l .* (h^l * z^{l-1}).
SeqTensor hyena_forward(const SeqTensor& u, const HyenaParams& params);

struct RwkvParams {
    std::vector<double> mu;     // per-channel time-shift mix, in [0,1]
    SeqTensor w_proj;           // d x 3d -> q, k, v
    std::vector<double> decay;  // per-channel w controlling the long filter
};

// Time-shift conv [mu, 1-mu], linear to 3d, then
// z[:,t] = sigmoid(q[:,t]) .* (h[:,t] * (softmax(k) .* v)[:,t])
// with h(0,t) = 1 and h(i,t) = exp(w_t * (i-1)) for i >= 1.
SeqTensor rwkv_forward(const SeqTensor& u, const RwkvParams& params);
FilterBank rwkv_decay_filter(const std::vector<double>& decay, size_t seq_len);

struct RetNetParams {
    double gamma = 1.0;  // in (0, 1]
    SeqTensor w_a, w_c, w_v;  // d x d
};

// Recurrent form: z^n = gamma z^{n-1} + A[n,:]^T V[n,:]; Out[n,:] = C[n,:] z^n.
SeqTensor retnet_forward(const SeqTensor& u, const RetNetParams& params);
// Closed form of the same state, exposed for cross-checking:
// z^n = W_A^T (sum_i gamma^{n-i} u^T[:,i] u[i,:]) W_V.
SeqTensor retnet_forward_closed_form(const SeqTensor& u, const RetNetParams& params);

enum class WindowMode : uint8_t { sliding, blocked };

// sliding: token i attends to max(0, i-w+1)..i.
// blocked: ceil(N/w) blocks, causal attention within each block.
SeqTensor windowed_attention(const SeqTensor& u, const AttentionParams& params, size_t window,
                             WindowMode mode);

enum class SelectorKind : uint8_t { full, random, programmatic, learned };

struct SelectorSpec {
    SelectorKind kind = SelectorKind::full;
    double p = 1.0;                  // random: Bernoulli probability
    std::vector<double> weight;      // learned: d scoring vector
    size_t k = 0;                    // learned: selection budget
    double noise_scale = 0.0;        // learned: train-time Gaussian noise
    uint64_t seed = 0;               // rng-bearing selectors
};

struct SelectiveResult {
    SeqTensor y;
    std::vector<double> mask;  // f(u)[i] per position
    double aux_loss = 0.0;
};

// y[i,:] = causal softmax attention row i scaled by f(u)[i]; the learned
// selector scores sigma(u[i,:] . w), adds seeded Gaussian noise, keeps the
// top-k, and reports aux = max(0, sum_i sigma_i - k)/N.
SelectiveResult selective_attention(const SeqTensor& u, const TokenSequence& tokens,
                                    const AttentionParams& params, const SelectorSpec& sel);

}  // namespace mqar
