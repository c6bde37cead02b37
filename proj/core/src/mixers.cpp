#include "mqar/mixers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mqar/rng.hpp"

namespace mqar {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_square(const SeqTensor& w, size_t d, const char* name) {
    require(w.rows == d && w.cols == d,
            std::string(name) + ": expected " + std::to_string(d) + "x" + std::to_string(d));
}

}  // namespace

SeqTensor attention_forward(const SeqTensor& u, const AttentionParams& params,
                            const AttentionOpts& opts) {
    const size_t n = u.rows, d = u.cols;
    check_square(params.w_q, d, "attention w_q");
    check_square(params.w_k, d, "attention w_k");
    check_square(params.w_v, d, "attention w_v");
    require(opts.num_heads >= 1 && d % opts.num_heads == 0,
            "attention: head count must divide d");
    if (opts.bias)
        require(opts.bias->rows == n && opts.bias->cols == n, "attention: bias must be NxN");

    SeqTensor q = matmul(u, params.w_q);
    SeqTensor k = matmul(u, params.w_k);
    SeqTensor v = matmul(u, params.w_v);

    const size_t heads = opts.num_heads;
    const size_t hd = d / heads;
    const double scale = opts.scale ? *opts.scale : 1.0 / std::sqrt(static_cast<double>(hd));

    SeqTensor y(n, d);
    SeqTensor scores(n, n);
    for (size_t h = 0; h < heads; ++h) {
        const size_t off = h * hd;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (size_t c = 0; c < hd; ++c) acc += q(i, off + c) * k(j, off + c);
                acc *= scale;
                if (opts.bias) acc += (*opts.bias)(i, j);
                scores(i, j) = acc;
            }
        if (opts.causal) {
            for (size_t i = 0; i < n; ++i)
                for (size_t j = i + 1; j < n; ++j)
                    scores(i, j) =
                        opts.use_softmax ? -std::numeric_limits<double>::infinity() : 0.0;
        }
        SeqTensor w = opts.use_softmax ? softmax_rows(scores) : scores;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                double wij = w(i, j);
                if (wij == 0.0) continue;
                for (size_t c = 0; c < hd; ++c) y(i, off + c) += wij * v(j, off + c);
            }
    }
    return y;
}

SeqTensor baseconv_forward(const SeqTensor& u, const BaseConvParams& params) {
    const size_t n = u.rows, d = u.cols;
    check_square(params.w, d, "baseconv w");
    require(params.b1.rows == n && params.b1.cols == d, "baseconv b1: expected Nxd");
    require(params.b2.rows == n && params.b2.cols == d, "baseconv b2: expected Nxd");

    SeqTensor gate = add(matmul(u, params.w), params.b1);
    SeqTensor conv = add(causal_conv(u, params.h), params.b2);
    SeqTensor y = hadamard(gate, conv);
    if (params.residual) y = add(y, u);
    return y;
}

SeqTensor implicit_filter_features(size_t emb_dim, size_t seq_len) {
    require(emb_dim >= 3 && emb_dim % 2 == 1, "implicit filter: emb_dim must be odd and >= 3");
    const size_t bands = (emb_dim - 1) / 2;
    SeqTensor z(seq_len, emb_dim);
    for (size_t i = 0; i < seq_len; ++i) {
        double t = seq_len > 1 ? static_cast<double>(i) / static_cast<double>(seq_len - 1) : 0.0;
        double w = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(seq_len);
        z(i, 0) = t;
        for (size_t b = 0; b < bands; ++b) {
            double f = bands > 1 ? 1e-4 + (static_cast<double>(bands - 1) - 1e-4) *
                                              static_cast<double>(b) /
                                              static_cast<double>(bands - 1)
                                 : 1e-4;
            z(i, 1 + b) = std::cos(f * w);          // Re(exp(-i f w))
            z(i, 1 + bands + b) = -std::sin(f * w); // Im(exp(-i f w))
        }
    }
    return z;
}

FilterBank implicit_filter(const ImplicitFilterParams& params, size_t seq_len) {
    SeqTensor z = implicit_filter_features(params.emb_dim, seq_len);
    require(params.w1.rows == params.emb_dim, "implicit filter: w1 rows must equal emb_dim");
    require(params.bias1.size() == params.w1.cols, "implicit filter: bias1 size");
    require(params.w2.rows == params.w1.cols, "implicit filter: w2 rows must equal hidden");
    require(params.bias2.size() == params.w2.cols, "implicit filter: bias2 size");

    SeqTensor hidden = matmul(z, params.w1);
    for (size_t i = 0; i < hidden.rows; ++i)
        for (size_t j = 0; j < hidden.cols; ++j)
            hidden(i, j) = std::max(0.0, hidden(i, j) + params.bias1[j]);
    FilterBank filt = matmul(hidden, params.w2);
    for (size_t i = 0; i < filt.rows; ++i)
        for (size_t j = 0; j < filt.cols; ++j) filt(i, j) += params.bias2[j];
    return filt;
}

namespace {

// causal conv with a short filter given as taps x channels (taps <= N)
SeqTensor short_conv(const SeqTensor& u, const FilterBank& taps) {
    require(taps.cols == u.cols, "short_conv: channel mismatch");
    require(taps.rows <= u.rows, "short_conv: filter longer than sequence");
    FilterBank full(u.rows, u.cols);
    for (size_t j = 0; j < taps.rows; ++j)
        for (size_t t = 0; t < taps.cols; ++t) full(j, t) = taps(j, t);
    return causal_conv(u, full);
}

}  // namespace

SeqTensor hyena_forward(const SeqTensor& u, const HyenaParams& params) {
    const size_t n = u.rows, d = u.cols, order = params.order;
    require(order >= 1, "hyena: order must be >= 1");
    require(params.w_proj.rows == d && params.w_proj.cols == (order + 1) * d,
            "hyena: w_proj must be d x (L+1)d");
    require(params.filters.size() == order, "hyena: need one long filter per stage");

    SeqTensor projected = matmul(u, params.w_proj);
    SeqTensor z = short_conv(projected, params.short_filter);

    // split into p^1..p^L, v
    auto slice = [&](size_t stage) {
        SeqTensor s(n, d);
        for (size_t i = 0; i < n; ++i)
            for (size_t c = 0; c < d; ++c) s(i, c) = z(i, stage * d + c);
        return s;
    };
    SeqTensor state = slice(order);  // v
    for (size_t l = 0; l < order; ++l) {
        const FilterBank& h = params.filters[l];
        require(h.rows == n && h.cols == d, "hyena: long filter must be N x d");
        state = hadamard(slice(l), causal_conv(state, h));
    }
    return state;
}

FilterBank rwkv_decay_filter(const std::vector<double>& decay, size_t seq_len) {
    FilterBank h(seq_len, decay.size());
    for (size_t t = 0; t < decay.size(); ++t) {
        h(0, t) = 1.0;  // current token passes unattenuated
        for (size_t i = 1; i < seq_len; ++i)
            h(i, t) = std::exp(decay[t] * static_cast<double>(i - 1));
    }
    return h;
}

SeqTensor rwkv_forward(const SeqTensor& u, const RwkvParams& params) {
    const size_t n = u.rows, d = u.cols;
    require(params.mu.size() == d, "rwkv: mu must have d entries");
    require(params.decay.size() == d, "rwkv: decay must have d entries");
    require(params.w_proj.rows == d && params.w_proj.cols == 3 * d, "rwkv: w_proj must be d x 3d");
    for (double m : params.mu) require(m >= 0.0 && m <= 1.0, "rwkv: mu must be in [0,1]");

    FilterBank shift(2, d);
    for (size_t t = 0; t < d; ++t) {
        shift(0, t) = params.mu[t];
        shift(1, t) = 1.0 - params.mu[t];
    }
    SeqTensor shifted = short_conv(u, shift);
    SeqTensor proj = matmul(shifted, params.w_proj);

    SeqTensor q(n, d), k(n, d), v(n, d);
    for (size_t i = 0; i < n; ++i)
        for (size_t c = 0; c < d; ++c) {
            q(i, c) = proj(i, c);
            k(i, c) = proj(i, d + c);
            v(i, c) = proj(i, 2 * d + c);
        }

    SeqTensor gated = hadamard(softmax_rows(k), v);
    SeqTensor conv = causal_conv(gated, rwkv_decay_filter(params.decay, n));
    SeqTensor y(n, d);
    for (size_t i = 0; i < n; ++i)
        for (size_t c = 0; c < d; ++c) y(i, c) = sigmoid(q(i, c)) * conv(i, c);
    return y;
}

SeqTensor retnet_forward(const SeqTensor& u, const RetNetParams& params) {
    const size_t n = u.rows, d = u.cols;
    require(params.gamma > 0.0 && params.gamma <= 1.0, "retnet: gamma must be in (0,1]");
    check_square(params.w_a, d, "retnet w_a");
    check_square(params.w_c, d, "retnet w_c");
    check_square(params.w_v, d, "retnet w_v");

    SeqTensor a = matmul(u, params.w_a);
    SeqTensor c = matmul(u, params.w_c);
    SeqTensor v = matmul(u, params.w_v);

    SeqTensor state(d, d);  // z^n
    SeqTensor out(n, d);
    for (size_t step = 0; step < n; ++step) {
        for (size_t r = 0; r < d; ++r)
            for (size_t col = 0; col < d; ++col)
                state(r, col) = params.gamma * state(r, col) + a(step, r) * v(step, col);
        for (size_t col = 0; col < d; ++col) {
            double acc = 0.0;
            for (size_t r = 0; r < d; ++r) acc += c(step, r) * state(r, col);
            out(step, col) = acc;
        }
    }
    return out;
}

SeqTensor retnet_forward_closed_form(const SeqTensor& u, const RetNetParams& params) {
    const size_t n = u.rows, d = u.cols;
    SeqTensor c = matmul(u, params.w_c);
    SeqTensor out(n, d);
    SeqTensor moment(d, d);  // sum_i gamma^{n-i} u^T[:,i] u[i,:]
    for (size_t step = 0; step < n; ++step) {
        for (size_t r = 0; r < d; ++r)
            for (size_t col = 0; col < d; ++col)
                moment(r, col) = params.gamma * moment(r, col) + u(step, r) * u(step, col);
        SeqTensor z = matmul(matmul(transpose(params.w_a), moment), params.w_v);
        for (size_t col = 0; col < d; ++col) {
            double acc = 0.0;
            for (size_t r = 0; r < d; ++r) acc += c(step, r) * z(r, col);
            out(step, col) = acc;
        }
    }
    return out;
}

SeqTensor windowed_attention(const SeqTensor& u, const AttentionParams& params, size_t window,
                             WindowMode mode) {
    const size_t n = u.rows;
    require(window >= 1 && window <= n, "windowed_attention: need 1 <= w <= N");
    SeqTensor bias(n, n);
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            bool visible;
            if (mode == WindowMode::sliding) {
                visible = j <= i && j + window > i;
            } else {
                visible = j <= i && (i / window) == (j / window);
            }
            bias(i, j) = visible ? 0.0 : neg_inf;
        }
    AttentionOpts opts;
    opts.causal = true;
    opts.use_softmax = true;
    opts.bias = std::move(bias);
    return attention_forward(u, params, opts);
}

SelectiveResult selective_attention(const SeqTensor& u, const TokenSequence& tokens,
                                    const AttentionParams& params, const SelectorSpec& sel) {
    const size_t n = u.rows, d = u.cols;
    SelectiveResult res;
    res.mask.assign(n, 1.0);

    switch (sel.kind) {
        case SelectorKind::full:
            break;
        case SelectorKind::random: {
            require(sel.p >= 0.0 && sel.p <= 1.0, "selective: p must be in [0,1]");
            Rng rng(stream_seed(sel.seed, "selector-random"));
            for (size_t i = 0; i < n; ++i) res.mask[i] = rng.next_double() < sel.p ? 1.0 : 0.0;
            break;
        }
        case SelectorKind::programmatic: {
            require(tokens.size() == n, "selective: token ids required for programmatic mode");
            std::vector<int32_t> seen;
            for (size_t i = 0; i < n; ++i) {
                bool repeat = false;
                for (size_t j = 0; j < i; ++j)
                    if (tokens[j] == tokens[i]) {
                        repeat = true;
                        break;
                    }
                res.mask[i] = repeat ? 1.0 : 0.0;
            }
            break;
        }
        case SelectorKind::learned: {
            require(sel.weight.size() == d, "selective: learned weight must have d entries");
            require(sel.k <= n, "selective: k must be <= N");
            std::vector<double> scores(n);
            double soft_sum = 0.0;
            Rng rng(stream_seed(sel.seed, "selector-noise"));
            for (size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (size_t c = 0; c < d; ++c) dot += u(i, c) * sel.weight[c];
                double s = sigmoid(dot);
                soft_sum += s;
                scores[i] = s + (sel.noise_scale > 0.0 ? sel.noise_scale * rng.next_normal() : 0.0);
            }
            std::vector<size_t> idx(n);
            std::iota(idx.begin(), idx.end(), size_t{0});
            std::stable_sort(idx.begin(), idx.end(),
                             [&](size_t a, size_t b) { return scores[a] > scores[b]; });
            std::fill(res.mask.begin(), res.mask.end(), 0.0);
            for (size_t i = 0; i < sel.k; ++i) res.mask[idx[i]] = 1.0;
            res.aux_loss =
                std::max(0.0, soft_sum - static_cast<double>(sel.k)) / static_cast<double>(n);
            break;
        }
    }

    AttentionOpts opts;  // causal softmax attention
    SeqTensor att = attention_forward(u, params, opts);
    res.y = SeqTensor(n, d);
    for (size_t i = 0; i < n; ++i)
        for (size_t c = 0; c < d; ++c) res.y(i, c) = att(i, c) * res.mask[i];
    return res;
}

}  // namespace mqar
