#include "mqar/constructions.hpp"

#include <algorithm>
#include <cmath>

namespace mqar {

namespace {

FilterBank unit_filter(size_t tap, size_t seq_len, size_t dim) {
    FilterBank h(seq_len, dim);
    if (tap < seq_len)
        for (size_t t = 0; t < dim; ++t) h(tap, t) = 1.0;
    return h;
}

SeqTensor const_mat(size_t rows, size_t cols, double v) {
    SeqTensor m(rows, cols);
    m.fill(v);
    return m;
}

BaseConvLayer gate_layer(SeqTensor b1, FilterBank filter, size_t seq_len, size_t dim,
                         ConvMode mode = ConvMode::causal) {
    BaseConvLayer layer;
    layer.w = SeqTensor(dim, dim);
    layer.b1 = std::move(b1);
    layer.b2 = SeqTensor(seq_len, dim);
    layer.filter = std::move(filter);
    layer.mode = mode;
    return layer;
}

}  // namespace

namespace {

// Construction filters carry a handful of taps, so the convolutions run over
// the nonzero taps directly. This keeps 0/1-coefficient stacks exact in double
// precision, which the FFT path would not.
SeqTensor sparse_conv(const SeqTensor& u, const FilterBank& h, ConvMode mode) {
    require(h.rows == u.rows && h.cols == u.cols, "BaseConvStack: filter shape mismatch");
    const size_t n = u.rows, d = u.cols;
    SeqTensor y(n, d);
    for (size_t t = 0; t < d; ++t) {
        for (size_t j = 0; j < n; ++j) {
            double tap = h(j, t);
            if (tap == 0.0) continue;
            if (mode == ConvMode::causal) {
                for (size_t i = j; i < n; ++i) y(i, t) += tap * u(i - j, t);
            } else {
                for (size_t i = 0; i < n; ++i) y(i, t) += tap * u((i + n - j) % n, t);
            }
        }
    }
    return y;
}

}  // namespace

SeqTensor BaseConvStack::evaluate(const SeqTensor& input) const {
    SeqTensor cur = input;
    for (const auto& layer : layers) {
        require(layer.b1.rows == cur.rows && layer.b1.cols == cur.cols,
                "BaseConvStack: layer shape mismatch");
        SeqTensor gate = add(matmul(cur, layer.w), layer.b1);
        SeqTensor conv = sparse_conv(cur, layer.filter, layer.mode);
        cur = hadamard(gate, add(conv, layer.b2));
    }
    return cur;
}

BaseConvStack build_shift_down(size_t s, size_t seq_len, size_t dim) {
    require(s <= seq_len, "shift_down: need s <= N");
    BaseConvStack stack;
    stack.layers.push_back(
        gate_layer(const_mat(seq_len, dim, 1.0), unit_filter(s, seq_len, dim), seq_len, dim));
    return stack;
}

BaseConvStack build_shift_up(size_t s, size_t seq_len, size_t dim) {
    require(s <= seq_len, "shift_up: need s <= N");
    BaseConvStack stack;
    // cyclic up-shift (wraps the first s rows to the bottom)
    stack.layers.push_back(gate_layer(const_mat(seq_len, dim, 1.0),
                                      unit_filter((seq_len - s) % seq_len, seq_len, dim), seq_len,
                                      dim, ConvMode::circular));
    // zero the wrapped tail
    SeqTensor mask(seq_len, dim);
    for (size_t i = 0; i + s < seq_len; ++i)
        for (size_t t = 0; t < dim; ++t) mask(i, t) = 1.0;
    stack.layers.push_back(gate_layer(std::move(mask), unit_filter(0, seq_len, dim), seq_len, dim));
    // identity readout, keeping the three-layer structure of the primitive
    stack.layers.push_back(
        gate_layer(const_mat(seq_len, dim, 1.0), unit_filter(0, seq_len, dim), seq_len, dim));
    return stack;
}

BaseConvStack build_add(size_t block_rows, size_t seq_len, size_t dim) {
    const size_t n = block_rows;
    require(n >= 1 && 2 * n <= seq_len, "add: need 2n <= N");
    BaseConvStack stack;

    FilterBank h1(seq_len, dim);
    for (size_t t = 0; t < dim; ++t) {
        h1(0, t) = 1.0;
        h1(n, t) = 1.0;
    }
    SeqTensor b1(seq_len, dim);
    for (size_t i = n; i < 2 * n; ++i)
        for (size_t t = 0; t < dim; ++t) b1(i, t) = 1.0;
    stack.layers.push_back(gate_layer(std::move(b1), std::move(h1), seq_len, dim));

    SeqTensor b1_2(seq_len, dim);
    for (size_t i = 0; i < 2 * n; ++i)
        for (size_t t = 0; t < dim; ++t) b1_2(i, t) = 1.0;
    BaseConvLayer l2 = gate_layer(std::move(b1_2), unit_filter(0, seq_len, dim), seq_len, dim);
    for (size_t i = 0; i < n; ++i)
        for (size_t t = 0; t < dim; ++t) l2.b2(i, t) = 1.0;
    stack.layers.push_back(std::move(l2));
    return stack;
}

BaseConvStack build_remember(size_t n, size_t m, size_t s, size_t t, const FilterBank& conv_filter,
                             const SeqTensor& gate, size_t seq_len, size_t dim) {
    require(n >= 1, "remember: x block must be nonempty");
    require(conv_filter.cols == dim, "remember: filter channels");
    require(conv_filter.rows <= std::min(s, t) + 1,
            "remember: filter length must be <= min(s,t)+1");
    require(gate.rows == n + s && gate.cols == dim, "remember: gate must be (n+s) x d");
    require(3 * n + 2 * s + 2 * m + t <= seq_len,
            "remember: need 3n+2s+2m+t <= N of working room");

    BaseConvStack stack;

    // layer 1: convolve the x block, gate it with p, and park a copy of v
    FilterBank h1(seq_len, dim);
    for (size_t j = 0; j < conv_filter.rows; ++j)
        for (size_t c = 0; c < dim; ++c) h1(j, c) = conv_filter(j, c);
    for (size_t c = 0; c < dim; ++c) h1(n + m + s + t, c) += 1.0;
    SeqTensor b1(seq_len, dim);
    for (size_t i = 0; i < n + s; ++i)
        for (size_t c = 0; c < dim; ++c) b1(i, c) = gate(i, c);
    for (size_t i = 2 * n + 2 * s + m + t; i < 2 * n + 2 * s + m + t + m; ++i)
        for (size_t c = 0; c < dim; ++c) b1(i, c) = 1.0;
    stack.layers.push_back(gate_layer(std::move(b1), std::move(h1), seq_len, dim));

    // layer 2: line both blocks up contiguously at offset 2n+s+m+t
    FilterBank h2(seq_len, dim);
    for (size_t c = 0; c < dim; ++c) {
        h2(n, c) = 1.0;
        h2(2 * n + s + m + t, c) += 1.0;
    }
    SeqTensor b2_gate(seq_len, dim);
    for (size_t i = 2 * n + s + m + t; i < 3 * n + 2 * s + 2 * m + t; ++i)
        for (size_t c = 0; c < dim; ++c) b2_gate(i, c) = 1.0;
    stack.layers.push_back(gate_layer(std::move(b2_gate), std::move(h2), seq_len, dim));

    // layers 3-5: bring the result back to the top
    BaseConvStack up = build_shift_up(2 * n + s + m + t, seq_len, dim);
    for (auto& layer : up.layers) stack.layers.push_back(std::move(layer));
    return stack;
}

SeqTensor simulate_hyena_layer(const HyenaParams& params, const SeqTensor& u) {
    require(params.order == 1, "simulate_hyena_layer: one gating stage only");
    const size_t n_u = u.rows, d = u.cols;

    // Hyena's own projection produces the gate p and the convolved slice v.
    SeqTensor projected = matmul(u, params.w_proj);
    SeqTensor z = [&] {
        FilterBank full(projected.rows, projected.cols);
        for (size_t j = 0; j < params.short_filter.rows; ++j)
            for (size_t c = 0; c < params.short_filter.cols; ++c)
                full(j, c) = params.short_filter(j, c);
        return causal_conv(projected, full);
    }();
    SeqTensor p_gate(n_u, d), v(n_u, d);
    for (size_t i = 0; i < n_u; ++i)
        for (size_t c = 0; c < d; ++c) {
            p_gate(i, c) = z(i, c);
            v(i, c) = z(i, d + c);
        }

    const size_t s = n_u > 1 ? n_u - 1 : 1;  // v conv h spans n + s rows
    const size_t t = s;
    const size_t inner = 3 * n_u + 2 * s + 2 * n_u + t;

    SeqTensor input(inner, d);
    for (size_t i = 0; i < n_u; ++i)
        for (size_t c = 0; c < d; ++c) {
            input(i, c) = v(i, c);                // x block: the convolved slice
            input(n_u + s + i, c) = u(i, c);      // v block: remember the input
        }

    SeqTensor gate(n_u + s, d);
    for (size_t i = 0; i < n_u; ++i)
        for (size_t c = 0; c < d; ++c) gate(i, c) = p_gate(i, c);

    BaseConvStack stack =
        build_remember(n_u, n_u, s, t, params.filters.at(0), gate, inner, d);
    SeqTensor out = stack.evaluate(input);

    SeqTensor y(n_u, d);
    for (size_t i = 0; i < n_u; ++i)
        for (size_t c = 0; c < d; ++c) y(i, c) = out(i, c);
    return y;
}

TripleEncoding TripleEncoding::from_triples(const std::vector<Triple>& triples, size_t vocab) {
    TripleEncoding enc;
    enc.num_triples = triples.size();
    enc.vocab = vocab;
    enc.onehot = SeqTensor(3 * triples.size(), 3 * vocab);
    for (size_t i = 0; i < triples.size(); ++i) {
        const auto& tr = triples[i];
        require(tr.key >= 0 && static_cast<size_t>(tr.key) < vocab, "triple key out of range");
        require(tr.value >= 0 && static_cast<size_t>(tr.value) < vocab,
                "triple value out of range");
        require(tr.query >= 0 && static_cast<size_t>(tr.query) < vocab,
                "triple query out of range");
        enc.onehot(3 * i, static_cast<size_t>(tr.key)) = 1.0;
        enc.onehot(3 * i + 1, vocab + static_cast<size_t>(tr.value)) = 1.0;
        enc.onehot(3 * i + 2, 2 * vocab + static_cast<size_t>(tr.query)) = 1.0;
    }
    return enc;
}

AttentionSolver::AttentionSolver(size_t vocab_size) : vocab(vocab_size) {
    const size_t c = vocab, d = 3 * c;
    w_v1 = SeqTensor(d, d);
    for (size_t i = 0; i < c; ++i) w_v1(c + i, c + i) = 1.0;  // isolate the value block
    w_k2 = SeqTensor(d, d);
    for (size_t i = 0; i < c; ++i) w_k2(i, i) = 1.0;          // keys stay in block one
    w_q2 = SeqTensor(d, d);
    for (size_t i = 0; i < c; ++i) w_q2(2 * c + i, i) = 1.0;  // queries move to block one
    w_v2 = SeqTensor(d, d);
    for (size_t i = 0; i < c; ++i) w_v2(c + i, i) = 1.0;      // values move to block one
}

std::vector<std::optional<int64_t>> AttentionSolver::solve(const TripleEncoding& enc) const {
    require(enc.vocab == vocab, "AttentionSolver: vocabulary mismatch");
    const size_t n = enc.onehot.rows, c = vocab;

    // layer 1: scores are zero; the up-shift bias moves each value row onto
    // its key row, and the residual puts [k_i : v_i : 0] on key rows.
    SeqTensor bias(n, n);
    for (size_t i = 0; i + 1 < n; ++i) bias(i, i + 1) = 1.0;
    AttentionOpts opts1;
    opts1.causal = false;
    opts1.use_softmax = false;
    opts1.scale = 1.0;
    opts1.bias = std::move(bias);
    AttentionParams layer1{SeqTensor(3 * c, 3 * c), SeqTensor(3 * c, 3 * c), w_v1};
    SeqTensor u2 = add(enc.onehot, attention_forward(enc.onehot, layer1, opts1));

    // layer 2: q.k inner products light up exactly the matching key rows, and
    // the shifted values ride along.
    AttentionOpts opts2;
    opts2.causal = false;
    opts2.use_softmax = false;
    opts2.scale = 1.0;
    AttentionParams layer2{w_q2, w_k2, w_v2};
    SeqTensor out = attention_forward(u2, layer2, opts2);

    std::vector<std::optional<int64_t>> answers(enc.num_triples);
    for (size_t i = 0; i < enc.num_triples; ++i) {
        const double* row = out.row(3 * i + 2);
        size_t best = 0;
        for (size_t j = 1; j < c; ++j)
            if (row[j] > row[best]) best = j;
        if (row[best] >= 0.5) answers[i] = static_cast<int64_t>(best);
    }
    return answers;
}

std::vector<size_t> top_shifts(const SeqTensor& u_onehot, size_t t) {
    const size_t n = u_onehot.rows;
    require(t >= 1 && t < n, "top_shifts: need 1 <= t < N");

    // one token id per row (or none for all-zero rows); the mass at lag s is
    // then the summed per-channel cyclic autocorrelation
    std::vector<int64_t> tok(n, -1);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < u_onehot.cols; ++j)
            if (u_onehot(i, j) != 0.0) {
                tok[i] = static_cast<int64_t>(j);
                break;
            }
    std::vector<size_t> mass(n, 0);
    for (size_t s = 1; s < n; ++s)
        for (size_t i = 0; i < n; ++i)
            if (tok[i] >= 0 && tok[i] == tok[(i + s) % n]) ++mass[s];

    std::vector<size_t> lags(n - 1);
    for (size_t s = 1; s < n; ++s) lags[s - 1] = s;
    std::stable_sort(lags.begin(), lags.end(), [&](size_t a, size_t b) {
        return mass[a] != mass[b] ? mass[a] > mass[b] : a < b;
    });
    lags.resize(t);
    return lags;
}

AutocorrResult solve_mqar_autocorr(const SeqTensor& onehot_rows, size_t t,
                                   const std::vector<size_t>& shifts) {
    const size_t n = onehot_rows.rows, c = onehot_rows.cols;
    require(n % 3 == 0, "solve_mqar_autocorr: rows must come in key/value/query triples");
    require(t >= 1, "solve_mqar_autocorr: need t >= 1");

    AutocorrResult res;
    res.shifts_used = shifts.empty() ? top_shifts(onehot_rows, t) : shifts;
    require(res.shifts_used.size() <= t, "solve_mqar_autocorr: more shifts than t");
    for (size_t s : res.shifts_used)
        require(s >= 1 && s < n, "solve_mqar_autocorr: shifts must lie in [1, N)");
    const size_t blocks = res.shifts_used.size();

    // role projections (rows masked by i mod 3)
    SeqTensor k_proj(n, c), q_proj(n, c), v_proj(n, c);
    for (size_t i = 0; i < n; ++i) {
        SeqTensor* dst = i % 3 == 0 ? &k_proj : (i % 3 == 1 ? &v_proj : &q_proj);
        for (size_t j = 0; j < c; ++j) (*dst)(i, j) = onehot_rows(i, j);
    }

    // tall stack: block l reads shift s_{l+1} of the keys/values parked in the
    // top rows; one kernel tap per block. The block stride is 2N so a shifted
    // copy never runs past its own block into the next one.
    const size_t stride = 2 * n;
    const size_t tall = blocks * stride;
    SeqTensor k_tall(tall, c), v_tall(tall, c), q_tall(tall, c);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) {
            k_tall(i, j) = k_proj(i, j);
            v_tall(i, j) = v_proj(i, j);
        }
    for (size_t b = 0; b < blocks; ++b)
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < c; ++j) q_tall(b * stride + i, j) = q_proj(i, j);

    FilterBank h_k(tall, c), h_v(tall, c);
    for (size_t b = 0; b < blocks; ++b) {
        size_t s = res.shifts_used[b];
        for (size_t j = 0; j < c; ++j) {
            h_k(b * stride + s, j) += 1.0;
            h_v(b * stride + s - 1, j) += 1.0;
        }
    }

    SeqTensor y = hadamard(q_tall, causal_conv(k_tall, h_k));

    // smearing map E: any-nonzero row -> all-ones row (declared nonlinearity)
    SeqTensor e(tall, c);
    for (size_t i = 0; i < tall; ++i) {
        bool hit = false;
        for (size_t j = 0; j < c; ++j)
            if (y(i, j) > 0.5) {
                hit = true;
                break;
            }
        if (hit)
            for (size_t j = 0; j < c; ++j) e(i, j) = 1.0;
    }

    SeqTensor z = hadamard(e, causal_conv(v_tall, h_v));

    SeqTensor z_out(n, c);
    for (size_t b = 0; b < blocks; ++b)
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < c; ++j) z_out(i, j) += z(b * stride + i, j);

    const size_t num_queries = n / 3;
    res.answers.assign(num_queries, std::nullopt);
    for (size_t i = 0; i < num_queries; ++i) {
        const double* row = z_out.row(3 * i + 2);
        size_t best = 0;
        for (size_t j = 1; j < c; ++j)
            if (row[j] > row[best]) best = j;
        if (row[best] >= 0.5) res.answers[i] = static_cast<int64_t>(best);
    }
    return res;
}

}  // namespace mqar
