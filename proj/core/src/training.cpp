#include "mqar/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "mqar/rng.hpp"

namespace mqar {

const char* variant_name(TrainVariant v) {
    return v == TrainVariant::attention ? "attention" : "baseconv";
}

TrainVariant variant_from_name(const std::string& name) {
    if (name == "attention") return TrainVariant::attention;
    if (name == "baseconv") return TrainVariant::baseconv;
    throw std::invalid_argument("unknown trainable variant '" + name + "'");
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr size_t kNumShards = 8;

template <typename T>
void mat_mul_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    // c += a b
    for (size_t i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        T* cr = c.row(i);
        for (size_t k = 0; k < a.cols; ++k) {
            T av = ar[k];
            if (av == T(0)) continue;
            const T* br = b.row(k);
            for (size_t j = 0; j < b.cols; ++j) cr[j] += av * br[j];
        }
    }
}

template <typename T>
void mat_mul_at_b_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    // c += a^T b  (a: n x k, b: n x m, c: k x m)
    for (size_t i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        const T* br = b.row(i);
        for (size_t k = 0; k < a.cols; ++k) {
            T av = ar[k];
            if (av == T(0)) continue;
            T* cr = c.row(k);
            for (size_t j = 0; j < b.cols; ++j) cr[j] += av * br[j];
        }
    }
}

template <typename T>
T lane_dot(const T* a, const T* b, size_t count) {
    T acc = T(0);
    for (size_t k = 0; k < count; ++k) acc += a[k] * b[k];
    return acc;
}

template <typename T>
void mat_mul_a_bt_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    // c += a b^T  (a: n x k, b: m x k, c: n x m)
    for (size_t i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        T* cr = c.row(i);
        for (size_t j = 0; j < b.rows; ++j) cr[j] += lane_dot(ar, b.row(j), a.cols);
    }
}

template <typename T>
Mat<T> random_mat(Rng& rng, size_t rows, size_t cols, double std) {
    Mat<T> m(rows, cols);
    for (auto& v : m.data) v = static_cast<T>(std * rng.next_normal());
    return m;
}

}  // namespace

template <typename T>
void Params<T>::for_each(const std::function<void(const std::string&, Mat<T>&)>& fn) {
    fn("embed", embed);
    if (spec.pos_emb) fn("pos", pos);
    for (size_t l = 0; l < blocks.size(); ++l) {
        auto& blk = blocks[l];
        std::string p = "block" + std::to_string(l) + ".";
        fn(p + "ln1_g", blk.ln1_g);
        fn(p + "ln1_b", blk.ln1_b);
        if (spec.variant == TrainVariant::attention) {
            fn(p + "wq", blk.wq);
            fn(p + "wk", blk.wk);
            fn(p + "wv", blk.wv);
        } else {
            fn(p + "w", blk.w);
            fn(p + "b1", blk.b1);
            fn(p + "filt", blk.filt);
        }
        fn(p + "ln2_g", blk.ln2_g);
        fn(p + "ln2_b", blk.ln2_b);
        fn(p + "mlp_w1", blk.mlp_w1);
        fn(p + "mlp_b1", blk.mlp_b1);
        fn(p + "mlp_w2", blk.mlp_w2);
        fn(p + "mlp_b2", blk.mlp_b2);
    }
    fn("lnf_g", lnf_g);
    fn("lnf_b", lnf_b);
    if (!spec.tied_emb) fn("head_w", head_w);
    fn("head_b", head_b);
}

template <typename T>
void Params<T>::for_each(const std::function<void(const std::string&, const Mat<T>&)>& fn) const {
    const_cast<Params<T>*>(this)->for_each(
        [&](const std::string& name, Mat<T>& m) { fn(name, m); });
}

template <typename T>
Params<T> Params<T>::zeros_like() const {
    Params<T> z = *this;
    z.for_each([](const std::string&, Mat<T>& m) { m.fill(T(0)); });
    return z;
}

template <typename T>
size_t Params<T>::num_parameters() const {
    size_t n = 0;
    for_each([&](const std::string&, const Mat<T>& m) { n += m.data.size(); });
    return n;
}

template <typename T>
Params<T> make_model(const ModelSpec& spec) {
    require(spec.vocab >= 2, "make_model: vocab must be >= 2");
    require(spec.num_layers >= 1, "make_model: need at least one block");
    Rng rng(stream_seed(spec.init_seed, "init"));
    const size_t d = spec.d_model, n = spec.seq_len, hidden = spec.mlp_mult * d;
    const double std = 0.02;

    Params<T> p;
    p.spec = spec;
    p.embed = random_mat<T>(rng, spec.vocab, d, std);
    if (spec.pos_emb) p.pos = random_mat<T>(rng, n, d, std);
    p.blocks.resize(spec.num_layers);
    for (auto& blk : p.blocks) {
        blk.ln1_g = Mat<T>(1, d, T(1));
        blk.ln1_b = Mat<T>(1, d);
        if (spec.variant == TrainVariant::attention) {
            blk.wq = random_mat<T>(rng, d, d, std);
            blk.wk = random_mat<T>(rng, d, d, std);
            blk.wv = random_mat<T>(rng, d, d, std);
        } else {
            blk.w = random_mat<T>(rng, d, d, std);
            blk.b1 = Mat<T>(1, d);
            blk.filt = random_mat<T>(rng, n, d, std);
        }
        blk.ln2_g = Mat<T>(1, d, T(1));
        blk.ln2_b = Mat<T>(1, d);
        blk.mlp_w1 = random_mat<T>(rng, d, hidden, std);
        blk.mlp_b1 = Mat<T>(1, hidden);
        blk.mlp_w2 = random_mat<T>(rng, hidden, d, std);
        blk.mlp_b2 = Mat<T>(1, d);
    }
    p.lnf_g = Mat<T>(1, d, T(1));
    p.lnf_b = Mat<T>(1, d);
    if (!spec.tied_emb) p.head_w = random_mat<T>(rng, d, spec.vocab, std);
    p.head_b = Mat<T>(1, spec.vocab);
    return p;
}

namespace {

template <typename T>
struct LnCache {
    Mat<T> xhat;
    std::vector<T> inv_sigma;
};

template <typename T>
void layernorm_forward(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& y,
                       LnCache<T>& cache) {
    const size_t n = x.rows, d = x.cols;
    cache.xhat = Mat<T>(n, d);
    cache.inv_sigma.assign(n, T(0));
    if (y.rows != n || y.cols != d) y = Mat<T>(n, d);
    for (size_t i = 0; i < n; ++i) {
        const T* xr = x.row(i);
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double t = xr[j] - mean;
            var += t * t;
        }
        var /= static_cast<double>(d);
        T inv = static_cast<T>(1.0 / std::sqrt(var + kLnEps));
        cache.inv_sigma[i] = inv;
        T* xh = cache.xhat.row(i);
        T* yr = y.row(i);
        for (size_t j = 0; j < d; ++j) {
            xh[j] = static_cast<T>((xr[j] - mean) * inv);
            yr[j] = g(0, j) * xh[j] + b(0, j);
        }
    }
}

template <typename T>
void layernorm_backward(const Mat<T>& dy, const Mat<T>& g, const LnCache<T>& cache, Mat<T>& dx,
                        Mat<T>& dg, Mat<T>& db) {
    const size_t n = dy.rows, d = dy.cols;
    for (size_t i = 0; i < n; ++i) {
        const T* dyr = dy.row(i);
        const T* xh = cache.xhat.row(i);
        T* dxr = dx.row(i);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (size_t j = 0; j < d; ++j) {
            T dxhat = dyr[j] * g(0, j);
            sum_dxhat += dxhat;
            sum_dxhat_xhat += static_cast<double>(dxhat) * xh[j];
            dg(0, j) += dyr[j] * xh[j];
            db(0, j) += dyr[j];
        }
        T mean_dxhat = static_cast<T>(sum_dxhat / static_cast<double>(d));
        T mean_dxx = static_cast<T>(sum_dxhat_xhat / static_cast<double>(d));
        for (size_t j = 0; j < d; ++j) {
            T dxhat = dyr[j] * g(0, j);
            dxr[j] += cache.inv_sigma[i] * (dxhat - mean_dxhat - xh[j] * mean_dxx);
        }
    }
}

template <typename T>
void causal_conv_train(const Mat<T>& x, const Mat<T>& h, Mat<T>& y) {
    const size_t n = x.rows, d = x.cols;
    y = Mat<T>(n, d);
    for (size_t i = 0; i < n; ++i) {
        T* yr = y.row(i);
        for (size_t j = 0; j <= i; ++j) {
            const T* hr = h.row(j);
            const T* xr = x.row(i - j);
            for (size_t t = 0; t < d; ++t) yr[t] += hr[t] * xr[t];
        }
    }
}

template <typename T>
void causal_conv_backward(const Mat<T>& x, const Mat<T>& h, const Mat<T>& dy, Mat<T>& dx,
                          Mat<T>& dh) {
    const size_t n = x.rows, d = x.cols;
    // dx[a] += sum_{i>=a} dy[i] .* h[i-a];  dh[j] += sum_{i>=j} dy[i] .* x[i-j]
    for (size_t i = 0; i < n; ++i) {
        const T* dyr = dy.row(i);
        for (size_t j = 0; j <= i; ++j) {
            const T* hr = h.row(j);
            const T* xr = x.row(i - j);
            T* dxr = dx.row(i - j);
            T* dhr = dh.row(j);
            for (size_t t = 0; t < d; ++t) {
                dxr[t] += dyr[t] * hr[t];
                dhr[t] += dyr[t] * xr[t];
            }
        }
    }
}

template <typename T>
struct BlockCache {
    Mat<T> x_in;
    LnCache<T> ln1;
    Mat<T> ln1_out;
    // attention
    Mat<T> q, k, v, att, att_out;
    // baseconv
    Mat<T> gate, conv;
    Mat<T> mixer_out;
    Mat<T> x_mid;
    LnCache<T> ln2;
    Mat<T> ln2_out;
    Mat<T> mlp_pre, mlp_act;
};

template <typename T>
struct SeqCache {
    Mat<T> x0;
    std::vector<BlockCache<T>> blocks;
    LnCache<T> lnf;
    Mat<T> lnf_out;
    Mat<T> probs;  // softmax at label rows
};

template <typename T>
void attention_mixer_forward(const BlockParams<T>& blk, BlockCache<T>& c) {
    const size_t n = c.ln1_out.rows, d = c.ln1_out.cols;
    c.q = Mat<T>(n, d);
    c.k = Mat<T>(n, d);
    c.v = Mat<T>(n, d);
    mat_mul_acc(c.ln1_out, blk.wq, c.q);
    mat_mul_acc(c.ln1_out, blk.wk, c.k);
    mat_mul_acc(c.ln1_out, blk.wv, c.v);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    c.att = Mat<T>(n, n);
    for (size_t i = 0; i < n; ++i) {
        T* ar = c.att.row(i);
        const T* qr = c.q.row(i);
        T mx = -std::numeric_limits<T>::infinity();
        for (size_t j = 0; j <= i; ++j) {
            T acc = lane_dot(qr, c.k.row(j), d) * scale;
            ar[j] = acc;
            mx = std::max(mx, acc);
        }
        double sum = 0.0;
        for (size_t j = 0; j <= i; ++j) {
            T e = std::exp(ar[j] - mx);
            ar[j] = e;
            sum += e;
        }
        T inv = static_cast<T>(1.0 / sum);
        for (size_t j = 0; j <= i; ++j) ar[j] *= inv;
        for (size_t j = i + 1; j < n; ++j) ar[j] = T(0);
    }
    c.att_out = Mat<T>(n, d);
    mat_mul_acc(c.att, c.v, c.att_out);
    c.mixer_out = c.att_out;
}

template <typename T>
void attention_mixer_backward(const BlockParams<T>& blk, BlockCache<T>& c, const Mat<T>& dmix,
                              BlockParams<T>& g, Mat<T>& dln1) {
    const size_t n = c.ln1_out.rows, d = c.ln1_out.cols;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

    // att_out = att v
    Mat<T> datt(n, n), dv(n, d);
    mat_mul_a_bt_acc(dmix, c.v, datt);
    mat_mul_at_b_acc(c.att, dmix, dv);

    // softmax rows
    Mat<T> dscore(n, n);
    for (size_t i = 0; i < n; ++i) {
        const T* ar = c.att.row(i);
        const T* dar = datt.row(i);
        double dot = 0.0;
        for (size_t j = 0; j <= i; ++j) dot += static_cast<double>(dar[j]) * ar[j];
        T* dsr = dscore.row(i);
        for (size_t j = 0; j <= i; ++j) dsr[j] = ar[j] * (dar[j] - static_cast<T>(dot));
    }

    Mat<T> dq(n, d), dk(n, d);
    for (size_t i = 0; i < n; ++i) {
        const T* dsr = dscore.row(i);
        T* dqr = dq.row(i);
        const T* qr = c.q.row(i);
        for (size_t j = 0; j <= i; ++j) {
            T w = dsr[j] * scale;
            if (w == T(0)) continue;
            const T* kr = c.k.row(j);
            T* dkr = dk.row(j);
            for (size_t t = 0; t < d; ++t) {
                dqr[t] += w * kr[t];
                dkr[t] += w * qr[t];
            }
        }
    }

    mat_mul_at_b_acc(c.ln1_out, dq, g.wq);
    mat_mul_at_b_acc(c.ln1_out, dk, g.wk);
    mat_mul_at_b_acc(c.ln1_out, dv, g.wv);
    mat_mul_a_bt_acc(dq, blk.wq, dln1);
    mat_mul_a_bt_acc(dk, blk.wk, dln1);
    mat_mul_a_bt_acc(dv, blk.wv, dln1);
}

template <typename T>
void baseconv_mixer_forward(const BlockParams<T>& blk, BlockCache<T>& c) {
    const size_t n = c.ln1_out.rows, d = c.ln1_out.cols;
    c.gate = Mat<T>(n, d);
    mat_mul_acc(c.ln1_out, blk.w, c.gate);
    for (size_t i = 0; i < n; ++i) {
        T* gr = c.gate.row(i);
        for (size_t t = 0; t < d; ++t) gr[t] += blk.b1(0, t);
    }
    causal_conv_train(c.ln1_out, blk.filt, c.conv);
    c.mixer_out = Mat<T>(n, d);
    for (size_t i = 0; i < n * d; ++i) c.mixer_out.data[i] = c.gate.data[i] * c.conv.data[i];
}

template <typename T>
void baseconv_mixer_backward(const BlockParams<T>& blk, BlockCache<T>& c, const Mat<T>& dmix,
                             BlockParams<T>& g, Mat<T>& dln1) {
    const size_t n = c.ln1_out.rows, d = c.ln1_out.cols;
    Mat<T> dgate(n, d), dconv(n, d);
    for (size_t i = 0; i < n * d; ++i) {
        dgate.data[i] = dmix.data[i] * c.conv.data[i];
        dconv.data[i] = dmix.data[i] * c.gate.data[i];
    }
    mat_mul_at_b_acc(c.ln1_out, dgate, g.w);
    for (size_t i = 0; i < n; ++i) {
        const T* dgr = dgate.row(i);
        for (size_t t = 0; t < d; ++t) g.b1(0, t) += dgr[t];
    }
    mat_mul_a_bt_acc(dgate, blk.w, dln1);
    causal_conv_backward(c.ln1_out, blk.filt, dconv, dln1, g.filt);
}

template <typename T>
void mlp_forward(const BlockParams<T>& blk, BlockCache<T>& c, Mat<T>& out) {
    const size_t n = c.ln2_out.rows;
    const size_t hidden = blk.mlp_w1.cols, d = blk.mlp_w2.cols;
    c.mlp_pre = Mat<T>(n, hidden);
    mat_mul_acc(c.ln2_out, blk.mlp_w1, c.mlp_pre);
    c.mlp_act = Mat<T>(n, hidden);
    for (size_t i = 0; i < n; ++i) {
        T* pre = c.mlp_pre.row(i);
        T* act = c.mlp_act.row(i);
        for (size_t j = 0; j < hidden; ++j) {
            pre[j] += blk.mlp_b1(0, j);
            act[j] = pre[j] > T(0) ? pre[j] : T(0);
        }
    }
    out = Mat<T>(n, d);
    mat_mul_acc(c.mlp_act, blk.mlp_w2, out);
    for (size_t i = 0; i < n; ++i) {
        T* orow = out.row(i);
        for (size_t j = 0; j < d; ++j) orow[j] += blk.mlp_b2(0, j);
    }
}

template <typename T>
void mlp_backward(const BlockParams<T>& blk, BlockCache<T>& c, const Mat<T>& dout,
                  BlockParams<T>& g, Mat<T>& dln2) {
    const size_t n = c.ln2_out.rows, hidden = blk.mlp_w1.cols, d = blk.mlp_w2.cols;
    mat_mul_at_b_acc(c.mlp_act, dout, g.mlp_w2);
    for (size_t i = 0; i < n; ++i) {
        const T* dr = dout.row(i);
        for (size_t j = 0; j < d; ++j) g.mlp_b2(0, j) += dr[j];
    }
    Mat<T> dact(n, hidden);
    mat_mul_a_bt_acc(dout, blk.mlp_w2, dact);
    for (size_t i = 0; i < n; ++i) {
        T* da = dact.row(i);
        const T* pre = c.mlp_pre.row(i);
        for (size_t j = 0; j < hidden; ++j)
            if (pre[j] <= T(0)) da[j] = T(0);
    }
    mat_mul_at_b_acc(c.ln2_out, dact, g.mlp_w1);
    for (size_t i = 0; i < n; ++i) {
        const T* da = dact.row(i);
        for (size_t j = 0; j < hidden; ++j) g.mlp_b1(0, j) += da[j];
    }
    mat_mul_a_bt_acc(dact, blk.mlp_w1, dln2);
}

template <typename T>
void check_instance(const Params<T>& p, const MqarInstance& inst) {
    require(inst.tokens.size() == p.spec.seq_len, "forward: instance seq_len mismatch");
    for (const auto& lab : inst.labels) {
        require(lab.pos < inst.tokens.size(), "forward: label position out of range");
        require(lab.target >= 0 && static_cast<size_t>(lab.target) < p.spec.vocab,
                "forward: label target out of vocab");
    }
    for (int32_t t : inst.tokens)
        require(t >= 0 && static_cast<size_t>(t) < p.spec.vocab, "forward: token out of vocab");
}

// Runs the backbone and fills the cache; returns summed label cross-entropy.
// logits_out, when given, receives one row per label.
template <typename T>
double forward_one(const Params<T>& p, const MqarInstance& inst, SeqCache<T>& cache,
                   Mat<T>* logits_out, std::vector<int32_t>* preds_out) {
    check_instance(p, inst);
    const size_t n = p.spec.seq_len, d = p.spec.d_model;

    cache.x0 = Mat<T>(n, d);
    for (size_t i = 0; i < n; ++i) {
        const T* erow = p.embed.row(static_cast<size_t>(inst.tokens[i]));
        T* xr = cache.x0.row(i);
        std::memcpy(xr, erow, d * sizeof(T));
        if (p.spec.pos_emb) {
            const T* prow = p.pos.row(i);
            for (size_t j = 0; j < d; ++j) xr[j] += prow[j];
        }
    }

    cache.blocks.assign(p.blocks.size(), BlockCache<T>());
    Mat<T> x = cache.x0;
    for (size_t l = 0; l < p.blocks.size(); ++l) {
        auto& blk = p.blocks[l];
        auto& c = cache.blocks[l];
        c.x_in = x;
        layernorm_forward(c.x_in, blk.ln1_g, blk.ln1_b, c.ln1_out, c.ln1);
        if (p.spec.variant == TrainVariant::attention)
            attention_mixer_forward(blk, c);
        else
            baseconv_mixer_forward(blk, c);
        c.x_mid = Mat<T>(n, d);
        for (size_t i = 0; i < n * d; ++i) c.x_mid.data[i] = c.x_in.data[i] + c.mixer_out.data[i];
        layernorm_forward(c.x_mid, blk.ln2_g, blk.ln2_b, c.ln2_out, c.ln2);
        Mat<T> mlp_out;
        mlp_forward(blk, c, mlp_out);
        x = Mat<T>(n, d);
        for (size_t i = 0; i < n * d; ++i) x.data[i] = c.x_mid.data[i] + mlp_out.data[i];
    }

    layernorm_forward(x, p.lnf_g, p.lnf_b, cache.lnf_out, cache.lnf);

    const size_t num_labels = inst.labels.size();
    const size_t vocab = p.spec.vocab;
    cache.probs = Mat<T>(num_labels, vocab);
    if (logits_out && (logits_out->rows != num_labels || logits_out->cols != vocab))
        *logits_out = Mat<T>(num_labels, vocab);

    double ce_sum = 0.0;
    for (size_t li = 0; li < num_labels; ++li) {
        const auto& lab = inst.labels[li];
        const T* row = cache.lnf_out.row(lab.pos);
        T* logits = cache.probs.row(li);
        if (p.spec.tied_emb) {
            for (size_t jv = 0; jv < vocab; ++jv) {
                const T* er = p.embed.row(jv);
                T acc = p.head_b(0, jv);
                for (size_t jd = 0; jd < d; ++jd) acc += row[jd] * er[jd];
                logits[jv] = acc;
            }
        } else {
            for (size_t jv = 0; jv < vocab; ++jv) logits[jv] = p.head_b(0, jv);
            for (size_t jd = 0; jd < d; ++jd) {
                T rv = row[jd];
                if (rv == T(0)) continue;
                const T* wr = p.head_w.row(jd);
                for (size_t jv = 0; jv < vocab; ++jv) logits[jv] += rv * wr[jv];
            }
        }
        if (logits_out) std::memcpy(logits_out->row(li), logits, vocab * sizeof(T));
        if (preds_out) {
            size_t best = 0;
            for (size_t jv = 1; jv < vocab; ++jv)
                if (logits[jv] > logits[best]) best = jv;
            preds_out->push_back(static_cast<int32_t>(best));
        }
        // softmax + cross entropy, kept in the cache for backward
        T mx = logits[0];
        for (size_t jv = 1; jv < vocab; ++jv) mx = std::max(mx, logits[jv]);
        double sum = 0.0;
        for (size_t jv = 0; jv < vocab; ++jv) sum += std::exp(static_cast<double>(logits[jv] - mx));
        double lse = std::log(sum) + static_cast<double>(mx);
        ce_sum += lse - static_cast<double>(logits[static_cast<size_t>(lab.target)]);
        T inv = static_cast<T>(1.0 / sum);
        for (size_t jv = 0; jv < vocab; ++jv)
            logits[jv] = static_cast<T>(std::exp(static_cast<double>(logits[jv] - mx))) * inv;
    }
    return ce_sum;
}

template <typename T>
void backward_one(const Params<T>& p, const MqarInstance& inst, SeqCache<T>& cache, double dscale,
                  Params<T>& g) {
    const size_t n = p.spec.seq_len, d = p.spec.d_model, vocab = p.spec.vocab;

    // head: dlogits = (probs - onehot(target)) * dscale at each label row
    Mat<T> dx(n, d);
    for (size_t li = 0; li < inst.labels.size(); ++li) {
        const auto& lab = inst.labels[li];
        T* probs = cache.probs.row(li);
        probs[static_cast<size_t>(lab.target)] -= T(1);
        const T* lrow = cache.lnf_out.row(lab.pos);
        T* dxr = dx.row(lab.pos);
        if (p.spec.tied_emb) {
            for (size_t jv = 0; jv < vocab; ++jv) {
                T dl = probs[jv] * static_cast<T>(dscale);
                if (dl == T(0)) continue;
                T* er = g.embed.row(jv);
                const T* ew = p.embed.row(jv);
                for (size_t jd = 0; jd < d; ++jd) {
                    er[jd] += dl * lrow[jd];
                    dxr[jd] += dl * ew[jd];
                }
                g.head_b(0, jv) += dl;
            }
        } else {
            // probs now holds dlogits = (softmax - onehot) * dscale
            for (size_t jv = 0; jv < vocab; ++jv) {
                probs[jv] *= static_cast<T>(dscale);
                g.head_b(0, jv) += probs[jv];
            }
            for (size_t jd = 0; jd < d; ++jd) {
                T* wg = g.head_w.row(jd);
                T lv = lrow[jd];
                for (size_t jv = 0; jv < vocab; ++jv) wg[jv] += lv * probs[jv];
                dxr[jd] += lane_dot(probs, p.head_w.row(jd), vocab);
            }
        }
    }

    Mat<T> dxin(n, d);
    layernorm_backward(dx, p.lnf_g, cache.lnf, dxin, g.lnf_g, g.lnf_b);

    Mat<T> grad = std::move(dxin);
    for (size_t l = p.blocks.size(); l-- > 0;) {
        auto& blk = p.blocks[l];
        auto& gb = g.blocks[l];
        auto& c = cache.blocks[l];

        // x_out = x_mid + mlp(ln2(x_mid))
        Mat<T> dln2(n, d);
        mlp_backward(blk, c, grad, gb, dln2);
        Mat<T> dxmid = grad;  // residual path
        layernorm_backward(dln2, blk.ln2_g, c.ln2, dxmid, gb.ln2_g, gb.ln2_b);

        // x_mid = x_in + mixer(ln1(x_in))
        Mat<T> dln1(n, d);
        if (p.spec.variant == TrainVariant::attention)
            attention_mixer_backward(blk, c, dxmid, gb, dln1);
        else
            baseconv_mixer_backward(blk, c, dxmid, gb, dln1);
        Mat<T> dxin_l = dxmid;  // residual path
        layernorm_backward(dln1, blk.ln1_g, c.ln1, dxin_l, gb.ln1_g, gb.ln1_b);
        grad = std::move(dxin_l);
    }

    for (size_t i = 0; i < n; ++i) {
        const T* gr = grad.row(i);
        T* er = g.embed.row(static_cast<size_t>(inst.tokens[i]));
        for (size_t j = 0; j < d; ++j) er[j] += gr[j];
        if (p.spec.pos_emb) {
            T* pr = g.pos.row(i);
            for (size_t j = 0; j < d; ++j) pr[j] += gr[j];
        }
    }
}

size_t batch_label_count(const Batch& batch) {
    size_t k = 0;
    for (const auto* inst : batch.instances) k += inst->labels.size();
    return k;
}

template <typename F>
void run_sharded(size_t count, int jobs, F&& shard_body) {
    // fixed shard count so float accumulation order never depends on jobs
    size_t shards = std::min(count, kNumShards);
    if (shards == 0) return;
    if (jobs <= 1) {
        for (size_t s = 0; s < shards; ++s) shard_body(s, shards);
        return;
    }
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            size_t s = next.fetch_add(1);
            if (s >= shards) return;
            shard_body(s, shards);
        }
    };
    std::vector<std::thread> pool;
    size_t nthreads = std::min<size_t>(static_cast<size_t>(jobs), shards);
    for (size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

}  // namespace

template <typename T>
ForwardResult<T> forward_loss(const Params<T>& model, const Batch& batch) {
    require(!batch.instances.empty(), "forward_loss: empty batch");
    const size_t total = batch_label_count(batch);
    require(total > 0, "forward_loss: batch has no labels");

    ForwardResult<T> res;
    res.label_logits = Mat<T>(total, model.spec.vocab);
    res.label_targets.reserve(total);
    double ce = 0.0;
    size_t row = 0;
    for (const auto* inst : batch.instances) {
        SeqCache<T> cache;
        Mat<T> logits;
        ce += forward_one(model, *inst, cache, &logits, nullptr);
        for (size_t li = 0; li < inst->labels.size(); ++li) {
            std::memcpy(res.label_logits.row(row), logits.row(li),
                        model.spec.vocab * sizeof(T));
            res.label_targets.push_back(inst->labels[li].target);
            ++row;
        }
    }
    res.loss = ce / static_cast<double>(total);
    return res;
}

template <typename T>
double backward(const Params<T>& model, const Batch& batch, Params<T>& grads) {
    require(!batch.instances.empty(), "backward: empty batch");
    const size_t total = batch_label_count(batch);
    require(total > 0, "backward: batch has no labels");
    const double dscale = 1.0 / static_cast<double>(total);

    grads.for_each([](const std::string&, Mat<T>& m) { m.fill(T(0)); });
    double ce = 0.0;
    for (const auto* inst : batch.instances) {
        SeqCache<T> cache;
        ce += forward_one(model, *inst, cache, static_cast<Mat<T>*>(nullptr), nullptr);
        backward_one(model, *inst, cache, dscale, grads);
    }
    return ce / static_cast<double>(total);
}

GradCheckReport fd_gradcheck(const Params<double>& model, const Batch& batch, double eps,
                             size_t max_params, uint64_t sample_seed) {
    Params<double> grads = model.zeros_like();
    backward(model, batch, grads);

    Params<double> probe = model;
    GradCheckReport rep;

    struct Entry {
        std::string name;
        Mat<double>* param;
        const Mat<double>* grad;
    };
    std::vector<Entry> entries;
    {
        std::vector<const Mat<double>*> gmats;
        grads.for_each(
            [&](const std::string&, const Mat<double>& m) { gmats.push_back(&m); });
        size_t gi = 0;
        probe.for_each([&](const std::string& name, Mat<double>& m) {
            entries.push_back({name, &m, gmats[gi++]});
        });
    }

    Rng rng(stream_seed(sample_seed, "gradcheck"));
    for (auto& e : entries) {
        size_t count = e.param->data.size();
        std::vector<size_t> picks;
        if (max_params == 0 || count <= max_params) {
            picks.resize(count);
            std::iota(picks.begin(), picks.end(), size_t{0});
        } else {
            for (size_t i = 0; i < max_params; ++i)
                picks.push_back(static_cast<size_t>(rng.next_below(count)));
        }
        for (size_t idx : picks) {
            double saved = e.param->data[idx];
            e.param->data[idx] = saved + eps;
            double lp = forward_loss(probe, batch).loss;
            e.param->data[idx] = saved - eps;
            double lm = forward_loss(probe, batch).loss;
            e.param->data[idx] = saved;
            double fd = (lp - lm) / (2.0 * eps);
            double an = e.grad->data[idx];
            double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            double rel = std::abs(fd - an) / denom;
            ++rep.checked;
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_parameter = e.name + "[" + std::to_string(idx) + "]";
            }
        }
    }
    return rep;
}

namespace {

template <typename T>
struct AdamState {
    Params<T> m, v;
    size_t step = 0;
};

template <typename T>
void adam_step(Params<T>& params, const Params<T>& grads, AdamState<T>& st,
               const TrainConfig& cfg, double lr_now) {
    ++st.step;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));

    std::vector<Mat<T>*> pm, mm, vm;
    std::vector<const Mat<T>*> gm;
    std::vector<bool> decay;
    params.for_each([&](const std::string& name, Mat<T>& m) {
        pm.push_back(&m);
        // decoupled decay on projection matrices; embeddings, norms, biases and
        // convolution filters are exempt
        bool is_matrix = m.rows > 1 && m.cols > 1;
        bool exempt = name == "embed" || name == "pos" || name.ends_with("filt");
        decay.push_back(is_matrix && !exempt);
    });
    grads.for_each([&](const std::string&, const Mat<T>& m) { gm.push_back(&m); });
    st.m.for_each([&](const std::string&, Mat<T>& m) { mm.push_back(&m); });
    st.v.for_each([&](const std::string&, Mat<T>& m) { vm.push_back(&m); });

    for (size_t t = 0; t < pm.size(); ++t) {
        T* p = pm[t]->data.data();
        const T* g = gm[t]->data.data();
        T* m1 = mm[t]->data.data();
        T* m2 = vm[t]->data.data();
        const double wd = decay[t] ? cfg.weight_decay : 0.0;
        const size_t count = pm[t]->data.size();
        for (size_t i = 0; i < count; ++i) {
            double gi = static_cast<double>(g[i]);
            double m1i = b1 * static_cast<double>(m1[i]) + (1.0 - b1) * gi;
            double m2i = b2 * static_cast<double>(m2[i]) + (1.0 - b2) * gi * gi;
            m1[i] = static_cast<T>(m1i);
            m2[i] = static_cast<T>(m2i);
            double update = (m1i / bc1) / (std::sqrt(m2i / bc2) + cfg.adam_eps);
            double pv = static_cast<double>(p[i]);
            pv -= lr_now * (update + wd * pv);
            p[i] = static_cast<T>(pv);
        }
    }
}

}  // namespace

template <typename T>
double evaluate_accuracy(const Params<T>& model, const std::vector<MqarInstance>& data,
                         int jobs) {
    std::vector<size_t> correct_per_shard(kNumShards, 0), total_per_shard(kNumShards, 0);
    run_sharded(data.size(), jobs, [&](size_t shard, size_t shards) {
        for (size_t i = shard; i < data.size(); i += shards) {
            SeqCache<T> cache;
            std::vector<int32_t> preds;
            forward_one(model, data[i], cache, static_cast<Mat<T>*>(nullptr), &preds);
            for (size_t li = 0; li < data[i].labels.size(); ++li) {
                ++total_per_shard[shard];
                if (preds[li] == data[i].labels[li].target) ++correct_per_shard[shard];
            }
        }
    });
    size_t correct = 0, total = 0;
    for (size_t s = 0; s < kNumShards; ++s) {
        correct += correct_per_shard[s];
        total += total_per_shard[s];
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

template <typename T>
TrainResult train(Params<T>& model, const std::vector<MqarInstance>& train_data,
                  const std::vector<MqarInstance>& test_data, const TrainConfig& cfg) {
    require(!train_data.empty(), "train: empty training set");
    TrainResult result;

    AdamState<T> st{model.zeros_like(), model.zeros_like(), 0};
    std::vector<Params<T>> shard_grads;
    for (size_t s = 0; s < kNumShards; ++s) shard_grads.push_back(model.zeros_like());
    Params<T> grads = model.zeros_like();

    const size_t steps_per_epoch =
        (train_data.size() + cfg.batch_size - 1) / cfg.batch_size;
    const size_t total_steps = steps_per_epoch * cfg.epochs;
    const size_t warmup_steps =
        std::max<size_t>(1, static_cast<size_t>(cfg.warmup_frac * total_steps));

    std::vector<size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(stream_seed(cfg.seed, "train-shuffle"));

    size_t step = 0;
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t epoch_batches = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + cfg.batch_size);
            size_t count = end - start;
            size_t total_labels = 0;
            for (size_t i = start; i < end; ++i) total_labels += train_data[order[i]].labels.size();
            if (total_labels == 0) continue;
            const double dscale = 1.0 / static_cast<double>(total_labels);

            std::vector<double> shard_loss(kNumShards, 0.0);
            run_sharded(count, cfg.jobs, [&](size_t shard, size_t shards) {
                shard_grads[shard].for_each([](const std::string&, Mat<T>& m) { m.fill(T(0)); });
                for (size_t i = shard; i < count; i += shards) {
                    const auto& inst = train_data[order[start + i]];
                    SeqCache<T> cache;
                    shard_loss[shard] +=
                        forward_one(model, inst, cache, static_cast<Mat<T>*>(nullptr), nullptr);
                    backward_one(model, inst, cache, dscale, shard_grads[shard]);
                }
            });

            grads.for_each([](const std::string&, Mat<T>& m) { m.fill(T(0)); });
            double batch_ce = 0.0;
            size_t used_shards = std::min(count, kNumShards);
            for (size_t s = 0; s < used_shards; ++s) {
                batch_ce += shard_loss[s];
                std::vector<Mat<T>*> src;
                shard_grads[s].for_each([&](const std::string&, Mat<T>& m) { src.push_back(&m); });
                size_t ti = 0;
                grads.for_each([&](const std::string&, Mat<T>& m) {
                    const Mat<T>& add_from = *src[ti++];
                    for (size_t j = 0; j < m.data.size(); ++j) m.data[j] += add_from.data[j];
                });
            }
            double batch_loss = batch_ce * dscale;
            if (!std::isfinite(batch_loss)) {
                result.diverged = true;
                result.final_train_loss = batch_loss;
                return result;
            }
            epoch_loss += batch_loss;
            ++epoch_batches;

            ++step;
            double lr_now = cfg.lr;
            if (step <= warmup_steps)
                lr_now = cfg.lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
            adam_step(model, grads, st, cfg, lr_now);
        }

        EpochStats es;
        es.train_loss = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
        es.test_acc = test_data.empty() ? 0.0 : evaluate_accuracy(model, test_data, cfg.jobs);
        result.history.push_back(es);
        result.best_test_acc = std::max(result.best_test_acc, es.test_acc);
        result.final_train_loss = es.train_loss;
        if (!std::isfinite(es.train_loss)) {
            result.diverged = true;
            return result;
        }
        if (es.test_acc >= cfg.early_stop_acc) break;
    }
    return result;
}

size_t batch_size_rule(size_t seq_len, size_t d_model) {
    size_t m = std::max(seq_len, d_model);
    if (m >= 512) return 8;
    if (m >= 256) return 16;
    return 64;
}

const char* kSweepCsvHeader =
    "variant,seq_len,d_model,lr,seed,epochs,best_test_acc,final_train_loss,wall_seconds";

namespace {

std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace

std::string sweep_row_csv(const SweepRow& row) {
    std::ostringstream os;
    os << row.variant << ',' << row.seq_len << ',' << row.d_model << ',' << row.lr << ','
       << row.seed << ',' << row.epochs << ',' << fmt_double(row.best_test_acc) << ','
       << fmt_double(row.final_train_loss) << ',' << fmt_double(row.wall_seconds);
    return os.str();
}

SweepRow sweep_row_from_csv(const std::string& line) {
    std::istringstream is(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(is, field, ',')) fields.push_back(field);
    require(fields.size() == 9, "sweep csv: expected 9 fields, got " +
                                    std::to_string(fields.size()));
    SweepRow row;
    row.variant = fields[0];
    row.seq_len = std::stoul(fields[1]);
    row.d_model = std::stoul(fields[2]);
    row.lr = fields[3];
    row.seed = std::stoull(fields[4]);
    row.epochs = std::stoul(fields[5]);
    row.best_test_acc = std::stod(fields[6]);
    row.final_train_loss = std::stod(fields[7]);
    row.wall_seconds = std::stod(fields[8]);
    return row;
}

std::vector<SweepRow> capacity_sweep(const std::vector<SweepCell>& cells, const SweepConfig& cfg) {
    std::vector<SweepRow> rows;
    for (const auto& cell : cells) {
        const size_t num_pairs =
            cfg.num_pairs ? cfg.num_pairs
                          : std::max<size_t>(1, cell.seq_len / cfg.num_pairs_divisor);
        GenConfig gc;
        gc.seq_len = cell.seq_len;
        gc.num_pairs = num_pairs;
        gc.alpha = cfg.alpha;
        gc.vocab_size = cfg.vocab;
        gc.seed = stream_seed(cfg.seed, "sweep-data", cell.seq_len);

        std::vector<MqarInstance> train_data, test_data;
        train_data.reserve(cfg.train_size);
        for (size_t i = 0; i < cfg.train_size; ++i) train_data.push_back(gen_mqar(gc, i));
        for (size_t i = 0; i < cfg.test_size; ++i)
            test_data.push_back(gen_mqar(gc, cfg.train_size + i));

        SweepRow best_row;
        best_row.variant = variant_name(cell.variant);
        best_row.seq_len = cell.seq_len;
        best_row.d_model = cell.d_model;
        best_row.lr = "best";
        best_row.seed = cfg.seed;
        best_row.epochs = cfg.epochs;
        best_row.best_test_acc = -1.0;

        for (size_t li = 0; li < cfg.lr_grid.size(); ++li) {
            ModelSpec spec;
            spec.variant = cell.variant;
            spec.d_model = cell.d_model;
            spec.vocab = cfg.vocab + 1;  // pad id included
            spec.seq_len = cell.seq_len;
            spec.pos_emb = cell.variant == TrainVariant::attention;
            spec.init_seed = stream_seed(cfg.seed, "sweep-init",
                                         hash_combine(cell.seq_len * 131 + cell.d_model, li));

            TrainConfig tc;
            tc.lr = cfg.lr_grid[li];
            tc.epochs = cfg.epochs;
            tc.batch_size = cfg.batch_size ? cfg.batch_size
                                           : batch_size_rule(cell.seq_len, cell.d_model);
            tc.weight_decay = cfg.weight_decay;
            tc.warmup_frac = cfg.warmup_frac;
            tc.seed = stream_seed(cfg.seed, "sweep-train", li);
            tc.jobs = cfg.jobs;
            tc.early_stop_acc = cfg.early_stop_acc;

            auto t0 = std::chrono::steady_clock::now();
            auto model = make_model<float>(spec);
            TrainResult tr = train(model, train_data, test_data, tc);
            auto t1 = std::chrono::steady_clock::now();

            SweepRow row;
            row.variant = variant_name(cell.variant);
            row.seq_len = cell.seq_len;
            row.d_model = cell.d_model;
            row.lr = fmt_double(cfg.lr_grid[li]);
            row.seed = tc.seed;
            row.epochs = cfg.epochs;
            row.best_test_acc = tr.diverged ? std::nan("") : tr.best_test_acc;
            row.final_train_loss = tr.final_train_loss;
            row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
            rows.push_back(row);
            if (cfg.on_row) cfg.on_row(row);

            if (!tr.diverged && tr.best_test_acc > best_row.best_test_acc) {
                best_row.best_test_acc = tr.best_test_acc;
                best_row.final_train_loss = tr.final_train_loss;
            }
            best_row.wall_seconds += row.wall_seconds;
        }
        if (best_row.best_test_acc < 0.0) best_row.best_test_acc = std::nan("");
        rows.push_back(best_row);
        if (cfg.on_row) cfg.on_row(best_row);
    }
    return rows;
}

namespace {

constexpr char kCkptMagic[8] = {'M', 'Q', 'A', 'R', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const Params<T>& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "save_checkpoint: cannot open " + path);
    os.write(kCkptMagic, 8);
    std::vector<std::pair<std::string, const Mat<T>*>> tensors;
    model.for_each(
        [&](const std::string& name, const Mat<T>& m) { tensors.emplace_back(name, &m); });
    write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (auto& [name, m] : tensors) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(m->rows));
        write_u32(os, static_cast<uint32_t>(m->cols));
        for (T v : m->data) {
            double dv = static_cast<double>(v);
            os.write(reinterpret_cast<char*>(&dv), sizeof(double));
        }
    }
    require(os.good(), "save_checkpoint: write failed for " + path);
}

template <typename T>
void load_checkpoint(Params<T>& model, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    require(is.good() && std::memcmp(magic, kCkptMagic, 8) == 0,
            "load_checkpoint: bad magic/version in " + path);
    uint32_t count = read_u32(is);
    std::vector<std::pair<std::string, Mat<T>*>> tensors;
    model.for_each([&](const std::string& name, Mat<T>& m) { tensors.emplace_back(name, &m); });
    require(count == tensors.size(), "load_checkpoint: tensor count mismatch");
    for (auto& [name, m] : tensors) {
        uint32_t len = read_u32(is);
        std::string got(len, '\0');
        is.read(got.data(), len);
        require(got == name, "load_checkpoint: expected tensor '" + name + "', found '" + got +
                                 "'");
        uint32_t rows = read_u32(is), cols = read_u32(is);
        require(rows == m->rows && cols == m->cols,
                "load_checkpoint: shape mismatch for " + name);
        for (auto& v : m->data) {
            double dv;
            is.read(reinterpret_cast<char*>(&dv), sizeof(double));
            v = static_cast<T>(dv);
        }
    }
    require(is.good(), "load_checkpoint: truncated file " + path);
}

// explicit instantiations
template struct Params<double>;
template struct Params<float>;
template Params<double> make_model<double>(const ModelSpec&);
template Params<float> make_model<float>(const ModelSpec&);
template ForwardResult<double> forward_loss<double>(const Params<double>&, const Batch&);
template ForwardResult<float> forward_loss<float>(const Params<float>&, const Batch&);
template double backward<double>(const Params<double>&, const Batch&, Params<double>&);
template double backward<float>(const Params<float>&, const Batch&, Params<float>&);
template TrainResult train<double>(Params<double>&, const std::vector<MqarInstance>&,
                                   const std::vector<MqarInstance>&, const TrainConfig&);
template TrainResult train<float>(Params<float>&, const std::vector<MqarInstance>&,
                                  const std::vector<MqarInstance>&, const TrainConfig&);
template double evaluate_accuracy<double>(const Params<double>&,
                                          const std::vector<MqarInstance>&, int);
template double evaluate_accuracy<float>(const Params<float>&, const std::vector<MqarInstance>&,
                                         int);
template void save_checkpoint<double>(const Params<double>&, const std::string&);
template void save_checkpoint<float>(const Params<float>&, const std::string&);
template void load_checkpoint<double>(Params<double>&, const std::string&);
template void load_checkpoint<float>(Params<float>&, const std::string&);

}  // namespace mqar
