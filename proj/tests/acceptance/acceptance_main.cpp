// Acceptance suite: one pass/fail line per criterion, exit code counts the
// failed criteria. Runtime knobs:
//   MQAR_ACCEPT_JOBS         worker threads (default: hardware concurrency)
//   MQAR_ACCEPT_ONLY         comma list of criterion numbers to run
//   MQAR_ACCEPT_SWEEP_TRAIN  training instances per sweep cell
//   MQAR_ACCEPT_SWEEP_EPOCHS sweep training epochs
//   MQAR_ACCEPT_SWEEP_VOCAB  sweep vocabulary size

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mqar/analysis.hpp"
#include "mqar/constructions.hpp"
#include "mqar/datagen.hpp"
#include "mqar/mixers.hpp"
#include "mqar/numerics.hpp"
#include "mqar/oracle.hpp"
#include "mqar/rng.hpp"
#include "mqar/training.hpp"

using namespace mqar;

namespace {

int env_int(const char* name, int fallback) {
    const char* v = std::getenv(name);
    return v ? std::atoi(v) : fallback;
}

int g_jobs = 1;
int g_failures = 0;

struct Criterion {
    int number;
    bool soft;
    const char* description;
};

void report(const Criterion& c, bool pass, const std::string& details, double seconds) {
    std::printf("[%s] criterion %d%s: %s (%s; %.1fs)\n",
                pass ? "PASS" : (c.soft ? "SOFT-FAIL" : "FAIL"), c.number,
                c.soft ? " (soft)" : "", c.description, details.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

template <typename F>
void run_criterion(const Criterion& c, F&& body) {
    if (const char* only = std::getenv("MQAR_ACCEPT_ONLY")) {
        bool found = false;
        std::stringstream ss(only);
        std::string item;
        while (std::getline(ss, item, ','))
            if (item == std::to_string(c.number)) found = true;
        if (!found) return;
    }
    auto t0 = std::chrono::steady_clock::now();
    std::string details;
    bool pass = false;
    try {
        pass = body(details);
    } catch (const std::exception& e) {
        details = std::string("exception: ") + e.what();
    }
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(c, pass, details, dt);
}

SeqTensor random_tensor(Rng& rng, size_t n, size_t d, double scale = 1.0) {
    SeqTensor m(n, d);
    for (auto& v : m.data) v = scale * rng.next_normal();
    return m;
}

// Triple instances drawn from a consistent key->value dictionary; queries
// match an earlier key or miss entirely.
std::vector<Triple> dict_triples(Rng& rng, size_t vocab, size_t count) {
    const size_t half = vocab / 2;
    std::vector<int64_t> dict(half);
    for (auto& v : dict) v = static_cast<int64_t>(half + rng.next_below(vocab - half));
    std::vector<Triple> triples;
    std::vector<int64_t> seen;
    for (size_t i = 0; i < count; ++i) {
        int64_t key = static_cast<int64_t>(rng.next_below(half));
        int64_t query = (!seen.empty() && rng.next_double() < 0.6)
                            ? seen[rng.next_below(seen.size())]
                            : static_cast<int64_t>(half + rng.next_below(vocab - half));
        triples.push_back({key, dict[static_cast<size_t>(key)], query});
        seen.push_back(key);
    }
    return triples;
}

// ------------------------------------------------------------------ 1

bool criterion1(std::string& details) {
    size_t total_queries = 0, wrong = 0;
    for (size_t vocab : {16, 64}) {
        AttentionSolver solver(vocab);
        Rng rng(stream_seed(101, "accept-attn", vocab));
        for (size_t i = 0; i < 1000; ++i) {
            size_t count = 1 + rng.next_below(64);
            auto triples = dict_triples(rng, vocab, count);
            auto got = solver.solve(TripleEncoding::from_triples(triples, vocab));
            auto want = sequential_mqar(triples);
            for (size_t q = 0; q < count; ++q) {
                ++total_queries;
                bool ok = want[q].has_value() == got[q].has_value() &&
                          (!want[q] || want[q]->value == *got[q]);
                if (!ok) ++wrong;
            }
        }
    }
    AttentionSolver a(16), b(16);
    bool params_fixed = a.w_q2.data == b.w_q2.data && a.w_k2.data == b.w_k2.data &&
                        a.w_v1.data == b.w_v1.data && a.w_v2.data == b.w_v2.data;
    std::ostringstream os;
    os << "2000 instances, " << total_queries << " queries, " << wrong
       << " wrong; parameter matrices depend on c only: " << (params_fixed ? "yes" : "no");
    details = os.str();
    return wrong == 0 && params_fixed;
}

// ------------------------------------------------------------------ 2

bool criterion2(std::string& details) {
    size_t wrong = 0, withheld_wrong = 0, checked = 0;
    Rng rng(stream_seed(102, "accept-autocorr"));
    for (size_t t : {1, 2, 4, 8}) {
        for (size_t inst = 0; inst < 500; ++inst) {
            size_t count = std::max<size_t>(t + 2, 8 + rng.next_below(16));
            size_t vocab = 2 * (count + 8);
            std::vector<size_t> gaps;
            while (gaps.size() < t) {
                size_t g = 1 + rng.next_below(count - 1);
                if (std::find(gaps.begin(), gaps.end(), g) == gaps.end()) gaps.push_back(g);
            }
            std::vector<Triple> triples(count);
            std::vector<size_t> gap_of_query(count, 0);
            for (size_t i = 0; i < count; ++i) {
                triples[i].key = static_cast<int64_t>(i);  // keys distinct
                triples[i].value =
                    static_cast<int64_t>(vocab / 2 + rng.next_below(vocab / 2));
                size_t gap = gaps[rng.next_below(gaps.size())];
                if (i >= gap) {
                    triples[i].query = triples[i - gap].key;
                    gap_of_query[i] = gap;
                } else {
                    triples[i].query = static_cast<int64_t>(vocab / 2 + (i % (vocab / 2)));
                }
            }
            TokenSequence toks;
            for (const auto& tr : triples) {
                toks.push_back(static_cast<int32_t>(tr.key));
                toks.push_back(static_cast<int32_t>(tr.value));
                toks.push_back(static_cast<int32_t>(tr.query));
            }
            auto onehot = one_hot_embed(toks, vocab);
            auto want = sequential_mqar(triples);

            std::vector<size_t> shifts;
            for (size_t g : gaps) shifts.push_back(3 * g + 2);
            auto res = solve_mqar_autocorr(onehot, t, shifts);
            for (size_t q = 0; q < count; ++q) {
                ++checked;
                bool ok = want[q].has_value() == res.answers[q].has_value() &&
                          (!want[q] || want[q]->value == *res.answers[q]);
                if (!ok) ++wrong;
            }

            if (t >= 2 && inst % 10 == 0) {
                std::vector<size_t> partial(shifts.begin(), shifts.end() - 1);
                auto part = solve_mqar_autocorr(onehot, t, partial);
                for (size_t q = 0; q < count; ++q) {
                    bool should_answer = want[q].has_value() && gap_of_query[q] != gaps.back();
                    bool ok = part.answers[q].has_value() == should_answer &&
                              (!should_answer || *part.answers[q] == want[q]->value);
                    if (!ok) ++withheld_wrong;
                }
            }
        }
    }
    std::ostringstream os;
    os << "t in {1,2,4,8} x 500 instances, " << checked << " queries, " << wrong
       << " wrong, withheld-distance mismatches " << withheld_wrong;
    details = os.str();
    return wrong == 0 && withheld_wrong == 0;
}

// ------------------------------------------------------------------ 3

bool criterion3(std::string& details) {
    Rng rng(stream_seed(103, "accept-prims"));
    size_t layouts = 0;
    double max_err = 0.0;

    for (size_t trial = 0; trial < 4000; ++trial) {
        size_t n = 2 + rng.next_below(31), d = 1 + rng.next_below(4);
        size_t s = rng.next_below(n + 1);
        SeqTensor y = random_tensor(rng, n, d);
        SeqTensor down = build_shift_down(s, n, d).evaluate(y);
        SeqTensor up = build_shift_up(s, n, d).evaluate(y);
        for (size_t i = 0; i < n; ++i)
            for (size_t t = 0; t < d; ++t) {
                max_err =
                    std::max(max_err, std::abs(down(i, t) - (i >= s ? y(i - s, t) : 0.0)));
                max_err =
                    std::max(max_err, std::abs(up(i, t) - (i + s < n ? y(i + s, t) : 0.0)));
            }
        ++layouts;
    }

    for (size_t trial = 0; trial < 3000; ++trial) {
        size_t n = 1 + rng.next_below(12);
        size_t seq = 2 * n + rng.next_below(8);
        size_t d = 1 + rng.next_below(4);
        SeqTensor in(seq, d);
        for (size_t i = 0; i < 2 * n; ++i)
            for (size_t t = 0; t < d; ++t) in(i, t) = rng.next_normal();
        SeqTensor out = build_add(n, seq, d).evaluate(in);
        for (size_t i = 0; i < seq; ++i)
            for (size_t t = 0; t < d; ++t) {
                double want = i < n ? 1.0 : i < 2 * n ? in(i, t) + in(i - n, t) : 0.0;
                max_err = std::max(max_err, std::abs(out(i, t) - want));
            }
        ++layouts;
    }

    for (size_t trial = 0; trial < 3000; ++trial) {
        size_t n = 1 + rng.next_below(5), m = 1 + rng.next_below(5);
        size_t s = 1 + rng.next_below(4), t = 1 + rng.next_below(4);
        size_t seq = 3 * n + 2 * s + 2 * m + t + rng.next_below(4);
        size_t d = 1 + rng.next_below(3);
        FilterBank filt(1 + rng.next_below(std::min(s, t) + 1), d);
        for (auto& v : filt.data) v = rng.next_normal();
        SeqTensor gate = random_tensor(rng, n + s, d);
        SeqTensor xblk = random_tensor(rng, n, d), vblk = random_tensor(rng, m, d);
        SeqTensor in(seq, d);
        for (size_t i = 0; i < n; ++i)
            for (size_t c = 0; c < d; ++c) in(i, c) = xblk(i, c);
        for (size_t i = 0; i < m; ++i)
            for (size_t c = 0; c < d; ++c) in(n + s + i, c) = vblk(i, c);
        SeqTensor out = build_remember(n, m, s, t, filt, gate, seq, d).evaluate(in);
        for (size_t i = 0; i < seq; ++i)
            for (size_t c = 0; c < d; ++c) {
                double want = 0.0;
                if (i < n + s) {
                    double conv = 0.0;
                    for (size_t j = 0; j < filt.rows && j <= i; ++j)
                        if (i - j < n) conv += filt(j, c) * xblk(i - j, c);
                    want = gate(i, c) * conv;
                } else if (i < n + s + m) {
                    want = vblk(i - n - s, c);
                }
                max_err = std::max(max_err, std::abs(out(i, c) - want));
            }
        ++layouts;
    }

    double hyena_err = 0.0;
    for (size_t trial = 0; trial < 1000; ++trial) {
        size_t n = 2 + rng.next_below(31), d = 1 + rng.next_below(8);
        HyenaParams p;
        p.order = 1;
        p.w_proj = random_tensor(rng, d, 2 * d, 0.5);
        p.short_filter = random_tensor(rng, std::min<size_t>(3, n), 2 * d, 0.5);
        p.filters.push_back(random_tensor(rng, n, d, 0.5));
        SeqTensor u = random_tensor(rng, n, d);
        hyena_err = std::max(hyena_err,
                             max_abs_diff(simulate_hyena_layer(p, u), hyena_forward(u, p)));
    }

    std::ostringstream os;
    os << layouts << " primitive layouts, max err " << max_err
       << " (exact required); 1000 hyena layers, max err " << hyena_err << " (<= 1e-9)";
    details = os.str();
    return max_err == 0.0 && hyena_err <= 1e-9;
}

// ------------------------------------------------------------------ 4

bool criterion4(std::string& details) {
    Rng rng(stream_seed(104, "accept-oracle"));
    size_t oracle_mismatch = 0, token_mismatch = 0;
    for (size_t inst = 0; inst < 10000; ++inst) {
        size_t seq_len = 3 + rng.next_below(766);
        size_t vocab = 2 + rng.next_below(4095);
        TokenSequence toks(seq_len);
        for (auto& t : toks) t = static_cast<int32_t>(rng.next_below(vocab));
        auto triples = tokens_to_triples(toks);
        auto seq = sequential_mqar(triples);
        auto par = parallel_mqar(triples, g_jobs);
        auto tok = token_mqar(toks);
        for (size_t i = 0; i < triples.size(); ++i) {
            bool same = seq[i].has_value() == par[i].has_value() &&
                        (!seq[i] || (seq[i]->key_index == par[i]->key_index &&
                                     seq[i]->value == par[i]->value));
            if (!same) ++oracle_mismatch;
            bool tok_same = seq[i].has_value() == tok[i].has_value() &&
                            (!seq[i] || (seq[i]->key_index == tok[i]->match_pos &&
                                         seq[i]->value == tok[i]->output));
            if (!tok_same) ++token_mismatch;
        }
    }

    size_t pbs_mismatch = 0;
    for (size_t trial = 0; trial < 10000; ++trial) {
        size_t n = 1 + rng.next_below(256), m = 1 + rng.next_below(256);
        std::vector<int64_t> a(n), b(m);
        for (auto& v : a) v = static_cast<int64_t>(rng.next_below(512));
        for (auto& v : b) v = static_cast<int64_t>(rng.next_below(512));
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        auto got = pbs_multiple_search(a, b);
        for (size_t i = 0; i < n; ++i) {
            size_t want = m;
            for (size_t j = 0; j < m; ++j)
                if (a[i] <= b[j]) {
                    want = j;
                    break;
                }
            if (got[i] != want) ++pbs_mismatch;
        }
    }
    std::ostringstream os;
    os << "10^4 instances: parallel/sequential mismatches " << oracle_mismatch
       << ", token-oracle mismatches " << token_mismatch << "; 10^4 pbs pairs, mismatches "
       << pbs_mismatch;
    details = os.str();
    return oracle_mismatch == 0 && token_mismatch == 0 && pbs_mismatch == 0;
}

// ------------------------------------------------------------------ 5

bool criterion5(std::string& details) {
    GenConfig gc;
    gc.seq_len = 16;
    gc.num_pairs = 2;
    gc.vocab_size = 24;
    gc.seed = 7;
    std::vector<MqarInstance> data;
    for (uint64_t i = 0; i < 2; ++i) data.push_back(gen_mqar(gc, i));
    Batch batch;
    for (const auto& inst : data) batch.instances.push_back(&inst);

    double worst = 0.0;
    std::string worst_name;
    size_t total_checked = 0;
    for (TrainVariant v : {TrainVariant::attention, TrainVariant::baseconv}) {
        ModelSpec spec;
        spec.variant = v;
        spec.d_model = 8;
        spec.vocab = gc.vocab_size + 1;
        spec.seq_len = 16;
        spec.pos_emb = v == TrainVariant::attention;
        spec.init_seed = 11;
        auto model = make_model<double>(spec);
        auto rep = fd_gradcheck(model, batch, 1e-5, /*max_params=*/0);
        total_checked += rep.checked;
        if (rep.max_rel_error > worst) {
            worst = rep.max_rel_error;
            worst_name = std::string(variant_name(v)) + ":" + rep.worst_parameter;
        }
    }
    std::ostringstream os;
    os << total_checked << " parameters across both 2-layer variants, max relative error "
       << worst << " at " << worst_name << " (<= 1e-4)";
    details = os.str();
    return worst <= 1e-4;
}

// ------------------------------------------------------------------ 6

bool criterion6(std::string& details) {
    Rng rng(stream_seed(106, "accept-mixers"));
    double worst = 0.0;
    for (size_t trial = 0; trial < 60; ++trial) {
        size_t n = 2 + rng.next_below(63), d = 1 + rng.next_below(8);
        SeqTensor u = random_tensor(rng, n, d);

        AttentionParams ap{random_tensor(rng, d, d, 0.5), random_tensor(rng, d, d, 0.5),
                           random_tensor(rng, d, d, 0.5)};
        SeqTensor fast = attention_forward(u, ap, {});
        SeqTensor q = matmul(u, ap.w_q), k = matmul(u, ap.w_k), v = matmul(u, ap.w_v);
        SeqTensor naive(n, d);
        double scale = 1.0 / std::sqrt(static_cast<double>(d));
        for (size_t i = 0; i < n; ++i) {
            std::vector<double> row(i + 1);
            double mx = -1e300;
            for (size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (size_t c = 0; c < d; ++c) s += q(i, c) * k(j, c);
                row[j] = s * scale;
                mx = std::max(mx, row[j]);
            }
            double sum = 0.0;
            for (size_t j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (size_t j = 0; j <= i; ++j)
                for (size_t c = 0; c < d; ++c) naive(i, c) += row[j] / sum * v(j, c);
        }
        worst = std::max(worst, max_abs_diff(fast, naive));

        BaseConvParams bp;
        bp.w = random_tensor(rng, d, d, 0.5);
        bp.b1 = random_tensor(rng, n, d, 0.5);
        bp.b2 = random_tensor(rng, n, d, 0.5);
        bp.h = random_tensor(rng, n, d, 0.5);
        SeqTensor bfast = baseconv_forward(u, bp);
        SeqTensor bnaive(n, d);
        for (size_t i = 0; i < n; ++i)
            for (size_t c = 0; c < d; ++c) {
                double gate = bp.b1(i, c);
                for (size_t m2 = 0; m2 < d; ++m2) gate += u(i, m2) * bp.w(m2, c);
                double conv = bp.b2(i, c);
                for (size_t j = 0; j <= i; ++j) conv += bp.h(j, c) * u(i - j, c);
                bnaive(i, c) = gate * conv + u(i, c);
            }
        worst = std::max(worst, max_abs_diff(bfast, bnaive));

        RwkvParams rp;
        rp.mu.resize(d);
        rp.decay.resize(d);
        for (size_t c = 0; c < d; ++c) {
            rp.mu[c] = rng.next_double();
            rp.decay[c] = -2.0 * rng.next_double();
        }
        rp.w_proj = random_tensor(rng, d, 3 * d, 0.5);
        SeqTensor rfast = rwkv_forward(u, rp);
        SeqTensor shifted(n, d);
        for (size_t c = 0; c < d; ++c)
            for (size_t i = 0; i < n; ++i)
                shifted(i, c) =
                    rp.mu[c] * u(i, c) + (i >= 1 ? (1.0 - rp.mu[c]) * u(i - 1, c) : 0.0);
        SeqTensor proj = matmul(shifted, rp.w_proj);
        SeqTensor rq(n, d), rk(n, d), rv(n, d);
        for (size_t i = 0; i < n; ++i)
            for (size_t c = 0; c < d; ++c) {
                rq(i, c) = proj(i, c);
                rk(i, c) = proj(i, d + c);
                rv(i, c) = proj(i, 2 * d + c);
            }
        SeqTensor gated = hadamard(softmax_rows(rk), rv);
        SeqTensor rnaive(n, d);
        for (size_t c = 0; c < d; ++c)
            for (size_t i = 0; i < n; ++i) {
                double conv = gated(i, c);
                for (size_t j = 1; j <= i; ++j)
                    conv += std::exp(rp.decay[c] * static_cast<double>(j - 1)) * gated(i - j, c);
                rnaive(i, c) = 1.0 / (1.0 + std::exp(-rq(i, c))) * conv;
            }
        worst = std::max(worst, max_abs_diff(rfast, rnaive));

        HyenaParams hp;
        hp.order = 1;
        hp.w_proj = random_tensor(rng, d, 2 * d, 0.5);
        hp.short_filter = random_tensor(rng, std::min<size_t>(3, n), 2 * d, 0.5);
        hp.filters.push_back(random_tensor(rng, n, d, 0.5));
        SeqTensor hfast = hyena_forward(u, hp);
        SeqTensor hproj = matmul(u, hp.w_proj);
        SeqTensor hz(n, 2 * d);
        for (size_t c = 0; c < 2 * d; ++c)
            for (size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (size_t j = 0; j < hp.short_filter.rows && j <= i; ++j)
                    acc += hp.short_filter(j, c) * hproj(i - j, c);
                hz(i, c) = acc;
            }
        SeqTensor hnaive(n, d);
        for (size_t c = 0; c < d; ++c)
            for (size_t i = 0; i < n; ++i) {
                double conv = 0.0;
                for (size_t j = 0; j <= i; ++j) conv += hp.filters[0](j, c) * hz(i - j, d + c);
                hnaive(i, c) = hz(i, c) * conv;
            }
        worst = std::max(worst, max_abs_diff(hfast, hnaive));
    }

    double retnet_worst = 0.0;
    for (size_t trial = 0; trial < 30; ++trial) {
        size_t n = 2 + rng.next_below(63), d = 1 + rng.next_below(8);
        RetNetParams p{0.05 + 0.95 * rng.next_double(), random_tensor(rng, d, d, 0.5),
                       random_tensor(rng, d, d, 0.5), random_tensor(rng, d, d, 0.5)};
        SeqTensor u = random_tensor(rng, n, d);
        retnet_worst =
            std::max(retnet_worst,
                     max_abs_diff(retnet_forward(u, p), retnet_forward_closed_form(u, p)));
    }

    std::ostringstream os;
    os << "fast-vs-naive max err " << worst << " (<= 1e-9); retnet recurrence vs closed form "
       << retnet_worst << " (<= 1e-8)";
    details = os.str();
    return worst <= 1e-9 && retnet_worst <= 1e-8;
}

// ------------------------------------------------------------------ 7

bool criterion7(std::string& details) {
    GenConfig inv_cfg;
    inv_cfg.seq_len = 64;
    inv_cfg.num_pairs = 4;
    inv_cfg.alpha = 0.1;
    inv_cfg.vocab_size = 512;
    inv_cfg.seed = 108;

    size_t instances = 0, invariant_violations = 0;
    for (uint64_t idx = 0; idx < 100000; ++idx) {
        auto inst = gen_mqar(inv_cfg, idx);
        ++instances;
        auto out = token_mqar(inst.tokens, inv_cfg.pad_token());
        size_t matched = 0;
        for (const auto& match : out)
            if (match) ++matched;
        if (matched != inst.labels.size()) ++invariant_violations;
        for (const auto& lab : inst.labels) {
            if (!out[lab.pos] || out[lab.pos]->output != lab.target) ++invariant_violations;
            if (lab.pos < 2 * inv_cfg.num_pairs) ++invariant_violations;
        }
        for (size_t j = 0; j < inv_cfg.num_pairs; ++j) {
            if (inst.tokens[2 * j] >= static_cast<int32_t>(inv_cfg.vocab_size / 2))
                ++invariant_violations;
            if (inst.tokens[2 * j + 1] < static_cast<int32_t>(inv_cfg.vocab_size / 2) ||
                inst.tokens[2 * j + 1] >= static_cast<int32_t>(inv_cfg.vocab_size))
                ++invariant_violations;
        }
    }

    GenConfig cfg;
    cfg.seq_len = 256;
    cfg.num_pairs = 4;
    cfg.alpha = 0.1;
    cfg.vocab_size = 8192;
    cfg.seed = 107;
    std::map<size_t, size_t> gap_counts;
    size_t samples = 0;
    for (uint64_t idx = 0; samples < 100000; ++idx) {
        auto inst = gen_mqar(cfg, idx);
        for (const auto& lab : inst.labels) {
            int32_t key = inst.tokens[lab.pos];
            for (size_t j = 0; j < cfg.num_pairs; ++j)
                if (inst.tokens[2 * j] == key) {
                    ++gap_counts[lab.pos - 2 * j];
                    ++samples;
                }
        }
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    size_t points = 0;
    for (const auto& [gap, count] : gap_counts) {
        if (gap < 8 || gap > 200 || count == 0) continue;
        double x = std::log(static_cast<double>(gap)), y = std::log(static_cast<double>(count));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++points;
    }
    double slope = (static_cast<double>(points) * sxy - sx * sy) /
                   (static_cast<double>(points) * sxx - sx * sx);

    std::ostringstream os;
    os << instances << " instances, invariant violations " << invariant_violations << "; "
       << samples << " gaps at alpha 0.1, log-log slope " << slope
       << " (negative, within 0.15 of -0.1)";
    details = os.str();
    return invariant_violations == 0 && slope < 0.0 && std::abs(slope + cfg.alpha) <= 0.15;
}

// ------------------------------------------------------------------ 8

bool criterion8(std::string& details) {
    auto attr = gap_attribution(3.0, 2.578, 2.0, 2.5, 0.064);
    double hand = (1.0 * 0.064) / 0.078;
    bool attr_ok =
        attr.status == GapAttributionStatus::defined && std::abs(attr.fraction - hand) <= 1e-6;

    TokenStream stream;
    stream.documents = {{0, 1, 0, 1, 7, 8, 9}, {3, 4, 3, 4}};
    stream.logprobs = {std::vector<double>(7, -0.5), std::vector<double>(4, -0.25)};
    FreqTable freq;
    std::vector<std::vector<size_t>> hits;
    for (const auto& doc : stream.documents) hits.push_back(find_ar_hits(doc, freq));
    auto rep = slice_perplexity(stream, hits);
    bool totals_ok = rep.ar_hits.token_count + rep.other.token_count == rep.total_tokens &&
                     rep.total_tokens == 11;

    // the reported table numbers correspond to batch size 8
    FlopsDims d125;
    d125.batch = 8;
    double got = flops(FlopsArch::attention, d125);
    double rel = std::abs(got - 2.46e12) / 2.46e12;

    std::ostringstream os;
    os << "gap attribution " << attr.fraction << " vs hand-derived " << hand
       << "; slicer totals " << (totals_ok ? "exact" : "WRONG") << "; attention-125M flops "
       << got << " (" << rel * 100 << "% from 2.46e12, <= 15%)";
    details = os.str();
    return attr_ok && totals_ok && rel <= 0.15;
}

// ------------------------------------------------------------------ 9 (soft)

bool criterion9(std::string& details) {
    SweepConfig cfg;
    cfg.epochs = static_cast<size_t>(env_int("MQAR_ACCEPT_SWEEP_EPOCHS", 36));
    cfg.train_size = static_cast<size_t>(env_int("MQAR_ACCEPT_SWEEP_TRAIN", 6000));
    cfg.test_size = 400;
    cfg.vocab = static_cast<size_t>(env_int("MQAR_ACCEPT_SWEEP_VOCAB", 256));
    cfg.seed = 109;
    cfg.jobs = g_jobs;
    cfg.early_stop_acc = 0.995;
    // desk scaling: half the protocol batch doubles the optimization steps at
    // equal presentation cost, which is what the recall transition needs here
    cfg.batch_size = 32;
    // the capacity experiment varies N at a fixed number of key-value pairs
    cfg.num_pairs = static_cast<size_t>(env_int("MQAR_ACCEPT_SWEEP_PAIRS", 8));

    std::vector<SweepCell> cells;
    for (TrainVariant v : {TrainVariant::attention, TrainVariant::baseconv})
        for (size_t n : {32, 64, 128})
            for (size_t d : {16, 32, 64, 128}) cells.push_back({v, n, d});

    std::map<std::string, double> best;
    cfg.on_row = [&](const SweepRow& row) {
        std::printf("    sweep %s N=%zu d=%zu lr=%s acc=%.3f loss=%.3f (%.0fs)\n",
                    row.variant.c_str(), row.seq_len, row.d_model, row.lr.c_str(),
                    row.best_test_acc, row.final_train_loss, row.wall_seconds);
        std::fflush(stdout);
        if (row.lr == "best")
            best[row.variant + "/" + std::to_string(row.seq_len) + "/" +
                 std::to_string(row.d_model)] = row.best_test_acc;
    };
    capacity_sweep(cells, cfg);

    bool attention_ok = true;
    std::ostringstream os;
    for (size_t n : {32, 64, 128}) {
        double acc = best["attention/" + std::to_string(n) + "/64"];
        os << "attn(N=" << n << ",d=64)=" << acc << " ";
        if (!(acc > 0.9)) attention_ok = false;
    }
    size_t baseconv_violations = 0;
    for (size_t n : {32, 64, 128})
        for (size_t d : {16, 32, 64, 128}) {
            double acc = best["baseconv/" + std::to_string(n) + "/" + std::to_string(d)];
            if (d < n && acc > 0.9) ++baseconv_violations;
        }
    os << "; baseconv cells with d<N above 0.9: " << baseconv_violations << " (slack 1)";
    details = os.str();
    return attention_ok && baseconv_violations <= 1;
}

}  // namespace

int main() {
    g_jobs = env_int("MQAR_ACCEPT_JOBS",
                     static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
    std::printf("acceptance suite (jobs=%d)\n", g_jobs);

    run_criterion({1, false, "attention solver exact on generated instances"}, criterion1);
    run_criterion({2, false, "autocorrelation solver exact within its distance budget"},
                  criterion2);
    run_criterion({3, false, "shift/add/remember primitives and hyena simulation"}, criterion3);
    run_criterion({4, false, "oracle equivalences (parallel/sequential/token, pbs)"}, criterion4);
    run_criterion({5, false, "finite-difference gradient fidelity"}, criterion5);
    run_criterion({6, false, "mixer fast paths equal naive oracles"}, criterion6);
    run_criterion({7, false, "generator statistics and invariants"}, criterion7);
    run_criterion({8, false, "analysis formulas (attribution, slicer, flops)"}, criterion8);
    run_criterion({9, true, "capacity sweep: attention solves at d=64, baseconv needs d >= N"},
                  criterion9);

    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures;
}
