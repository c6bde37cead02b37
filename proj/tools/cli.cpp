#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "mqar/analysis.hpp"
#include "mqar/constructions.hpp"
#include "mqar/datagen.hpp"
#include "mqar/oracle.hpp"
#include "mqar/rng.hpp"
#include "mqar/training.hpp"

namespace mqar::cli {

namespace {

int default_jobs() {
    if (const char* env = std::getenv("MQAR_JOBS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    return 1;
}

void write_manifest(const std::string& out_path, const std::string& command,
                    const std::map<std::string, std::string>& kv) {
    std::ofstream os(out_path + ".manifest");
    os << "command=" << command << "\n";
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------- gen

struct GenArgs {
    size_t n = 64, d_pairs = 8, count = 1000, vocab = 8192;
    double alpha = 0.1;
    uint64_t seed = 0;
    std::string variant = "mqar";
    std::string out = "dataset.jsonl";
};

int cmd_gen(const GenArgs& a) {
    std::vector<MqarInstance> instances;
    instances.reserve(a.count);
    if (a.variant == "filler") {
        for (uint64_t i = 0; i < a.count; ++i)
            instances.push_back(gen_filler_eval(a.d_pairs, a.n, a.vocab, a.seed, i));
    } else {
        GenConfig cfg;
        cfg.seq_len = a.n;
        cfg.num_pairs = a.d_pairs;
        cfg.alpha = a.alpha;
        cfg.vocab_size = a.vocab;
        cfg.seed = a.seed;
        cfg.num_examples = a.count;
        for (uint64_t i = 0; i < a.count; ++i)
            instances.push_back(a.variant == "single" ? gen_single_query(cfg, i)
                                                      : gen_mqar(cfg, i));
    }
    write_dataset(instances, a.out);
    write_manifest(a.out, "gen",
                   {{"n", std::to_string(a.n)},
                    {"d_pairs", std::to_string(a.d_pairs)},
                    {"alpha", fmt(a.alpha)},
                    {"vocab", std::to_string(a.vocab)},
                    {"count", std::to_string(a.count)},
                    {"seed", std::to_string(a.seed)},
                    {"variant", a.variant},
                    {"out", a.out}});
    std::cout << "wrote " << instances.size() << " records to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- oracle

int cmd_oracle(const std::string& data_path, const std::string& algo, int jobs) {
    std::cout << "config: command=oracle data=" << data_path << " algo=" << algo
              << " jobs=" << jobs << "\n";
    std::vector<MqarInstance> instances;
    try {
        instances = read_dataset(data_path);
    } catch (const std::exception& e) {
        std::cerr << "oracle: " << e.what() << "\n";
        return 2;
    }
    size_t checked = 0, label_disagreements = 0, oracle_disagreements = 0;
    for (const auto& inst : instances) {
        auto ignore = static_cast<int32_t>(inst.vocab_size);
        auto token_labels = token_mqar(inst.tokens, ignore);
        for (const auto& lab : inst.labels) {
            if (lab.kind != LabelKind::ar) continue;
            ++checked;
            const auto& got = token_labels[lab.pos];
            if (!got || got->output != lab.target) ++label_disagreements;
        }
        if (algo == "parallel" || algo == "both") {
            auto triples = tokens_to_triples(inst.tokens);
            auto seq = sequential_mqar(triples);
            auto par = parallel_mqar(triples, jobs);
            for (size_t i = 0; i < seq.size(); ++i) {
                bool same = seq[i].has_value() == par[i].has_value() &&
                            (!seq[i] || (seq[i]->key_index == par[i]->key_index &&
                                         seq[i]->value == par[i]->value));
                if (!same) ++oracle_disagreements;
            }
        }
    }
    std::cout << "instances=" << instances.size() << " labels_checked=" << checked
              << " label_disagreements=" << label_disagreements
              << " oracle_disagreements=" << oracle_disagreements << "\n";
    return (label_disagreements == 0 && oracle_disagreements == 0) ? 0 : 1;
}

// ------------------------------------------------- verify-constructions

struct SuiteRow {
    std::string name;
    size_t trials = 0;
    double max_err = 0.0;
    bool pass = false;
};

SeqTensor random_tensor(Rng& rng, size_t n, size_t d, double scale = 1.0) {
    SeqTensor m(n, d);
    for (auto& v : m.data) v = scale * rng.next_normal();
    return m;
}

SuiteRow verify_primitives(uint64_t seed, size_t trials) {
    Rng rng(stream_seed(seed, "verify-primitives"));
    SuiteRow row{"primitives(shift/add/remember)", trials, 0.0, false};
    for (size_t trial = 0; trial < trials; ++trial) {
        size_t n = 4 + rng.next_below(29);  // sequence length
        size_t d = 1 + rng.next_below(4);
        SeqTensor y = random_tensor(rng, n, d);
        size_t s = rng.next_below(n + 1);

        SeqTensor down = build_shift_down(s, n, d).evaluate(y);
        SeqTensor up = build_shift_up(s, n, d).evaluate(y);
        for (size_t i = 0; i < n; ++i)
            for (size_t t = 0; t < d; ++t) {
                double want_down = i >= s ? y(i - s, t) : 0.0;
                double want_up = i + s < n ? y(i + s, t) : 0.0;
                row.max_err = std::max(row.max_err, std::abs(down(i, t) - want_down));
                row.max_err = std::max(row.max_err, std::abs(up(i, t) - want_up));
            }

        size_t blk = 1 + rng.next_below(n / 2);
        SeqTensor layout(n, d);
        for (size_t i = 0; i < 2 * blk; ++i)
            for (size_t t = 0; t < d; ++t) layout(i, t) = rng.next_normal();
        SeqTensor added = build_add(blk, n, d).evaluate(layout);
        for (size_t i = 0; i < n; ++i)
            for (size_t t = 0; t < d; ++t) {
                double want = i < blk               ? 1.0
                              : i < 2 * blk         ? layout(i, t) + layout(i - blk, t)
                                                    : 0.0;
                row.max_err = std::max(row.max_err, std::abs(added(i, t) - want));
            }

        // remember on a compact random layout
        size_t rn = 1 + rng.next_below(4), rm = 1 + rng.next_below(4);
        size_t rs = 1 + rng.next_below(3), rt = rs + rng.next_below(3);
        size_t need = 3 * rn + 2 * rs + 2 * rm + rt;
        size_t rlen = need + rng.next_below(4);
        FilterBank filt(1 + rng.next_below(std::min(rs, rt) + 1), d);
        for (auto& v : filt.data) v = rng.next_normal();
        SeqTensor gate = random_tensor(rng, rn + rs, d);
        SeqTensor input(rlen, d);
        SeqTensor xblk = random_tensor(rng, rn, d), vblk = random_tensor(rng, rm, d);
        for (size_t i = 0; i < rn; ++i)
            for (size_t t = 0; t < d; ++t) input(i, t) = xblk(i, t);
        for (size_t i = 0; i < rm; ++i)
            for (size_t t = 0; t < d; ++t) input(rn + rs + i, t) = vblk(i, t);
        SeqTensor got = build_remember(rn, rm, rs, rt, filt, gate, rlen, d).evaluate(input);
        for (size_t i = 0; i < rlen; ++i)
            for (size_t t = 0; t < d; ++t) {
                double want = 0.0;
                if (i < rn + rs) {
                    double conv = 0.0;
                    for (size_t j = 0; j < filt.rows && j <= i; ++j)
                        if (i - j < rn) conv += filt(j, t) * xblk(i - j, t);
                    want = gate(i, t) * conv;
                } else if (i < rn + rs + rm) {
                    want = vblk(i - rn - rs, t);
                }
                row.max_err = std::max(row.max_err, std::abs(got(i, t) - want));
            }
    }
    row.pass = row.max_err == 0.0;
    return row;
}

std::vector<Triple> random_recall_triples(Rng& rng, size_t vocab, size_t count,
                                          std::vector<std::optional<int64_t>>* truth) {
    // consistent key->value dictionary; queries match earlier keys or nothing
    const size_t half = vocab / 2;
    std::vector<int64_t> dict(half);
    for (auto& v : dict) v = static_cast<int64_t>(half + rng.next_below(vocab - half));
    std::vector<Triple> triples;
    std::vector<int64_t> seen;
    for (size_t i = 0; i < count; ++i) {
        int64_t key = static_cast<int64_t>(rng.next_below(half));
        Triple tr;
        tr.key = key;
        tr.value = dict[static_cast<size_t>(key)];
        bool match = !seen.empty() && rng.next_double() < 0.6;
        if (match) {
            tr.query = seen[rng.next_below(seen.size())];
            if (truth) truth->push_back(dict[static_cast<size_t>(tr.query)]);
        } else {
            tr.query = static_cast<int64_t>(half + rng.next_below(vocab - half));
            if (truth) truth->push_back(std::nullopt);
        }
        seen.push_back(key);
        triples.push_back(tr);
    }
    return triples;
}

SuiteRow verify_attention(uint64_t seed, size_t instances, size_t vocab, size_t max_triples) {
    Rng rng(stream_seed(seed, "verify-attn") ^ vocab);
    SuiteRow row{"attention-solver(c=" + std::to_string(vocab) + ")", instances, 0.0, false};
    size_t wrong = 0;
    for (size_t i = 0; i < instances; ++i) {
        size_t count = 1 + rng.next_below(max_triples);
        std::vector<Triple> triples = random_recall_triples(rng, vocab, count, nullptr);
        auto enc = TripleEncoding::from_triples(triples, vocab);
        auto got = solve_mqar_attention(enc);
        auto want = sequential_mqar(triples);
        for (size_t q = 0; q < triples.size(); ++q) {
            bool ok = want[q].has_value() == got[q].has_value() &&
                      (!want[q] || want[q]->value == *got[q]);
            if (!ok) ++wrong;
        }
    }
    row.max_err = static_cast<double>(wrong);
    row.pass = wrong == 0;
    return row;
}

std::vector<Triple> gapped_triples(Rng& rng, size_t vocab, size_t count,
                                   const std::vector<size_t>& gaps,
                                   std::vector<size_t>* gap_of_query) {
    // keys distinct; each query matches the key exactly `gap` triples back
    const size_t half = vocab / 2;
    std::vector<int64_t> keys(half);
    std::iota(keys.begin(), keys.end(), int64_t{0});
    rng.shuffle(keys);
    std::vector<Triple> triples(count);
    gap_of_query->assign(count, 0);
    std::vector<int64_t> fresh(vocab - half);
    std::iota(fresh.begin(), fresh.end(), static_cast<int64_t>(half));
    rng.shuffle(fresh);
    size_t fresh_at = 0;
    for (size_t i = 0; i < count; ++i) {
        triples[i].key = keys.at(i);
        triples[i].value = static_cast<int64_t>(half + rng.next_below(vocab - half));
        size_t gap = gaps[rng.next_below(gaps.size())];
        if (gap >= 1 && i >= gap) {
            triples[i].query = triples[i - gap].key;
            (*gap_of_query)[i] = gap;
        } else {
            triples[i].query = fresh.at(fresh_at++ % fresh.size());
        }
    }
    return triples;
}

SuiteRow verify_autocorr(uint64_t seed, size_t instances, size_t t) {
    Rng rng(stream_seed(seed, "verify-autocorr") ^ t);
    SuiteRow row{"autocorr-solver(t=" + std::to_string(t) + ")", instances, 0.0, false};
    size_t wrong = 0;
    for (size_t inst = 0; inst < instances; ++inst) {
        size_t count = std::max<size_t>(t + 2, 8 + rng.next_below(14));
        size_t vocab = 2 * (count + 4);
        std::vector<size_t> gaps;
        while (gaps.size() < t) {
            size_t g = 1 + rng.next_below(std::max<size_t>(1, count - 2));
            if (std::find(gaps.begin(), gaps.end(), g) == gaps.end()) gaps.push_back(g);
        }
        std::vector<size_t> gap_of_query;
        auto triples = gapped_triples(rng, vocab, count, gaps, &gap_of_query);
        std::vector<size_t> shifts;
        for (size_t g : gaps) shifts.push_back(3 * g + 2);  // row distance of a query-key pair
        auto enc = one_hot_embed(
            [&] {
                TokenSequence toks;
                for (const auto& tr : triples) {
                    toks.push_back(static_cast<int32_t>(tr.key));
                    toks.push_back(static_cast<int32_t>(tr.value));
                    toks.push_back(static_cast<int32_t>(tr.query));
                }
                return toks;
            }(),
            vocab);
        auto res = solve_mqar_autocorr(enc, t, shifts);
        auto want = sequential_mqar(triples);
        for (size_t q = 0; q < triples.size(); ++q) {
            bool ok = want[q].has_value() == res.answers[q].has_value() &&
                      (!want[q] || want[q]->value == *res.answers[q]);
            if (!ok) ++wrong;
        }
    }
    row.max_err = static_cast<double>(wrong);
    row.pass = wrong == 0;
    return row;
}

SuiteRow verify_hyena_sim(uint64_t seed, size_t trials, bool inject_fault) {
    Rng rng(stream_seed(seed, "verify-hyena"));
    SuiteRow row{"hyena-simulation", trials, 0.0, false};
    for (size_t trial = 0; trial < trials; ++trial) {
        size_t n = 4 + rng.next_below(29);
        size_t d = 1 + rng.next_below(8);
        HyenaParams hp;
        hp.order = 1;
        hp.w_proj = random_tensor(rng, d, 2 * d, 0.5);
        hp.short_filter = FilterBank(std::min<size_t>(3, n), 2 * d);
        for (auto& v : hp.short_filter.data) v = 0.5 * rng.next_normal();
        FilterBank h(n, d);
        for (auto& v : h.data) v = 0.5 * rng.next_normal();
        hp.filters.push_back(h);
        SeqTensor u = random_tensor(rng, n, d);
        SeqTensor want = hyena_forward(u, hp);
        if (inject_fault && trial == trials / 2) hp.filters[0](n / 2, d / 2) += 0.25;
        SeqTensor got = simulate_hyena_layer(hp, u);
        row.max_err = std::max(row.max_err, max_abs_diff(want, got));
    }
    row.pass = row.max_err <= 1e-9;
    return row;
}

int cmd_verify_constructions(const std::string& suite, uint64_t seed, size_t trials, size_t t_arg,
                             bool inject_fault) {
    std::vector<SuiteRow> rows;
    if (suite == "all" || suite == "primitives") rows.push_back(verify_primitives(seed, trials));
    if (suite == "all" || suite == "attention") {
        rows.push_back(verify_attention(seed, std::max<size_t>(1, trials), 16, 64));
        rows.push_back(verify_attention(seed, std::max<size_t>(1, trials), 64, 64));
    }
    if (suite == "all" || suite == "autocorr") {
        for (size_t t : std::vector<size_t>{1, 2, t_arg}) {
            if (t == 0) continue;
            rows.push_back(verify_autocorr(seed, std::max<size_t>(1, trials / 2), t));
        }
    }
    if (suite == "all" || suite == "hyena-sim")
        rows.push_back(verify_hyena_sim(seed, trials, inject_fault));
    require(!rows.empty(), "verify-constructions: unknown suite '" + suite + "'");

    std::cout << "config: command=verify-constructions suite=" << suite << " seed=" << seed
              << " trials=" << trials << " t=" << t_arg
              << " inject_fault=" << (inject_fault ? 1 : 0) << "\n";
    bool all_pass = true;
    std::cout << "suite                                trials    max_err  status\n";
    for (const auto& row : rows) {
        all_pass = all_pass && row.pass;
        std::printf("%-36s %6zu %10.3g  %s\n", row.name.c_str(), row.trials, row.max_err,
                    row.pass ? "PASS" : "FAIL");
    }
    return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------- sweep

int cmd_sweep(const std::string& out_path, const std::vector<std::string>& variants,
              const std::vector<size_t>& n_list, const std::vector<size_t>& d_list,
              SweepConfig cfg) {
    // resume: previously completed (variant, N, d, lr) points are kept
    std::set<std::string> done;
    std::vector<std::string> kept_lines;
    {
        std::ifstream is(out_path);
        std::string line;
        bool first = true;
        while (std::getline(is, line)) {
            if (first) {
                first = false;
                continue;
            }
            if (line.empty()) continue;
            SweepRow row = sweep_row_from_csv(line);
            if (row.lr == "best") continue;  // recomputed from point rows
            done.insert(row.variant + "/" + std::to_string(row.seq_len) + "/" +
                        std::to_string(row.d_model) + "/" + row.lr);
            kept_lines.push_back(line);
        }
    }

    std::vector<SweepCell> cells;
    for (const auto& vname : variants)
        for (size_t n : n_list)
            for (size_t d : d_list) cells.push_back({variant_from_name(vname), n, d});

    // filter cells whose every lr point is already present
    std::vector<SweepCell> todo;
    for (const auto& cell : cells) {
        size_t have = 0;
        for (double lr : cfg.lr_grid) {
            std::ostringstream os;
            os.precision(10);
            os << lr;
            if (done.count(std::string(variant_name(cell.variant)) + "/" +
                           std::to_string(cell.seq_len) + "/" + std::to_string(cell.d_model) +
                           "/" + os.str()))
                ++have;
        }
        if (have < cfg.lr_grid.size()) todo.push_back(cell);
    }

    // stream point rows so an interrupted run stays resumable
    std::ofstream os(out_path);
    require(os.good(), "sweep: cannot open " + out_path);
    os << kSweepCsvHeader << "\n";
    std::vector<SweepRow> points;
    for (const auto& line : kept_lines) {
        os << line << "\n";
        points.push_back(sweep_row_from_csv(line));
    }
    os.flush();

    cfg.on_row = [&](const SweepRow& row) {
        if (row.lr == "best") return;
        os << sweep_row_csv(row) << "\n";
        os.flush();
        std::cout << sweep_row_csv(row) << "\n";
        points.push_back(row);
    };
    capacity_sweep(todo, cfg);
    os.close();

    // rewrite cleanly with one best row per cell, covering resumed cells too
    std::ofstream fin(out_path);
    require(fin.good(), "sweep: cannot rewrite " + out_path);
    fin << kSweepCsvHeader << "\n";
    for (const auto& row : points) fin << sweep_row_csv(row) << "\n";
    for (const auto& cell : cells) {
        SweepRow best;
        best.variant = variant_name(cell.variant);
        best.seq_len = cell.seq_len;
        best.d_model = cell.d_model;
        best.lr = "best";
        best.seed = cfg.seed;
        best.epochs = cfg.epochs;
        best.best_test_acc = std::nan("");
        for (const auto& row : points) {
            if (row.variant != best.variant || row.seq_len != cell.seq_len ||
                row.d_model != cell.d_model)
                continue;
            best.wall_seconds += row.wall_seconds;
            if (!std::isnan(row.best_test_acc) &&
                (std::isnan(best.best_test_acc) || row.best_test_acc > best.best_test_acc)) {
                best.best_test_acc = row.best_test_acc;
                best.final_train_loss = row.final_train_loss;
            }
        }
        fin << sweep_row_csv(best) << "\n";
    }

    std::map<std::string, std::string> manifest{{"out", out_path},
                                                {"epochs", std::to_string(cfg.epochs)},
                                                {"train_size", std::to_string(cfg.train_size)},
                                                {"test_size", std::to_string(cfg.test_size)},
                                                {"vocab", std::to_string(cfg.vocab)},
                                                {"alpha", fmt(cfg.alpha)},
                                                {"seed", std::to_string(cfg.seed)},
                                                {"jobs", std::to_string(cfg.jobs)}};
    size_t vi = 0;
    for (const auto& v : variants) manifest["variant" + std::to_string(vi++)] = v;
    write_manifest(out_path, "sweep", manifest);
    return 0;
}

// ---------------------------------------------------------------- slice

std::vector<TokenSequence> read_stream_docs(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), "slice: cannot open stream " + path);
    std::string first_line;
    std::getline(is, first_line);
    if (first_line.find("mqar-v1") != std::string::npos) {
        std::vector<TokenSequence> docs;
        for (const auto& inst : read_dataset(path)) docs.push_back(inst.tokens);
        return docs;
    }
    std::vector<TokenSequence> docs;
    std::string line = first_line;
    do {
        if (!line.empty()) {
            TokenSequence doc;
            std::istringstream ls(line);
            int64_t tok;
            while (ls >> tok) doc.push_back(static_cast<int32_t>(tok));
            docs.push_back(std::move(doc));
        }
    } while (std::getline(is, line));
    return docs;
}

std::vector<std::vector<double>> read_logprobs(const std::string& path, size_t expect_docs) {
    std::ifstream is(path);
    require(is.good(), "slice: cannot open log-prob sidecar " + path);
    std::vector<std::vector<double>> out;
    std::string line;
    while (std::getline(is, line)) {
        std::vector<double> vals;
        std::istringstream ls(line);
        double v;
        while (ls >> v) vals.push_back(v);
        out.push_back(std::move(vals));
    }
    require(out.size() == expect_docs, "slice: sidecar has " + std::to_string(out.size()) +
                                           " lines for " + std::to_string(expect_docs) +
                                           " documents");
    return out;
}

FreqTable read_freq_table(const std::string& path) {
    FreqTable freq;
    if (path.empty()) return freq;
    std::ifstream is(path);
    require(is.good(), "slice: cannot open frequency table " + path);
    int64_t a, b;
    uint64_t count;
    while (is >> a >> b >> count)
        freq.set(static_cast<int32_t>(a), static_cast<int32_t>(b), count);
    return freq;
}

void write_slice_report(std::ostream& os, const char* model, const SliceReport& rep) {
    auto emit = [&](const char* slice, const SliceStats& st) {
        os << model << "." << slice << ".tokens=" << st.token_count << "\n";
        if (st.defined) {
            os << model << "." << slice << ".mean_nll=" << fmt(st.mean_nll) << "\n";
            os << model << "." << slice << ".perplexity=" << fmt(st.perplexity) << "\n";
        } else {
            os << model << "." << slice << ".mean_nll=undefined\n";
            os << model << "." << slice << ".perplexity=undefined\n";
        }
    };
    emit("ar_hits", rep.ar_hits);
    emit("other", rep.other);
    os << model << ".total_tokens=" << rep.total_tokens << "\n";
    os << model << ".hit_fraction=" << fmt(rep.hit_fraction) << "\n";
}

int cmd_slice(const std::string& stream_path, const std::string& logprobs_m,
              const std::string& logprobs_ref, const std::string& freq_path, uint64_t threshold,
              const std::string& out_prefix, const std::string& gaps_out) {
    auto docs = read_stream_docs(stream_path);
    FreqTable freq = read_freq_table(freq_path);

    std::vector<std::vector<size_t>> hits;
    hits.reserve(docs.size());
    for (const auto& doc : docs) hits.push_back(find_ar_hits(doc, freq, threshold));

    TokenStream stream_m;
    stream_m.documents = docs;
    stream_m.logprobs = read_logprobs(logprobs_m, docs.size());
    SliceReport rep_m = slice_perplexity(stream_m, hits);

    std::ofstream txt(out_prefix + ".txt");
    require(txt.good(), "slice: cannot open " + out_prefix + ".txt");
    txt << "stream=" << stream_path << "\n";
    txt << "threshold=" << threshold << "\n";
    write_slice_report(txt, "model", rep_m);

    std::ofstream csv(out_prefix + ".csv");
    csv << "model,slice,tokens,mean_nll,perplexity\n";
    auto csv_row = [&](const char* model, const char* slice, const SliceStats& st) {
        csv << model << ',' << slice << ',' << st.token_count << ','
            << (st.defined ? fmt(st.mean_nll) : "undefined") << ','
            << (st.defined ? fmt(st.perplexity) : "undefined") << "\n";
    };
    csv_row("model", "ar_hits", rep_m.ar_hits);
    csv_row("model", "other", rep_m.other);

    if (!logprobs_ref.empty()) {
        TokenStream stream_ref;
        stream_ref.documents = docs;
        stream_ref.logprobs = read_logprobs(logprobs_ref, docs.size());
        SliceReport rep_ref = slice_perplexity(stream_ref, hits);
        write_slice_report(txt, "reference", rep_ref);
        csv_row("reference", "ar_hits", rep_ref.ar_hits);
        csv_row("reference", "other", rep_ref.other);

        double l_m = 0.0, l_ref = 0.0;  // overall mean NLLs
        {
            double nll_m = 0.0, nll_ref = 0.0;
            size_t total = 0;
            for (size_t i = 0; i < docs.size(); ++i) {
                for (double lp : stream_m.logprobs[i]) nll_m -= lp;
                for (double lp : stream_ref.logprobs[i]) nll_ref -= lp;
                total += docs[i].size();
            }
            l_m = nll_m / static_cast<double>(total);
            l_ref = nll_ref / static_cast<double>(total);
        }
        GapAttribution attr = gap_attribution(rep_m.ar_hits.mean_nll, l_m,
                                              rep_ref.ar_hits.mean_nll, l_ref, rep_m.hit_fraction);
        switch (attr.status) {
            case GapAttributionStatus::defined:
                txt << "gap_attribution=" << fmt(attr.fraction) << "\n";
                break;
            case GapAttributionStatus::tie:
                txt << "gap_attribution=undefined (models tie overall)\n";
                break;
            case GapAttributionStatus::model_better:
                txt << "gap_attribution=0 (model better overall)\n";
                break;
        }
    }

    if (!gaps_out.empty()) {
        std::map<size_t, size_t> hist;
        for (const auto& doc : docs)
            for (const auto& [gap, count] : gap_histogram(doc)) hist[gap] += count;
        std::ofstream gs(gaps_out);
        gs << "distance,count\n";
        for (const auto& [gap, count] : hist) gs << gap << ',' << count << "\n";
    }

    write_manifest(out_prefix, "slice",
                   {{"stream", stream_path},
                    {"logprobs_m", logprobs_m},
                    {"logprobs_ref", logprobs_ref},
                    {"freq", freq_path},
                    {"threshold", std::to_string(threshold)},
                    {"out", out_prefix}});
    return 0;
}

// ---------------------------------------------------------------- flops

int cmd_flops(const std::string& arch, const FlopsDims& dims) {
    double count = flops(flops_arch_from(arch), dims);
    std::cout << "# arch=" << arch << " B=" << dims.batch << " N=" << dims.seq_len
              << " D=" << dims.width << " H=" << dims.heads << " L=" << dims.layers
              << " V=" << dims.vocab << "\n";
    std::cout << fmt(count) << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"desk-scale multi-query associative recall laboratory"};
    // flat key=value config, keys prefixed by the subcommand: gen.n=64
    app.set_config("--config");
    app.require_subcommand(1);

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen", "generate synthetic recall datasets");
    gen->add_option("--n", gen_args.n, "sequence length");
    gen->add_option("--d-pairs", gen_args.d_pairs, "key-value pairs per example");
    gen->add_option("--alpha", gen_args.alpha, "power-law exponent");
    gen->add_option("--vocab", gen_args.vocab, "vocabulary size (even)");
    gen->add_option("--count", gen_args.count, "number of examples");
    gen->add_option("--seed", gen_args.seed, "root seed");
    gen->add_option("--variant", gen_args.variant, "mqar|single|filler")
        ->check(CLI::IsMember({"mqar", "single", "filler"}));
    gen->add_option("--out", gen_args.out, "output dataset path");

    std::string oracle_data, oracle_algo = "both";
    int jobs = default_jobs();
    auto* oracle = app.add_subcommand("oracle", "check datasets against the recall oracles");
    oracle->add_option("--data", oracle_data, "dataset path")->required();
    oracle->add_option("--algo", oracle_algo, "sequential|parallel|both")
        ->check(CLI::IsMember({"sequential", "parallel", "both"}));
    oracle->add_option("--jobs", jobs, "worker threads");

    std::string suite = "all";
    uint64_t verify_seed = 0;
    size_t verify_trials = 200, verify_t = 4;
    bool inject_fault = false;
    auto* verify = app.add_subcommand("verify-constructions",
                                      "run the exact-construction property suite");
    verify->add_option("--suite", suite, "all|primitives|attention|autocorr|hyena-sim")
        ->check(CLI::IsMember({"all", "primitives", "attention", "autocorr", "hyena-sim"}));
    verify->add_option("--seed", verify_seed, "root seed");
    verify->add_option("--trials", verify_trials, "trials per suite");
    verify->add_option("--t", verify_t, "distance budget for the autocorr suite");
    verify->add_flag("--inject-fault", inject_fault, "negative-control fault injection");

    std::string sweep_out = "sweep.csv";
    std::vector<std::string> sweep_variants{"attention", "baseconv"};
    std::vector<size_t> sweep_n{32, 64, 128}, sweep_d{16, 32, 64, 128};
    SweepConfig sweep_cfg;
    sweep_cfg.jobs = jobs;
    auto* sweep = app.add_subcommand("sweep", "capacity sweep over (variant, N, d, lr)");
    sweep->add_option("--out", sweep_out, "output CSV (resumable)");
    sweep->add_option("--variants", sweep_variants, "attention|baseconv list");
    sweep->add_option("--n-list", sweep_n, "sequence lengths");
    sweep->add_option("--d-list", sweep_d, "model dimensions");
    sweep->add_option("--lr-grid", sweep_cfg.lr_grid, "learning rates");
    sweep->add_option("--epochs", sweep_cfg.epochs, "training epochs");
    sweep->add_option("--train-size", sweep_cfg.train_size, "training instances per cell");
    sweep->add_option("--test-size", sweep_cfg.test_size, "test instances per cell");
    sweep->add_option("--vocab", sweep_cfg.vocab, "vocabulary size");
    sweep->add_option("--alpha", sweep_cfg.alpha, "power-law exponent");
    sweep->add_option("--d-pairs", sweep_cfg.num_pairs, "fixed key-value pairs per example");
    sweep->add_option("--d-pairs-divisor", sweep_cfg.num_pairs_divisor, "D = max(1, N/divisor)");
    sweep->add_option("--seed", sweep_cfg.seed, "root seed");
    sweep->add_option("--jobs", sweep_cfg.jobs, "worker threads");
    sweep->add_option("--batch-size", sweep_cfg.batch_size,
                      "batch size override (0: protocol rule)");
    sweep->add_option("--early-stop", sweep_cfg.early_stop_acc,
                      "stop a run once test accuracy reaches this");

    std::string slice_stream, slice_lp_m, slice_lp_ref, slice_freq, slice_out = "slice",
                              slice_gaps;
    uint64_t slice_threshold = 1250;
    auto* slice = app.add_subcommand("slice", "AR-hit slicing and gap attribution");
    slice->add_option("--stream", slice_stream, "token stream (dataset or doc-per-line)")
        ->required();
    slice->add_option("--logprobs-m", slice_lp_m, "model log-prob sidecar")->required();
    slice->add_option("--logprobs-ref", slice_lp_ref, "reference model log-prob sidecar");
    slice->add_option("--freq", slice_freq, "bigram frequency table (tok tok count lines)");
    slice->add_option("--threshold", slice_threshold, "training-frequency threshold");
    slice->add_option("--out", slice_out, "output prefix");
    slice->add_option("--gaps-out", slice_gaps, "optional gap histogram CSV");

    std::string flops_arch = "attention";
    FlopsDims dims;
    auto* fl = app.add_subcommand("flops", "architecture FLOPs calculator");
    fl->add_option("--arch", flops_arch, "attention|hyena|longconv|baseconv|rwkv");
    fl->add_option("--batch", dims.batch, "B");
    fl->add_option("--n", dims.seq_len, "N");
    fl->add_option("--d", dims.width, "D");
    fl->add_option("--heads", dims.heads, "H");
    fl->add_option("--layers", dims.layers, "L");
    fl->add_option("--vocab", dims.vocab, "V");
    fl->add_option("--order", dims.filter_order, "implicit filter order");

    std::vector<std::string> argv_like(args);
    try {
        std::vector<const char*> argv;
        argv.push_back("mqar");
        for (const auto& a : argv_like) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_args);
        if (oracle->parsed()) return cmd_oracle(oracle_data, oracle_algo, jobs);
        if (verify->parsed())
            return cmd_verify_constructions(suite, verify_seed, verify_trials, verify_t,
                                            inject_fault);
        if (sweep->parsed()) return cmd_sweep(sweep_out, sweep_variants, sweep_n, sweep_d,
                                              sweep_cfg);
        if (slice->parsed())
            return cmd_slice(slice_stream, slice_lp_m, slice_lp_ref, slice_freq, slice_threshold,
                             slice_out, slice_gaps);
        if (fl->parsed()) return cmd_flops(flops_arch, dims);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace mqar::cli
