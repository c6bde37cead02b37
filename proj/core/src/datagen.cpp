#include "mqar/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mqar/rng.hpp"

#include <json.hpp>

namespace mqar {

using nlohmann::json;

void GenConfig::validate() const {
    require(vocab_size >= 2 && vocab_size % 2 == 0, "GenConfig: vocab_size must be even and >= 2");
    require(seq_len >= 2, "GenConfig: seq_len must be >= 2");
    require(num_pairs >= 1, "GenConfig: num_pairs must be >= 1");
    require(2 * num_pairs <= seq_len, "GenConfig: 2*D must be <= N");
    require(num_pairs <= vocab_size / 2, "GenConfig: D must be <= vocab/2");
    require(alpha > 0.0, "GenConfig: alpha must be > 0");
    require(num_pairs <= seq_len - 2 * num_pairs,
            "GenConfig: D second occurrences cannot fit in N-2D slots");
}

namespace {

// D distinct draws from [lo, hi) in random order.
std::vector<int32_t> sample_distinct(Rng& rng, int32_t lo, int32_t hi, size_t count) {
    std::vector<int32_t> pool(static_cast<size_t>(hi - lo));
    std::iota(pool.begin(), pool.end(), lo);
    for (size_t i = 0; i < count; ++i) {
        size_t j = i + static_cast<size_t>(rng.next_below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

void place_pairs_prefix(MqarInstance& inst, const std::vector<int32_t>& keys,
                        const std::vector<int32_t>& values) {
    for (size_t j = 0; j < keys.size(); ++j) {
        inst.tokens[2 * j] = keys[j];
        inst.tokens[2 * j + 1] = values[j];
    }
}

}  // namespace

MqarInstance gen_mqar(const GenConfig& cfg, uint64_t index) {
    cfg.validate();
    Rng rng(stream_seed(cfg.seed, "datagen", index));

    const size_t n = cfg.seq_len, d = cfg.num_pairs, c = cfg.vocab_size;
    MqarInstance inst;
    inst.tokens.assign(n, cfg.pad_token());
    inst.seq_len = n;
    inst.num_pairs = d;
    inst.alpha = cfg.alpha;
    inst.vocab_size = c;
    inst.seed = cfg.seed;
    inst.index = index;
    inst.variant = InstanceVariant::mqar;

    auto keys = sample_distinct(rng, 0, static_cast<int32_t>(c / 2), d);
    auto values = sample_distinct(rng, static_cast<int32_t>(c / 2), static_cast<int32_t>(c), d);
    place_pairs_prefix(inst, keys, values);

    // Second occurrences: sequential placement per pair in random order,
    // gap-relative power-law weights over the still-free slots, renormalized
    // after each placement.
    std::vector<size_t> order(d);
    std::iota(order.begin(), order.end(), size_t{0});
    rng.shuffle(order);

    std::vector<size_t> free_slots(n - 2 * d);
    std::iota(free_slots.begin(), free_slots.end(), 2 * d);

    std::vector<double> weights;
    for (size_t pair : order) {
        const size_t first_pos = 2 * pair;
        weights.resize(free_slots.size());
        double total = 0.0;
        for (size_t s = 0; s < free_slots.size(); ++s) {
            double gap = static_cast<double>(free_slots[s] - first_pos);
            weights[s] = std::pow(gap, -cfg.alpha);
            total += weights[s];
        }
        double r = rng.next_double() * total;
        size_t pick = free_slots.size() - 1;
        double acc = 0.0;
        for (size_t s = 0; s < free_slots.size(); ++s) {
            acc += weights[s];
            if (r < acc) {
                pick = s;
                break;
            }
        }
        size_t pos = free_slots[pick];
        free_slots.erase(free_slots.begin() + static_cast<std::ptrdiff_t>(pick));
        inst.tokens[pos] = keys[pair];
        inst.labels.push_back(Label{pos, values[pair], LabelKind::ar});
    }
    std::sort(inst.labels.begin(), inst.labels.end(),
              [](const Label& a, const Label& b) { return a.pos < b.pos; });
    return inst;
}

MqarInstance gen_single_query(const GenConfig& cfg, uint64_t index) {
    cfg.validate();
    require(2 * cfg.num_pairs + 1 <= cfg.seq_len, "gen_single_query: need room for the query");
    Rng rng(stream_seed(cfg.seed, "datagen-single", index));

    const size_t n = cfg.seq_len, d = cfg.num_pairs, c = cfg.vocab_size;
    MqarInstance inst;
    inst.tokens.assign(n, cfg.pad_token());
    inst.seq_len = n;
    inst.num_pairs = d;
    inst.alpha = cfg.alpha;
    inst.vocab_size = c;
    inst.seed = cfg.seed;
    inst.index = index;
    inst.variant = InstanceVariant::single_query;

    auto keys = sample_distinct(rng, 0, static_cast<int32_t>(c / 2), d);
    auto values = sample_distinct(rng, static_cast<int32_t>(c / 2), static_cast<int32_t>(c), d);
    place_pairs_prefix(inst, keys, values);

    size_t pick = static_cast<size_t>(rng.next_below(d));
    inst.tokens[n - 1] = keys[pick];
    inst.labels.push_back(Label{n - 1, values[pick], LabelKind::ar});
    return inst;
}

int32_t filler_token(size_t vocab) { return static_cast<int32_t>(vocab) - 1; }

MqarInstance gen_filler_eval(size_t num_pairs, size_t seq_len, size_t vocab, uint64_t seed,
                             uint64_t index) {
    require(vocab >= 4 && vocab % 2 == 0, "gen_filler_eval: vocab must be even and >= 4");
    require(num_pairs >= 1, "gen_filler_eval: P must be >= 1");
    require(4 * num_pairs <= seq_len, "gen_filler_eval: need 4*P <= N");
    require(num_pairs <= vocab / 2, "gen_filler_eval: P must be <= vocab/2");
    require(num_pairs <= vocab / 2 - 1, "gen_filler_eval: P values must avoid the filler token");
    Rng rng(stream_seed(seed, "datagen-filler", index));

    const int32_t filler = filler_token(vocab);
    MqarInstance inst;
    inst.tokens.assign(seq_len, filler);
    inst.seq_len = seq_len;
    inst.num_pairs = num_pairs;
    inst.alpha = 0.0;
    inst.vocab_size = vocab;
    inst.seed = seed;
    inst.index = index;
    inst.variant = InstanceVariant::filler;

    auto keys = sample_distinct(rng, 0, static_cast<int32_t>(vocab / 2), num_pairs);
    // values exclude the filler id, which sits at the top of the value range
    auto values = sample_distinct(rng, static_cast<int32_t>(vocab / 2),
                                  static_cast<int32_t>(vocab) - 1, num_pairs);

    // bigrams occupy two-token aligned slots; each pair appears in two slots
    auto slot_ids = sample_distinct(rng, 0, static_cast<int32_t>(seq_len / 2),
                                    2 * num_pairs);
    for (size_t p = 0; p < num_pairs; ++p) {
        size_t a = static_cast<size_t>(slot_ids[2 * p]);
        size_t b = static_cast<size_t>(slot_ids[2 * p + 1]);
        if (a > b) std::swap(a, b);
        for (size_t pos : {2 * a, 2 * b}) {
            inst.tokens[pos] = keys[p];
            inst.tokens[pos + 1] = values[p];
        }
        inst.labels.push_back(Label{2 * b, values[p], LabelKind::ar});
    }
    for (size_t p = 0; p + 1 < seq_len; ++p)
        if (inst.tokens[p] == filler && inst.tokens[p + 1] == filler)
            inst.labels.push_back(Label{p, filler, LabelKind::other});
    std::sort(inst.labels.begin(), inst.labels.end(),
              [](const Label& a, const Label& b) { return a.pos < b.pos; });
    return inst;
}

namespace {

const char* variant_name(InstanceVariant v) {
    switch (v) {
        case InstanceVariant::mqar: return "mqar";
        case InstanceVariant::single_query: return "single";
        case InstanceVariant::filler: return "filler";
    }
    return "mqar";
}

InstanceVariant variant_from(const std::string& s, size_t line_no) {
    if (s == "mqar") return InstanceVariant::mqar;
    if (s == "single") return InstanceVariant::single_query;
    if (s == "filler") return InstanceVariant::filler;
    throw std::runtime_error("dataset line " + std::to_string(line_no) + ": unknown variant '" +
                             s + "'");
}

json require_field(const json& rec, const char* name, size_t line_no) {
    if (!rec.contains(name))
        throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                 ": missing field '" + name + "'");
    return rec.at(name);
}

}  // namespace

void write_dataset(const std::vector<MqarInstance>& instances, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "write_dataset: cannot open " + path);
    out << json{{"format", "mqar-v1"}}.dump() << "\n";
    for (const auto& inst : instances) {
        json labels = json::array();
        for (const auto& l : inst.labels)
            labels.push_back({{"pos", l.pos},
                              {"target", l.target},
                              {"kind", l.kind == LabelKind::ar ? "ar" : "other"}});
        json rec{{"tokens", inst.tokens},
                 {"labels", labels},
                 {"meta",
                  {{"N", inst.seq_len},
                   {"D", inst.num_pairs},
                   {"alpha", inst.alpha},
                   {"vocab", inst.vocab_size},
                   {"seed", inst.seed},
                   {"index", inst.index},
                   {"variant", variant_name(inst.variant)}}}};
        out << rec.dump() << "\n";
    }
    require(out.good(), "write_dataset: write failed for " + path);
}

std::vector<MqarInstance> read_dataset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "read_dataset: cannot open " + path);
    std::string line;
    size_t line_no = 0;
    std::vector<MqarInstance> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                     ": parse error: " + e.what());
        }
        if (line_no == 1) {
            std::string fmt = require_field(rec, "format", line_no).get<std::string>();
            if (fmt != "mqar-v1")
                throw std::runtime_error("dataset line 1: unsupported format version '" + fmt +
                                         "'");
            continue;
        }
        MqarInstance inst;
        inst.tokens = require_field(rec, "tokens", line_no).get<TokenSequence>();
        for (const auto& l : require_field(rec, "labels", line_no)) {
            Label lab;
            lab.pos = require_field(l, "pos", line_no).get<size_t>();
            lab.target = require_field(l, "target", line_no).get<int32_t>();
            lab.kind = require_field(l, "kind", line_no).get<std::string>() == "ar"
                           ? LabelKind::ar
                           : LabelKind::other;
            inst.labels.push_back(lab);
        }
        json meta = require_field(rec, "meta", line_no);
        inst.seq_len = require_field(meta, "N", line_no).get<size_t>();
        inst.num_pairs = require_field(meta, "D", line_no).get<size_t>();
        inst.alpha = require_field(meta, "alpha", line_no).get<double>();
        inst.vocab_size = require_field(meta, "vocab", line_no).get<size_t>();
        inst.seed = require_field(meta, "seed", line_no).get<uint64_t>();
        inst.index = require_field(meta, "index", line_no).get<uint64_t>();
        inst.variant =
            variant_from(require_field(meta, "variant", line_no).get<std::string>(), line_no);
        out.push_back(std::move(inst));
    }
    require(line_no >= 1, "read_dataset: missing header line in " + path);
    return out;
}

std::vector<Triple> tokens_to_triples(const TokenSequence& tokens) {
    std::vector<Triple> triples;
    triples.reserve(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        int64_t next = (i + 1 < tokens.size()) ? tokens[i + 1] : -1;
        triples.push_back(Triple{tokens[i], next, tokens[i]});
    }
    return triples;
}

}  // namespace mqar
