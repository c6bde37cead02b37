#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mqar/datagen.hpp"
#include "mqar/oracle.hpp"

using namespace mqar;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::string temp_path(const char* name) { return std::string("/tmp/mqar_test_") + name; }

}  // namespace

TEST_CASE("config validation") {
    GenConfig cfg;
    cfg.seq_len = 8;
    cfg.num_pairs = 2;
    cfg.vocab_size = 16;
    CHECK_NOTHROW(cfg.validate());

    GenConfig odd = cfg;
    odd.vocab_size = 15;
    CHECK_THROWS_AS(odd.validate(), std::invalid_argument);

    GenConfig tight = cfg;
    tight.seq_len = 5;  // 2 second occurrences cannot fit in 5 - 4 = 1 slot
    CHECK_THROWS_AS(tight.validate(), std::invalid_argument);

    GenConfig bad_alpha = cfg;
    bad_alpha.alpha = 0.0;
    CHECK_THROWS_AS(bad_alpha.validate(), std::invalid_argument);
}

TEST_CASE("mqar instances satisfy the layout invariants") {
    GenConfig cfg;
    cfg.seq_len = 64;
    cfg.num_pairs = 4;
    cfg.vocab_size = 64;
    cfg.seed = 3;
    for (uint64_t idx = 0; idx < 200; ++idx) {
        auto inst = gen_mqar(cfg, idx);
        REQUIRE(inst.tokens.size() == 64);
        REQUIRE(inst.labels.size() == 4);
        std::map<int32_t, size_t> key_count;
        for (size_t j = 0; j < cfg.num_pairs; ++j) {
            int32_t key = inst.tokens[2 * j];
            int32_t value = inst.tokens[2 * j + 1];
            CHECK(key < static_cast<int32_t>(cfg.vocab_size / 2));
            CHECK(value >= static_cast<int32_t>(cfg.vocab_size / 2));
            CHECK(value < static_cast<int32_t>(cfg.vocab_size));
        }
        for (int32_t t : inst.tokens)
            if (t < static_cast<int32_t>(cfg.vocab_size / 2)) ++key_count[t];
        for (const auto& [key, count] : key_count) CHECK(count == 2);
        for (const auto& lab : inst.labels) {
            CHECK(lab.pos >= 2 * cfg.num_pairs);
            CHECK(lab.pos < cfg.seq_len);
            // second occurrence of a key, paired with its value
            int32_t key = inst.tokens[lab.pos];
            bool found = false;
            for (size_t j = 0; j < cfg.num_pairs; ++j)
                if (inst.tokens[2 * j] == key) {
                    CHECK(inst.tokens[2 * j + 1] == lab.target);
                    found = true;
                }
            CHECK(found);
        }
    }
}

TEST_CASE("generation is deterministic in (seed, index)") {
    GenConfig cfg;
    cfg.seq_len = 64;
    cfg.num_pairs = 4;
    cfg.alpha = 0.1;
    cfg.vocab_size = 8192;
    cfg.seed = 99;
    auto a = gen_mqar(cfg, 17);
    auto b = gen_mqar(cfg, 17);
    CHECK(a.tokens == b.tokens);
    REQUIRE(a.labels.size() == b.labels.size());
    for (size_t i = 0; i < a.labels.size(); ++i) {
        CHECK(a.labels[i].pos == b.labels[i].pos);
        CHECK(a.labels[i].target == b.labels[i].target);
    }
    CHECK(gen_mqar(cfg, 18).tokens != a.tokens);
}

TEST_CASE("forced small layout at D=1, N=4") {
    GenConfig cfg;
    cfg.seq_len = 4;
    cfg.num_pairs = 1;
    cfg.vocab_size = 8;
    for (uint64_t idx = 0; idx < 32; ++idx) {
        auto inst = gen_mqar(cfg, idx);
        int32_t key = inst.tokens[0];
        REQUIRE(inst.labels.size() == 1);
        size_t second = inst.labels[0].pos;
        CHECK((second == 2 || second == 3));
        CHECK(inst.tokens[second] == key);
        CHECK(inst.labels[0].target == inst.tokens[1]);
        size_t pad_pos = second == 2 ? 3 : 2;
        CHECK(inst.tokens[pad_pos] == cfg.pad_token());
    }
}

TEST_CASE("single query instances") {
    GenConfig cfg;
    cfg.seq_len = 3;
    cfg.num_pairs = 1;
    cfg.vocab_size = 8;
    auto inst = gen_single_query(cfg, 0);
    CHECK(inst.tokens[2] == inst.tokens[0]);
    REQUIRE(inst.labels.size() == 1);
    CHECK(inst.labels[0].pos == 2);
    CHECK(inst.labels[0].target == inst.tokens[1]);

    cfg.seq_len = 32;
    cfg.num_pairs = 5;
    cfg.vocab_size = 64;
    cfg.seed = 5;
    for (uint64_t idx = 0; idx < 40; ++idx) {
        auto one = gen_single_query(cfg, idx);
        REQUIRE(one.labels.size() == 1);
        CHECK(one.labels[0].pos == cfg.seq_len - 1);
        auto out = token_mqar(one.tokens, cfg.pad_token());
        REQUIRE(out[cfg.seq_len - 1].has_value());
        CHECK(out[cfg.seq_len - 1]->output == one.labels[0].target);
    }
    CHECK(gen_single_query(cfg, 7).tokens == gen_single_query(cfg, 7).tokens);
}

TEST_CASE("filler eval instances") {
    // the evaluation grid must all validate
    for (size_t p : {16, 32, 64, 128, 256}) CHECK_NOTHROW(gen_filler_eval(p, 1024, 8192, 1));

    auto tiny = gen_filler_eval(1, 8, 16, 2);
    size_t ar_labels = 0;
    for (const auto& lab : tiny.labels)
        if (lab.kind == LabelKind::ar) ++ar_labels;
    CHECK(ar_labels == 1);

    for (uint64_t idx = 0; idx < 20; ++idx) {
        auto inst = gen_filler_eval(8, 128, 256, 3, idx);
        auto out = token_mqar(inst.tokens);
        for (const auto& lab : inst.labels) {
            if (lab.kind == LabelKind::ar) {
                REQUIRE(out[lab.pos].has_value());
                CHECK(out[lab.pos]->output == lab.target);
            } else {
                // non-AR labels sit on filler positions whose successor is filler
                CHECK(inst.tokens[lab.pos] == filler_token(256));
                CHECK(inst.tokens[lab.pos + 1] == filler_token(256));
                CHECK(lab.target == filler_token(256));
            }
        }
    }
    CHECK_THROWS_AS(gen_filler_eval(3, 8, 16, 0), std::invalid_argument);
}

TEST_CASE("dataset io round trips") {
    std::string path = temp_path("ds.jsonl");

    SUBCASE("empty dataset") {
        write_dataset({}, path);
        CHECK(read_dataset(path).empty());
    }

    SUBCASE("rewrite is byte identical") {
        GenConfig cfg;
        cfg.seq_len = 32;
        cfg.num_pairs = 3;
        cfg.vocab_size = 128;
        cfg.seed = 21;
        std::vector<MqarInstance> instances;
        for (uint64_t i = 0; i < 1000; ++i) instances.push_back(gen_mqar(cfg, i));
        write_dataset(instances, path);
        std::string bytes = read_file(path);
        auto back = read_dataset(path);
        REQUIRE(back.size() == instances.size());
        for (size_t i = 0; i < back.size(); ++i) {
            CHECK(back[i].tokens == instances[i].tokens);
            CHECK(back[i].labels.size() == instances[i].labels.size());
            CHECK(back[i].seed == instances[i].seed);
            CHECK(back[i].index == instances[i].index);
            CHECK(back[i].alpha == instances[i].alpha);
        }
        write_dataset(back, path);
        CHECK(read_file(path) == bytes);
    }

    SUBCASE("malformed records are rejected with a line number") {
        {
            std::ofstream os(path);
            os << "{\"format\":\"mqar-v1\"}\n";
            os << "{\"tokens\":[1,2],\"meta\":{}}\n";  // labels missing
        }
        CHECK_THROWS_WITH_AS(read_dataset(path),
                             "dataset line 2: missing field 'labels'", std::runtime_error);
        {
            std::ofstream os(path);
            os << "{\"format\":\"mqar-v0\"}\n";
        }
        CHECK_THROWS_AS(read_dataset(path), std::runtime_error);
        {
            std::ofstream os(path);
            os << "{\"format\":\"mqar-v1\"}\n";
            os << "not json\n";
        }
        CHECK_THROWS_AS(read_dataset(path), std::runtime_error);
    }

    std::remove(path.c_str());
}

TEST_CASE("gap distribution follows the configured power law") {
    GenConfig cfg;
    cfg.seq_len = 256;
    cfg.num_pairs = 4;
    cfg.alpha = 0.1;
    cfg.vocab_size = 8192;
    cfg.seed = 31;

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

    // least-squares slope of log(count) vs log(gap) over the clean midrange
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    size_t points = 0;
    for (const auto& [gap, count] : gap_counts) {
        if (gap < 8 || gap > 200 || count == 0) continue;
        double x = std::log(static_cast<double>(gap));
        double y = std::log(static_cast<double>(count));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++points;
    }
    double slope = (static_cast<double>(points) * sxy - sx * sy) /
                   (static_cast<double>(points) * sxx - sx * sx);
    CHECK(slope < 0.0);
    CHECK(std::abs(slope - (-cfg.alpha)) <= 0.15);
}
