#include <doctest.h>

#include <algorithm>

#include "mqar/datagen.hpp"
#include "mqar/oracle.hpp"
#include "mqar/rng.hpp"

using namespace mqar;

namespace {

bool same_labeling(const RecallLabeling& a, const RecallLabeling& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].has_value() != b[i].has_value()) return false;
        if (a[i] && (a[i]->key_index != b[i]->key_index || a[i]->value != b[i]->value))
            return false;
    }
    return true;
}

std::vector<Triple> random_triples(Rng& rng, size_t count, size_t vocab) {
    std::vector<Triple> out(count);
    for (auto& t : out) {
        t.key = static_cast<int64_t>(rng.next_below(vocab));
        t.value = static_cast<int64_t>(rng.next_below(vocab));
        t.query = static_cast<int64_t>(rng.next_below(vocab));
    }
    return out;
}

}  // namespace

TEST_CASE("sequential oracle answers the single-query example") {
    // pairs (A,4) (B,3) (C,6) (E,2) (F,1) (C,6) (G,8), then query B -> 3
    // tokens: letters 0..6, digit values offset by 100
    std::vector<Triple> input{
        {0, 104, 900}, {1, 103, 901}, {2, 106, 902}, {3, 102, 903},
        {4, 101, 904}, {2, 106, 905}, {5, 108, 906}, {999, 999, 1},
    };
    auto out = sequential_mqar(input);
    for (size_t i = 0; i + 1 < out.size(); ++i) CHECK(!out[i].has_value());
    REQUIRE(out.back().has_value());
    CHECK(out.back()->value == 103);
    CHECK(out.back()->key_index == 1);
}

TEST_CASE("a key inserted at step i is invisible to its own query") {
    std::vector<Triple> input{{7, 42, 7}};
    auto out = sequential_mqar(input);
    CHECK(!out[0].has_value());
    // but visible one step later
    input.push_back({8, 43, 7});
    out = sequential_mqar(input);
    REQUIRE(out[1].has_value());
    CHECK(out[1]->value == 42);
}

TEST_CASE("repeated keys resolve to the most recent insertion") {
    std::vector<Triple> input{{5, 10, 0}, {5, 11, 0}, {0, 0, 5}};
    auto out = sequential_mqar(input);
    REQUIRE(out[2].has_value());
    CHECK(out[2]->value == 11);
    CHECK(out[2]->key_index == 1);
}

TEST_CASE("token oracle answers the multi-query example") {
    // A 4 B 3 C 6 F 1 E 2 A C F E B  ->  4 6 1 2 3 at the query positions
    // letters: A=0 B=1 C=2 F=3 E=4; digits offset by 100
    TokenSequence toks{0, 104, 1, 103, 2, 106, 3, 101, 4, 102, 0, 2, 3, 4, 1};
    auto out = token_mqar(toks);
    struct Want {
        size_t pos;
        int32_t target;
    };
    for (const auto& w :
         {Want{10, 104}, Want{11, 106}, Want{12, 101}, Want{13, 102}, Want{14, 103}}) {
        REQUIRE(out[w.pos].has_value());
        CHECK(out[w.pos]->output == w.target);
    }
    for (size_t i = 0; i < 10; ++i) CHECK(!out[i].has_value());
}

TEST_CASE("token oracle on all-distinct tokens is empty") {
    auto out = token_mqar({5, 6, 7, 8});
    for (const auto& m : out) CHECK(!m.has_value());
}

TEST_CASE("token oracle reproduces generated labels") {
    GenConfig cfg;
    cfg.seq_len = 64;
    cfg.num_pairs = 6;
    cfg.vocab_size = 256;
    cfg.seed = 11;
    for (uint64_t i = 0; i < 50; ++i) {
        auto inst = gen_mqar(cfg, i);
        auto out = token_mqar(inst.tokens, cfg.pad_token());
        size_t matched_positions = 0;
        for (const auto& m : out)
            if (m) ++matched_positions;
        CHECK(matched_positions == inst.labels.size());
        for (const auto& lab : inst.labels) {
            REQUIRE(out[lab.pos].has_value());
            CHECK(out[lab.pos]->output == lab.target);
        }
    }
}

TEST_CASE("pbs multiple search basics") {
    std::vector<int64_t> a{1, 3, 5, 9};
    CHECK(pbs_multiple_search(a, a) == std::vector<size_t>{0, 1, 2, 3});
    CHECK(pbs_multiple_search({5}, {1, 3}) == std::vector<size_t>{2});
    CHECK(pbs_multiple_search({0, 2, 4}, {1, 3, 5}) == std::vector<size_t>{0, 1, 2});
}

TEST_CASE("pbs equals the linear scan on random sorted arrays") {
    Rng rng(12);
    for (int trial = 0; trial < 400; ++trial) {
        size_t n = 1 + rng.next_below(256), m = 1 + rng.next_below(256);
        std::vector<int64_t> a(n), b(m);
        for (auto& v : a) v = static_cast<int64_t>(rng.next_below(300));
        for (auto& v : b) v = static_cast<int64_t>(rng.next_below(300));
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
            CHECK(got[i] == want);
        }
    }
}

TEST_CASE("parallel oracle equals the sequential oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 300; ++trial) {
        size_t count = 1 + rng.next_below(256);
        size_t vocab = 2 + rng.next_below(64);  // small vocab forces repeats
        auto triples = random_triples(rng, count, vocab);
        CHECK(same_labeling(parallel_mqar(triples), sequential_mqar(triples)));
    }
}

TEST_CASE("parallel oracle is thread-count independent") {
    Rng rng(14);
    auto triples = random_triples(rng, 200, 16);
    auto one = parallel_mqar(triples, 1);
    auto four = parallel_mqar(triples, 4);
    CHECK(same_labeling(one, four));
}

TEST_CASE("parallel oracle edge cases") {
    CHECK(parallel_mqar({}).empty());

    // single pair, forced layout
    std::vector<Triple> single{{3, 9, 100}, {200, 201, 3}};
    auto out = parallel_mqar(single);
    CHECK(!out[0].has_value());
    REQUIRE(out[1].has_value());
    CHECK(out[1]->value == 9);

    // no repeated keys -> empty labeling
    std::vector<Triple> distinct;
    for (int64_t i = 0; i < 37; ++i) distinct.push_back({i, 100 + i, 1000 + i});
    for (const auto& m : parallel_mqar(distinct)) CHECK(!m.has_value());
}

TEST_CASE("score") {
    std::vector<std::pair<size_t, int64_t>> labels{{0, 5}, {1, 6}};
    CHECK(score({5, 6}, labels) == 1.0);
    CHECK(score({4, 7}, labels) == 0.0);
    CHECK(score({5, 7}, labels) == 0.5);
    CHECK_THROWS_AS(score({5, std::nullopt}, labels), std::invalid_argument);
}
