#pragma once

#include <cassert>
#include <cstdint>
#include <optional>
#include <vector>

#include "mqar/numerics.hpp"

namespace mqar {

// One (key, value, query) step of the triple-form recall problem.
struct Triple {
    int64_t key;
    int64_t value;
    int64_t query;
};

struct RecallMatch {
    int64_t key_index;  // j with k_j == q_i, j < i
    int64_t value;      // v_j
};

// Per query position: the matched key index and its value, or nothing.
using RecallLabeling = std::vector<std::optional<RecallMatch>>;

// Associative-array pass over the triples. The query at step i is answered
// before (k_i, v_i) is inserted, so a key is never visible to its own step.
// When a key repeats, the most recent insertion wins.
RecallLabeling sequential_mqar(const std::vector<Triple>& input);

// Token-level recall per the task definition: for each i >= 1 with some j < i
// such that tokens[j] == tokens[i], output tokens[j*+1] where j* is the most
// recent such j. Tokens equal to ignore_token (e.g. a pad id) never match.
struct TokenMatch {
    int64_t match_pos;  // j*
    int32_t output;     // tokens[j*+1]
};
std::vector<std::optional<TokenMatch>> token_mqar(const TokenSequence& tokens,
                                                  std::optional<int32_t> ignore_token = {});

// Multiple search: for sorted a (n) and b (m), c[i] = min{ j : a[i] <= b[j] },
// or m if a[i] > b[m-1]. Recursive midpoint split with three branches.
std::vector<size_t> pbs_multiple_search(const std::vector<int64_t>& a,
                                        const std::vector<int64_t>& b);

// Dyadic-interval parallel solver; identical labeling to sequential_mqar.
// Pads the triple count to a power of two with non-matching sentinels.
RecallLabeling parallel_mqar(const std::vector<Triple>& input, int jobs = 1);

// Fraction of label positions where the prediction equals the target.
// Every label position must carry a prediction.
double score(const std::vector<std::optional<int64_t>>& predictions,
             const std::vector<std::pair<size_t, int64_t>>& labels);

}  // namespace mqar
