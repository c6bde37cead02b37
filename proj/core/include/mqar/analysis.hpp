#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqar/numerics.hpp"

namespace mqar {

struct TokenStream {
    std::vector<TokenSequence> documents;
    // aligned per-token log-probabilities, one array per document
    std::vector<std::vector<double>> logprobs;

    void validate_alignment() const;
};

// bigram -> training occurrence count
struct FreqTable {
    std::unordered_map<uint64_t, uint64_t> counts;

    static uint64_t pack(int32_t a, int32_t b) {
        return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) |
               static_cast<uint64_t>(static_cast<uint32_t>(b));
    }
    uint64_t get(int32_t a, int32_t b) const {
        auto it = counts.find(pack(a, b));
        return it == counts.end() ? 0 : it->second;
    }
    void set(int32_t a, int32_t b, uint64_t n) { counts[pack(a, b)] = n; }
};

// Position p >= 1 is a hit iff the bigram (tokens[p-1], tokens[p]) occurred
// earlier in the same document and its training count is <= threshold
// (absent bigrams count 0). The default threshold is 1250.
std::vector<size_t> find_ar_hits(const TokenSequence& doc, const FreqTable& freq,
                                 uint64_t threshold = 1250);

struct SliceStats {
    size_t token_count = 0;
    double mean_nll = 0.0;   // undefined when token_count == 0
    double perplexity = 0.0; // exp(mean_nll); undefined when token_count == 0
    bool defined = false;
};

struct SliceReport {
    SliceStats ar_hits;
    SliceStats other;
    size_t total_tokens = 0;
    double hit_fraction = 0.0;  // p_H
};

// Stratify scored tokens into AR hits vs the rest. Inputs are log-probs; the
// report carries mean negative log-likelihoods and perplexities per slice.
SliceReport slice_perplexity(const TokenStream& stream,
                             const std::vector<std::vector<size_t>>& hits_per_doc);

enum class GapAttributionStatus : uint8_t { defined, tie, model_better };

struct GapAttribution {
    GapAttributionStatus status = GapAttributionStatus::defined;
    double fraction = 0.0;  // in [0,1] when defined
};

// min((l_H^m - l_H^M) * p_H / (l^m - l^M), 1.0) over mean NLLs, clamped to
// [0, 1]. Defined only when the evaluated model is worse overall (l^m > l^M).
GapAttribution gap_attribution(double model_hit_nll, double model_overall_nll,
                               double ref_hit_nll, double ref_overall_nll, double hit_fraction);

// For each repeated-bigram position, the distance to the prior occurrence of
// the same bigram (no frequency filter).
std::map<size_t, size_t> gap_histogram(const TokenSequence& doc);

enum class FlopsArch : uint8_t { attention, hyena, longconv, baseconv, rwkv };

struct FlopsDims {
    double batch = 1;       // B
    double seq_len = 2048;  // N
    double width = 768;     // D
    double heads = 12;      // H
    double layers = 12;     // L
    double vocab = 50257;   // V
    double filter_order = 64;
};

FlopsArch flops_arch_from(const std::string& name);

// Per-architecture forward cost: input embedding and LM head once, the
// sequence-mixer and channel-mixer rows once per layer. Every term carries the
// batch factor, so the count is linear in B.
double flops(FlopsArch arch, const FlopsDims& dims);

}  // namespace mqar
