#include "mqar/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mqar {

void TokenStream::validate_alignment() const {
    require(logprobs.empty() || logprobs.size() == documents.size(),
            "TokenStream: log-prob sidecar must cover every document");
    for (size_t i = 0; i < logprobs.size(); ++i)
        require(logprobs[i].size() == documents[i].size(),
                "TokenStream: log-prob length mismatch at document " + std::to_string(i));
}

std::vector<size_t> find_ar_hits(const TokenSequence& doc, const FreqTable& freq,
                                 uint64_t threshold) {
    std::vector<size_t> hits;
    std::unordered_set<uint64_t> seen;
    seen.reserve(doc.size() * 2);
    for (size_t p = 1; p < doc.size(); ++p) {
        uint64_t bigram = FreqTable::pack(doc[p - 1], doc[p]);
        if (seen.count(bigram) && freq.get(doc[p - 1], doc[p]) <= threshold) hits.push_back(p);
        seen.insert(bigram);
    }
    return hits;
}

SliceReport slice_perplexity(const TokenStream& stream,
                             const std::vector<std::vector<size_t>>& hits_per_doc) {
    stream.validate_alignment();
    require(!stream.logprobs.empty(), "slice_perplexity: log-probs required");
    require(hits_per_doc.size() == stream.documents.size(),
            "slice_perplexity: hits must cover every document");

    SliceReport rep;
    double nll_hits = 0.0, nll_other = 0.0;  // accumulated in double
    for (size_t d = 0; d < stream.documents.size(); ++d) {
        const auto& lp = stream.logprobs[d];
        std::vector<bool> is_hit(lp.size(), false);
        for (size_t p : hits_per_doc[d]) {
            require(p < lp.size(), "slice_perplexity: hit position out of range");
            is_hit[p] = true;
        }
        for (size_t p = 0; p < lp.size(); ++p) {
            if (is_hit[p]) {
                ++rep.ar_hits.token_count;
                nll_hits -= lp[p];
            } else {
                ++rep.other.token_count;
                nll_other -= lp[p];
            }
        }
    }
    rep.total_tokens = rep.ar_hits.token_count + rep.other.token_count;
    rep.hit_fraction = rep.total_tokens == 0
                           ? 0.0
                           : static_cast<double>(rep.ar_hits.token_count) /
                                 static_cast<double>(rep.total_tokens);
    auto finish = [](SliceStats& s, double nll_sum) {
        if (s.token_count == 0) return;  // reported as undefined, never NaN
        s.defined = true;
        s.mean_nll = nll_sum / static_cast<double>(s.token_count);
        s.perplexity = std::exp(s.mean_nll);
    };
    finish(rep.ar_hits, nll_hits);
    finish(rep.other, nll_other);
    return rep;
}

GapAttribution gap_attribution(double model_hit_nll, double model_overall_nll,
                               double ref_hit_nll, double ref_overall_nll, double hit_fraction) {
    GapAttribution out;
    double overall_gap = model_overall_nll - ref_overall_nll;
    if (overall_gap == 0.0) {
        out.status = GapAttributionStatus::tie;
        return out;
    }
    if (overall_gap < 0.0) {
        out.status = GapAttributionStatus::model_better;
        return out;
    }
    double raw = (model_hit_nll - ref_hit_nll) * hit_fraction / overall_gap;
    out.fraction = std::clamp(raw, 0.0, 1.0);
    return out;
}

std::map<size_t, size_t> gap_histogram(const TokenSequence& doc) {
    std::map<size_t, size_t> hist;
    std::unordered_map<uint64_t, size_t> last_pos;
    for (size_t p = 1; p < doc.size(); ++p) {
        uint64_t bigram = FreqTable::pack(doc[p - 1], doc[p]);
        auto it = last_pos.find(bigram);
        if (it != last_pos.end()) ++hist[p - it->second];
        last_pos[bigram] = p;
    }
    return hist;
}

FlopsArch flops_arch_from(const std::string& name) {
    if (name == "attention") return FlopsArch::attention;
    if (name == "hyena") return FlopsArch::hyena;
    if (name == "longconv") return FlopsArch::longconv;
    if (name == "baseconv") return FlopsArch::baseconv;
    if (name == "rwkv") return FlopsArch::rwkv;
    throw std::invalid_argument("flops: unknown architecture '" + name + "'");
}

double flops(FlopsArch arch, const FlopsDims& dm) {
    require(dm.batch >= 0, "flops: B must be >= 0");
    require(dm.seq_len > 0 && dm.width > 0 && dm.layers > 0 && dm.vocab > 0,
            "flops: dims must be positive");
    const double b = dm.batch, n = dm.seq_len, d = dm.width, h = dm.heads, l = dm.layers,
                 v = dm.vocab;
    const double log_n = std::log2(n);
    const double embed_and_head = 2.0 * b * v * n * d;

    switch (arch) {
        case FlopsArch::attention: {
            double qkv = b * n * d * d * 3.0;
            double attn = b * (h * h * d + h * n * n + n * n * d);
            double out_proj = b * n * d * d;
            double channel = b * d * d * 8.0 * (2.0 / 3.0) * n;
            return embed_and_head + l * (qkv + attn + out_proj + channel);
        }
        case FlopsArch::hyena: {
            double in_proj = b * n * d * d * 3.0 + b * n * 9.0 * d;
            double long_conv = 10.0 * n * log_n * d * b;
            double short_conv = 3.0 * b * n * d;
            double implicit_mlp = b * d * dm.filter_order;
            double out_proj = b * n * d * d;
            double channel = b * d * d * 2.0 * 2.0 * n;
            return embed_and_head +
                   l * (in_proj + long_conv + short_conv + implicit_mlp + out_proj + channel);
        }
        case FlopsArch::longconv: {
            double long_conv = 10.0 * n * log_n * d * b;
            double out_proj = b * n * d * d;
            double channel = b * d * d * 8.0 * (2.0 / 3.0) * n;
            return embed_and_head + l * (long_conv + out_proj + channel);
        }
        case FlopsArch::baseconv: {
            double long_conv = 10.0 * n * log_n * 0.5 * d * b;
            double short_conv = b * n * 0.5 * d;
            double implicit_mlp = b * 0.5 * d * dm.filter_order;
            double proj = b * n * d * d;
            double channel = b * d * d * 2.0 * 2.0 * n;
            return embed_and_head + l * (long_conv + short_conv + implicit_mlp + proj + channel);
        }
        case FlopsArch::rwkv: {
            // linear-layer parameters: 4 d^2 time-mix + 9 d^2 channel-mix per layer
            double linear_params = 13.0 * d * d * l;
            return embed_and_head + b * n * linear_params;
        }
    }
    return 0.0;
}

}  // namespace mqar
