#include "mqar/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <unordered_map>

namespace mqar {

RecallLabeling sequential_mqar(const std::vector<Triple>& input) {
    RecallLabeling out(input.size());
    std::unordered_map<int64_t, std::pair<int64_t, int64_t>> map;  // key -> (index, value)
    map.reserve(input.size() * 2);
    for (size_t i = 0; i < input.size(); ++i) {
        auto it = map.find(input[i].query);
        if (it != map.end()) out[i] = RecallMatch{it->second.first, it->second.second};
        map[input[i].key] = {static_cast<int64_t>(i), input[i].value};
    }
    return out;
}

std::vector<std::optional<TokenMatch>> token_mqar(const TokenSequence& tokens,
                                                  std::optional<int32_t> ignore_token) {
    std::vector<std::optional<TokenMatch>> out(tokens.size());
    std::unordered_map<int32_t, size_t> last_seen;
    last_seen.reserve(tokens.size() * 2);
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (ignore_token && tokens[i] == *ignore_token) continue;
        auto it = last_seen.find(tokens[i]);
        if (it != last_seen.end() && it->second + 1 < tokens.size())
            out[i] = TokenMatch{static_cast<int64_t>(it->second), tokens[it->second + 1]};
        last_seen[tokens[i]] = i;
    }
    return out;
}

namespace {

void pbs_rec(const std::vector<int64_t>& a, const std::vector<int64_t>& b, int64_t s, int64_t t,
             int64_t x, int64_t y, std::vector<size_t>& c) {
    if (s > t) return;
    if (x > y) {
        for (int64_t i = s; i <= t; ++i) c[static_cast<size_t>(i)] = static_cast<size_t>(y + 1);
        return;
    }
    int64_t mid = (s + t) / 2;
    if (a[static_cast<size_t>(mid)] <= b[static_cast<size_t>(x)]) {
        for (int64_t i = s; i <= mid; ++i) c[static_cast<size_t>(i)] = static_cast<size_t>(x);
        pbs_rec(a, b, mid + 1, t, x, y, c);
    } else if (a[static_cast<size_t>(mid)] > b[static_cast<size_t>(y)]) {
        for (int64_t i = mid; i <= t; ++i) c[static_cast<size_t>(i)] = static_cast<size_t>(y + 1);
        pbs_rec(a, b, s, mid - 1, x, y, c);
    } else {
        // b[x] < a[mid] <= b[y]: locate the split point with a binary search
        int64_t lo = x, hi = y;
        while (lo < hi) {
            int64_t m2 = (lo + hi) / 2;
            if (a[static_cast<size_t>(mid)] <= b[static_cast<size_t>(m2)])
                hi = m2;
            else
                lo = m2 + 1;
        }
        c[static_cast<size_t>(mid)] = static_cast<size_t>(lo);
        pbs_rec(a, b, s, mid - 1, x, lo - 1, c);
        pbs_rec(a, b, mid + 1, t, lo, y, c);
    }
}

}  // namespace

std::vector<size_t> pbs_multiple_search(const std::vector<int64_t>& a,
                                        const std::vector<int64_t>& b) {
    assert(std::is_sorted(a.begin(), a.end()));
    assert(std::is_sorted(b.begin(), b.end()));
    std::vector<size_t> c(a.size(), b.size());
    if (a.empty()) return c;
    pbs_rec(a, b, 0, static_cast<int64_t>(a.size()) - 1, 0, static_cast<int64_t>(b.size()) - 1, c);
    return c;
}

namespace {

struct SortedBlock {
    std::vector<int64_t> vals;
    std::vector<size_t> idx;        // original triple index per sorted slot
    std::vector<size_t> last_equal; // last sorted slot of the run of equal values
};

SortedBlock sort_block(const std::vector<Triple>& in, size_t base, size_t len, bool keys) {
    SortedBlock blk;
    blk.idx.resize(len);
    for (size_t i = 0; i < len; ++i) blk.idx[i] = base + i;
    std::sort(blk.idx.begin(), blk.idx.end(), [&](size_t l, size_t r) {
        int64_t lv = keys ? in[l].key : in[l].query;
        int64_t rv = keys ? in[r].key : in[r].query;
        return lv != rv ? lv < rv : l < r;
    });
    blk.vals.resize(len);
    for (size_t i = 0; i < len; ++i)
        blk.vals[i] = keys ? in[blk.idx[i]].key : in[blk.idx[i]].query;
    blk.last_equal.resize(len);
    for (size_t i = len; i-- > 0;)
        blk.last_equal[i] =
            (i + 1 < len && blk.vals[i + 1] == blk.vals[i]) ? blk.last_equal[i + 1] : i;
    return blk;
}

template <typename F>
void parallel_for(size_t count, int jobs, F&& body) {
    if (jobs <= 1 || count <= 1) {
        for (size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= count) return;
            body(i);
        }
    };
    std::vector<std::thread> pool;
    size_t n = std::min<size_t>(static_cast<size_t>(jobs), count);
    pool.reserve(n);
    for (size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

}  // namespace

RecallLabeling parallel_mqar(const std::vector<Triple>& input, int jobs) {
    const size_t n_real = input.size();
    if (n_real == 0) return {};

    size_t n = 1;
    while (n < n_real) n <<= 1;

    // Sentinels sit outside any vocabulary and never match each other.
    constexpr int64_t kSentinelKey = INT64_MIN / 2;
    constexpr int64_t kSentinelQuery = INT64_MIN / 2 + 1;
    std::vector<Triple> in(input);
    in.resize(n, Triple{kSentinelKey, 0, kSentinelQuery});

    // candidate matched key index per query; -1 = none. Combined by max, so the
    // result does not depend on block execution order.
    std::vector<std::atomic<int64_t>> cand(n);
    for (auto& c : cand) c.store(-1, std::memory_order_relaxed);

    size_t levels = 0;
    while ((size_t{1} << levels) < n) ++levels;

    for (size_t k = 0; k < levels; ++k) {
        const size_t half = size_t{1} << k;
        const size_t stride = half << 1;
        const size_t num_blocks = n / stride;
        parallel_for(num_blocks, jobs, [&](size_t g) {
            const size_t base = g * stride;
            SortedBlock keys = sort_block(in, base, half, /*keys=*/true);
            SortedBlock queries = sort_block(in, base + half, half, /*keys=*/false);
            std::vector<size_t> c = pbs_multiple_search(queries.vals, keys.vals);
            for (size_t qi = 0; qi < half; ++qi) {
                size_t pos = c[qi];
                if (pos >= half || keys.vals[pos] != queries.vals[qi]) continue;
                // most recent original index among the equal-key run
                size_t last = keys.last_equal[pos];
                int64_t best = static_cast<int64_t>(keys.idx[pos]);
                for (size_t s = pos; s <= last; ++s)
                    best = std::max(best, static_cast<int64_t>(keys.idx[s]));
                size_t query_index = queries.idx[qi];
                int64_t prev = cand[query_index].load(std::memory_order_relaxed);
                while (prev < best &&
                       !cand[query_index].compare_exchange_weak(prev, best,
                                                                std::memory_order_relaxed)) {
                }
            }
        });
    }

    RecallLabeling out(n_real);
    for (size_t i = 0; i < n_real; ++i) {
        int64_t j = cand[i].load(std::memory_order_relaxed);
        if (j >= 0) out[i] = RecallMatch{j, in[static_cast<size_t>(j)].value};
    }
    return out;
}

double score(const std::vector<std::optional<int64_t>>& predictions,
             const std::vector<std::pair<size_t, int64_t>>& labels) {
    require(!labels.empty(), "score: no labels");
    require(predictions.size() == labels.size(), "score: prediction count != label count");
    size_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        require(predictions[i].has_value(),
                "score: missing prediction for label " + std::to_string(i));
        if (*predictions[i] == labels[i].second) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace mqar
