#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqar/numerics.hpp"
#include "mqar/oracle.hpp"

namespace mqar {

struct GenConfig {
    size_t seq_len = 64;      // N
    size_t num_pairs = 4;     // D
    double alpha = 0.1;       // power-law exponent for second-occurrence gaps
    size_t vocab_size = 8192; // c, even; keys in [0, c/2), values in [c/2, c)
    uint64_t seed = 0;
    size_t num_examples = 1;

    // Positions not holding a key, value or second occurrence carry this id.
    // It sits one past the vocabulary, so the model vocabulary is c + 1.
    int32_t pad_token() const { return static_cast<int32_t>(vocab_size); }

    void validate() const;
};

enum class LabelKind : uint8_t { ar, other };

struct Label {
    size_t pos;      // position whose output is scored
    int32_t target;  // expected token
    LabelKind kind = LabelKind::ar;
};

enum class InstanceVariant : uint8_t { mqar, single_query, filler };

struct MqarInstance {
    TokenSequence tokens;
    std::vector<Label> labels;
    // generating config echo
    size_t seq_len = 0;
    size_t num_pairs = 0;
    double alpha = 0.0;
    size_t vocab_size = 0;
    uint64_t seed = 0;
    uint64_t index = 0;
    InstanceVariant variant = InstanceVariant::mqar;
};

// Procedure: D key-value pairs fill the first 2D positions (even offsets keys,
// odd offsets their values); each key reappears once at a position drawn from
// the free slots of [2D, N) with probability proportional to gap^(-alpha),
// gap measured from the key's first occurrence. Deterministic in (seed, index).
MqarInstance gen_mqar(const GenConfig& cfg, uint64_t index);

// D pairs then a single repeated key at position N-1; one label.
MqarInstance gen_single_query(const GenConfig& cfg, uint64_t index);

// P key-value bigrams, each appearing twice in full; every other position
// holds one fixed filler token. AR labels sit at second key occurrences;
// filler positions whose successor is also filler carry non-AR labels.
MqarInstance gen_filler_eval(size_t num_pairs, size_t seq_len, size_t vocab, uint64_t seed,
                             uint64_t index = 0);

int32_t filler_token(size_t vocab);

// Line-delimited dataset format "mqar-v1": one JSON record per line after a
// one-line header. read(write(x)) == x field for field.
void write_dataset(const std::vector<MqarInstance>& instances, const std::string& path);
std::vector<MqarInstance> read_dataset(const std::string& path);

// Convert a token sequence to the triple form {(x_i, x_{i+1}, x_i)}.
std::vector<Triple> tokens_to_triples(const TokenSequence& tokens);

}  // namespace mqar
