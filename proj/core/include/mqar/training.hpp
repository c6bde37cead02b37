#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mqar/datagen.hpp"
#include "mqar/tensor.hpp"

namespace mqar {

enum class TrainVariant : uint8_t { attention, baseconv };

const char* variant_name(TrainVariant v);
TrainVariant variant_from_name(const std::string& name);

// Two sequence-mixing blocks on a pre-norm Transformer backbone: embedding
// (+ learned position embeddings for attention), per block LayerNorm -> mixer
// -> residual, LayerNorm -> 2-layer ReLU MLP -> residual, final LayerNorm and
// a linear head evaluated at label positions only.
struct ModelSpec {
    TrainVariant variant = TrainVariant::attention;
    size_t d_model = 64;
    size_t vocab = 0;     // c + 1, includes the pad id
    size_t seq_len = 64;
    size_t num_layers = 2;
    size_t mlp_mult = 2;
    bool pos_emb = true;  // attention variants only
    bool tied_emb = false;
    uint64_t init_seed = 0;
};

template <typename T>
struct BlockParams {
    Mat<T> ln1_g, ln1_b;
    // attention
    Mat<T> wq, wk, wv;
    // baseconv: gate projection, its bias, and the explicit long filter
    Mat<T> w, b1, filt;
    Mat<T> ln2_g, ln2_b;
    Mat<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <typename T>
struct Params {
    ModelSpec spec;
    Mat<T> embed;  // vocab x d
    Mat<T> pos;    // N x d, empty unless pos_emb
    std::vector<BlockParams<T>> blocks;
    Mat<T> lnf_g, lnf_b;
    Mat<T> head_w, head_b;  // head_w empty when tied

    // visits every trainable tensor in a fixed order
    void for_each(const std::function<void(const std::string&, Mat<T>&)>& fn);
    void for_each(const std::function<void(const std::string&, const Mat<T>&)>& fn) const;
    Params zeros_like() const;
    size_t num_parameters() const;
};

template <typename T>
Params<T> make_model(const ModelSpec& spec);

struct Batch {
    // all sequences share seq_len; labels are (position, target) pairs
    std::vector<const MqarInstance*> instances;
};

template <typename T>
struct ForwardResult {
    double loss = 0.0;
    // one row of logits per label, in batch order
    Mat<T> label_logits;
    std::vector<int32_t> label_targets;
};

// Mean cross-entropy over label positions only; logits exposed for scoring.
template <typename T>
ForwardResult<T> forward_loss(const Params<T>& model, const Batch& batch);

// Analytic reverse-mode gradients for every parameter. Also returns the loss.
template <typename T>
double backward(const Params<T>& model, const Batch& batch, Params<T>& grads);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    size_t checked = 0;
};

// Central finite differences against the analytic gradients. max_params = 0
// checks every parameter.
GradCheckReport fd_gradcheck(const Params<double>& model, const Batch& batch, double eps = 1e-5,
                             size_t max_params = 0, uint64_t sample_seed = 0);

struct TrainConfig {
    double lr = 1e-3;
    size_t epochs = 64;
    size_t batch_size = 64;
    double weight_decay = 0.1;
    double warmup_frac = 0.1;  // linear warmup over this fraction of steps
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    int jobs = 1;
    // stop once the epoch test accuracy reaches this level; the reported best
    // accuracy can only improve past it, so the maximum is unaffected
    double early_stop_acc = 2.0;
};

struct EpochStats {
    double train_loss = 0.0;
    double test_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_test_acc = 0.0;
    double final_train_loss = 0.0;
    bool diverged = false;
};

template <typename T>
TrainResult train(Params<T>& model, const std::vector<MqarInstance>& train_data,
                  const std::vector<MqarInstance>& test_data, const TrainConfig& cfg);

// Accuracy of argmax predictions at label positions.
template <typename T>
double evaluate_accuracy(const Params<T>& model, const std::vector<MqarInstance>& data,
                         int jobs = 1);

struct SweepCell {
    TrainVariant variant;
    size_t seq_len;
    size_t d_model;
};

struct SweepRow {
    std::string variant;
    size_t seq_len = 0;
    size_t d_model = 0;
    std::string lr;  // numeric value, or "best" for the per-cell max row
    uint64_t seed = 0;
    size_t epochs = 0;
    double best_test_acc = 0.0;
    double final_train_loss = 0.0;
    double wall_seconds = 0.0;
};

struct SweepConfig {
    std::vector<double> lr_grid = {1e-4, 4.6415888336127774e-4, 2.1544346900318823e-3, 1e-2};
    size_t epochs = 64;
    size_t train_size = 10000;
    size_t test_size = 1000;
    size_t num_pairs = 0;          // fixed D when nonzero, else N / divisor
    size_t num_pairs_divisor = 8;  // D = max(1, N / divisor)
    double alpha = 0.1;
    size_t vocab = 8192;
    uint64_t seed = 0;
    double weight_decay = 0.1;
    double warmup_frac = 0.1;
    int jobs = 1;
    double early_stop_acc = 2.0;
    size_t batch_size = 0;  // 0: protocol rule via batch_size_rule
    // failed cells get accuracy NaN rather than being dropped
    std::function<void(const SweepRow&)> on_row;
};

// Trains every (cell, lr) point and reports max test accuracy per cell.
std::vector<SweepRow> capacity_sweep(const std::vector<SweepCell>& cells, const SweepConfig& cfg);

extern const char* kSweepCsvHeader;
std::string sweep_row_csv(const SweepRow& row);
SweepRow sweep_row_from_csv(const std::string& line);

// Versioned flat binary of named parameter tensors with shape headers.
template <typename T>
void save_checkpoint(const Params<T>& model, const std::string& path);
template <typename T>
void load_checkpoint(Params<T>& model, const std::string& path);

size_t batch_size_rule(size_t seq_len, size_t d_model);

}  // namespace mqar
