#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dlmac/dataset.hpp"

namespace dlmac::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Eight hidden layers: two stem layers, two dimension-preserving residual
// blocks of two layers each, and a two-layer tail, every one of them
// Linear -> BatchNorm -> ReLU. The second layer of each block adds the block
// input before its ReLU. A 10-way softmax head sits on top.
struct ModelSpec {
    int input_dim = 360;
    std::array<int, 2> stem_widths{512, 256};
    int block_width = 256;
    int n_blocks = 2;
    std::array<int, 2> tail_widths{128, 64};
    int output_dim = 10;

    int hidden_layers() const { return 2 + 2 * n_blocks + 2; }
    // (fan_in, fan_out) of each hidden layer, in forward order.
    std::vector<std::pair<int, int>> layer_dims() const;
    bool operator==(const ModelSpec&) const = default;
};

enum class Mode { train, eval };

template <typename T>
struct DenseBnLayer {
    Mat<T> w;             // fan_in x fan_out
    RowVec<T> b;
    RowVec<T> gamma, beta;
    RowVec<T> run_mean, run_var;
};

template <typename T>
struct LayerCache {
    Mat<T> input;      // pre-linear activations
    Mat<T> z;          // linear output
    Mat<T> xhat;       // normalized pre-scale
    RowVec<T> inv_std;
    Mat<T> pre_act;    // BN output (+ shortcut on block tails)
    Mat<T> post;       // after ReLU
};

template <typename T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
    Mat<T> logits;
    Mat<T> probs;
};

template <typename T>
struct Gradients {
    struct Layer {
        Mat<T> w;
        RowVec<T> b, gamma, beta;
    };
    std::vector<Layer> hidden;
    Mat<T> out_w;
    RowVec<T> out_b;

    void set_zero();
};

template <typename T>
class Network {
  public:
    ModelSpec spec;
    std::vector<DenseBnLayer<T>> hidden;
    Mat<T> out_w;
    RowVec<T> out_b;
    T bn_eps = static_cast<T>(1e-5);
    T bn_momentum = static_cast<T>(0.1);

    bool is_block_first(int i) const {
        return i >= 2 && i < 2 + 2 * spec.n_blocks && (i - 2) % 2 == 0;
    }
    bool is_block_second(int i) const {
        return i >= 2 && i < 2 + 2 * spec.n_blocks && (i - 2) % 2 == 1;
    }

    // Returns class probabilities, one row per example. Train mode uses
    // batch statistics (batch size >= 2) and, when update_running is set,
    // folds them into the running estimates; eval mode uses the running
    // statistics.
    Mat<T> forward(const Mat<T>& x, Mode mode, ForwardCache<T>* cache = nullptr,
                   bool update_running = true);

    Gradients<T> make_gradients() const;
    std::size_t parameter_count() const;
};

template <typename T>
Network<T> init_model(const ModelSpec& spec, std::uint64_t seed);

// Mean (optionally class-weighted) cross-entropy over the batch in train
// mode, with analytic gradients for every parameter including BN scale and
// shift. `classes` holds class ids 0..output_dim-1. BN batch statistics are
// differentiated through (full batch-norm backward); with update_running
// unset the call is a pure function, which is what perturbation-based
// checks need.
template <typename T>
T loss_and_gradients(Network<T>& net, const Mat<T>& x, std::span<const int> classes,
                     std::span<const T> class_weights, Gradients<T>& out,
                     bool update_running = false);

// Same loss without gradients; used as the finite-difference oracle path.
template <typename T>
T compute_loss(Network<T>& net, const Mat<T>& x, std::span<const int> classes,
               std::span<const T> class_weights);

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamHyper hyper;
    std::int64_t step = 0;
    Gradients<T> m, v;
};

template <typename T>
AdamState<T> make_adam(const Network<T>& net, const AdamHyper& hyper = {});

// Standard bias-corrected Adam update; increments the step counter.
template <typename T>
void adam_step(Network<T>& net, const Gradients<T>& grads, AdamState<T>& state);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 256;
    AdamHyper adam;
    std::uint64_t seed = 1;
    std::vector<float> class_weights;  // empty = unweighted
    bool verbose = false;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_val_acc = 0.0;
};

// Seeded-shuffle mini-batch training with the best-validation-accuracy
// snapshot restored at the end. Windows are standardized with the training
// set's normalization.
TrainHistory train(Network<float>& net, const dataset::Dataset& train_ds,
                   const dataset::Dataset& val_ds, const TrainConfig& cfg);

// (mean unweighted loss, accuracy) in eval mode.
std::pair<double, double> evaluate(Network<float>& net, const dataset::Dataset& ds,
                                   const dataset::Normalization& norm, int batch_size = 512);

struct PolicyModel {
    Network<float> net;
    dataset::Normalization norm;
    int mtxop_slots = 0;
};

// Versioned little-endian container; load(save(m)) is bit-exact.
void save_model(const PolicyModel& model, const std::string& path);
PolicyModel load_model(const std::string& path);

// Eval-mode forward of one raw dBm window (normalization applied inside).
std::array<float, 10> predict(PolicyModel& model, std::span<const float> window_dbm);
// Argmax class, ties broken toward the lower class id.
int predict_class(PolicyModel& model, std::span<const float> window_dbm);

// Eval-mode forward tuned for per-mini-slot polling: BN folded into
// per-layer scale/shift, buffers allocated once. Matches predict() up to
// float rounding (same running statistics, same argmax rule). The batch
// entry point amortizes the weight traffic over several windows at once.
class Inference {
  public:
    explicit Inference(const PolicyModel& model);

    // Raw dBm window of length input_dim.
    std::span<const float> logits(std::span<const float> window_dbm);
    int predict_class(std::span<const float> window_dbm);

    // One row per raw dBm window; returns a batch x output_dim logit matrix
    // valid until the next call.
    const Mat<float>& logits_batch(const Mat<float>& windows_dbm);

  private:
    const PolicyModel* model_;
    std::vector<RowVec<float>> scale_, shift_;  // folded BN per hidden layer
    std::vector<RowVec<float>> act_;            // preallocated activations
    RowVec<float> input_;
    RowVec<float> logits_;
    std::vector<Mat<float>> bact_;              // batch activations
    Mat<float> bin_, blogits_;
};

void write_history_csv(const TrainHistory& history, const std::string& path);

}  // namespace dlmac::nn
