#pragma once

// Feedforward ReLU regressor with z-score normalizers on both ends.
//
//   u   = (x - mu_x) / sd_x
//   z_1 = relu(W_1 u + b_1), ..., z_L = relu(W_L z_{L-1} + b_L)
//   y   = mu_y + sd_y * (W_{L+1} z_L + b_{L+1})

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace freqopf {

struct Normalizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;

    static Normalizer identity(int dim);
    /// Column statistics; constant columns get stddev 1.
    static Normalizer fit(const Eigen::MatrixXd& rows);
};

struct MlpNet {
    std::vector<int> layer_dims;            ///< input, hidden..., output
    std::vector<Eigen::MatrixXd> weights;   ///< weights[m] maps layer m to m+1
    std::vector<Eigen::VectorXd> biases;
    Normalizer input_norm;
    Normalizer output_norm;

    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    int hidden_layers() const { return static_cast<int>(layer_dims.size()) - 2; }

    /// All-zero parameters with identity normalizers. Throws ArchMismatch on a bad chain.
    static MlpNet zeros(std::vector<int> dims);
    /// He-initialized parameters from a seed; identity normalizers.
    static MlpNet random(std::vector<int> dims, std::uint64_t seed);

    /// Throws ArchMismatch / CorruptWeights if shapes or normalizers are inconsistent.
    void check() const;
};

/// Intermediate values of one forward pass (normalized units).
struct ForwardTrace {
    std::vector<Eigen::VectorXd> pre;   ///< pre-activations per hidden layer
    std::vector<Eigen::VectorXd> post;  ///< ReLU outputs per hidden layer
    Eigen::VectorXd output_normalized;
    Eigen::VectorXd output;
};

/// Throws DimensionMismatch.
Eigen::VectorXd forward(const MlpNet& net, const Eigen::VectorXd& x);
ForwardTrace forward_trace(const MlpNet& net, const Eigen::VectorXd& x);

struct TrainConfig {
    int epochs = 400;
    int batch_size = 32;
    double learning_rate = 2e-3;
    double lr_decay = 0.995;        ///< multiplicative, per epoch
    double validation_fraction = 0.2;
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainReport {
    std::vector<double> train_loss;         ///< per epoch, normalized-label MSE
    std::vector<double> val_loss;
    std::vector<double> val_mse_per_label;  ///< raw label units, best snapshot
    double initial_val_loss = 0.0;
    int best_epoch = 0;                     ///< 0 = the initial net
    int train_size = 0;
    int val_size = 0;
};

/// Rows of X are raw features, rows of Y raw labels. Throws EmptyDataset / ArchMismatch / InvalidConfig.
std::pair<MlpNet, TrainReport> train(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::vector<int> hidden,
                                     const TrainConfig& cfg = {});

/// Gradient of 0.5 * ||y_normalized - target_normalized||^2 against central differences
/// (step 1e-5) over every parameter. Returns the max relative error. Throws KinkProximity.
double gradient_check(const MlpNet& net, const Eigen::VectorXd& x, const Eigen::VectorXd& target);

/// Pre-activation intervals ([h_l, h_u] per hidden neuron).
struct NeuronBounds {
    std::vector<Eigen::VectorXd> lo;
    std::vector<Eigen::VectorXd> hi;
    Eigen::VectorXd box_lo;  ///< raw-feature box the bounds were derived from
    Eigen::VectorXd box_hi;
};

/// Interval propagation of a raw-feature box. Throws EmptyBox / DimensionMismatch.
NeuronBounds interval_bounds(const MlpNet& net, const Eigen::VectorXd& box_lo, const Eigen::VectorXd& box_hi);

void save_net(const MlpNet& net, const std::filesystem::path& path);
/// Throws CorruptWeights.
MlpNet load_net(const std::filesystem::path& path);

}  // namespace freqopf
