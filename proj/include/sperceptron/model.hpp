#pragma once

// The s-Perceptron: a single stage of n paraneurons over a complete
// undirected graph. Each paraneuron j combines a direct path (inputs x
// through column j of W) with a difference path (cyclic input differences
// x_d through column j of the shared symmetric edge-weight matrix V):
//
//   y_j = relu(x_d . V_j) + relu(x . W_j) [+ bias_j, clamped at 0]
//
// V is realized as sym(V_raw) = (V_raw + V_raw^T)/2 so storage stays
// unconstrained while the effective edge weights are exactly symmetric.
// Class scores are means of adjacent output groups, softmax-normalized.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <utility>

namespace sperceptron {

struct ModelConfig {
    Eigen::Index n = 784;
    int class_count = 10;
    bool bias_enabled = false;
    std::uint64_t seed = 0;

    Eigen::Index group_size() const { return n / class_count; }
    void validate() const; // n >= class_count >= 2
};

struct ModelParams {
    Eigen::MatrixXd W;     // n x n; W(i, j) weights input i into paraneuron j
    Eigen::MatrixXd V_raw; // n x n; unconstrained storage for the edge weights
    Eigen::VectorXd bias;  // n when bias is enabled, empty otherwise

    bool has_bias() const { return bias.size() > 0; }
    bool all_finite() const;
};

// seeded uniform on [-sqrt(1/n), sqrt(1/n)] for W and V_raw; bias starts at zero
ModelParams init_params(const ModelConfig& config);

struct ForwardTrace {
    Eigen::VectorXd x;
    Eigen::VectorXd x_d;    // cyclic differences of x
    Eigen::VectorXd a_v;    // pre-activation, difference path
    Eigen::VectorXd a_w;    // pre-activation, direct path
    Eigen::VectorXd y;      // paraneuron outputs, nonnegative
    Eigen::VectorXd pooled; // class_count group means
    Eigen::VectorXd probs;  // softmax(pooled)
};

// x_d[i] = x[i] - x[i+1], wrapping at the end: x_d[n-1] = x[n-1] - x[0]
Eigen::VectorXd cyclic_difference(const Eigen::VectorXd& x);
Eigen::MatrixXd cyclic_difference_rows(const Eigen::MatrixXd& X);

// (M + M^T)/2; exactly equal to its own transpose
Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& raw);

ForwardTrace forward(const Eigen::VectorXd& x, const ModelParams& params, const ModelConfig& config);

// one row per item; used by the trainers and batch evaluation
struct BatchTrace {
    Eigen::MatrixXd X;
    Eigen::MatrixXd Xd;
    Eigen::MatrixXd Av;
    Eigen::MatrixXd Aw;
    Eigen::MatrixXd Y;
    Eigen::MatrixXd pooled;
    Eigen::MatrixXd probs;
};

BatchTrace forward_batch(const Eigen::MatrixXd& X, const ModelParams& params, const ModelConfig& config);

// group means of y; the trailing n - class_count*group outputs are unused
Eigen::VectorXd pool_outputs(const Eigen::VectorXd& y, int class_count);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
Eigen::VectorXd pooled_probabilities(const Eigen::VectorXd& y, int class_count);

// argmax with ties broken toward the lowest class index
int argmax_lowest(const Eigen::VectorXd& v);
int predict(const Eigen::VectorXd& x, const ModelParams& params, const ModelConfig& config);

enum class CountConvention {
    paper, // n^2 + n^2/2, bias excluded
    free,  // n^2 + n(n+1)/2 (+ n when bias is enabled)
};

std::int64_t parameter_count(const ModelConfig& config, CountConvention convention);

// Model file: magic "SPCT", u8 version (=1), then little-endian u32
// n, class_count, flags (bit 0 = bias); then W row-major, V_raw row-major,
// bias if present, as little-endian IEEE-754 doubles.
void save_model(const ModelParams& params, const ModelConfig& config,
                const std::filesystem::path& path);
std::pair<ModelParams, ModelConfig> load_model(const std::filesystem::path& path);

} // namespace sperceptron
