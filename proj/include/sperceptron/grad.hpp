#pragma once

// Softmax cross-entropy, hand-derived gradients of the full forward pass
// (through the symmetrization and the pooled head), a central
// finite-difference oracle, and the mini-batch SGD training loop.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "sperceptron/idx.hpp"
#include "sperceptron/metrics.hpp"
#include "sperceptron/model.hpp"

namespace sperceptron {

struct GradConfig {
    // The pooled-mean head divides per-output gradients by group_size
    // (78 for MNIST), so useful rates sit ~two orders above the textbook
    // 0.01-0.1 range; 10 reaches 0.92 on a 5k-image subset in 10 epochs.
    double learning_rate = 10.0;
    int batch_size = 64;
    int epochs = 30;
    std::uint64_t seed = 0;
    std::int64_t eval_every = 500; // iterations between metric rows
    void validate() const;
};

struct Gradients {
    Eigen::MatrixXd dW;
    Eigen::MatrixXd dV_raw; // symmetric by construction
    Eigen::VectorXd dbias;  // empty when bias is disabled
};

// -log probs[label], evaluated in log-sum-exp form from the pooled logits
double cross_entropy_loss(const Eigen::VectorXd& pooled_logits, int label);
double cross_entropy_loss(const ForwardTrace& trace, int label);

Gradients backward(const ForwardTrace& trace, int label,
                   const ModelParams& params, const ModelConfig& config);

// mean gradient over the batch rows
Gradients backward_batch(const BatchTrace& trace, std::span<const int> labels,
                         const ModelParams& params, const ModelConfig& config);
double mean_batch_loss(const BatchTrace& trace, std::span<const int> labels);

// Max relative error between backward() and central differences. Checks
// every coordinate when n <= 16; otherwise a seeded subsample of 200
// coordinates per weight matrix plus all bias coordinates. Pairs where
// both sides are below 1e-10 in magnitude are excluded.
double finite_difference_check(const Eigen::VectorXd& x, int label,
                               const ModelParams& params, const ModelConfig& config,
                               double step, std::uint64_t seed = 0);

void sgd_step(ModelParams& params, const Gradients& grads, double learning_rate);

// fraction of items where predict() matches the label
double evaluate(const ModelParams& params, const LabeledDataset& dataset,
                const ModelConfig& config);

struct TrainResult {
    ModelParams params;
    std::vector<MetricsRow> metrics;
};

// test may be null; metric rows then omit test_accuracy
TrainResult train_gradient_descent(const LabeledDataset& train, const LabeledDataset* test,
                                   const GradConfig& config, const ModelConfig& model_config);

} // namespace sperceptron
