#pragma once

// Non-gradient trainers: progressive random-subgraph accept/reject search
// and opposition-based weight search with a shrinking interval.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "sperceptron/grad.hpp"
#include "sperceptron/idx.hpp"
#include "sperceptron/metrics.hpp"
#include "sperceptron/model.hpp"
#include "sperceptron/rng.hpp"

namespace sperceptron {

struct SubgraphSchedule {
    double initial_fraction = 1.0;  // starting subgraph size as a fraction of n
    double decay = 0.9;             // per-phase size multiplier
    Eigen::Index min_nodes = 2;
    std::int64_t iterations_per_phase = 200;
    std::int64_t max_iterations = 5000;
    std::int64_t metrics_every = 100; // iterations between metric rows
    void validate() const;
};

struct PerturbationConfig {
    double sigma = 0.3;       // Gaussian scale of proposal noise
    double sigma_decay = 1.0; // multiplied in per phase
    Eigen::Index eval_batch = 256;
    void validate() const;
};

struct OppositionConfig {
    // initial per-parameter interval; lo = hi = 0 auto-fills to the
    // weight-initialization range [-sqrt(1/n), sqrt(1/n)]
    double lo = 0.0;
    double hi = 0.0;
    double shrink = 0.99;
    std::int64_t max_iterations = 2000;
    Eigen::Index eval_batch = 256;
    std::int64_t metrics_every = 100;
    void validate() const;
};

// size-subset of {0..n-1}, uniform, sorted ascending
std::vector<Eigen::Index> sample_subgraph(Rng& rng, Eigen::Index n, Eigen::Index size);

// Candidate differing from params only on the subgraph's incident weights:
// W rows/columns indexed by nodes, V_raw entries with both indices in
// nodes, and bias entries in nodes. Touched entries get additive Gaussian
// noise of scale sigma.
ModelParams propose_modification(const ModelParams& params, std::span<const Eigen::Index> nodes,
                                 const PerturbationConfig& pconfig, Rng& rng);

struct StepOutcome {
    bool accepted = false;
    double error_before = 0.0;
    double error_after = 0.0; // error of whichever params were kept
};

// Mean cross-entropy of both parameter sets over the eval items on the
// full model; replaces current with candidate only on strict improvement.
StepOutcome graph_wise_step(ModelParams& current, const ModelParams& candidate,
                            const Eigen::MatrixXd& eval_images, std::span<const int> eval_labels,
                            const ModelConfig& config);

// subgraph sizes per phase: ceil(initial_fraction*n), then
// max(min_nodes, min(size-1, ceil(decay*size))) until min_nodes
std::vector<Eigen::Index> phase_sizes(const SubgraphSchedule& schedule, Eigen::Index n);

struct SearchResult {
    ModelParams params;
    std::vector<MetricsRow> metrics;
    std::vector<double> accepted_errors; // eval error after each accepted step
};

SearchResult train_subgraph_search(const LabeledDataset& dataset, const SubgraphSchedule& schedule,
                                   const PerturbationConfig& pconfig, const ModelConfig& model_config,
                                   std::uint64_t seed);

// reflection through the interval midpoint
double opposite(double w, double lo, double hi);

struct OppositionResult {
    ModelParams params;
    std::vector<MetricsRow> metrics;
    double final_interval_width = 0.0;
};

OppositionResult train_opposition(const LabeledDataset& dataset, const OppositionConfig& oconfig,
                                  const ModelConfig& model_config, std::uint64_t seed);

} // namespace sperceptron
