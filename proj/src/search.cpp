#include "sperceptron/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "sperceptron/errors.hpp"

namespace sperceptron {

void SubgraphSchedule::validate() const {
    if (!(initial_fraction > 0.0) || initial_fraction > 1.0)
        fail(Errc::bad_config, "initial_fraction must be in (0, 1]");
    if (!(decay > 0.0) || decay > 1.0) fail(Errc::bad_config, "decay must be in (0, 1]");
    if (min_nodes < 1) fail(Errc::bad_config, "min_nodes must be >= 1");
    if (iterations_per_phase < 1) fail(Errc::bad_config, "iterations_per_phase must be >= 1");
    if (max_iterations < 1) fail(Errc::bad_config, "max_iterations must be >= 1");
    if (metrics_every < 1) fail(Errc::bad_config, "metrics_every must be >= 1");
}

void PerturbationConfig::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) fail(Errc::bad_config, "sigma must be positive");
    if (!(sigma_decay > 0.0) || sigma_decay > 1.0)
        fail(Errc::bad_config, "sigma_decay must be in (0, 1]");
    if (eval_batch < 1) fail(Errc::bad_config, "eval_batch must be >= 1");
}

void OppositionConfig::validate() const {
    if (!std::isfinite(lo) || !std::isfinite(hi))
        fail(Errc::bad_config, "interval bounds must be finite");
    if (!(lo == 0.0 && hi == 0.0) && !(lo < hi))
        fail(Errc::bad_config, "interval requires lo < hi");
    if (!(shrink > 0.0) || !(shrink < 1.0)) fail(Errc::bad_config, "shrink must be in (0, 1)");
    if (max_iterations < 1) fail(Errc::bad_config, "max_iterations must be >= 1");
    if (eval_batch < 1) fail(Errc::bad_config, "eval_batch must be >= 1");
    if (metrics_every < 1) fail(Errc::bad_config, "metrics_every must be >= 1");
}

std::vector<Eigen::Index> sample_subgraph(Rng& rng, Eigen::Index n, Eigen::Index size) {
    if (n < 1) fail(Errc::bad_config, "n must be >= 1");
    if (size < 1 || size > n) fail(Errc::size_out_of_range, "subgraph size must be in [1, n]");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    // partial Fisher-Yates: only the first size positions matter
    for (Eigen::Index i = 0; i < size; ++i) {
        const Eigen::Index j =
            i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    order.resize(static_cast<std::size_t>(size));
    std::sort(order.begin(), order.end());
    return order;
}

ModelParams propose_modification(const ModelParams& params, std::span<const Eigen::Index> nodes,
                                 const PerturbationConfig& pconfig, Rng& rng) {
    pconfig.validate();
    const Eigen::Index n = params.W.rows();
    std::vector<char> membership(static_cast<std::size_t>(n), 0);
    for (const Eigen::Index v : nodes) {
        if (v < 0 || v >= n) fail(Errc::size_out_of_range, "subgraph node out of range");
        membership[static_cast<std::size_t>(v)] = 1;
    }
    const auto in = [&membership](Eigen::Index v) {
        return membership[static_cast<std::size_t>(v)] != 0;
    };

    // fixed row-major visit order keeps proposals reproducible for a seed
    ModelParams candidate = params;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (in(i) || in(j)) candidate.W(i, j) += pconfig.sigma * rng.normal();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (in(i) && in(j)) candidate.V_raw(i, j) += pconfig.sigma * rng.normal();
    if (params.has_bias())
        for (Eigen::Index j = 0; j < n; ++j)
            if (in(j)) candidate.bias[j] += pconfig.sigma * rng.normal();
    return candidate;
}

namespace {

double mean_cross_entropy(const ModelParams& params, const Eigen::MatrixXd& images,
                          std::span<const int> labels, const ModelConfig& config) {
    return mean_batch_loss(forward_batch(images, params, config), labels);
}

// seeded eval items for one step; with eval_batch >= N this is the whole
// set in storage order, so successive errors stay comparable
void gather_eval_items(const LabeledDataset& dataset, Eigen::Index eval_batch, Rng& rng,
                       Eigen::MatrixXd& images, std::vector<int>& labels) {
    if (eval_batch >= dataset.size()) {
        if (images.rows() != dataset.size()) {
            images = dataset.images;
            labels = dataset.labels;
        }
        return;
    }
    const std::vector<Eigen::Index> pick = sample_subgraph(rng, dataset.size(), eval_batch);
    images.resize(static_cast<Eigen::Index>(pick.size()), dataset.n());
    labels.resize(pick.size());
    for (std::size_t r = 0; r < pick.size(); ++r) {
        images.row(static_cast<Eigen::Index>(r)) = dataset.images.row(pick[r]);
        labels[r] = dataset.labels[static_cast<std::size_t>(pick[r])];
    }
}

} // namespace

StepOutcome graph_wise_step(ModelParams& current, const ModelParams& candidate,
                            const Eigen::MatrixXd& eval_images, std::span<const int> eval_labels,
                            const ModelConfig& config) {
    StepOutcome outcome;
    outcome.error_before = mean_cross_entropy(current, eval_images, eval_labels, config);
    const double candidate_error = mean_cross_entropy(candidate, eval_images, eval_labels, config);
    if (candidate_error < outcome.error_before) { // ties keep the incumbent
        current = candidate;
        outcome.accepted = true;
        outcome.error_after = candidate_error;
    } else {
        outcome.error_after = outcome.error_before;
    }
    return outcome;
}

std::vector<Eigen::Index> phase_sizes(const SubgraphSchedule& schedule, Eigen::Index n) {
    schedule.validate();
    if (schedule.min_nodes > n) fail(Errc::bad_config, "min_nodes exceeds n");
    const std::int64_t phases = (schedule.max_iterations + schedule.iterations_per_phase - 1) /
                                schedule.iterations_per_phase;
    std::vector<Eigen::Index> sizes;
    sizes.reserve(static_cast<std::size_t>(phases));
    Eigen::Index size =
        std::clamp(static_cast<Eigen::Index>(std::ceil(schedule.initial_fraction * double(n))),
                   schedule.min_nodes, n);
    for (std::int64_t p = 0; p < phases; ++p) {
        sizes.push_back(size);
        // shrink by at least one node per phase until the floor
        if (size > schedule.min_nodes)
            size = std::max(schedule.min_nodes,
                            std::min(size - 1, static_cast<Eigen::Index>(
                                                   std::ceil(schedule.decay * double(size)))));
    }
    return sizes;
}

SearchResult train_subgraph_search(const LabeledDataset& dataset,
                                   const SubgraphSchedule& schedule,
                                   const PerturbationConfig& pconfig,
                                   const ModelConfig& model_config, std::uint64_t seed) {
    schedule.validate();
    pconfig.validate();
    model_config.validate();
    if (dataset.size() == 0) fail(Errc::empty_dataset, "dataset is empty");
    if (dataset.n() != model_config.n) fail(Errc::shape_mismatch, "images do not match n");

    SearchResult result;
    result.params = init_params(model_config);
    Rng rng(seed);

    const std::vector<Eigen::Index> sizes = phase_sizes(schedule, model_config.n);
    Eigen::MatrixXd eval_images;
    std::vector<int> eval_labels;

    PerturbationConfig step_config = pconfig;
    std::int64_t iteration = 0;
    for (std::size_t p = 0; p < sizes.size() && iteration < schedule.max_iterations; ++p) {
        step_config.sigma = pconfig.sigma * std::pow(pconfig.sigma_decay, double(p));
        for (std::int64_t k = 0;
             k < schedule.iterations_per_phase && iteration < schedule.max_iterations; ++k) {
            ++iteration;
            const std::vector<Eigen::Index> nodes =
                sample_subgraph(rng, model_config.n, sizes[p]);
            const ModelParams candidate =
                propose_modification(result.params, nodes, step_config, rng);
            gather_eval_items(dataset, pconfig.eval_batch, rng, eval_images, eval_labels);
            const StepOutcome outcome = graph_wise_step(result.params, candidate, eval_images,
                                                        eval_labels, model_config);
            if (outcome.accepted) result.accepted_errors.push_back(outcome.error_after);

            if (iteration % schedule.metrics_every == 0 ||
                iteration == schedule.max_iterations) {
                MetricsRow row;
                row.iteration = iteration;
                row.epoch = 0;
                row.mean_batch_loss = outcome.error_after;
                row.train_accuracy = evaluate(result.params, dataset, model_config);
                row.phase = static_cast<int>(p) + 1;
                row.subgraph_size = static_cast<std::int64_t>(sizes[p]);
                row.accepted = outcome.accepted;
                result.metrics.push_back(row);
            }
        }
    }
    return result;
}

double opposite(double w, double lo, double hi) { return lo + hi - w; }

OppositionResult train_opposition(const LabeledDataset& dataset, const OppositionConfig& oconfig,
                                  const ModelConfig& model_config, std::uint64_t seed) {
    oconfig.validate();
    model_config.validate();
    if (dataset.size() == 0) fail(Errc::empty_dataset, "dataset is empty");
    if (dataset.n() != model_config.n) fail(Errc::shape_mismatch, "images do not match n");

    const Eigen::Index n = model_config.n;
    double lo0 = oconfig.lo;
    double hi0 = oconfig.hi;
    if (lo0 == 0.0 && hi0 == 0.0) { // default to the weight-initialization range
        hi0 = std::sqrt(1.0 / double(n));
        lo0 = -hi0;
    }

    Rng rng(seed);
    OppositionResult result;
    result.params.W.resize(n, n);
    result.params.V_raw.resize(n, n);
    // fixed row-major draw order, W before V_raw; bias starts at the midpoint
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) result.params.W(i, j) = rng.uniform(lo0, hi0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) result.params.V_raw(i, j) = rng.uniform(lo0, hi0);
    if (model_config.bias_enabled)
        result.params.bias = Eigen::VectorXd::Constant(n, (lo0 + hi0) / 2.0);

    Eigen::MatrixXd lo_W = Eigen::MatrixXd::Constant(n, n, lo0);
    Eigen::MatrixXd hi_W = Eigen::MatrixXd::Constant(n, n, hi0);
    Eigen::MatrixXd lo_V = lo_W;
    Eigen::MatrixXd hi_V = hi_W;
    Eigen::VectorXd lo_b;
    Eigen::VectorXd hi_b;
    if (model_config.bias_enabled) {
        lo_b = Eigen::VectorXd::Constant(n, lo0);
        hi_b = Eigen::VectorXd::Constant(n, hi0);
    }

    const auto flip = [&rng](Eigen::MatrixXd& cand, const Eigen::MatrixXd& lo,
                             const Eigen::MatrixXd& hi) {
        for (Eigen::Index i = 0; i < cand.rows(); ++i)
            for (Eigen::Index j = 0; j < cand.cols(); ++j)
                if (rng.below(2) == 1) cand(i, j) = opposite(cand(i, j), lo(i, j), hi(i, j));
    };

    Eigen::MatrixXd eval_images;
    std::vector<int> eval_labels;
    double width = hi0 - lo0;
    ModelParams candidate;
    for (std::int64_t it = 1; it <= oconfig.max_iterations; ++it) {
        // flip a fair coin per coordinate: heads reflects it to the opposite
        candidate = result.params;
        flip(candidate.W, lo_W, hi_W);
        flip(candidate.V_raw, lo_V, hi_V);
        if (model_config.bias_enabled)
            for (Eigen::Index j = 0; j < n; ++j)
                if (rng.below(2) == 1)
                    candidate.bias[j] = opposite(candidate.bias[j], lo_b[j], hi_b[j]);

        gather_eval_items(dataset, oconfig.eval_batch, rng, eval_images, eval_labels);
        const StepOutcome outcome =
            graph_wise_step(result.params, candidate, eval_images, eval_labels, model_config);

        // every interval closes in on whichever value was kept; the width
        // contracts by exactly the shrink factor per iteration
        lo_W = result.params.W - oconfig.shrink * (result.params.W - lo_W);
        hi_W = result.params.W + oconfig.shrink * (hi_W - result.params.W);
        lo_V = result.params.V_raw - oconfig.shrink * (result.params.V_raw - lo_V);
        hi_V = result.params.V_raw + oconfig.shrink * (hi_V - result.params.V_raw);
        if (model_config.bias_enabled) {
            lo_b = result.params.bias - oconfig.shrink * (result.params.bias - lo_b);
            hi_b = result.params.bias + oconfig.shrink * (hi_b - result.params.bias);
        }
        width *= oconfig.shrink;

        if (it % oconfig.metrics_every == 0 || it == oconfig.max_iterations) {
            MetricsRow row;
            row.iteration = it;
            row.epoch = 0;
            row.mean_batch_loss = outcome.error_after;
            row.train_accuracy = evaluate(result.params, dataset, model_config);
            row.interval_width = width;
            result.metrics.push_back(row);
        }
    }
    result.final_interval_width = width;
    return result;
}

} // namespace sperceptron
