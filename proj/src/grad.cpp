#include "sperceptron/grad.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

#include "sperceptron/errors.hpp"
#include "sperceptron/rng.hpp"

namespace sperceptron {

void GradConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        fail(Errc::bad_config, "learning_rate must be positive");
    if (batch_size < 1) fail(Errc::bad_config, "batch_size must be >= 1");
    if (epochs < 1) fail(Errc::bad_config, "epochs must be >= 1");
    if (eval_every < 1) fail(Errc::bad_config, "eval_every must be >= 1");
}

double cross_entropy_loss(const Eigen::VectorXd& pooled_logits, int label) {
    if (label < 0 || label >= pooled_logits.size())
        fail(Errc::bad_label, "label " + std::to_string(label) + " out of range");
    const double m = pooled_logits.maxCoeff();
    const double lse = m + std::log((pooled_logits.array() - m).exp().sum());
    return lse - pooled_logits[label];
}

double cross_entropy_loss(const ForwardTrace& trace, int label) {
    return cross_entropy_loss(trace.pooled, label);
}

namespace {

// dL/dy from the softmax error signal, spread uniformly over each pooled
// group; the trailing unpooled outputs get zero
Eigen::VectorXd pool_backward(const Eigen::VectorXd& dpooled, Eigen::Index n, int class_count) {
    const Eigen::Index g = n / class_count;
    Eigen::VectorXd dy = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < class_count; ++k)
        dy.segment(Eigen::Index(k) * g, g).setConstant(dpooled[k] / double(g));
    return dy;
}

} // namespace

Gradients backward(const ForwardTrace& trace, int label, const ModelParams& params,
                   const ModelConfig& config) {
    if (trace.x.size() != config.n || trace.probs.size() != config.class_count)
        fail(Errc::shape_mismatch, "trace does not match config");
    if (label < 0 || label >= config.class_count) fail(Errc::bad_label, "label out of range");

    Eigen::VectorXd dpooled = trace.probs;
    dpooled[label] -= 1.0;

    Eigen::VectorXd ds = pool_backward(dpooled, config.n, config.class_count);
    Gradients grads;
    if (params.has_bias()) {
        // clamp node: subgradient 0 where relu(a_v)+relu(a_w)+bias < 0
        const Eigen::VectorXd s =
            trace.a_v.cwiseMax(0.0) + trace.a_w.cwiseMax(0.0) + params.bias;
        ds = (s.array() > 0.0).select(ds, 0.0);
        grads.dbias = ds;
    }

    // ReLU subgradient at 0 is 0
    const Eigen::VectorXd g_v = (trace.a_v.array() > 0.0).select(ds, 0.0);
    const Eigen::VectorXd g_w = (trace.a_w.array() > 0.0).select(ds, 0.0);

    grads.dW = trace.x * g_w.transpose();
    const Eigen::MatrixXd G = trace.x_d * g_v.transpose();
    grads.dV_raw = (G + G.transpose()) / 2.0; // backflow through the symmetrization
    return grads;
}

double mean_batch_loss(const BatchTrace& trace, std::span<const int> labels) {
    if (trace.pooled.rows() != static_cast<Eigen::Index>(labels.size()))
        fail(Errc::shape_mismatch, "label count does not match batch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < trace.pooled.rows(); ++i)
        total += cross_entropy_loss(Eigen::VectorXd(trace.pooled.row(i)), labels[i]);
    return total / double(labels.size());
}

Gradients backward_batch(const BatchTrace& trace, std::span<const int> labels,
                         const ModelParams& params, const ModelConfig& config) {
    const Eigen::Index b = trace.X.rows();
    if (b != static_cast<Eigen::Index>(labels.size()))
        fail(Errc::shape_mismatch, "label count does not match batch");

    Eigen::MatrixXd dpooled = trace.probs;
    for (Eigen::Index i = 0; i < b; ++i) {
        const int label = labels[i];
        if (label < 0 || label >= config.class_count) fail(Errc::bad_label, "label out of range");
        dpooled(i, label) -= 1.0;
    }

    const Eigen::Index g = config.group_size();
    Eigen::MatrixXd dS = Eigen::MatrixXd::Zero(b, config.n);
    for (int k = 0; k < config.class_count; ++k)
        dS.middleCols(Eigen::Index(k) * g, g).colwise() =
            Eigen::VectorXd(dpooled.col(k) / double(g));

    Gradients grads;
    if (params.has_bias()) {
        Eigen::MatrixXd s = trace.Av.cwiseMax(0.0) + trace.Aw.cwiseMax(0.0);
        s.rowwise() += params.bias.transpose();
        dS = (s.array() > 0.0).select(dS, 0.0);
        grads.dbias = dS.colwise().sum().transpose() / double(b);
    }

    const Eigen::MatrixXd Gv = (trace.Av.array() > 0.0).select(dS, 0.0);
    const Eigen::MatrixXd Gw = (trace.Aw.array() > 0.0).select(dS, 0.0);

    grads.dW = trace.X.transpose() * Gw / double(b);
    const Eigen::MatrixXd G = trace.Xd.transpose() * Gv / double(b);
    grads.dV_raw = (G + G.transpose()) / 2.0;
    return grads;
}

namespace {

double loss_at(const Eigen::VectorXd& x, int label, const ModelParams& params,
               const ModelConfig& config) {
    return cross_entropy_loss(forward(x, params, config), label);
}

double central_difference(const Eigen::VectorXd& x, int label, ModelParams& params,
                          const ModelConfig& config, double& coord, double step) {
    const double saved = coord;
    coord = saved + step;
    const double up = loss_at(x, label, params, config);
    coord = saved - step;
    const double down = loss_at(x, label, params, config);
    coord = saved;
    return (up - down) / (2.0 * step);
}

} // namespace

double finite_difference_check(const Eigen::VectorXd& x, int label, const ModelParams& params,
                               const ModelConfig& config, double step, std::uint64_t seed) {
    if (!(step > 0.0)) fail(Errc::bad_config, "step must be positive");

    const Gradients analytic = backward(forward(x, params, config), label, params, config);
    ModelParams work = params;

    const Eigen::Index n = config.n;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> coords; // (flat index, matrix id 0=W 1=V)
    if (n <= 16) {
        for (Eigen::Index f = 0; f < n * n; ++f) coords.emplace_back(f, 0);
        for (Eigen::Index f = 0; f < n * n; ++f) coords.emplace_back(f, 1);
    } else {
        Rng rng(seed);
        for (int id = 0; id < 2; ++id) {
            std::unordered_set<Eigen::Index> seen;
            while (seen.size() < 200) {
                const Eigen::Index f = Eigen::Index(rng.below(std::uint64_t(n) * n));
                if (seen.insert(f).second) coords.emplace_back(f, id);
            }
        }
    }

    double max_rel = 0.0;
    auto consider = [&max_rel](double a, double num) {
        const double scale = std::max(std::abs(a), std::abs(num));
        if (std::abs(a) < 1e-10 && std::abs(num) < 1e-10) return; // both zero, skip the ratio
        max_rel = std::max(max_rel, std::abs(a - num) / scale);
    };

    for (const auto& [flat, id] : coords) {
        const Eigen::Index i = flat / n;
        const Eigen::Index j = flat % n;
        Eigen::MatrixXd& m = (id == 0) ? work.W : work.V_raw;
        const double a = (id == 0) ? analytic.dW(i, j) : analytic.dV_raw(i, j);
        consider(a, central_difference(x, label, work, config, m(i, j), step));
    }
    if (params.has_bias()) {
        for (Eigen::Index i = 0; i < n; ++i)
            consider(analytic.dbias[i],
                     central_difference(x, label, work, config, work.bias[i], step));
    }
    return max_rel;
}

void sgd_step(ModelParams& params, const Gradients& grads, double learning_rate) {
    if (grads.dW.rows() != params.W.rows() || grads.dW.cols() != params.W.cols() ||
        grads.dV_raw.rows() != params.V_raw.rows() || grads.dV_raw.cols() != params.V_raw.cols() ||
        grads.dbias.size() != params.bias.size())
        fail(Errc::shape_mismatch, "gradient shapes do not match parameters");
    if (!grads.dW.allFinite() || !grads.dV_raw.allFinite() ||
        (grads.dbias.size() > 0 && !grads.dbias.allFinite()))
        fail(Errc::non_finite, "non-finite gradient");

    params.W -= learning_rate * grads.dW;
    params.V_raw -= learning_rate * grads.dV_raw;
    if (params.has_bias()) params.bias -= learning_rate * grads.dbias;
}

double evaluate(const ModelParams& params, const LabeledDataset& dataset,
                const ModelConfig& config) {
    const Eigen::Index chunk = 1024;
    Eigen::Index correct = 0;
    for (Eigen::Index start = 0; start < dataset.size(); start += chunk) {
        const Eigen::Index count = std::min(chunk, dataset.size() - start);
        const BatchTrace t = forward_batch(dataset.images.middleRows(start, count), params, config);
        for (Eigen::Index i = 0; i < count; ++i) {
            if (argmax_lowest(t.probs.row(i).transpose()) == dataset.labels[start + i]) ++correct;
        }
    }
    return dataset.size() == 0 ? 0.0 : double(correct) / double(dataset.size());
}

TrainResult train_gradient_descent(const LabeledDataset& train, const LabeledDataset* test,
                                   const GradConfig& config, const ModelConfig& model_config) {
    config.validate();
    model_config.validate();
    if (train.size() == 0) fail(Errc::empty_dataset, "training set is empty");
    if (train.n() != model_config.n) fail(Errc::shape_mismatch, "training images do not match n");
    if (test && test->size() > 0 && test->n() != model_config.n)
        fail(Errc::shape_mismatch, "test images do not match n");

    TrainResult result;
    result.params = init_params(model_config);

    const Eigen::Index batches_per_epoch =
        (train.size() + config.batch_size - 1) / config.batch_size;
    const std::int64_t total_iterations = std::int64_t(batches_per_epoch) * config.epochs;

    std::vector<int> batch_labels;
    Eigen::MatrixXd batch_images;
    std::int64_t iteration = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto plan = batches(train.size(), config.batch_size, mix_seed(config.seed, epoch));
        for (const auto& batch : plan) {
            ++iteration;
            const Eigen::Index b = Eigen::Index(batch.size());
            batch_images.resize(b, train.n());
            batch_labels.resize(batch.size());
            for (Eigen::Index r = 0; r < b; ++r) {
                batch_images.row(r) = train.images.row(batch[r]);
                batch_labels[r] = train.labels[batch[r]];
            }

            const BatchTrace trace = forward_batch(batch_images, result.params, model_config);
            const double loss = mean_batch_loss(trace, batch_labels);
            if (!std::isfinite(loss))
                fail(Errc::divergence, "mean batch loss is non-finite at iteration " +
                                           std::to_string(iteration));

            const Gradients grads =
                backward_batch(trace, batch_labels, result.params, model_config);
            sgd_step(result.params, grads, config.learning_rate);

            if (iteration % config.eval_every == 0 || iteration == total_iterations) {
                MetricsRow row;
                row.iteration = iteration;
                row.epoch = epoch;
                row.mean_batch_loss = loss;
                row.train_accuracy = evaluate(result.params, train, model_config);
                if (test && test->size() > 0)
                    row.test_accuracy = evaluate(result.params, *test, model_config);
                result.metrics.push_back(row);
            }
        }
    }
    return result;
}

} // namespace sperceptron
