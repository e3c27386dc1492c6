#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "sperceptron/errors.hpp"
#include "sperceptron/grad.hpp"
#include "sperceptron/metrics.hpp"
#include "sperceptron/model.hpp"
#include "sperceptron/rng.hpp"
#include "sperceptron/search.hpp"
#include "synthetic.hpp"

using namespace sperceptron;

namespace {

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return Errc::io;
}

double mean_loss(const ModelParams& params, const LabeledDataset& data,
                 const ModelConfig& config) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const ForwardTrace trace = forward(data.images.row(i).transpose(), params, config);
        total += cross_entropy_loss(trace, data.labels[static_cast<std::size_t>(i)]);
    }
    return total / static_cast<double>(data.size());
}

} // namespace

TEST_CASE("phase sizes follow the shrinking schedule") {
    SubgraphSchedule schedule;
    schedule.initial_fraction = 1.0;
    schedule.decay = 0.5;
    schedule.min_nodes = 2;
    schedule.iterations_per_phase = 200;
    schedule.max_iterations = 1200;
    CHECK(phase_sizes(schedule, 20) ==
          std::vector<Eigen::Index>{20, 10, 5, 3, 2, 2});

    // a decay just under one still shrinks by at least one node per phase
    SubgraphSchedule slow;
    slow.decay = 0.999;
    slow.iterations_per_phase = 100;
    slow.max_iterations = 1000;
    const std::vector<Eigen::Index> sizes = phase_sizes(slow, 12);
    REQUIRE(sizes.size() == 10);
    CHECK(sizes.front() == 12);
    for (std::size_t p = 1; p < sizes.size(); ++p) {
        CHECK(sizes[p] <= sizes[p - 1]);
        if (sizes[p - 1] > slow.min_nodes) CHECK(sizes[p] < sizes[p - 1]);
        CHECK(sizes[p] >= slow.min_nodes);
    }

    // fractional start, clamped to the floor
    SubgraphSchedule fractional;
    fractional.initial_fraction = 0.25;
    CHECK(phase_sizes(fractional, 20).front() == 5);
    fractional.initial_fraction = 0.01;
    CHECK(phase_sizes(fractional, 20).front() == fractional.min_nodes);

    // the default schedule covers every iteration
    SubgraphSchedule defaults;
    CHECK(phase_sizes(defaults, 784).size() == 25); // ceil(5000 / 200)
    CHECK(phase_sizes(defaults, 784).front() == 784);
}

TEST_CASE("subgraph sampling is sorted, unique, in range and seeded") {
    Rng rng(4);
    const std::vector<Eigen::Index> nodes = sample_subgraph(rng, 30, 10);
    REQUIRE(nodes.size() == 10);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        CHECK(nodes[i] >= 0);
        CHECK(nodes[i] < 30);
        if (i > 0) CHECK(nodes[i] > nodes[i - 1]); // sorted and distinct at once
    }

    Rng replay(4);
    CHECK(sample_subgraph(replay, 30, 10) == nodes);

    Rng full(4);
    std::vector<Eigen::Index> everything = sample_subgraph(full, 6, 6);
    CHECK(everything == std::vector<Eigen::Index>{0, 1, 2, 3, 4, 5});

    Rng bad(4);
    CHECK(code_of([&] { sample_subgraph(bad, 6, 7); }) == Errc::size_out_of_range);
    CHECK(code_of([&] { sample_subgraph(bad, 6, 0); }) == Errc::size_out_of_range);
}

TEST_CASE("proposals touch exactly the subgraph-incident weights") {
    ModelConfig config;
    config.n = 6;
    config.class_count = 2;
    config.bias_enabled = true;
    config.seed = 13;
    ModelParams params = init_params(config);
    params.bias = Eigen::VectorXd::Constant(6, 0.05);

    const std::vector<Eigen::Index> nodes = {1, 4};
    PerturbationConfig pconfig;
    pconfig.sigma = 0.3;

    Rng rng(77);
    const ModelParams cand = propose_modification(params, nodes, pconfig, rng);

    const auto in = [&](Eigen::Index v) { return v == 1 || v == 4; };
    for (Eigen::Index i = 0; i < 6; ++i) {
        for (Eigen::Index j = 0; j < 6; ++j) {
            if (in(i) || in(j))
                CHECK(cand.W(i, j) != params.W(i, j));
            else
                CHECK(cand.W(i, j) == params.W(i, j));
            if (in(i) && in(j))
                CHECK(cand.V_raw(i, j) != params.V_raw(i, j));
            else
                CHECK(cand.V_raw(i, j) == params.V_raw(i, j));
        }
        if (in(i))
            CHECK(cand.bias[i] != params.bias[i]);
        else
            CHECK(cand.bias[i] == params.bias[i]);
    }
}

TEST_CASE("proposal noise scales linearly with sigma") {
    ModelConfig config;
    config.n = 5;
    config.class_count = 2;
    config.seed = 3;
    const ModelParams params = init_params(config);
    const std::vector<Eigen::Index> nodes = {0, 2, 3};

    PerturbationConfig half;
    half.sigma = 0.3;
    PerturbationConfig whole;
    whole.sigma = 0.6; // exactly twice 0.3 in binary

    Rng rng_a(5);
    Rng rng_b(5);
    const ModelParams a = propose_modification(params, nodes, half, rng_a);
    const ModelParams b = propose_modification(params, nodes, whole, rng_b);

    // same seed draws the same normals in the same order, so the deltas
    // double (up to the add-then-subtract rounding of each entry)
    const Eigen::MatrixXd dW_half = a.W - params.W;
    const Eigen::MatrixXd dW_whole = b.W - params.W;
    CHECK((dW_whole - 2.0 * dW_half).cwiseAbs().maxCoeff() <= 1e-12);
    const Eigen::MatrixXd dV_half = a.V_raw - params.V_raw;
    const Eigen::MatrixXd dV_whole = b.V_raw - params.V_raw;
    CHECK((dV_whole - 2.0 * dV_half).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("opposite reflects through the interval midpoint") {
    CHECK(opposite(0.25, -1.0, 1.0) == -0.25);
    CHECK(opposite(-0.25, -1.0, 1.0) == 0.25);
    CHECK(opposite(opposite(0.7, -1.0, 1.0), -1.0, 1.0) == 0.7);

    CHECK(opposite(0.3, 0.2, 0.7) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(opposite(opposite(0.3, 0.2, 0.7), 0.2, 0.7) ==
          doctest::Approx(0.3).epsilon(1e-14));
    CHECK(opposite(0.45, 0.2, 0.7) == doctest::Approx(0.45).epsilon(1e-15)); // midpoint is fixed
}

TEST_CASE("graph-wise steps keep whichever parameters score lower") {
    // two items, two blocks: a W that routes each block to its own class
    // poolgroup beats the zero model
    ModelConfig config;
    config.n = 4;
    config.class_count = 2;

    LabeledDataset data;
    data.images.resize(2, 4);
    data.images << 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0;
    data.labels = {0, 1};
    data.rows = 1;
    data.cols = 4;

    ModelParams zero;
    zero.W = Eigen::MatrixXd::Zero(4, 4);
    zero.V_raw = Eigen::MatrixXd::Zero(4, 4);

    ModelParams routed = zero;
    routed.W(0, 0) = routed.W(1, 0) = routed.W(0, 1) = routed.W(1, 1) = 1.0;
    routed.W(2, 2) = routed.W(3, 2) = routed.W(2, 3) = routed.W(3, 3) = 1.0;

    const double ln2 = 0.6931471805599453;
    const double routed_loss = std::log1p(std::exp(-2.0));

    SUBCASE("a strictly better candidate is accepted") {
        ModelParams current = zero;
        const StepOutcome outcome =
            graph_wise_step(current, routed, data.images, data.labels, config);
        CHECK(outcome.accepted);
        CHECK(outcome.error_before == doctest::Approx(ln2).epsilon(1e-14));
        CHECK(outcome.error_after == doctest::Approx(routed_loss).epsilon(1e-12));
        CHECK(current.W.cwiseEqual(routed.W).all());
    }

    SUBCASE("a worse candidate is rejected") {
        ModelParams current = routed;
        const StepOutcome outcome =
            graph_wise_step(current, zero, data.images, data.labels, config);
        CHECK_FALSE(outcome.accepted);
        CHECK(outcome.error_after == outcome.error_before);
        CHECK(current.W.cwiseEqual(routed.W).all());
    }

    SUBCASE("a tie keeps the incumbent") {
        // n=5 with two classes pools outputs 0..3 and ignores output 4, so
        // a candidate that only rewires W into paraneuron 4 scores the same
        ModelConfig odd;
        odd.n = 5;
        odd.class_count = 2;
        odd.seed = 21;
        ModelParams current = init_params(odd);

        LabeledDataset items = two_block_task(5, 10, 3);

        ModelParams cand = current;
        cand.W(0, 4) += 1.0;
        cand.W(3, 4) -= 0.5;

        const StepOutcome outcome =
            graph_wise_step(current, cand, items.images, items.labels, odd);
        CHECK_FALSE(outcome.accepted);
        CHECK(outcome.error_after == outcome.error_before);
        CHECK_FALSE(current.W.cwiseEqual(cand.W).all());
    }
}

TEST_CASE("subgraph search drives the error down on the synthetic task") {
    const LabeledDataset data = two_block_task();

    SubgraphSchedule schedule;
    schedule.initial_fraction = 1.0;
    schedule.decay = 0.9;
    schedule.min_nodes = 2;
    schedule.iterations_per_phase = 200;
    schedule.max_iterations = 2000;
    schedule.metrics_every = 100;

    PerturbationConfig pconfig;
    pconfig.sigma = 0.3;
    pconfig.eval_batch = 64; // larger than the dataset: every step sees all items

    ModelConfig model_config;
    model_config.n = 8;
    model_config.class_count = 2;
    model_config.seed = 5;

    const SearchResult result = train_subgraph_search(data, schedule, pconfig, model_config, 9);
    REQUIRE_FALSE(result.accepted_errors.empty());

    // strict accept over a fixed eval set: every accepted error beats the last
    for (std::size_t i = 1; i < result.accepted_errors.size(); ++i)
        CHECK(result.accepted_errors[i] < result.accepted_errors[i - 1]);

    const double initial = mean_loss(init_params(model_config), data, model_config);
    CHECK(result.accepted_errors.back() <= 0.5 * initial);
    CHECK(result.accepted_errors.back() == doctest::Approx(mean_loss(
        result.params, data, model_config)).epsilon(1e-12));

    const std::vector<Eigen::Index> sizes = phase_sizes(schedule, 8);
    for (const MetricsRow& row : result.metrics) {
        CHECK(row.iteration % schedule.metrics_every == 0);
        REQUIRE(row.phase.has_value());
        REQUIRE(row.subgraph_size.has_value());
        REQUIRE(row.accepted.has_value());
        CHECK(*row.subgraph_size == sizes[static_cast<std::size_t>(*row.phase - 1)]);
    }
    CHECK(result.metrics.back().iteration == schedule.max_iterations);
    CHECK(result.metrics.back().train_accuracy > 0.5);
}

TEST_CASE("subgraph search is reproducible bit for bit") {
    const LabeledDataset data = two_block_task();

    SubgraphSchedule schedule;
    schedule.max_iterations = 400;
    schedule.iterations_per_phase = 100;
    schedule.metrics_every = 100;

    PerturbationConfig pconfig;
    pconfig.eval_batch = 16; // smaller than the dataset: sampled eval items

    ModelConfig model_config;
    model_config.n = 8;
    model_config.class_count = 2;
    model_config.seed = 1;

    const SearchResult a = train_subgraph_search(data, schedule, pconfig, model_config, 2);
    const SearchResult b = train_subgraph_search(data, schedule, pconfig, model_config, 2);
    CHECK(a.params.W.cwiseEqual(b.params.W).all());
    CHECK(a.params.V_raw.cwiseEqual(b.params.V_raw).all());
    CHECK(a.accepted_errors == b.accepted_errors);
    CHECK(metrics_csv(MetricsLayout::subgraph, a.metrics) ==
          metrics_csv(MetricsLayout::subgraph, b.metrics));

    const SearchResult c = train_subgraph_search(data, schedule, pconfig, model_config, 3);
    CHECK_FALSE(a.params.W.cwiseEqual(c.params.W).all());
}

TEST_CASE("opposition intervals shrink geometrically") {
    const LabeledDataset data = two_block_task();

    OppositionConfig oconfig;
    oconfig.shrink = 0.9;
    oconfig.max_iterations = 50;
    oconfig.eval_batch = 64;
    oconfig.metrics_every = 10;

    ModelConfig model_config;
    model_config.n = 8;
    model_config.class_count = 2;
    model_config.seed = 4;

    const OppositionResult result = train_opposition(data, oconfig, model_config, 6);

    // lo = hi = 0 auto-fills the initialization range, so the starting
    // width is 2 sqrt(1/8)
    const double width0 = 2.0 * std::sqrt(1.0 / 8.0);
    REQUIRE_FALSE(result.metrics.empty());
    for (const MetricsRow& row : result.metrics) {
        REQUIRE(row.interval_width.has_value());
        const double expected =
            width0 * std::pow(oconfig.shrink, static_cast<double>(row.iteration));
        CHECK(*row.interval_width ==
              doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(result.final_interval_width ==
          doctest::Approx(width0 * std::pow(0.9, 50.0)).epsilon(1e-12));

    // full-set evaluation plus strict accept: the recorded error never rises
    for (std::size_t i = 1; i < result.metrics.size(); ++i)
        CHECK(result.metrics[i].mean_batch_loss <= result.metrics[i - 1].mean_batch_loss);
}

TEST_CASE("opposition search is reproducible bit for bit") {
    const LabeledDataset data = two_block_task();

    OppositionConfig oconfig;
    oconfig.max_iterations = 60;
    oconfig.eval_batch = 16;
    oconfig.metrics_every = 20;

    ModelConfig model_config;
    model_config.n = 8;
    model_config.class_count = 2;

    const OppositionResult a = train_opposition(data, oconfig, model_config, 8);
    const OppositionResult b = train_opposition(data, oconfig, model_config, 8);
    CHECK(a.params.W.cwiseEqual(b.params.W).all());
    CHECK(a.params.V_raw.cwiseEqual(b.params.V_raw).all());
    CHECK(a.final_interval_width == b.final_interval_width);
    CHECK(metrics_csv(MetricsLayout::opposition, a.metrics) ==
          metrics_csv(MetricsLayout::opposition, b.metrics));

    const OppositionResult c = train_opposition(data, oconfig, model_config, 9);
    CHECK_FALSE(a.params.W.cwiseEqual(c.params.W).all());
}

TEST_CASE("an explicit opposition interval is honored") {
    const LabeledDataset data = two_block_task();

    OppositionConfig oconfig;
    oconfig.lo = -0.5;
    oconfig.hi = 1.5;
    oconfig.shrink = 0.5;
    oconfig.max_iterations = 4;
    oconfig.eval_batch = 64;
    oconfig.metrics_every = 1;

    ModelConfig model_config;
    model_config.n = 8;
    model_config.class_count = 2;

    const OppositionResult result = train_opposition(data, oconfig, model_config, 3);
    REQUIRE(result.metrics.size() == 4);
    CHECK(*result.metrics[0].interval_width == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(result.final_interval_width == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("search configs reject nonsense") {
    SubgraphSchedule schedule;
    schedule.initial_fraction = 0.0;
    CHECK(code_of([&] { schedule.validate(); }) == Errc::bad_config);
    schedule = SubgraphSchedule{};
    schedule.initial_fraction = 1.5;
    CHECK(code_of([&] { schedule.validate(); }) == Errc::bad_config);
    schedule = SubgraphSchedule{};
    schedule.decay = 0.0;
    CHECK(code_of([&] { schedule.validate(); }) == Errc::bad_config);
    schedule = SubgraphSchedule{};
    schedule.min_nodes = 0;
    CHECK(code_of([&] { schedule.validate(); }) == Errc::bad_config);
    schedule = SubgraphSchedule{};
    schedule.max_iterations = 0;
    CHECK(code_of([&] { schedule.validate(); }) == Errc::bad_config);

    PerturbationConfig pconfig;
    pconfig.sigma = 0.0;
    CHECK(code_of([&] { pconfig.validate(); }) == Errc::bad_config);
    pconfig = PerturbationConfig{};
    pconfig.sigma_decay = 1.5;
    CHECK(code_of([&] { pconfig.validate(); }) == Errc::bad_config);
    pconfig = PerturbationConfig{};
    pconfig.eval_batch = 0;
    CHECK(code_of([&] { pconfig.validate(); }) == Errc::bad_config);

    OppositionConfig oconfig;
    oconfig.shrink = 1.0;
    CHECK(code_of([&] { oconfig.validate(); }) == Errc::bad_config);
    oconfig = OppositionConfig{};
    oconfig.lo = 1.0;
    oconfig.hi = -1.0;
    CHECK(code_of([&] { oconfig.validate(); }) == Errc::bad_config);
    oconfig = OppositionConfig{};
    oconfig.lo = 0.5;
    oconfig.hi = 0.5;
    CHECK(code_of([&] { oconfig.validate(); }) == Errc::bad_config);
}
