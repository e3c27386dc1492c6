// Command-line front end: train / eval / gradcheck / inspect.
//
// Exit codes: 0 success, 1 gradcheck tolerance failure, 2 configuration
// error, 3 data error, 4 divergence, 5 unusable or mismatched model file.

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sperceptron/errors.hpp"
#include "sperceptron/grad.hpp"
#include "sperceptron/idx.hpp"
#include "sperceptron/io.hpp"
#include "sperceptron/metrics.hpp"
#include "sperceptron/model.hpp"
#include "sperceptron/rng.hpp"
#include "sperceptron/search.hpp"

namespace {

using nlohmann::json;
using namespace sperceptron;

constexpr int exit_ok = 0;
constexpr int exit_tolerance = 1;
constexpr int exit_config = 2;
constexpr int exit_data = 3;
constexpr int exit_divergence = 4;
constexpr int exit_model = 5;

void report(const std::exception& e) { std::fprintf(stderr, "error: %s\n", e.what()); }

std::string trim(std::string s) {
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

// Flat key=value config file; '#' starts a comment. Keys name long options
// without the dashes. Values for options already given on the command line
// are skipped, so flags override the file.
void apply_config_file(CLI::App& command, const std::string& path) {
    const auto bytes = read_file(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(Errc::bad_config,
                 path + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        CLI::Option* option = command.get_option_no_throw("--" + key);
        if (option == nullptr)
            fail(Errc::bad_config,
                 path + ":" + std::to_string(line_no) + ": unknown option '" + key + "'");
        if (option->count() > 0) continue;
        option->add_result(value);
        option->run_callback();
    }
}

std::filesystem::path resolve_data_path(const std::string& explicit_path,
                                        const std::string& data_dir, const char* name) {
    if (!explicit_path.empty()) return explicit_path;
    const std::filesystem::path dir =
        data_dir.empty() ? default_data_dir() : std::filesystem::path(data_dir);
    return resolve_idx_path(dir, name);
}

struct TrainOptions {
    std::string trainer = "gd";
    std::string data_dir;
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    bool with_test = false;
    std::int64_t subset_size = 0; // 0 = whole set
    std::string model_path = "model.spct";
    std::string metrics_path = "metrics.csv";
    std::string manifest_path = "manifest.json";
    std::uint64_t seed = 0;
    int class_count = 10;
    bool bias = false;

    GradConfig grad;
    SubgraphSchedule schedule;
    PerturbationConfig perturbation;
    OppositionConfig opposition;
};

json config_echo(const TrainOptions& opt, const std::filesystem::path& train_images,
                 const std::filesystem::path& train_labels,
                 const std::filesystem::path& test_images,
                 const std::filesystem::path& test_labels) {
    json config = {
        {"trainer", opt.trainer},
        {"seed", opt.seed},
        {"classes", opt.class_count},
        {"bias", opt.bias},
        {"subset", opt.subset_size},
        {"train_images", train_images.string()},
        {"train_labels", train_labels.string()},
        {"model", opt.model_path},
        {"metrics", opt.metrics_path},
        {"manifest", opt.manifest_path},
    };
    if (opt.with_test) {
        config["test_images"] = test_images.string();
        config["test_labels"] = test_labels.string();
    }
    if (opt.trainer == "gd") {
        config["gd"] = {
            {"learning_rate", opt.grad.learning_rate},
            {"batch_size", opt.grad.batch_size},
            {"epochs", opt.grad.epochs},
            {"eval_every", opt.grad.eval_every},
        };
    } else if (opt.trainer == "subgraph") {
        config["subgraph"] = {
            {"initial_fraction", opt.schedule.initial_fraction},
            {"decay", opt.schedule.decay},
            {"min_nodes", opt.schedule.min_nodes},
            {"iterations_per_phase", opt.schedule.iterations_per_phase},
            {"max_iterations", opt.schedule.max_iterations},
            {"metrics_every", opt.schedule.metrics_every},
            {"sigma", opt.perturbation.sigma},
            {"sigma_decay", opt.perturbation.sigma_decay},
            {"eval_batch", opt.perturbation.eval_batch},
        };
    } else {
        config["opposition"] = {
            {"lo", opt.opposition.lo},
            {"hi", opt.opposition.hi},
            {"shrink", opt.opposition.shrink},
            {"max_iterations", opt.opposition.max_iterations},
            {"eval_batch", opt.opposition.eval_batch},
            {"metrics_every", opt.opposition.metrics_every},
        };
    }
    return config;
}

json final_row_json(const MetricsRow& row) {
    json final = {
        {"iteration", row.iteration},
        {"epoch", row.epoch},
        {"mean_batch_loss", row.mean_batch_loss},
        {"train_accuracy", row.train_accuracy},
    };
    if (row.test_accuracy) final["test_accuracy"] = *row.test_accuracy;
    if (row.interval_width) final["interval_width"] = *row.interval_width;
    return final;
}

int run_train(const TrainOptions& opt) {
    const auto train_images =
        resolve_data_path(opt.train_images, opt.data_dir, "train-images-idx3-ubyte");
    const auto train_labels =
        resolve_data_path(opt.train_labels, opt.data_dir, "train-labels-idx1-ubyte");
    const auto test_images =
        resolve_data_path(opt.test_images, opt.data_dir, "t10k-images-idx3-ubyte");
    const auto test_labels =
        resolve_data_path(opt.test_labels, opt.data_dir, "t10k-labels-idx1-ubyte");

    LabeledDataset train_set;
    LabeledDataset test_set;
    try {
        train_set = load_dataset(train_images, train_labels);
        if (opt.with_test) test_set = load_dataset(test_images, test_labels);
    } catch (const Error& e) {
        report(e);
        return exit_data;
    }

    try {
        if (opt.subset_size > 0)
            train_set = subset(train_set, static_cast<Eigen::Index>(opt.subset_size), opt.seed);

        ModelConfig model_config;
        model_config.n = train_set.n();
        model_config.class_count = opt.class_count;
        model_config.bias_enabled = opt.bias;
        model_config.seed = opt.seed;

        const auto started = std::chrono::steady_clock::now();
        ModelParams params;
        std::vector<MetricsRow> metrics;
        MetricsLayout layout = MetricsLayout::gradient;
        if (opt.trainer == "gd") {
            GradConfig config = opt.grad;
            config.seed = opt.seed;
            TrainResult result = train_gradient_descent(
                train_set, opt.with_test ? &test_set : nullptr, config, model_config);
            params = std::move(result.params);
            metrics = std::move(result.metrics);
        } else if (opt.trainer == "subgraph") {
            layout = MetricsLayout::subgraph;
            SearchResult result = train_subgraph_search(train_set, opt.schedule,
                                                        opt.perturbation, model_config, opt.seed);
            params = std::move(result.params);
            metrics = std::move(result.metrics);
        } else {
            layout = MetricsLayout::opposition;
            OppositionResult result =
                train_opposition(train_set, opt.opposition, model_config, opt.seed);
            params = std::move(result.params);
            metrics = std::move(result.metrics);
        }
        const double wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

        save_model(params, model_config, opt.model_path);
        write_metrics_csv(opt.metrics_path, layout, metrics);

        json manifest = {
            {"command", "train"},
            {"seed", opt.seed},
            {"config", config_echo(opt, train_images, train_labels, test_images, test_labels)},
            {"train_items", train_set.size()},
            {"wall_time_seconds", wall_seconds},
        };
        if (opt.with_test) manifest["test_items"] = test_set.size();
        if (!metrics.empty()) manifest["final"] = final_row_json(metrics.back());
        if (opt.trainer == "opposition")
            manifest["expectation_note"] =
                "opposition search is not expected to exceed 0.5 accuracy on the digit task";
        atomic_write(opt.manifest_path, manifest.dump(2) + "\n");

        if (!metrics.empty())
            std::printf("iterations=%lld wall_seconds=%.1f train_accuracy=%.6f\n",
                        static_cast<long long>(metrics.back().iteration), wall_seconds,
                        metrics.back().train_accuracy);
        return exit_ok;
    } catch (const Error& e) {
        report(e);
        switch (e.code()) {
        case Errc::divergence: return exit_divergence;
        case Errc::bad_config:
        case Errc::size_out_of_range: return exit_config;
        default: return exit_data;
        }
    }
}

struct EvalOptions {
    std::string model_path;
    std::string data_dir;
    std::string images;
    std::string labels;
    std::int64_t subset_size = 0;
    std::uint64_t seed = 0;
};

int run_eval(const EvalOptions& opt) {
    ModelParams params;
    ModelConfig model_config;
    try {
        std::tie(params, model_config) = load_model(opt.model_path);
    } catch (const Error& e) {
        report(e);
        return exit_model;
    }

    LabeledDataset data;
    try {
        data = load_dataset(resolve_data_path(opt.images, opt.data_dir, "t10k-images-idx3-ubyte"),
                            resolve_data_path(opt.labels, opt.data_dir, "t10k-labels-idx1-ubyte"));
    } catch (const Error& e) {
        report(e);
        return exit_data;
    }

    try {
        if (opt.subset_size > 0)
            data = subset(data, static_cast<Eigen::Index>(opt.subset_size), opt.seed);
        if (data.n() != model_config.n)
            fail(Errc::shape_mismatch, "model expects n=" + std::to_string(model_config.n) +
                                           " but images have n=" + std::to_string(data.n()));
        std::printf("accuracy=%.6f\n", evaluate(params, data, model_config));
        return exit_ok;
    } catch (const Error& e) {
        report(e);
        switch (e.code()) {
        case Errc::shape_mismatch: return exit_model;
        case Errc::size_out_of_range:
        case Errc::bad_config: return exit_config;
        default: return exit_data;
        }
    }
}

struct GradcheckOptions {
    std::int64_t n = 8;
    int class_count = 2;
    bool bias = true;
    std::uint64_t seed = 0;
    double step = 1e-5;
    double tolerance = 1e-4;
};

int run_gradcheck(const GradcheckOptions& opt) {
    try {
        ModelConfig model_config;
        model_config.n = static_cast<Eigen::Index>(opt.n);
        model_config.class_count = opt.class_count;
        model_config.bias_enabled = opt.bias;
        model_config.seed = opt.seed;
        model_config.validate();

        // All parameters drawn away from zero: a zero bias would park every
        // doubly-inactive paraneuron exactly on the clamp kink, where the
        // loss is not differentiable and no finite-difference check can pass.
        const Eigen::Index n = model_config.n;
        const double r = std::sqrt(1.0 / static_cast<double>(n));
        Rng rng(mix_seed(opt.seed, 1));
        ModelParams params;
        params.W.resize(n, n);
        params.V_raw.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) params.W(i, j) = rng.uniform(-r, r);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) params.V_raw(i, j) = rng.uniform(-r, r);
        if (opt.bias) {
            params.bias.resize(n);
            for (Eigen::Index j = 0; j < n; ++j) params.bias[j] = rng.uniform(-r, r);
        }

        Eigen::VectorXd x(n);
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform01();
        const int label = static_cast<int>(rng.below(opt.class_count));

        const double max_rel =
            finite_difference_check(x, label, params, model_config, opt.step, opt.seed);
        std::printf("max_rel_error=%s\n", format_double(max_rel).c_str());
        return max_rel < opt.tolerance ? exit_ok : exit_tolerance;
    } catch (const Error& e) {
        report(e);
        return exit_config;
    }
}

struct InspectOptions {
    std::string model_path;
};

int run_inspect(const InspectOptions& opt) {
    ModelParams params;
    ModelConfig model_config;
    try {
        std::tie(params, model_config) = load_model(opt.model_path);
    } catch (const Error& e) {
        report(e);
        return exit_model;
    }

    const auto matrix_stats = [](const char* name, const Eigen::MatrixXd& m) {
        std::printf("%s_min=%s\n", name, format_double(m.minCoeff()).c_str());
        std::printf("%s_max=%s\n", name, format_double(m.maxCoeff()).c_str());
        std::printf("%s_mean=%s\n", name, format_double(m.mean()).c_str());
        std::printf("%s_frobenius=%s\n", name, format_double(m.norm()).c_str());
    };

    std::printf("n=%lld\n", static_cast<long long>(model_config.n));
    std::printf("class_count=%d\n", model_config.class_count);
    std::printf("bias=%d\n", model_config.bias_enabled ? 1 : 0);
    std::printf("params_paper=%lld\n",
                static_cast<long long>(parameter_count(model_config, CountConvention::paper)));
    std::printf("params_free=%lld\n",
                static_cast<long long>(parameter_count(model_config, CountConvention::free)));
    matrix_stats("W", params.W);
    const Eigen::MatrixXd V = symmetrize(params.V_raw);
    matrix_stats("V", V);
    std::printf("V_asymmetry_max=%s\n",
                format_double((V - V.transpose()).cwiseAbs().maxCoeff()).c_str());
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"subtractive perceptron: training, evaluation and model inspection"};
    app.require_subcommand(1);

    TrainOptions topt;
    std::int64_t shared_max_iterations = 0;
    std::int64_t shared_metrics_every = 0;
    std::int64_t shared_eval_batch = 0;
    std::string train_config_path;
    CLI::App* train = app.add_subcommand("train", "train a model, write model/metrics/manifest");
    train->add_option("--config", train_config_path, "key=value config file; flags override it");
    train->add_option("--trainer", topt.trainer, "gd | subgraph | opposition")
        ->check(CLI::IsMember({"gd", "subgraph", "opposition"}))
        ->capture_default_str();
    train->add_option("--data-dir", topt.data_dir, "directory holding the IDX files");
    train->add_option("--train-images", topt.train_images);
    train->add_option("--train-labels", topt.train_labels);
    train->add_option("--test-images", topt.test_images);
    train->add_option("--test-labels", topt.test_labels);
    train->add_flag("--with-test", topt.with_test, "also track test accuracy");
    train->add_option("--subset", topt.subset_size,
                      "train on the first K items after a seeded shuffle");
    train->add_option("--model", topt.model_path)->capture_default_str();
    train->add_option("--metrics", topt.metrics_path)->capture_default_str();
    train->add_option("--manifest", topt.manifest_path)->capture_default_str();
    train->add_option("--seed", topt.seed)->capture_default_str();
    train->add_option("--classes", topt.class_count)->capture_default_str();
    train->add_flag("--bias", topt.bias, "enable the per-paraneuron bias term");
    train->add_option("--lr", topt.grad.learning_rate)->capture_default_str();
    train->add_option("--batch-size", topt.grad.batch_size)->capture_default_str();
    train->add_option("--epochs", topt.grad.epochs)->capture_default_str();
    train->add_option("--eval-every", topt.grad.eval_every)->capture_default_str();
    train->add_option("--initial-fraction", topt.schedule.initial_fraction)
        ->capture_default_str();
    train->add_option("--decay", topt.schedule.decay)->capture_default_str();
    train->add_option("--min-nodes", topt.schedule.min_nodes)->capture_default_str();
    train->add_option("--iters-per-phase", topt.schedule.iterations_per_phase)
        ->capture_default_str();
    train->add_option("--max-iters", shared_max_iterations,
                      "iteration cap for the search trainers");
    train->add_option("--metrics-every", shared_metrics_every,
                      "iterations between metric rows for the search trainers");
    train->add_option("--sigma", topt.perturbation.sigma)->capture_default_str();
    train->add_option("--sigma-decay", topt.perturbation.sigma_decay)->capture_default_str();
    train->add_option("--eval-batch", shared_eval_batch,
                      "items per accept/reject evaluation for the search trainers");
    train->add_option("--lo", topt.opposition.lo)->capture_default_str();
    train->add_option("--hi", topt.opposition.hi)->capture_default_str();
    train->add_option("--shrink", topt.opposition.shrink)->capture_default_str();

    EvalOptions eopt;
    std::string eval_config_path;
    CLI::App* eval = app.add_subcommand("eval", "print a model's accuracy on a dataset");
    eval->add_option("--config", eval_config_path, "key=value config file; flags override it");
    eval->add_option("--model", eopt.model_path)->required();
    eval->add_option("--data-dir", eopt.data_dir);
    eval->add_option("--images", eopt.images);
    eval->add_option("--labels", eopt.labels);
    eval->add_option("--subset", eopt.subset_size, "evaluate on the first K after seeded shuffle");
    eval->add_option("--seed", eopt.seed)->capture_default_str();

    GradcheckOptions gopt;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "compare analytic gradients against central differences");
    gradcheck->add_option("--n", gopt.n)->capture_default_str();
    gradcheck->add_option("--classes", gopt.class_count)->capture_default_str();
    gradcheck->add_flag("--bias,!--no-bias", gopt.bias, "include the bias term");
    gradcheck->add_option("--seed", gopt.seed)->capture_default_str();
    gradcheck->add_option("--step", gopt.step)->capture_default_str();
    gradcheck->add_option("--tol", gopt.tolerance)->capture_default_str();

    InspectOptions iopt;
    CLI::App* inspect = app.add_subcommand("inspect", "print a model file's shape and statistics");
    inspect->add_option("--model", iopt.model_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (train->parsed() && !train_config_path.empty())
            apply_config_file(*train, train_config_path);
        if (eval->parsed() && !eval_config_path.empty())
            apply_config_file(*eval, eval_config_path);
    } catch (const Error& e) {
        report(e);
        return exit_config;
    } catch (const CLI::Error& e) {
        report(e);
        return exit_config;
    }

    if (train->count("--max-iters") > 0) {
        topt.schedule.max_iterations = shared_max_iterations;
        topt.opposition.max_iterations = shared_max_iterations;
    }
    if (train->count("--metrics-every") > 0) {
        topt.schedule.metrics_every = shared_metrics_every;
        topt.opposition.metrics_every = shared_metrics_every;
    }
    if (train->count("--eval-batch") > 0) {
        topt.perturbation.eval_batch = static_cast<Eigen::Index>(shared_eval_batch);
        topt.opposition.eval_batch = static_cast<Eigen::Index>(shared_eval_batch);
    }

    if (train->parsed()) return run_train(topt);
    if (eval->parsed()) return run_eval(eopt);
    if (gradcheck->parsed()) return run_gradcheck(gopt);
    return run_inspect(iopt);
}
