#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sperceptron {

// One evaluation point. The base columns are shared by every trainer;
// phase/subgraph_size/accepted belong to the subgraph trainer and
// interval_width to the opposition trainer.
struct MetricsRow {
    std::int64_t iteration = 0;
    int epoch = 0;
    double mean_batch_loss = 0.0;
    double train_accuracy = 0.0;
    std::optional<double> test_accuracy;

    std::optional<int> phase;
    std::optional<std::int64_t> subgraph_size;
    std::optional<bool> accepted;

    std::optional<double> interval_width;
};

enum class MetricsLayout { gradient, subgraph, opposition };

std::string metrics_header(MetricsLayout layout);
std::string metrics_csv(MetricsLayout layout, const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, MetricsLayout layout,
                       const std::vector<MetricsRow>& rows);

// shortest round-trip decimal form
std::string format_double(double value);

} // namespace sperceptron
