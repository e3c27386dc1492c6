#include "sperceptron/metrics.hpp"

#include <charconv>

#include "sperceptron/errors.hpp"
#include "sperceptron/io.hpp"

namespace sperceptron {

std::string format_double(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

std::string metrics_header(MetricsLayout layout) {
    std::string header = "iteration,epoch,mean_batch_loss,train_accuracy,test_accuracy";
    if (layout == MetricsLayout::subgraph) header += ",phase,subgraph_size,accepted";
    if (layout == MetricsLayout::opposition) header += ",interval_width";
    return header;
}

std::string metrics_csv(MetricsLayout layout, const std::vector<MetricsRow>& rows) {
    std::string out = metrics_header(layout) + "\n";
    for (const MetricsRow& r : rows) {
        out += std::to_string(r.iteration);
        out += ',';
        out += std::to_string(r.epoch);
        out += ',';
        out += format_double(r.mean_batch_loss);
        out += ',';
        out += format_double(r.train_accuracy);
        out += ',';
        if (r.test_accuracy) out += format_double(*r.test_accuracy);
        if (layout == MetricsLayout::subgraph) {
            out += ',';
            if (r.phase) out += std::to_string(*r.phase);
            out += ',';
            if (r.subgraph_size) out += std::to_string(*r.subgraph_size);
            out += ',';
            if (r.accepted) out += (*r.accepted ? "1" : "0");
        }
        if (layout == MetricsLayout::opposition) {
            out += ',';
            if (r.interval_width) out += format_double(*r.interval_width);
        }
        out += '\n';
    }
    return out;
}

void write_metrics_csv(const std::filesystem::path& path, MetricsLayout layout,
                       const std::vector<MetricsRow>& rows) {
    atomic_write(path, metrics_csv(layout, rows));
}

} // namespace sperceptron
