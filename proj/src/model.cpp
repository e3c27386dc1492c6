#include "sperceptron/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "sperceptron/errors.hpp"
#include "sperceptron/io.hpp"
#include "sperceptron/rng.hpp"

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");
static_assert(std::numeric_limits<double>::is_iec559 && sizeof(double) == 8);

namespace sperceptron {

void ModelConfig::validate() const {
    if (class_count < 2) fail(Errc::bad_config, "class_count must be >= 2");
    if (n < class_count)
        fail(Errc::bad_config, "n = " + std::to_string(n) + " smaller than class_count");
}

bool ModelParams::all_finite() const {
    return W.allFinite() && V_raw.allFinite() && (bias.size() == 0 || bias.allFinite());
}

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    const Eigen::Index n = config.n;
    const double bound = std::sqrt(1.0 / double(n));
    Rng rng(config.seed);

    ModelParams params;
    params.W.resize(n, n);
    params.V_raw.resize(n, n);
    // row-major draw order, W first, so streams are stable across layouts
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) params.W(i, j) = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) params.V_raw(i, j) = rng.uniform(-bound, bound);
    if (config.bias_enabled) params.bias = Eigen::VectorXd::Zero(n);
    return params;
}

Eigen::VectorXd cyclic_difference(const Eigen::VectorXd& x) {
    const Eigen::Index n = x.size();
    if (n < 2) fail(Errc::input_too_short, "cyclic difference needs n >= 2");
    Eigen::VectorXd out(n);
    out.head(n - 1) = x.head(n - 1) - x.tail(n - 1);
    out[n - 1] = x[n - 1] - x[0];
    return out;
}

Eigen::MatrixXd cyclic_difference_rows(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.cols();
    if (n < 2) fail(Errc::input_too_short, "cyclic difference needs n >= 2");
    Eigen::MatrixXd out(X.rows(), n);
    out.leftCols(n - 1) = X.leftCols(n - 1) - X.rightCols(n - 1);
    out.col(n - 1) = X.col(n - 1) - X.col(0);
    return out;
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& raw) {
    if (raw.rows() != raw.cols()) fail(Errc::not_square, "symmetrize needs a square matrix");
    return (raw + raw.transpose()) / 2.0;
}

namespace {

void check_shapes(Eigen::Index x_size, const ModelParams& params, const ModelConfig& config) {
    config.validate();
    if (x_size != config.n) fail(Errc::shape_mismatch, "input length != n");
    if (params.W.rows() != config.n || params.W.cols() != config.n)
        fail(Errc::shape_mismatch, "W is not n x n");
    if (params.V_raw.rows() != config.n || params.V_raw.cols() != config.n)
        fail(Errc::shape_mismatch, "V_raw is not n x n");
    if (config.bias_enabled != params.has_bias() ||
        (params.has_bias() && params.bias.size() != config.n))
        fail(Errc::shape_mismatch, "bias does not match bias_enabled");
    if (!params.all_finite()) fail(Errc::non_finite, "non-finite parameter");
}

} // namespace

ForwardTrace forward(const Eigen::VectorXd& x, const ModelParams& params,
                     const ModelConfig& config) {
    check_shapes(x.size(), params, config);

    ForwardTrace t;
    t.x = x;
    t.x_d = cyclic_difference(x);
    const Eigen::MatrixXd V = symmetrize(params.V_raw);
    t.a_v = V.transpose() * t.x_d;
    t.a_w = params.W.transpose() * x;
    t.y = t.a_v.cwiseMax(0.0) + t.a_w.cwiseMax(0.0);
    if (params.has_bias()) t.y = (t.y + params.bias).cwiseMax(0.0);
    t.pooled = pool_outputs(t.y, config.class_count);
    t.probs = softmax(t.pooled);
    return t;
}

BatchTrace forward_batch(const Eigen::MatrixXd& X, const ModelParams& params,
                         const ModelConfig& config) {
    check_shapes(X.cols(), params, config);

    BatchTrace t;
    t.X = X;
    t.Xd = cyclic_difference_rows(X);
    const Eigen::MatrixXd V = symmetrize(params.V_raw);
    t.Av = t.Xd * V;
    t.Aw = X * params.W;
    t.Y = t.Av.cwiseMax(0.0) + t.Aw.cwiseMax(0.0);
    if (params.has_bias()) {
        t.Y.rowwise() += params.bias.transpose();
        t.Y = t.Y.cwiseMax(0.0);
    }

    const int c = config.class_count;
    const Eigen::Index g = config.group_size();
    t.pooled.resize(X.rows(), c);
    for (int k = 0; k < c; ++k)
        t.pooled.col(k) = t.Y.middleCols(Eigen::Index(k) * g, g).rowwise().sum() / double(g);

    const Eigen::VectorXd row_max = t.pooled.rowwise().maxCoeff();
    t.probs = (t.pooled.colwise() - row_max).array().exp();
    t.probs.array().colwise() /= t.probs.rowwise().sum().array();
    return t;
}

Eigen::VectorXd pool_outputs(const Eigen::VectorXd& y, int class_count) {
    if (class_count < 1 || y.size() < class_count)
        fail(Errc::too_few_outputs, "need at least one output per class");
    const Eigen::Index g = y.size() / class_count;
    Eigen::VectorXd pooled(class_count);
    for (int k = 0; k < class_count; ++k) pooled[k] = y.segment(Eigen::Index(k) * g, g).mean();
    return pooled;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp();
    return e / e.sum();
}

Eigen::VectorXd pooled_probabilities(const Eigen::VectorXd& y, int class_count) {
    return softmax(pool_outputs(y, class_count));
}

int argmax_lowest(const Eigen::VectorXd& v) {
    int best = 0;
    for (int k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
    return best;
}

int predict(const Eigen::VectorXd& x, const ModelParams& params, const ModelConfig& config) {
    return argmax_lowest(forward(x, params, config).probs);
}

std::int64_t parameter_count(const ModelConfig& config, CountConvention convention) {
    const std::int64_t n = config.n;
    const std::int64_t direct = n * n;
    switch (convention) {
        case CountConvention::paper:
            return direct + (n * n) / 2;
        case CountConvention::free:
            return direct + n * (n + 1) / 2 + (config.bias_enabled ? n : 0);
    }
    fail(Errc::bad_config, "unknown count convention");
}

namespace {

constexpr char kModelMagic[4] = {'S', 'P', 'C', 'T'};
constexpr std::uint8_t kModelVersion = 1;

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t value) {
    out.push_back(static_cast<std::uint8_t>(value));
    out.push_back(static_cast<std::uint8_t>(value >> 8));
    out.push_back(static_cast<std::uint8_t>(value >> 16));
    out.push_back(static_cast<std::uint8_t>(value >> 24));
}

std::uint32_t read_u32_le(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

void append_matrix_row_major(std::vector<std::uint8_t>& out,
                             const Eigen::Ref<const Eigen::MatrixXd>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            std::uint8_t raw[8];
            std::memcpy(raw, &v, 8);
            out.insert(out.end(), raw, raw + 8);
        }
}

} // namespace

void save_model(const ModelParams& params, const ModelConfig& config,
                const std::filesystem::path& path) {
    check_shapes(config.n, params, config);

    std::vector<std::uint8_t> out;
    const std::size_t doubles =
        2 * std::size_t(config.n) * config.n + (config.bias_enabled ? config.n : 0);
    out.reserve(17 + 8 * doubles);
    out.insert(out.end(), kModelMagic, kModelMagic + 4);
    out.push_back(kModelVersion);
    append_u32_le(out, static_cast<std::uint32_t>(config.n));
    append_u32_le(out, static_cast<std::uint32_t>(config.class_count));
    append_u32_le(out, config.bias_enabled ? 1u : 0u);
    append_matrix_row_major(out, params.W);
    append_matrix_row_major(out, params.V_raw);
    if (params.has_bias()) append_matrix_row_major(out, params.bias);
    atomic_write(path, out);
}

std::pair<ModelParams, ModelConfig> load_model(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kModelMagic, 4) != 0)
        fail(Errc::bad_header, "not a model file: " + path.string());
    if (bytes.size() < 17) fail(Errc::truncated, "model header needs 17 bytes");
    if (bytes[4] != kModelVersion) fail(Errc::version_mismatch, "unsupported model version");

    ModelConfig config;
    config.n = read_u32_le(bytes.data() + 5);
    config.class_count = static_cast<int>(read_u32_le(bytes.data() + 9));
    const std::uint32_t flags = read_u32_le(bytes.data() + 13);
    if (flags > 1) fail(Errc::bad_header, "unknown flag bits");
    config.bias_enabled = (flags & 1) != 0;
    if (config.class_count < 2 || config.n < config.class_count || config.n > (1 << 20))
        fail(Errc::bad_header, "implausible model dimensions");

    const std::uint64_t n = config.n;
    const std::uint64_t doubles = 2 * n * n + (config.bias_enabled ? n : 0);
    const std::uint64_t expected = 17 + 8 * doubles;
    if (bytes.size() < expected) fail(Errc::truncated, "model file truncated mid-matrix");
    if (bytes.size() > expected) fail(Errc::bad_header, "trailing bytes after parameters");

    ModelParams params;
    params.W.resize(config.n, config.n);
    params.V_raw.resize(config.n, config.n);
    const std::uint8_t* p = bytes.data() + 17;
    auto read_matrix = [&p](Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                std::memcpy(&m(i, j), p, 8);
                p += 8;
            }
    };
    read_matrix(params.W);
    read_matrix(params.V_raw);
    if (config.bias_enabled) {
        params.bias.resize(config.n);
        for (Eigen::Index i = 0; i < config.n; ++i) {
            std::memcpy(&params.bias[i], p, 8);
            p += 8;
        }
    }
    return {std::move(params), config};
}

} // namespace sperceptron
