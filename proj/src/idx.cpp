#include "sperceptron/idx.hpp"

#include <zlib.h>

#include <cstdlib>
#include <cstring>
#include <numeric>
#include <string>

#include "sperceptron/errors.hpp"
#include "sperceptron/io.hpp"
#include "sperceptron/rng.hpp"

namespace sperceptron {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803; // 2051
constexpr std::uint32_t kLabelMagic = 0x00000801; // 2049

std::uint32_t read_u32_be(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void append_u32_be(std::vector<std::uint8_t>& out, std::uint32_t value) {
    out.push_back(static_cast<std::uint8_t>(value >> 24));
    out.push_back(static_cast<std::uint8_t>(value >> 16));
    out.push_back(static_cast<std::uint8_t>(value >> 8));
    out.push_back(static_cast<std::uint8_t>(value));
}

} // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) fail(Errc::truncated, "file shorter than the magic word");
    const std::uint32_t magic = read_u32_be(bytes, 0);
    if (magic != kImageMagic)
        fail(Errc::bad_magic, "expected image magic 2051, got " + std::to_string(magic));
    if (bytes.size() < 16) fail(Errc::truncated, "image header needs 16 bytes");

    IdxImages out;
    out.count = static_cast<Eigen::Index>(read_u32_be(bytes, 4));
    out.rows = static_cast<int>(read_u32_be(bytes, 8));
    out.cols = static_cast<int>(read_u32_be(bytes, 12));

    const std::uint64_t payload =
        std::uint64_t(out.count) * std::uint64_t(out.rows) * std::uint64_t(out.cols);
    const std::uint64_t remaining = bytes.size() - 16;
    if (remaining < payload) fail(Errc::truncated, "image payload shorter than header promises");
    if (remaining > payload) fail(Errc::bad_header, "trailing bytes after image payload");

    out.pixels.assign(bytes.begin() + 16, bytes.end());
    return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) fail(Errc::truncated, "file shorter than the magic word");
    const std::uint32_t magic = read_u32_be(bytes, 0);
    if (magic != kLabelMagic)
        fail(Errc::bad_magic, "expected label magic 2049, got " + std::to_string(magic));
    if (bytes.size() < 8) fail(Errc::truncated, "label header needs 8 bytes");

    const std::uint64_t count = read_u32_be(bytes, 4);
    const std::uint64_t remaining = bytes.size() - 8;
    if (remaining < count) fail(Errc::truncated, "label payload shorter than header promises");
    if (remaining > count) fail(Errc::bad_header, "trailing bytes after label payload");

    std::vector<std::uint8_t> labels(bytes.begin() + 8, bytes.end());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 9)
            fail(Errc::label_out_of_range,
                 "label " + std::to_string(int(labels[i])) + " at index " + std::to_string(i));
    }
    return labels;
}

std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + images.pixels.size());
    append_u32_be(out, kImageMagic);
    append_u32_be(out, static_cast<std::uint32_t>(images.count));
    append_u32_be(out, static_cast<std::uint32_t>(images.rows));
    append_u32_be(out, static_cast<std::uint32_t>(images.cols));
    out.insert(out.end(), images.pixels.begin(), images.pixels.end());
    return out;
}

std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + labels.size());
    append_u32_be(out, kLabelMagic);
    append_u32_be(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

Eigen::MatrixXd normalize(const IdxImages& images) {
    const Eigen::Index n = Eigen::Index(images.rows) * images.cols;
    Eigen::MatrixXd out(images.count, n);
    for (Eigen::Index i = 0; i < images.count; ++i) {
        const std::uint8_t* px = images.pixels.data() + i * n;
        for (Eigen::Index j = 0; j < n; ++j) out(i, j) = double(px[j]) / 255.0;
    }
    return out;
}

LabeledDataset make_dataset(const IdxImages& images, std::span<const std::uint8_t> labels) {
    if (images.count != static_cast<Eigen::Index>(labels.size()))
        fail(Errc::shape_mismatch, "image count " + std::to_string(images.count) +
                                       " != label count " + std::to_string(labels.size()));
    LabeledDataset ds;
    ds.images = normalize(images);
    ds.labels.assign(labels.begin(), labels.end());
    ds.rows = images.rows;
    ds.cols = images.cols;
    return ds;
}

LabeledDataset load_dataset(const std::filesystem::path& images_path,
                            const std::filesystem::path& labels_path) {
    const auto image_bytes = load_idx_file(images_path);
    const auto label_bytes = load_idx_file(labels_path);
    const IdxImages images = parse_idx_images(image_bytes);
    const auto labels = parse_idx_labels(label_bytes);
    return make_dataset(images, labels);
}

LabeledDataset subset(const LabeledDataset& full, Eigen::Index count, std::uint64_t seed) {
    if (count < 1 || count > full.size())
        fail(Errc::size_out_of_range, "subset of " + std::to_string(count) + " from " +
                                          std::to_string(full.size()) + " items");
    std::vector<Eigen::Index> order(full.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    rng.shuffle(order);

    LabeledDataset out;
    out.images.resize(count, full.n());
    out.labels.resize(count);
    out.rows = full.rows;
    out.cols = full.cols;
    for (Eigen::Index i = 0; i < count; ++i) {
        out.images.row(i) = full.images.row(order[i]);
        out.labels[i] = full.labels[order[i]];
    }
    return out;
}

std::vector<std::vector<Eigen::Index>> batches(Eigen::Index item_count, Eigen::Index batch_size,
                                               std::uint64_t seed) {
    if (item_count < 1) fail(Errc::empty_dataset, "no items to batch");
    if (batch_size < 1) fail(Errc::bad_config, "batch_size must be >= 1");

    std::vector<Eigen::Index> order(item_count);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<std::vector<Eigen::Index>> out;
    out.reserve((item_count + batch_size - 1) / batch_size);
    for (Eigen::Index start = 0; start < item_count; start += batch_size) {
        const Eigen::Index stop = std::min(item_count, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + stop);
    }
    return out;
}

std::vector<std::vector<Eigen::Index>> batches(const LabeledDataset& dataset,
                                               Eigen::Index batch_size, std::uint64_t seed) {
    return batches(dataset.size(), batch_size, seed);
}

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK)
        fail(Errc::io, "deflateInit2 failed");

    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());

    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    int ret = Z_OK;
    do {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        ret = deflate(&zs, Z_FINISH);
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    } while (ret == Z_OK);
    deflateEnd(&zs);
    if (ret != Z_STREAM_END) fail(Errc::io, "gzip deflate failed");
    return out;
}

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail(Errc::io, "inflateInit2 failed");

    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());

    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    int ret = Z_OK;
    do {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            fail(Errc::io, "gzip inflate failed (code " + std::to_string(ret) + ")");
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    } while (ret != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

std::vector<std::uint8_t> load_idx_file(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gzip_decompress(bytes);
    return bytes;
}

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("SPERCEPTRON_DATA_DIR")) return env;
    return "data/mnist";
}

std::filesystem::path resolve_idx_path(const std::filesystem::path& dir, const std::string& name) {
    const std::filesystem::path plain = dir / name;
    if (std::filesystem::exists(plain)) return plain;
    return dir / (name + ".gz");
}

} // namespace sperceptron
