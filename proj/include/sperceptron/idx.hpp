#pragma once

// IDX (MNIST binary) parsing, serialization and batch iteration.
//
// File format, all header words big-endian:
//   images: magic 0x00000803 | count | rows | cols | pixel bytes, row-major
//   labels: magic 0x00000801 | count | label bytes
//
// load_idx_file() additionally accepts gzip-compressed files (magic 1f 8b)
// and inflates them before parsing.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sperceptron {

struct IdxImages {
    Eigen::Index count = 0;
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> pixels; // count * rows * cols
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images);
std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels);

// byte / 255, one image per row
Eigen::MatrixXd normalize(const IdxImages& images);

struct LabeledDataset {
    Eigen::MatrixXd images;  // N x n, values in [0, 1]
    std::vector<int> labels; // N, each in [0, 9]
    int rows = 0;
    int cols = 0;

    Eigen::Index size() const { return images.rows(); }
    Eigen::Index n() const { return images.cols(); }
};

LabeledDataset make_dataset(const IdxImages& images, std::span<const std::uint8_t> labels);

// reads image/label files (plain or gzipped) into a normalized dataset
LabeledDataset load_dataset(const std::filesystem::path& images_path,
                            const std::filesystem::path& labels_path);

// the first `count` items after a seeded shuffle
LabeledDataset subset(const LabeledDataset& full, Eigen::Index count, std::uint64_t seed);

// one epoch: a seeded permutation of 0..item_count-1 in consecutive chunks
std::vector<std::vector<Eigen::Index>> batches(Eigen::Index item_count,
                                               Eigen::Index batch_size,
                                               std::uint64_t seed);
std::vector<std::vector<Eigen::Index>> batches(const LabeledDataset& dataset,
                                               Eigen::Index batch_size,
                                               std::uint64_t seed);

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes);

// file bytes, inflated when gzip-compressed
std::vector<std::uint8_t> load_idx_file(const std::filesystem::path& path);

// $SPERCEPTRON_DATA_DIR, falling back to ./data/mnist
std::filesystem::path default_data_dir();

// `dir/name` if present, else `dir/name.gz`
std::filesystem::path resolve_idx_path(const std::filesystem::path& dir, const std::string& name);

} // namespace sperceptron
