#pragma once

// MNIST in IDX format. Pixels are scaled by 1/255 into [0, 1] and kept in
// binary64; batches are rounded to the run's precision when assembled.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stable16/tensor.hpp"

namespace stable16::data {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Dataset {
    Tensor<double> images;  // features × examples; column j is example j
    std::vector<std::uint8_t> labels;
    std::uint64_t images_checksum = 0;  // FNV-1a over the decoded IDX bytes
    std::uint64_t labels_checksum = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t features() const { return images.rank() == 2 ? images.rows() : 0; }
};

inline constexpr std::uint32_t kImagesMagic = 0x00000803;
inline constexpr std::uint32_t kLabelsMagic = 0x00000801;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

/// Reads a whole file, inflating it if it starts with the gzip magic.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Throws DataError on bad magic, truncation, or count mismatch.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Parses in-memory IDX images and labels (same checks as load_idx).
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

struct MnistFiles {
    std::filesystem::path train_images, train_labels, test_images, test_labels;
};

/// Finds the four MNIST files (plain or .gz) in `dir`, or in $STABLE16_DATA
/// when `dir` is empty. Throws DataError naming what is missing.
MnistFiles locate_mnist(const std::optional<std::filesystem::path>& dir);

/// A seeded random subset of `limit` examples. Throws DataError if limit > N.
Dataset subset(const Dataset& ds, std::size_t limit, std::uint64_t seed);

/// Seeded shuffle of example indices split into batches; the final short
/// batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed);
std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

template <TensorScalar T>
struct Batch {
    Tensor<T> x;  // features × batch
    std::vector<std::uint8_t> y;
};

/// Gathers the given example columns, rounding pixels to T.
template <TensorScalar T>
Batch<T> gather(const Dataset& ds, std::span<const std::size_t> indices);

/// Columns [begin, end) in order.
template <TensorScalar T>
Batch<T> slice(const Dataset& ds, std::size_t begin, std::size_t end);

std::array<std::size_t, 10> label_histogram(const Dataset& ds);

/// Published class counts of the MNIST training and test sets.
inline constexpr std::array<std::size_t, 10> kTrainHistogram = {5923, 6742, 5958, 6131, 5842,
                                                                5421, 5918, 6265, 5851, 5949};
inline constexpr std::array<std::size_t, 10> kTestHistogram = {980, 1135, 1032, 1010, 982,
                                                               892, 958,  1028, 974,  1009};

}  // namespace stable16::data
