#pragma once

#include "jacreg/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace jacreg {

enum class SplitTag : std::uint32_t { train = 0, valid = 1, test = 2 };

std::string_view to_string(SplitTag tag);
SplitTag parse_split(std::string_view name);

/// Inputs (n x d) in [0,1] and one-hot targets (n x m).
struct Split {
  Matrix inputs;
  Matrix targets;

  std::size_t size() const { return inputs.rows(); }
  bool operator==(const Split&) const = default;
};

struct LabeledDataset {
  Split train;
  Split valid;
  Split test;

  const Split& split(SplitTag tag) const;
  std::size_t input_dim() const { return train.inputs.cols(); }
  std::size_t output_dim() const { return train.targets.cols(); }
  bool operator==(const LabeledDataset&) const = default;
};

/// Contents of an IDX image/label file pair.
struct RawDataset {
  Matrix images;  // n x (rows*cols), pixel / 255
  std::vector<std::uint8_t> labels;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;

  std::size_t size() const { return labels.size(); }
};

constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // 2051
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // 2049
constexpr std::size_t kMnistClasses = 10;

/// Reads big-endian IDX files. Throws BadMagicError, TruncatedFileError or
/// CountMismatchError (image vs label counts), IoError when unreadable.
RawDataset load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path);

/// Writes an IDX pair (used for fixtures and converted datasets). Pixel values
/// are rounded from images * 255.
void write_idx(const RawDataset& raw, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// One-hot encoding with `classes` columns. Throws ParameterError on labels
/// outside [0, classes).
Matrix one_hot(const std::vector<std::uint8_t>& labels, std::size_t classes);

/// First (n - n_valid) training samples as train, last n_valid as valid, and
/// the separate test file as test.
LabeledDataset holdout_split(const RawDataset& train_file, const RawDataset& test_file,
                             std::size_t n_valid);

/// 50000 / 10000 / 10000. Throws DimensionError unless the train file has
/// 60000 samples and the test file 10000.
LabeledDataset mnist_split(const RawDataset& train_file, const RawDataset& test_file);

/// Loads the four standard MNIST files from `root` and splits them.
LabeledDataset load_mnist(const std::filesystem::path& root);

/// Keeps the first n training samples; valid and test are unchanged.
LabeledDataset subset_train(const LabeledDataset& data, std::size_t n);

/// x > 0.5 -> 1, else 0, applied to every split.
LabeledDataset binarize(const LabeledDataset& data);

/// Two interleaved half circles with Gaussian jitter, rescaled to [0,1]^2.
/// n samples in total (class 0 gets the extra one when n is odd), shuffled
/// and split 60/20/20 into train/valid/test.
LabeledDataset synthetic_two_moons(std::size_t n, double noise, std::uint64_t seed);

/// Checks [0,1] bounds, one-hot validity and shape consistency of all splits.
/// Throws ParameterError describing the first violation.
void validate_dataset(const LabeledDataset& data);

/// Binary cache, little-endian:
///   "JRDS" | u32 version(1) | u32 split count(3)
///   per split: u32 tag | u64 n | u64 d | u64 m | n*d f64 | n*m f64
void save_cache(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset load_cache(const std::filesystem::path& path);

}  // namespace jacreg
