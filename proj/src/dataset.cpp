#include "jacreg/dataset.hpp"

#include "jacreg/error.hpp"
#include "jacreg/rng.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace jacreg {

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::valid: return "valid";
    case SplitTag::test: return "test";
  }
  return "?";
}

SplitTag parse_split(std::string_view name) {
  if (name == "train") return SplitTag::train;
  if (name == "valid") return SplitTag::valid;
  if (name == "test") return SplitTag::test;
  throw ParameterError("unknown split '" + std::string(name) + "'");
}

const Split& LabeledDataset::split(SplitTag tag) const {
  switch (tag) {
    case SplitTag::train: return train;
    case SplitTag::valid: return valid;
    case SplitTag::test: return test;
  }
  return train;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string(), path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                 static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

void check_magic(const std::vector<std::uint8_t>& bytes, std::uint32_t expected,
                 const std::filesystem::path& path) {
  if (bytes.size() < 4) throw TruncatedFileError("IDX header truncated: " + path.string(), path.string());
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected) {
    throw BadMagicError("bad IDX magic " + std::to_string(magic) + " in " + path.string() +
                            " (expected " + std::to_string(expected) + ")",
                        path.string());
  }
}

}  // namespace

RawDataset load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  check_magic(img, kIdxImageMagic, images_path);
  check_magic(lab, kIdxLabelMagic, labels_path);
  if (img.size() < 16) throw TruncatedFileError("IDX image header truncated", images_path.string());
  if (lab.size() < 8) throw TruncatedFileError("IDX label header truncated", labels_path.string());

  const std::size_t n_img = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t n_lab = read_be32(lab, 4);
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + n_img * pixels) {
    throw TruncatedFileError("IDX image payload truncated: expected " +
                                 std::to_string(n_img * pixels) + " bytes in " +
                                 images_path.string(),
                             images_path.string());
  }
  if (lab.size() < 8 + n_lab) {
    throw TruncatedFileError("IDX label payload truncated in " + labels_path.string(),
                             labels_path.string());
  }
  if (n_img != n_lab) {
    throw CountMismatchError("image count " + std::to_string(n_img) + " != label count " +
                                 std::to_string(n_lab),
                             labels_path.string());
  }

  RawDataset raw;
  raw.image_rows = rows;
  raw.image_cols = cols;
  raw.images = Matrix(n_img, pixels);
  auto dst = raw.images.span();
  for (std::size_t i = 0; i < n_img * pixels; ++i) dst[i] = img[16 + i] / 255.0;
  raw.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n_lab));
  return raw;
}

void write_idx(const RawDataset& raw, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img) throw IoError("cannot write " + images_path.string(), images_path.string());
  if (!lab) throw IoError("cannot write " + labels_path.string(), labels_path.string());
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(raw.images.rows()));
  put_be32(img, static_cast<std::uint32_t>(raw.image_rows));
  put_be32(img, static_cast<std::uint32_t>(raw.image_cols));
  for (double v : raw.images.span()) {
    img.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
  }
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(raw.labels.size()));
  for (std::uint8_t l : raw.labels) lab.put(static_cast<char>(l));
}

Matrix one_hot(const std::vector<std::uint8_t>& labels, std::size_t classes) {
  Matrix t(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw ParameterError("label " + std::to_string(labels[i]) + " at index " +
                           std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
    t(i, labels[i]) = 1.0;
  }
  return t;
}

namespace {

Split take_rows(const Matrix& inputs, const Matrix& targets, std::size_t begin, std::size_t end) {
  Split s{Matrix(end - begin, inputs.cols()), Matrix(end - begin, targets.cols())};
  for (std::size_t i = begin; i < end; ++i) {
    std::copy(inputs.row(i).begin(), inputs.row(i).end(), s.inputs.row(i - begin).begin());
    std::copy(targets.row(i).begin(), targets.row(i).end(), s.targets.row(i - begin).begin());
  }
  return s;
}

}  // namespace

LabeledDataset holdout_split(const RawDataset& train_file, const RawDataset& test_file,
                             std::size_t n_valid) {
  const std::size_t n = train_file.size();
  if (n_valid >= n) {
    throw DimensionError("holdout_split: " + std::to_string(n_valid) +
                         " validation samples requested from " + std::to_string(n));
  }
  if (train_file.images.cols() != test_file.images.cols()) {
    throw DimensionError("holdout_split: train and test images differ in size");
  }
  const Matrix train_targets = one_hot(train_file.labels, kMnistClasses);
  LabeledDataset data;
  data.train = take_rows(train_file.images, train_targets, 0, n - n_valid);
  data.valid = take_rows(train_file.images, train_targets, n - n_valid, n);
  data.test = Split{test_file.images, one_hot(test_file.labels, kMnistClasses)};
  return data;
}

LabeledDataset mnist_split(const RawDataset& train_file, const RawDataset& test_file) {
  if (train_file.size() != 60000 || test_file.size() != 10000) {
    throw DimensionError("mnist_split: expected 60000 training and 10000 test samples, got " +
                         std::to_string(train_file.size()) + " and " +
                         std::to_string(test_file.size()));
  }
  return holdout_split(train_file, test_file, 10000);
}

LabeledDataset load_mnist(const std::filesystem::path& root) {
  const RawDataset train =
      load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
  const RawDataset test = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte");
  return mnist_split(train, test);
}

LabeledDataset subset_train(const LabeledDataset& data, std::size_t n) {
  if (n == 0 || n > data.train.size()) {
    throw DimensionError("subset_train: cannot take " + std::to_string(n) + " of " +
                         std::to_string(data.train.size()) + " training samples");
  }
  LabeledDataset out = data;
  out.train = take_rows(data.train.inputs, data.train.targets, 0, n);
  return out;
}

LabeledDataset binarize(const LabeledDataset& data) {
  LabeledDataset out = data;
  for (Split* s : {&out.train, &out.valid, &out.test}) {
    for (double& v : s->inputs.span()) v = v > 0.5 ? 1.0 : 0.0;
  }
  return out;
}

LabeledDataset synthetic_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 5) throw ParameterError("synthetic_two_moons: need at least 5 samples");
  if (!(noise >= 0.0)) throw ParameterError("synthetic_two_moons: noise must be >= 0");
  RngStream rng(seed, 0);
  const std::size_t n_outer = (n + 1) / 2;
  const std::size_t n_inner = n - n_outer;
  Matrix points(n, 2);
  std::vector<std::uint8_t> labels(n);
  auto angle = [](std::size_t i, std::size_t count) {
    return count > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1)
                     : 0.0;
  };
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = angle(i, n_outer);
    points(i, 0) = std::cos(t);
    points(i, 1) = std::sin(t);
    labels[i] = 0;
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = angle(i, n_inner);
    points(n_outer + i, 0) = 1.0 - std::cos(t);
    points(n_outer + i, 1) = 0.5 - std::sin(t);
    labels[n_outer + i] = 1;
  }
  for (double& v : points.span()) v += noise * rng.gaussian();

  for (std::size_t c = 0; c < 2; ++c) {
    double lo = points(0, c), hi = points(0, c);
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, points(i, c));
      hi = std::max(hi, points(i, c));
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < n; ++i) points(i, c) = (points(i, c) - lo) / span;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);
  Matrix shuffled(n, 2);
  std::vector<std::uint8_t> shuffled_labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    shuffled(i, 0) = points(order[i], 0);
    shuffled(i, 1) = points(order[i], 1);
    shuffled_labels[i] = labels[order[i]];
  }
  const Matrix targets = one_hot(shuffled_labels, 2);
  const std::size_t n_train = n * 3 / 5;
  const std::size_t n_valid = (n - n_train) / 2;
  LabeledDataset data;
  data.train = take_rows(shuffled, targets, 0, n_train);
  data.valid = take_rows(shuffled, targets, n_train, n_train + n_valid);
  data.test = take_rows(shuffled, targets, n_train + n_valid, n);
  return data;
}

void validate_dataset(const LabeledDataset& data) {
  const std::size_t d = data.train.inputs.cols();
  const std::size_t m = data.train.targets.cols();
  for (SplitTag tag : {SplitTag::train, SplitTag::valid, SplitTag::test}) {
    const Split& s = data.split(tag);
    const std::string name(to_string(tag));
    if (s.inputs.rows() != s.targets.rows()) {
      throw ParameterError(name + " split: input/target row counts differ");
    }
    if (s.size() > 0 && (s.inputs.cols() != d || s.targets.cols() != m)) {
      throw ParameterError(name + " split: dimensions differ from the train split");
    }
    for (double v : s.inputs.span()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ParameterError(name + " split: input value " + std::to_string(v) +
                             " outside [0,1]");
      }
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      std::size_t ones = 0;
      for (double v : s.targets.row(i)) {
        if (v == 1.0) {
          ++ones;
        } else if (v != 0.0) {
          throw ParameterError(name + " split: target row " + std::to_string(i) +
                               " is not one-hot");
        }
      }
      if (ones != 1) {
        throw ParameterError(name + " split: target row " + std::to_string(i) +
                             " is not one-hot");
      }
    }
  }
}

namespace {

void put_le(std::ofstream& out, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_le(std::ifstream& in, int bytes, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) {
      throw TruncatedFileError("dataset cache truncated: " + path.string(), path.string());
    }
    v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(c)) << (8 * b);
  }
  return v;
}

constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

void save_cache(const LabeledDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset cache " + path.string(), path.string());
  out.write("JRDS", 4);
  put_le(out, kCacheVersion, 4);
  put_le(out, 3, 4);
  for (SplitTag tag : {SplitTag::train, SplitTag::valid, SplitTag::test}) {
    const Split& s = data.split(tag);
    put_le(out, static_cast<std::uint32_t>(tag), 4);
    put_le(out, s.inputs.rows(), 8);
    put_le(out, s.inputs.cols(), 8);
    put_le(out, s.targets.cols(), 8);
    for (double v : s.inputs.span()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    for (double v : s.targets.span()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  if (!out) throw IoError("failed writing dataset cache " + path.string(), path.string());
}

LabeledDataset load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset cache " + path.string(), path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "JRDS") {
    throw BadMagicError("not a dataset cache: " + path.string(), path.string());
  }
  if (get_le(in, 4, path) != kCacheVersion) {
    throw BadMagicError("unsupported dataset cache version in " + path.string(), path.string());
  }
  const std::uint64_t n_splits = get_le(in, 4, path);
  if (n_splits != 3) throw BadMagicError("dataset cache must hold 3 splits", path.string());
  LabeledDataset data;
  for (std::uint64_t s = 0; s < n_splits; ++s) {
    const auto tag = static_cast<SplitTag>(get_le(in, 4, path));
    if (static_cast<std::uint32_t>(tag) > 2) throw BadMagicError("bad split tag", path.string());
    const std::size_t n = get_le(in, 8, path);
    const std::size_t d = get_le(in, 8, path);
    const std::size_t m = get_le(in, 8, path);
    Split split{Matrix(n, d), Matrix(n, m)};
    for (double& v : split.inputs.span()) v = std::bit_cast<double>(get_le(in, 8, path));
    for (double& v : split.targets.span()) v = std::bit_cast<double>(get_le(in, 8, path));
    switch (tag) {
      case SplitTag::train: data.train = std::move(split); break;
      case SplitTag::valid: data.valid = std::move(split); break;
      case SplitTag::test: data.test = std::move(split); break;
    }
  }
  return data;
}

}  // namespace jacreg
