#pragma once

// Datasets: synthetic generators, IDX/CSV ingestion, splits and feature
// standardization. Datasets are plain values and immutable once built.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gncl/core.hpp"
#include "gncl/rng.hpp"

namespace gncl {

struct Dataset {
  Matrix features;  // N x d
  Matrix labels;    // N x C one-hot, or N x 1 (regression / binary +-1)
  std::size_t class_count = 0;
  std::string name;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::size_t label_dim() const noexcept { return labels.cols(); }

  std::span<const double> x(std::size_t i) const { return features.row(i); }
  std::span<const double> y(std::size_t i) const { return labels.row(i); }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.features = Matrix(rows.size(), dim());
    out.labels = Matrix(rows.size(), label_dim());
    out.class_count = class_count;
    out.name = name;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      require(rows[r] < size(), "Dataset::subset: row out of range");
      std::copy_n(x(rows[r]).begin(), dim(), out.features.row(r).begin());
      std::copy_n(y(rows[r]).begin(), label_dim(), out.labels.row(r).begin());
    }
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Index of the largest entry, lowest index on ties.
inline std::size_t argmax(std::span<const double> v) {
  require(!v.empty(), "argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline Vector one_hot(std::size_t label, std::size_t classes) {
  require(label < classes, "one_hot: label " + std::to_string(label) + " out of range for C=" +
                               std::to_string(classes));
  Vector v(classes, 0.0);
  v[label] = 1.0;
  return v;
}

/// Checks the one-hot invariant on every row (classification datasets).
inline bool labels_are_one_hot(const Dataset& d) {
  if (d.label_dim() < 2) return false;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double total = 0.0;
    std::size_t ones = 0;
    for (double v : d.y(i)) {
      if (v != 0.0 && v != 1.0) return false;
      ones += v == 1.0;
      total += v;
    }
    if (ones != 1 || total != 1.0) return false;
  }
  return true;
}

/// Two-class one-hot labels to a single +-1 column (class 1 -> +1), as used by
/// the exponential and Gaussian hinge losses.
inline Dataset with_binary_labels(const Dataset& d) {
  require(d.class_count == 2 && d.label_dim() == 2, "with_binary_labels: need a two-class dataset");
  Dataset out = d;
  out.labels = Matrix(d.size(), 1);
  for (std::size_t i = 0; i < d.size(); ++i) out.labels(i, 0) = argmax(d.y(i)) == 1 ? 1.0 : -1.0;
  return out;
}

namespace detail {

inline Dataset empty_classification(std::size_t n, std::size_t d, std::size_t classes, std::string name) {
  Dataset out;
  out.features = Matrix(n, d);
  out.labels = Matrix(n, classes);
  out.class_count = classes;
  out.name = std::move(name);
  return out;
}

}  // namespace detail

/// C isotropic Gaussian clusters (std = spread) around centers drawn
/// uniformly from [-5, 5]^d. Rows are grouped by class.
inline Dataset gen_blobs(std::uint64_t seed, std::size_t n_per_class, std::size_t classes, std::size_t dim,
                         double spread) {
  require(n_per_class >= 1 && classes >= 1 && dim >= 1, "gen_blobs: sizes must be positive");
  require(spread >= 0.0, "gen_blobs: spread must be non-negative");
  RandomStream rng(derive_seed(seed, {stream::kData, 1}));
  Matrix centers(classes, dim);
  for (double& v : centers.data()) v = rng.uniform(-5.0, 5.0);
  Dataset out = detail::empty_classification(n_per_class * classes, dim, classes, "blobs");
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const std::size_t row = c * n_per_class + k;
      for (std::size_t j = 0; j < dim; ++j) out.features(row, j) = centers(c, j) + spread * rng.normal();
      out.labels(row, c) = 1.0;
    }
  }
  return out;
}

/// C interleaved two-dimensional spiral arms with 1.5 turns each; radius runs
/// over (0, 1] so no two classes share a point when noise = 0.
inline Dataset gen_spirals(std::uint64_t seed, std::size_t n_per_class, std::size_t classes, double noise) {
  require(n_per_class >= 1 && classes >= 1, "gen_spirals: sizes must be positive");
  require(noise >= 0.0, "gen_spirals: noise must be non-negative");
  RandomStream rng(derive_seed(seed, {stream::kData, 2}));
  Dataset out = detail::empty_classification(n_per_class * classes, 2, classes, "spirals");
  const double turns = 1.5;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const std::size_t row = c * n_per_class + k;
      const double r = static_cast<double>(k + 1) / static_cast<double>(n_per_class);
      const double theta = 2.0 * std::numbers::pi * (static_cast<double>(c) / classes + turns * r);
      out.features(row, 0) = r * std::cos(theta) + noise * rng.normal();
      out.features(row, 1) = r * std::sin(theta) + noise * rng.normal();
      out.labels(row, c) = 1.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX (MNIST-style) files

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  if (bytes.size() < offset + 4) throw FormatError(path + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace detail

/// Loads an IDX image/label pair. Pixels are scaled to [0, 1] and flattened;
/// labels become one-hot over 10 classes.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto images = detail::read_all(images_path);
  const auto labels = detail::read_all(labels_path);
  if (detail::be32(images, 0, images_path) != kIdxImageMagic)
    throw FormatError(images_path + ": expected image magic 0x00000803");
  if (detail::be32(labels, 0, labels_path) != kIdxLabelMagic)
    throw FormatError(labels_path + ": expected label magic 0x00000801");
  const std::size_t n = detail::be32(images, 4, images_path);
  const std::size_t rows = detail::be32(images, 8, images_path);
  const std::size_t cols = detail::be32(images, 12, images_path);
  const std::size_t n_labels = detail::be32(labels, 4, labels_path);
  if (n != n_labels)
    throw FormatError("count mismatch: " + images_path + " has " + std::to_string(n) + " images, " +
                      labels_path + " has " + std::to_string(n_labels) + " labels");
  if (n == 0 || rows * cols == 0) throw FormatError(images_path + ": empty image set");
  const std::size_t pixels = rows * cols;
  if (images.size() != 16 + n * pixels) throw FormatError(images_path + ": truncated or oversized image data");
  if (labels.size() != 8 + n) throw FormatError(labels_path + ": truncated or oversized label data");
  constexpr std::size_t kClasses = 10;
  Dataset out = detail::empty_classification(n, pixels, kClasses, "idx");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) out.features(i, p) = images[16 + i * pixels + p] / 255.0;
    const unsigned label = labels[8 + i];
    if (label >= kClasses) throw FormatError(labels_path + ": label " + std::to_string(label) + " out of range");
    out.labels(i, label) = 1.0;
  }
  return out;
}

/// Writes raw IDX files (pixels given as bytes, row-major per image).
inline void write_idx(const std::string& images_path, const std::string& labels_path, std::size_t rows,
                      std::size_t cols, const std::vector<std::uint8_t>& pixels,
                      const std::vector<std::uint8_t>& labels) {
  require(rows * cols > 0 && pixels.size() == labels.size() * rows * cols, "write_idx: inconsistent sizes");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw FormatError("write_idx: cannot open output files");
  detail::write_be32(img, kIdxImageMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(labels.size()));
  detail::write_be32(img, static_cast<std::uint32_t>(rows));
  detail::write_be32(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  detail::write_be32(lab, kIdxLabelMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size() && std::isfinite(out);
}

}  // namespace detail

/// Numeric CSV with one integer label column (negative index counts from the
/// end). Class ids are densely re-indexed in sorted order.
inline Dataset load_csv(const std::string& path, int label_column = -1, bool has_header = false) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<std::vector<double>> rows;
  std::vector<long long> raw_labels;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  std::size_t label_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (has_header && line_no == 1) continue;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (width == 0) {
      width = cells.size();
      if (width < 2) throw FormatError(path + ": row " + std::to_string(line_no) + " needs at least two columns");
      const long long idx = label_column < 0 ? static_cast<long long>(width) + label_column : label_column;
      if (idx < 0 || idx >= static_cast<long long>(width))
        throw FormatError(path + ": label column out of range");
      label_index = static_cast<std::size_t>(idx);
    } else if (cells.size() != width) {
      throw FormatError(path + ": ragged row " + std::to_string(line_no) + " (expected " + std::to_string(width) +
                        " cells, got " + std::to_string(cells.size()) + ")");
    }
    std::vector<double> features;
    for (std::size_t c = 0; c < width; ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v))
        throw FormatError(path + ": non-numeric cell '" + cells[c] + "' in row " + std::to_string(line_no));
      if (c == label_index) {
        if (v != std::floor(v))
          throw FormatError(path + ": non-integer label in row " + std::to_string(line_no));
        raw_labels.push_back(static_cast<long long>(v));
      } else {
        features.push_back(v);
      }
    }
    rows.push_back(std::move(features));
  }
  if (rows.empty()) throw FormatError(path + ": no data rows");
  std::map<long long, std::size_t> dense;
  for (auto l : raw_labels) dense.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [id, slot] : dense) slot = next++;
  Dataset out = detail::empty_classification(rows.size(), width - 1, dense.size(), path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), out.features.row(i).begin());
    out.labels(i, dense.at(raw_labels[i])) = 1.0;
  }
  return out;
}

/// Writes features followed by a "label" column holding the class index
/// (or the raw value for single-column labels).
inline void save_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  for (std::size_t j = 0; j < d.dim(); ++j) out << 'x' << j << ',';
  out << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.x(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    if (d.label_dim() == 1) {
      std::snprintf(buf, sizeof buf, "%.17g", d.labels(i, 0));
      out << buf << '\n';
    } else {
      out << argmax(d.y(i)) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Splits and normalization

/// Seeded permutation, then the first round(N * test_fraction) rows become the
/// test set.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, "train_test_split: fraction must be in (0, 1)");
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RandomStream rng(derive_seed(seed, {stream::kSplit}));
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(d.size()) * test_fraction));
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  return {d.subset(train), d.subset(test)};
}

struct NormalizationStats {
  Vector mean;
  Vector stddev;  // population standard deviation
};

inline Dataset apply_normalization(const Dataset& d, const NormalizationStats& stats) {
  require(stats.mean.size() == d.dim() && stats.stddev.size() == d.dim(), "normalize: statistics size mismatch");
  Dataset out = d;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.dim(); ++j)
      out.features(i, j) = stats.stddev[j] > 0.0 ? (d.features(i, j) - stats.mean[j]) / stats.stddev[j] : 0.0;
  return out;
}

/// Standardizes every feature to zero mean / unit variance; constant features
/// map to 0. Returns the statistics so held-out data can reuse them.
inline std::pair<Dataset, NormalizationStats> normalize(const Dataset& d) {
  require(d.size() >= 1, "normalize: empty dataset");
  NormalizationStats stats{Vector(d.dim(), 0.0), Vector(d.dim(), 0.0)};
  const double n = static_cast<double>(d.size());
  for (std::size_t j = 0; j < d.dim(); ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) sum += d.features(i, j);
    const double mean = sum / n;
    double sq = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double dev = d.features(i, j) - mean;
      sq += dev * dev;
    }
    stats.mean[j] = mean;
    const double sd = std::sqrt(sq / n);
    // rounding in the mean leaves a tiny spread on constant columns
    stats.stddev[j] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 0.0;
  }
  return {apply_normalization(d, stats), stats};
}

}  // namespace gncl
