#pragma once

// Labelled datasets: synthetic generators and an IDX (MNIST) reader/writer.

#include <polyclass/errors.hpp>
#include <polyclass/numcore.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace polyclass {

struct Dataset {
  Matrix features;          // n x d
  std::vector<int> labels;  // length n, each < k
  int k = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::span<const double> sample(std::size_t i) const noexcept { return features.row(i); }
};

inline void validate(const Dataset& d) {
  if (d.features.rows() != d.labels.size()) {
    throw DimensionError("data", "feature rows " + std::to_string(d.features.rows()) + " != label count " +
                                     std::to_string(d.labels.size()));
  }
  if (!all_finite(d.features.data())) throw EvaluationError("data", "dataset '" + d.name + "' has non-finite features");
  for (int y : d.labels) {
    if (y < 0 || y >= d.k) {
      throw DimensionError("data", "label " + std::to_string(y) + " outside [0, " + std::to_string(d.k) + ")");
    }
  }
}

/// Rows of `d` selected by index, in the given order.
inline Dataset subset(const Dataset& d, std::span<const std::size_t> idx, std::string name = {}) {
  Dataset out;
  out.features = Matrix(idx.size(), d.dim());
  out.labels.reserve(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto src = d.sample(idx[r]);
    std::copy(src.begin(), src.end(), out.features.row(r).begin());
    out.labels.push_back(d.labels[idx[r]]);
  }
  out.k = d.k;
  out.name = name.empty() ? d.name : std::move(name);
  return out;
}

/// Column 0 of a 1-D dataset restricted to one class.
inline std::vector<double> class_values_1d(const Dataset& d, int cls) {
  std::vector<double> out;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] == cls) out.push_back(d.features(i, 0));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// One uniform interval per class, n samples each. Class c owns ranges[c].
inline Dataset make_uniform_1d(std::span<const std::pair<double, double>> ranges, std::size_t n_per_class,
                               std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.k = static_cast<int>(ranges.size());
  d.features = Matrix(ranges.size() * n_per_class, 1);
  d.labels.reserve(ranges.size() * n_per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < ranges.size(); ++c) {
    const auto [lo, hi] = ranges[c];
    if (!(hi > lo)) throw ConfigError("data", "empty range for class " + std::to_string(c));
    for (std::size_t i = 0; i < n_per_class; ++i) {
      d.features(row++, 0) = rng.uniform(lo, hi);
      d.labels.push_back(static_cast<int>(c));
    }
  }
  d.name = "uniform_1d";
  return d;
}

/// Two interleaving half circles: class 0 on the upper unit arc, class 1 on the
/// lower arc shifted by (1, -0.5). Angles are evenly spaced; noise is isotropic.
inline Dataset make_moons(std::size_t n, double noise_sd, std::uint64_t seed) {
  if (n < 2) throw ConfigError("data", "make_moons needs n >= 2");
  Rng rng(seed);
  const std::size_t n_outer = n / 2;
  const std::size_t n_inner = n - n_outer;
  Dataset d;
  d.k = 2;
  d.features = Matrix(n, 2);
  d.labels.resize(n);
  auto angle = [](std::size_t i, std::size_t count) {
    return count > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1) : 0.0;
  };
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = angle(i, n_outer);
    d.features(i, 0) = std::cos(t);
    d.features(i, 1) = std::sin(t);
    d.labels[i] = 0;
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = angle(i, n_inner);
    d.features(n_outer + i, 0) = 1.0 - std::cos(t);
    d.features(n_outer + i, 1) = 0.5 - std::sin(t);
    d.labels[n_outer + i] = 1;
  }
  if (noise_sd > 0.0) {
    for (double& v : d.features.data()) v += noise_sd * rng.normal();
  }
  d.name = "moons";
  return d;
}

/// Two Gaussian blobs separated along the first axis. Points are rejected
/// until class 0 has x0 <= -gap/2 and class 1 has x0 >= gap/2, so the vertical
/// line x0 = 0 separates them with geometric margin at least gap/2.
inline Dataset make_linear_2d(std::size_t n, double gap, std::uint64_t seed) {
  if (n < 2) throw ConfigError("data", "make_linear_2d needs n >= 2");
  if (gap < 0.0) throw ConfigError("data", "gap must be non-negative");
  Rng rng(seed);
  Dataset d;
  d.k = 2;
  d.features = Matrix(n, 2);
  d.labels.resize(n);
  const double offset = 0.5 * gap + 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);
    const double side = cls == 0 ? -1.0 : 1.0;
    double x0, x1;
    do {
      x0 = side * offset + rng.normal();
      x1 = rng.normal(0.0, 1.5);
    } while (side * x0 < 0.5 * gap);
    d.features(i, 0) = x0;
    d.features(i, 1) = x1;
    d.labels[i] = cls;
  }
  d.name = "linear_2d";
  return d;
}

// ---------------------------------------------------------------------------
// IDX format
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Which classes to keep (remapped to 0..k-1 in the listed order) and how many
/// samples per class to retain. Capped classes are sampled with `seed`.
struct SubsetSpec {
  std::vector<int> classes;                   // empty: keep all ten digits
  std::optional<std::size_t> per_class_cap;   // empty: keep every sample
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingDataError("data", "cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                  static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes.data(), 4);
}

}  // namespace detail

/// Raw contents of an IDX image/label pair before subsetting.
struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> pixels;
  std::vector<unsigned char> labels;
};

inline IdxImages read_idx_raw(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 16) throw LengthError("data", "'" + images_path.string() + "' shorter than the IDX header");
  if (lab.size() < 8) throw LengthError("data", "'" + labels_path.string() + "' shorter than the IDX header");
  if (detail::read_be32(img, 0) != kIdxImagesMagic) {
    throw FormatError("data", "'" + images_path.string() + "' has bad image magic");
  }
  if (detail::read_be32(lab, 0) != kIdxLabelsMagic) {
    throw FormatError("data", "'" + labels_path.string() + "' has bad label magic");
  }
  IdxImages raw;
  raw.count = detail::read_be32(img, 4);
  raw.rows = detail::read_be32(img, 8);
  raw.cols = detail::read_be32(img, 12);
  const std::size_t label_count = detail::read_be32(lab, 4);
  if (label_count != raw.count) {
    throw FormatError("data", "image count " + std::to_string(raw.count) + " != label count " +
                                  std::to_string(label_count));
  }
  const std::size_t need = raw.count * raw.rows * raw.cols;
  if (img.size() < 16 + need) throw LengthError("data", "'" + images_path.string() + "' is truncated");
  if (lab.size() < 8 + raw.count) throw LengthError("data", "'" + labels_path.string() + "' is truncated");
  raw.pixels.assign(img.begin() + 16, img.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  raw.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(raw.count));
  return raw;
}

/// Reads an IDX pair into a Dataset with pixels scaled to [0, 1].
inline Dataset read_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        const SubsetSpec& spec = {}) {
  const IdxImages raw = read_idx_raw(images_path, labels_path);
  std::vector<int> classes = spec.classes;
  if (classes.empty()) {
    for (int c = 0; c < 10; ++c) classes.push_back(c);
  }
  std::vector<int> remap(256, -1);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || classes[i] > 255) throw ConfigError("data", "class id out of byte range");
    remap[static_cast<std::size_t>(classes[i])] = static_cast<int>(i);
  }

  std::vector<std::vector<std::size_t>> per_class(classes.size());
  for (std::size_t i = 0; i < raw.count; ++i) {
    const int mapped = remap[raw.labels[i]];
    if (mapped >= 0) per_class[static_cast<std::size_t>(mapped)].push_back(i);
  }
  std::vector<std::size_t> keep;
  Rng rng(spec.seed);
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto& idx = per_class[c];
    if (spec.per_class_cap && idx.size() > *spec.per_class_cap) {
      Rng stream = rng.split(c);
      stream.shuffle(idx);
      idx.resize(*spec.per_class_cap);
    }
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());

  const std::size_t dim = raw.rows * raw.cols;
  Dataset d;
  d.k = static_cast<int>(classes.size());
  d.features = Matrix(keep.size(), dim);
  d.labels.reserve(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const unsigned char* px = raw.pixels.data() + keep[r] * dim;
    auto row = d.features.row(r);
    for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<double>(px[j]) / 255.0;
    d.labels.push_back(remap[raw.labels[keep[r]]]);
  }
  d.name = "idx[";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    d.name += (i ? "," : "") + std::to_string(classes[i]) + "->" + std::to_string(i);
  }
  d.name += "]";
  return d;
}

/// Writes features (assumed in [0, 1], quantised to bytes) and labels as an
/// IDX pair. `label_ids` maps the dataset's 0..k-1 labels back to file labels;
/// identity when empty.
inline void write_idx(const Dataset& d, std::size_t rows, std::size_t cols, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path, std::span<const int> label_ids = {}) {
  if (rows * cols != d.dim()) throw DimensionError("data", "rows*cols does not match feature width");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw MissingDataError("data", "cannot open IDX output files for writing");
  detail::write_be32(img, kIdxImagesMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::write_be32(img, static_cast<std::uint32_t>(rows));
  detail::write_be32(img, static_cast<std::uint32_t>(cols));
  detail::write_be32(lab, kIdxLabelsMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.sample(i)) {
      const double clamped = std::clamp(v, 0.0, 1.0);
      img.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
    }
    const int y = d.labels[i];
    const int file_label = label_ids.empty() ? y : label_ids[static_cast<std::size_t>(y)];
    lab.put(static_cast<char>(static_cast<unsigned char>(file_label)));
  }
}

}  // namespace polyclass
