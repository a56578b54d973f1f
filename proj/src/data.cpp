#include "permweld/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "permweld/error.hpp"

namespace permweld {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::uint32_t kPmdsVersion = 1;

}  // namespace

void Dataset::validate(bool unit_range) const {
  if (labels.empty()) throw ValidationError("dataset '" + name + "' is empty");
  if (features.rows() != labels.size()) throw ValidationError("dataset '" + name + "': feature/label count mismatch");
  for (const Label y : labels) {
    if (y >= num_classes) throw ValidationError("dataset '" + name + "': label outside class range");
  }
  for (const float v : features.values()) {
    if (!std::isfinite(v)) throw ValidationError("dataset '" + name + "': non-finite feature");
    if (unit_range && (v < 0.0f || v > 1.0f)) throw ValidationError("dataset '" + name + "': feature outside [0, 1]");
  }
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const std::string& name) {
  detail::ByteReader img(detail::read_file(images), images.string());
  detail::ByteReader lab(detail::read_file(labels), labels.string());

  if (const std::uint32_t magic = img.u32_be(); magic != kIdxImages) {
    throw FormatError(images.string() + ": not an IDX image file (magic " + std::to_string(magic) + ")");
  }
  if (const std::uint32_t magic = lab.u32_be(); magic != kIdxLabels) {
    throw FormatError(labels.string() + ": not an IDX label file (magic " + std::to_string(magic) + ")");
  }
  const std::size_t n = img.u32_be();
  const std::size_t h = img.u32_be();
  const std::size_t w = img.u32_be();
  const std::size_t n_labels = lab.u32_be();
  if (n != n_labels) {
    throw ValidationError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                          " labels");
  }

  Dataset ds;
  ds.name = name;
  ds.features = Matrix(n, h * w);
  const std::uint8_t* px = img.raw(n * h * w);
  for (std::size_t i = 0; i < n * h * w; ++i) ds.features.data()[i] = static_cast<float>(px[i]) / 255.0f;
  const std::uint8_t* ys = lab.raw(n);
  ds.labels.assign(ys, ys + n);
  // IDX carries no class count; the MNIST family always has ten.
  const Label max_label = n == 0 ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end());
  ds.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  return ds;
}

Dataset gen_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed) {
  if (classes < 2 || per_class < 1 || dim < 2) throw ValidationError("gen_blobs: need classes >= 2, n >= 1, dim >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.name = "blobs";
  ds.num_classes = classes;
  ds.features = Matrix(classes * per_class, dim);
  ds.labels.resize(classes * per_class);
  std::size_t row = 0;
  // Class-interleaved order keeps every prefix balanced.
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c, ++row) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
      auto f = ds.features.row(row);
      for (std::size_t d = 0; d < dim; ++d) {
        double centre = d == 0 ? std::cos(theta) : d == 1 ? std::sin(theta) : 0.0;
        const double v = centre + spread * noise(rng);
        f[d] = static_cast<float>(std::clamp((v + 1.0) / 2.0, 0.0, 1.0));
      }
      ds.labels[row] = static_cast<Label>(c);
    }
  }
  return ds;
}

Dataset rotate(const Dataset& dataset, double degrees, std::size_t height, std::size_t width) {
  if (dataset.dim() != height * width) {
    throw ValidationError("rotate: feature dimension " + std::to_string(dataset.dim()) + " != " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  Dataset out = dataset;
  out.name = dataset.name + "-rot" + std::to_string(static_cast<long long>(std::lround(degrees)));
  double turn = std::fmod(degrees, 360.0);
  if (turn < 0) turn += 360.0;
  if (turn == 0.0) return out;

  const std::size_t n = dataset.size();
  if (std::fmod(turn, 90.0) == 0.0 && height == width) {
    const int quarter = static_cast<int>(turn / 90.0);
    const std::size_t s = height;
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = dataset.features.row(i);
      auto dst = out.features.row(i);
      for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c < s; ++c) {
          std::size_t sr = r, sc = c;
          switch (quarter) {
            case 1: sr = c; sc = s - 1 - r; break;
            case 2: sr = s - 1 - r; sc = s - 1 - c; break;
            case 3: sr = s - 1 - c; sc = r; break;
            default: break;
          }
          dst[r * s + c] = src[sr * s + sc];
        }
      }
    }
    return out;
  }

  const double rad = turn * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = dataset.features.row(i);
    auto dst = out.features.row(i);
    const auto pixel = [&](long long r, long long c) -> double {
      if (r < 0 || c < 0 || r >= static_cast<long long>(height) || c >= static_cast<long long>(width)) return 0.0;
      return src[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)];
    };
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double y = static_cast<double>(r) - cy, x = static_cast<double>(c) - cx;
        const double sc = cx + cs * x - sn * y;
        const double sr = cy + sn * x + cs * y;
        const double r0 = std::floor(sr), c0 = std::floor(sc);
        const double fr = sr - r0, fc = sc - c0;
        const auto ir = static_cast<long long>(r0), ic = static_cast<long long>(c0);
        const double v = (1 - fr) * ((1 - fc) * pixel(ir, ic) + fc * pixel(ir, ic + 1)) +
                         fr * ((1 - fc) * pixel(ir + 1, ic) + fc * pixel(ir + 1, ic + 1));
        dst[r * width + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split_by_label(const Dataset& dataset, const std::set<Label>& labels_a,
                                           const std::set<Label>& labels_b) {
  if (labels_a.empty() || labels_b.empty()) throw ValidationError("split_by_label: both label sets must be non-empty");
  for (const Label y : labels_a) {
    if (labels_b.count(y) != 0) throw ValidationError("split_by_label: label sets overlap");
  }
  std::vector<std::size_t> rows_a, rows_b;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Label y = dataset.labels[i];
    if (labels_a.count(y) != 0) {
      rows_a.push_back(i);
    } else if (labels_b.count(y) != 0) {
      rows_b.push_back(i);
    } else {
      throw ValidationError("split_by_label: label " + std::to_string(y) + " is in neither set");
    }
  }
  Dataset a = subset(dataset, rows_a), b = subset(dataset, rows_b);
  a.name = dataset.name + "-A";
  b.name = dataset.name + "-B";
  return {std::move(a), std::move(b)};
}

MixedDataset mix(DatasetPtr a, DatasetPtr b, double alpha) {
  if (!a || !b) throw ValidationError("mix: missing part");
  if (a->num_classes != b->num_classes) throw ValidationError("mix: class counts differ");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("mix: alpha outside [0, 1]");
  return MixedDataset{std::move(a), std::move(b), alpha};
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> rows) {
  Dataset out;
  out.name = dataset.name;
  out.num_classes = dataset.num_classes;
  out.features = gather_rows(dataset.features, rows);
  out.labels.reserve(rows.size());
  for (const std::size_t r : rows) out.labels.push_back(dataset.labels[r]);
  return out;
}

Dataset head(const Dataset& dataset, std::size_t n) {
  std::vector<std::size_t> rows(std::min(n, dataset.size()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return subset(dataset, rows);
}

Dataset balanced_concat(const MixedDataset& mixed, std::uint64_t seed) {
  const Dataset& a = *mixed.part_a;
  const Dataset& b = *mixed.part_b;
  const std::size_t target = std::max(a.size(), b.size());
  std::mt19937_64 rng(seed);
  const auto resample = [&](const Dataset& d) {
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> rows(target);
    for (std::size_t i = 0; i < target; ++i) rows[i] = order[i % order.size()];
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  const auto rows_a = resample(a);
  const auto rows_b = resample(b);
  Dataset out;
  out.name = a.name + "+" + b.name;
  out.num_classes = a.num_classes;
  out.features = Matrix(2 * target, a.dim());
  out.labels.resize(2 * target);
  for (std::size_t i = 0; i < target; ++i) {
    std::copy_n(a.features.row(rows_a[i]).data(), a.dim(), out.features.row(i).data());
    out.labels[i] = a.labels[rows_a[i]];
    std::copy_n(b.features.row(rows_b[i]).data(), b.dim(), out.features.row(target + i).data());
    out.labels[target + i] = b.labels[rows_b[i]];
  }
  return out;
}

double flipped_accuracy(const MlpParams& params_a, const MlpParams& params_b, const Dataset& a, const Dataset& b) {
  return 0.5 * (predict_accuracy(params_a, b) + predict_accuracy(params_b, a));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.bytes("PMDS");
  w.u32(kPmdsVersion);
  w.u32(static_cast<std::uint32_t>(dataset.size()));
  w.u32(static_cast<std::uint32_t>(dataset.dim()));
  w.u32(static_cast<std::uint32_t>(dataset.num_classes));
  for (const float v : dataset.features.values()) w.f32(std::clamp(v, 0.0f, 1.0f));
  for (const Label y : dataset.labels) w.u16(y);
  detail::write_file(path, w.data());
}

Dataset clamp_unit(const Dataset& dataset) {
  Dataset out = dataset;
  for (float& v : out.features.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Dataset load_dataset(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file(path), path.string());
  r.need(4);
  if (r.bytes(4) != "PMDS") throw FormatError(path.string() + ": not a PMDS file");
  if (const std::uint32_t v = r.u32(); v != kPmdsVersion) {
    throw FormatError(path.string() + ": unsupported PMDS version " + std::to_string(v));
  }
  const std::size_t n = r.u32(), d = r.u32(), c = r.u32();
  r.need(n * d * 4 + n * 2);
  Dataset ds;
  ds.name = path.stem().string();
  ds.num_classes = c;
  ds.features = Matrix(n, d);
  for (float& v : ds.features.values()) v = r.f32();
  ds.labels.resize(n);
  for (Label& y : ds.labels) y = r.u16();
  for (const Label y : ds.labels) {
    if (y >= c) throw FormatError(path.string() + ": label outside class range");
  }
  return ds;
}

std::vector<std::size_t> class_counts(const Dataset& dataset) {
  std::vector<std::size_t> counts(dataset.num_classes, 0);
  for (const Label y : dataset.labels) ++counts.at(y);
  return counts;
}

}  // namespace permweld
