#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <utility>

#include "permweld/dataset.hpp"
#include "permweld/nnet.hpp"

namespace permweld {

// Reads an IDX image/label file pair (gzip-compressed or raw). Pixels are
// scaled to [0, 1] by dividing by 255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 const std::string& name = "idx");

// Gaussian clusters placed on the unit circle in the first two coordinates;
// the remaining coordinates carry noise only. Features are mapped to [0, 1]
// by x -> (x + 1) / 2 and clamped.
Dataset gen_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed);

// Rotates every image counterclockwise about its centre. Multiples of 90
// degrees on square images are exact index permutations; other angles use
// bilinear interpolation with zero fill.
Dataset rotate(const Dataset& dataset, double degrees, std::size_t height, std::size_t width);

// Partitions rows by label. Both parts keep the global label indices and the
// source class count.
std::pair<Dataset, Dataset> split_by_label(const Dataset& dataset, const std::set<Label>& labels_a,
                                           const std::set<Label>& labels_b);

MixedDataset mix(DatasetPtr a, DatasetPtr b, double alpha = 0.5);

// Both parts resampled to the size of the larger one (cyclically over a
// seeded shuffle of the smaller) and concatenated. Trains the oracle model.
Dataset balanced_concat(const MixedDataset& mixed, std::uint64_t seed);

// Rows with the given indices.
Dataset subset(const Dataset& dataset, std::span<const std::size_t> rows);
// The first `n` rows (all rows if n >= size).
Dataset head(const Dataset& dataset, std::size_t n);

// Half of (accuracy of A on B) + (accuracy of B on A).
double flipped_accuracy(const MlpParams& params_a, const MlpParams& params_b, const Dataset& a, const Dataset& b);

// PMDS1: "PMDS", u32 version = 1, u32 N, u32 D, u32 C, N*D f32, N u16 (all
// little-endian). Features are clamped to [0, 1] on save. The loaded name is
// the file stem.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Copy with every feature clamped to [0, 1], as save_dataset writes it.
Dataset clamp_unit(const Dataset& dataset);

// Number of rows per label.
std::vector<std::size_t> class_counts(const Dataset& dataset);

}  // namespace permweld
