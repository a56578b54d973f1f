#pragma once

#include <memory>
#include <string>
#include <vector>

#include "permweld/tensor.hpp"

namespace permweld {

// Labeled examples. Features are N x D with values in [0, 1].
struct Dataset {
  std::string name;
  Matrix features;
  std::vector<Label> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  // Throws ValidationError on an empty set, bad labels, or non-finite
  // features. `unit_range` additionally requires features in [0, 1].
  void validate(bool unit_range = true) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

using DatasetPtr = std::shared_ptr<const Dataset>;

// The alpha-weighted union D_AB = (1 - alpha) D_A + alpha D_B. Metrics on a
// mixed dataset are the alpha-weighted combination of per-part metrics.
struct MixedDataset {
  DatasetPtr part_a;
  DatasetPtr part_b;
  double alpha = 0.5;
};

// Synthetic examples distilled from a source dataset, `ipc` rows per class.
struct CondensedDataset {
  std::string source_name;
  std::size_t ipc = 0;
  Dataset data;
};

}  // namespace permweld
