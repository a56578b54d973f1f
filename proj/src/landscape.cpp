#include "permweld/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "permweld/data.hpp"
#include "permweld/error.hpp"
#include "permweld/train.hpp"

namespace permweld {

namespace {

template <typename T>
double cosine(const std::vector<T>& a, const std::vector<T>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double SweepReport::peak_loss() const {
  if (loss_ab.empty()) throw ValidationError("empty sweep report");
  return *std::max_element(loss_ab.begin(), loss_ab.end());
}

void SweepReport::validate(double tol) const {
  const std::size_t n = lambdas.size();
  if (n < 2) throw ValidationError("sweep report needs at least two points");
  for (const auto* col : {&loss_a, &loss_b, &loss_ab, &acc_a, &acc_b, &acc_ab}) {
    if (col->size() != n) throw ValidationError("sweep report columns differ in length");
  }
  if (lambdas.front() != 0.0 || lambdas.back() != 1.0) throw ValidationError("sweep grid must span 0 to 1");
  if (!std::is_sorted(lambdas.begin(), lambdas.end())) throw ValidationError("sweep grid is not sorted");
  for (std::size_t i = 0; i < n; ++i) {
    const double mixed = (1.0 - alpha) * loss_a[i] + alpha * loss_b[i];
    if (!(std::abs(loss_ab[i] - mixed) <= tol)) {
      throw ValidationError("sweep report: mixture loss at lambda " + std::to_string(lambdas[i]) +
                            " is not the alpha-mix of the parts");
    }
  }
}

SweepReport sweep(const MlpParams& params_a, const MlpParams& params_b_permuted, const MixedDataset& mix,
                  std::size_t grid_size) {
  if (grid_size < 2) throw ValidationError("sweep: grid_size must be at least 2");
  if (!mix.part_a || !mix.part_b) throw ValidationError("sweep: mixture is missing a part");
  SweepReport r;
  r.alpha = mix.alpha;
  for (std::size_t i = 0; i < grid_size; ++i) {
    const double lambda = i + 1 == grid_size ? 1.0 : static_cast<double>(i) / static_cast<double>(grid_size - 1);
    const MlpParams merged = merge_interpolate(params_a, params_b_permuted, lambda);
    const LossAccuracy a = evaluate(merged, *mix.part_a);
    const LossAccuracy b = evaluate(merged, *mix.part_b);
    r.lambdas.push_back(lambda);
    r.loss_a.push_back(a.loss);
    r.loss_b.push_back(b.loss);
    r.loss_ab.push_back((1.0 - mix.alpha) * a.loss + mix.alpha * b.loss);
    r.acc_a.push_back(a.accuracy);
    r.acc_b.push_back(b.accuracy);
    r.acc_ab.push_back((1.0 - mix.alpha) * a.accuracy + mix.alpha * b.accuracy);
  }
  return r;
}

double barrier(const MlpParams& params_a, const MlpParams& params_b_permuted, const MixedDataset& mix) {
  return evaluate(merge_interpolate(params_a, params_b_permuted, 0.5), mix).loss;
}

GradBundle full_gradient(const MlpParams& params, const Dataset& dataset) {
  if (dataset.size() == 0) throw ValidationError("full_gradient: empty dataset");
  // Chunked so memory stays bounded; chunk gradients are size-weighted.
  constexpr std::size_t chunk = 2048;
  GradBundle total = zero_grad(params.spec);
  const double n = static_cast<double>(dataset.size());
  std::vector<double> acc(params.spec.flat_size(), 0.0);
  std::vector<Label> labels;
  for (std::size_t lo = 0; lo < dataset.size(); lo += chunk) {
    const std::size_t hi = std::min(dataset.size(), lo + chunk);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    labels.assign(dataset.labels.begin() + static_cast<std::ptrdiff_t>(lo),
                  dataset.labels.begin() + static_cast<std::ptrdiff_t>(hi));
    const GradBundle g = loss_and_grad(params, gather_rows(dataset.features, rows), labels);
    const double w = static_cast<double>(hi - lo) / n;
    const FlatVector flat = flatten(g);
    for (std::size_t i = 0; i < flat.size(); ++i) acc[i] += w * flat[i];
    total.loss += w * g.loss;
  }
  const FlatVector flat(acc.begin(), acc.end());
  total.layers = unflatten(params.spec, flat).layers;
  return total;
}

double sharpness(const MlpParams& params_a, const MlpParams& params_b, const GradBundle& grad_a,
                 const GradBundle& grad_b) {
  if (!(params_a.spec == params_b.spec)) throw ValidationError("sharpness: model specs differ");
  const FlatVector wa = flatten(params_a), wb = flatten(params_b);
  const FlatVector ga = flatten(grad_a), gb = flatten(grad_b);
  if (ga.size() != wa.size() || gb.size() != wa.size()) throw ValidationError("sharpness: gradient layout mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    const double d = static_cast<double>(wb[i]) - wa[i];
    s += d * ga[i] - d * gb[i];
  }
  return 0.5 * s;
}

double sharpness(const MlpParams& params_a, const MlpParams& params_b, const Dataset& data_a, const Dataset& data_b) {
  return sharpness(params_a, params_b, full_gradient(params_a, data_a), full_gradient(params_b, data_b));
}

L2Distance l2_distance(const MlpParams& params_a, const MlpParams& params_b) {
  L2Distance d;
  d.raw = squared_distance(params_a, params_b);
  d.per_param = d.raw / static_cast<double>(params_a.spec.flat_size());
  return d;
}

FisherDiagonal fisher_diagonal(const MlpParams& params, const Dataset& dataset, std::size_t max_samples,
                               std::uint64_t seed) {
  if (max_samples < 1) throw ValidationError("fisher_diagonal: max_samples must be at least 1");
  if (dataset.size() == 0) throw ValidationError("fisher_diagonal: empty dataset");
  if (dataset.num_classes != params.spec.num_classes()) {
    throw ValidationError("fisher_diagonal: class count does not match the model");
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (dataset.size() > max_samples) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(max_samples);
  }
  FisherDiagonal f;
  f.source = dataset.name;
  f.sample_count = order.size();
  f.values.assign(params.spec.flat_size(), 0.0);
  Matrix x(1, dataset.dim());
  for (const std::size_t r : order) {
    std::copy(dataset.features.row(r).begin(), dataset.features.row(r).end(), x.row(0).begin());
    const Label y = dataset.labels[r];
    const FlatVector g = flatten(loss_and_grad(params, x, std::span<const Label>(&y, 1)));
    for (std::size_t i = 0; i < g.size(); ++i) f.values[i] += static_cast<double>(g[i]) * g[i];
  }
  const double inv = 1.0 / static_cast<double>(order.size());
  for (double& v : f.values) v *= inv;
  return f;
}

FisherDiagonal fisher_diagonal(const MlpParams& params, const MixedDataset& mix, std::size_t max_samples,
                               std::uint64_t seed) {
  if (!mix.part_a || !mix.part_b) throw ValidationError("fisher_diagonal: mixture is missing a part");
  const FisherDiagonal a = fisher_diagonal(params, *mix.part_a, max_samples, seed);
  const FisherDiagonal b = fisher_diagonal(params, *mix.part_b, max_samples, seed + 1);
  FisherDiagonal f;
  f.source = a.source + "+" + b.source;
  f.sample_count = a.sample_count + b.sample_count;
  f.values.resize(a.values.size());
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    f.values[i] = (1.0 - mix.alpha) * a.values[i] + mix.alpha * b.values[i];
  }
  return f;
}

double importance_overlap(const FisherDiagonal& fisher_a, const FisherDiagonal& fisher_b) {
  if (fisher_a.values.size() != fisher_b.values.size()) {
    throw ValidationError("importance_overlap: layout mismatch");
  }
  return cosine(fisher_a.values, fisher_b.values);
}

double weight_overlap(const MlpParams& params_a, const MlpParams& params_b) {
  if (!(params_a.spec == params_b.spec)) throw ValidationError("weight_overlap: model specs differ");
  return cosine(flatten(params_a), flatten(params_b));
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("spearman: length mismatch");
  if (xs.size() < 2) throw ValidationError("spearman: need at least two points");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double mean = 0.5 * static_cast<double>(xs.size() + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

MergeMetrics merge_metrics(const MlpParams& params_a, const MlpParams& params_b_permuted, const MixedDataset& train,
                           const MixedDataset& eval, std::size_t grid_size) {
  MergeMetrics m;
  const L2Distance l2 = l2_distance(params_a, params_b_permuted);
  m.l2_raw = l2.raw;
  m.l2_per_param = l2.per_param;
  m.barrier = barrier(params_a, params_b_permuted, train);
  m.sharpness = sharpness(params_a, params_b_permuted, *train.part_a, *train.part_b);
  m.flipped_acc = flipped_accuracy(params_a, params_b_permuted, *eval.part_a, *eval.part_b);
  const SweepReport s = sweep(params_a, params_b_permuted, eval, grid_size);
  m.best_lambda_acc = *std::max_element(s.acc_ab.begin(), s.acc_ab.end());
  m.midpoint_acc = evaluate(merge_interpolate(params_a, params_b_permuted, 0.5), eval).accuracy;
  return m;
}

void PopulationConfig::validate() const {
  if (betas.empty() || sweep_caps.empty() || seeds.empty()) throw ValidationError("population: empty grid");
  for (const double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("population: beta outside [0, 1]");
  }
}

std::vector<PopulationMember> generate_permutation_population(const MlpParams& params_a, const MlpParams& params_b,
                                                              const MixedDataset& train, const MixedDataset& eval,
                                                              const PopulationConfig& config) {
  config.validate();
  const GradBundle grad_b = full_gradient(params_b, *train.part_b);
  struct Point {
    double beta;
    std::size_t cap;
    std::uint64_t seed;
  };
  std::vector<Point> grid;
  for (const double beta : config.betas) {
    for (const std::size_t cap : config.sweep_caps) {
      for (const std::uint64_t seed : config.seeds) grid.push_back({beta, cap, seed});
    }
  }
  std::vector<PermutationSet> found(grid.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < grid.size(); ++i) {
    AlignConfig c;
    c.fwm_beta = grid[i].beta;
    c.wm_max_sweeps = grid[i].cap;
    c.seed = grid[i].seed;
    found[i] = flat_weight_matching(params_a, params_b, grad_b, c);
  }

  std::vector<PopulationMember> members;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::size_t m = 0;
    while (m < members.size() && !(members[m].permutation == found[i])) ++m;
    if (m == members.size()) {
      PopulationMember p;
      p.permutation = found[i];
      p.beta = grid[i].beta;
      p.sweep_cap = grid[i].cap;
      p.seed = grid[i].seed;
      members.push_back(std::move(p));
    }
    ++members[m].multiplicity;
  }
#pragma omp parallel for schedule(dynamic)
  for (std::size_t m = 0; m < members.size(); ++m) {
    const MlpParams aligned = apply_permutation(params_b, members[m].permutation);
    members[m].metrics = merge_metrics(params_a, aligned, train, eval);
    members[m].test_loss = barrier(params_a, aligned, eval);
  }
  return members;
}

}  // namespace permweld
