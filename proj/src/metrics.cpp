#include "csg/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace csg {

namespace {

constexpr double kEulerGamma = 0.57721566490153286060651209;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in [-1, 1).
double hashed_unit(std::uint64_t seed, double value, std::uint64_t rank) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ std::bit_cast<std::uint64_t>(value));
  h = splitmix64(h ^ rank);
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

// Distance from sorted[i] to its k-th nearest neighbour in `sorted`
// (excluding itself).
double kth_neighbor_distance(const std::vector<double>& sorted, std::size_t i, int k) {
  std::ptrdiff_t left = static_cast<std::ptrdiff_t>(i) - 1;
  std::size_t right = i + 1;
  double dist = 0.0;
  for (int step = 0; step < k; ++step) {
    const double dl = left >= 0 ? sorted[i] - sorted[left] : INFINITY;
    const double dr = right < sorted.size() ? sorted[right] - sorted[i] : INFINITY;
    if (dl <= dr) {
      dist = dl;
      --left;
    } else {
      dist = dr;
      ++right;
    }
  }
  return dist;
}

}  // namespace

double digamma_int(long long n) {
  if (n < 1) throw ParameterError("digamma_int needs n >= 1");
  double h = 0.0;
  for (long long j = 1; j < n; ++j) h += 1.0 / static_cast<double>(j);
  return h - kEulerGamma;
}

double mi_continuous_discrete(std::span<const double> samples,
                              std::span<const std::uint8_t> indicator, int k_neighbors,
                              std::uint64_t seed) {
  const std::size_t n = samples.size();
  if (indicator.size() != n) throw DimensionError("samples and indicator lengths differ");
  if (n < 10) throw ParameterError("MI estimation needs at least 10 samples");
  std::size_t positives = 0;
  for (auto v : indicator) positives += v != 0;
  if (positives == 0 || positives == n) return 0.0;
  const std::size_t min_count = std::min(positives, n - positives);
  if (k_neighbors < 1 || static_cast<std::size_t>(k_neighbors) >= min_count) {
    throw ParameterError("k_neighbors=" + std::to_string(k_neighbors) +
                         " must be in [1, smaller class count=" + std::to_string(min_count) + ")");
  }

  // Sort by (value, indicator) so that the statistics below do not depend on
  // sample order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a] != samples[b]) return samples[a] < samples[b];
    return indicator[a] < indicator[b];
  });
  std::vector<double> x(n);
  std::vector<std::uint8_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = samples[order[i]];
    y[i] = indicator[order[i]] != 0;
    if (!std::isfinite(x[i])) throw NumericError("non-finite MI sample", -1);
  }

  // Standardize so that tie jitter has a fixed relative size.
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / static_cast<double>(n));
  if (!(sd > 0.0)) sd = 1.0;
  double mean_abs = 0.0;
  for (auto& v : x) {
    v = (v - mean) / sd;
    mean_abs += std::abs(v);
  }
  mean_abs /= static_cast<double>(n);
  const double amplitude = 1e-10 * std::max(1.0, mean_abs);

  // Jitter runs of duplicate values; rank within the run keeps the result
  // invariant to sample order because the run is sorted by indicator.
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && x[j] == x[i]) ++j;
    if (j - i > 1) {
      const double base = x[i];
      for (std::size_t r = i; r < j; ++r) x[r] = base + amplitude * hashed_unit(seed, base, r - i);
    }
    i = j;
  }

  std::vector<std::size_t> resort(n);
  std::iota(resort.begin(), resort.end(), 0);
  std::stable_sort(resort.begin(), resort.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> all(n);
  std::vector<std::uint8_t> lab(n);
  for (std::size_t i = 0; i < n; ++i) {
    all[i] = x[resort[i]];
    lab[i] = y[resort[i]];
  }

  std::vector<double> by_class[2];
  for (std::size_t i = 0; i < n; ++i) by_class[lab[i]].push_back(all[i]);
  std::size_t pos_in_class[2] = {0, 0};

  std::vector<double> psi(n + 1, 0.0);
  psi[1] = -kEulerGamma;
  for (std::size_t j = 2; j <= n; ++j) psi[j] = psi[j - 1] + 1.0 / static_cast<double>(j - 1);

  double sum_psi_m = 0.0;
  double sum_psi_label = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = lab[i];
    const auto& own = by_class[cls];
    const double d = kth_neighbor_distance(own, pos_in_class[cls]++, k_neighbors);
    const double radius = std::nextafter(d, 0.0);
    const double xi = all[i];
    // Count every point (self included) within `radius`.
    const auto lo = std::partition_point(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(i),
                                         [&](double v) { return xi - v > radius; });
    const auto hi = std::partition_point(all.begin() + static_cast<std::ptrdiff_t>(i), all.end(),
                                         [&](double v) { return v - xi <= radius; });
    const long long m = static_cast<long long>(hi - lo);
    sum_psi_m += psi[static_cast<std::size_t>(std::max(1LL, m))];
    sum_psi_label += psi[own.size()];
  }
  const double nn = static_cast<double>(n);
  const double mi = psi[n] + psi[static_cast<std::size_t>(k_neighbors)] -
                    sum_psi_label / nn - sum_psi_m / nn;
  return std::max(0.0, mi);
}

MIMatrix mi_matrix(const MatrixF& pooled_features, std::span<const int> labels, int num_classes,
                   const MIOptions& options) {
  const auto n = static_cast<std::size_t>(pooled_features.rows());
  if (labels.size() != n) throw DimensionError("features and labels disagree on sample count");
  std::vector<int> counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw IndexError("label out of range", y);
    ++counts[y];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw ContractError("class " + std::to_string(c) + " absent from MI samples");
    }
  }
  MIMatrix out;
  out.sample_count = static_cast<int>(n);
  out.values = MatrixD::Zero(pooled_features.cols(), num_classes);
  std::vector<double> column(n);
  std::vector<std::uint8_t> indicator(n);
  for (Eigen::Index k = 0; k < pooled_features.cols(); ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = pooled_features(static_cast<Eigen::Index>(i), k);
    for (int c = 0; c < num_classes; ++c) {
      for (std::size_t i = 0; i < n; ++i) indicator[i] = labels[i] == c;
      out.values(k, c) = mi_continuous_discrete(column, indicator, options.k_neighbors,
                                                options.seed);
    }
  }
  return out;
}

double mis(const MIMatrix& m) {
  if (m.values.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index k = 0; k < m.values.rows(); ++k) total += m.values.row(k).maxCoeff();
  return total / static_cast<double>(m.values.rows());
}

}  // namespace csg
