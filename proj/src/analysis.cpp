#include "csg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "csg/training.hpp"

namespace csg {

CorrelationMatrix correlation_matrix(const MatrixD& weight_vectors) {
  const Eigen::Index k = weight_vectors.rows();
  std::vector<double> norms(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    norms[i] = weight_vectors.row(i).norm();
    if (!(norms[i] > 0.0)) {
      throw ContractError("filter " + std::to_string(i) + " has zero-norm weights");
    }
  }
  CorrelationMatrix out;
  out.values.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.values(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const double cos = std::clamp(weight_vectors.row(i).dot(weight_vectors.row(j)) /
                                        (norms[i] * norms[j]),
                                    -1.0, 1.0);
      out.values(i, j) = cos;
      out.values(j, i) = cos;
    }
  }
  return out;
}

CorrelationMatrix correlation_matrix(const MatrixF& weight_vectors) {
  return correlation_matrix(MatrixD(weight_vectors.cast<double>()));
}

double ratio_above(const CorrelationMatrix& corr, double s) {
  const Eigen::Index k = corr.values.rows();
  if (k < 2) return 0.0;
  long long hits = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i != j && corr.values(i, j) >= s) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(k * (k - 1));
}

FilterGroups top_activated_groups(const MatrixF& pooled, std::span<const int> labels,
                                  int num_classes, int m) {
  const int k_filters = static_cast<int>(pooled.cols());
  if (m < 1 || m > k_filters) {
    throw ParameterError("group size m=" + std::to_string(m) + " must be in [1, K]");
  }
  MatrixD sums = MatrixD::Zero(num_classes, k_filters);
  std::vector<int> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw IndexError("label out of range", y);
    sums.row(y) += pooled.row(static_cast<Eigen::Index>(i)).cast<double>();
    ++counts[y];
  }
  FilterGroups groups(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw ContractError("class " + std::to_string(c) + " absent from dataset");
    }
    std::vector<int> idx(k_filters);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return sums(c, a) > sums(c, b); });
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    groups[c] = std::move(idx);
  }
  return groups;
}

FilterGroups top_activated_groups(const Network<float>& model, const LabeledImages& data, int m) {
  const Inference inf = infer(model, data.images);
  return top_activated_groups(inf.pooled, data.labels, model.num_classes(), m);
}

double inter_class_correlation(const CorrelationMatrix& corr, const FilterGroups& groups, int m) {
  const auto classes = static_cast<int>(groups.size());
  if (classes < 2) throw ParameterError("inter-class correlation needs >= 2 classes");
  for (const auto& g : groups) {
    if (static_cast<int>(g.size()) != m) {
      throw DimensionError("group of size " + std::to_string(g.size()) + ", expected m=" +
                           std::to_string(m));
    }
  }
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    for (int d = 0; d < classes; ++d) {
      if (c == d) continue;
      for (int k : groups[c]) {
        for (int kk : groups[d]) total += corr.values(k, kk);
      }
    }
  }
  return total / (static_cast<double>(classes) * (classes - 1) * m * m);
}

std::string to_string(SampleSubset subset) {
  switch (subset) {
    case SampleSubset::TP:
      return "TP";
    case SampleSubset::FN:
      return "FN";
    case SampleSubset::ALL:
      return "ALL";
  }
  return "ALL";
}

bool SimilarityMatrix::diagonally_dominant() const {
  for (std::size_t y = 0; y < values.size(); ++y) {
    if (!values[y][y]) return false;
    for (std::size_t c = 0; c < values[y].size(); ++c) {
      if (c != y && values[y][c] && *values[y][c] > *values[y][y]) return false;
    }
  }
  return true;
}

SimilarityMatrix similarity_matrix(const MatrixF& pooled, std::span<const int> labels,
                                   std::span<const int> predictions, const GateMatrix& gate,
                                   SampleSubset subset) {
  const int classes = gate.num_classes();
  if (pooled.cols() != gate.num_filters()) throw DimensionError("features are not K-dimensional");
  if (labels.size() != static_cast<std::size_t>(pooled.rows()) ||
      predictions.size() != labels.size()) {
    throw DimensionError("features, labels and predictions disagree on sample count");
  }
  std::vector<double> gate_norms(classes);
  for (int c = 0; c < classes; ++c) {
    gate_norms[c] = gate.values().row(c).cast<double>().norm();
    if (!(gate_norms[c] > 0.0)) {
      throw ContractError("gate row " + std::to_string(c) + " is all zero");
    }
  }
  MatrixD sums = MatrixD::Zero(classes, gate.num_filters());
  std::vector<int> counts(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes) throw IndexError("label out of range", y);
    const bool correct = predictions[i] == y;
    if ((subset == SampleSubset::TP && !correct) || (subset == SampleSubset::FN && correct)) {
      continue;
    }
    sums.row(y) += pooled.row(static_cast<Eigen::Index>(i)).cast<double>();
    ++counts[y];
  }
  SimilarityMatrix out;
  out.subset = subset;
  out.values.assign(classes, std::vector<std::optional<double>>(classes));
  for (int y = 0; y < classes; ++y) {
    if (counts[y] == 0) continue;
    const Eigen::RowVectorXd mean = sums.row(y) / counts[y];
    const double norm = mean.norm();
    if (!(norm > 0.0)) continue;
    for (int c = 0; c < classes; ++c) {
      out.values[y][c] =
          mean.dot(gate.values().row(c).cast<double>()) / (norm * gate_norms[c]);
    }
  }
  return out;
}

SimilarityMatrix similarity_matrix(const Network<float>& model, const LabeledImages& data,
                                   const GateMatrix& gate, SampleSubset subset) {
  const Inference inf = infer(model, data.images);
  return similarity_matrix(inf.pooled, data.labels, inf.predictions, gate, subset);
}

namespace {

MaskResult apply_mask(const Network<float>& model, std::vector<int> filters) {
  MaskResult out;
  out.model = model;
  std::sort(filters.begin(), filters.end());
  filters.erase(std::unique(filters.begin(), filters.end()), filters.end());
  out.masked_filters = filters;
  if (filters.empty()) {
    out.warning = true;
    out.message = "no filter selected; model left unmasked";
    return out;
  }
  Buffer<float> mask = model.filter_mask();
  for (int k : filters) mask[k] = 0.0f;
  out.model.set_filter_mask(std::move(mask));
  return out;
}

}  // namespace

MaskResult mask_filters(const Network<float>& model, const GateMatrix& gate,
                        std::span<const int> target_classes, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ParameterError("tau must lie in (0, 1]");
  if (gate.num_filters() != model.num_filters()) throw DimensionError("gate K mismatch");
  std::vector<int> filters;
  for (int c : target_classes) {
    if (c < 0 || c >= gate.num_classes()) throw IndexError("target class out of range", c);
    for (int k = 0; k < gate.num_filters(); ++k) {
      if (gate(c, k) > tau) filters.push_back(k);
    }
  }
  return apply_mask(model, std::move(filters));
}

MaskResult mask_top_activated(const Network<float>& model, const MatrixF& pooled,
                              std::span<const int> labels, std::span<const int> target_classes,
                              double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("fraction must lie in (0, 1]");
  const int k_filters = model.num_filters();
  const int per_class =
      std::max(1, static_cast<int>(std::lround(fraction * static_cast<double>(k_filters))));
  const FilterGroups groups =
      top_activated_groups(pooled, labels, model.num_classes(), per_class);
  std::vector<int> filters;
  for (int c : target_classes) {
    if (c < 0 || c >= model.num_classes()) throw IndexError("target class out of range", c);
    filters.insert(filters.end(), groups[c].begin(), groups[c].end());
  }
  return apply_mask(model, std::move(filters));
}

MatrixD kmeans_centers(const MatrixD& points, int num_clusters, std::uint64_t seed,
                       const KMeansOptions& options) {
  const Eigen::Index n = points.rows();
  const Eigen::Index d = points.cols();
  if (num_clusters < 1) throw ParameterError("num_clusters must be >= 1");
  if (n < num_clusters) throw ParameterError("fewer points than clusters");
  {
    std::set<std::vector<double>> distinct;
    for (Eigen::Index i = 0; i < n && static_cast<int>(distinct.size()) < num_clusters; ++i) {
      distinct.insert(std::vector<double>(points.row(i).data(), points.row(i).data() + d));
    }
    if (static_cast<int>(distinct.size()) < num_clusters) {
      throw ParameterError("only " + std::to_string(distinct.size()) +
                           " distinct points for " + std::to_string(num_clusters) + " clusters");
    }
  }

  std::mt19937_64 rng(seed);
  MatrixD centers(num_clusters, d);
  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = points.row(first(rng));
  std::vector<double> closest(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) closest[i] = (points.row(i) - centers.row(0)).squaredNorm();
  for (int c = 1; c < num_clusters; ++c) {
    const double total = std::accumulate(closest.begin(), closest.end(), 0.0);
    std::uniform_real_distribution<double> pick(0.0, total);
    double target = pick(rng);
    Eigen::Index chosen = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      target -= closest[i];
      if (target < 0.0 && closest[i] > 0.0) {
        chosen = i;
        break;
      }
    }
    if (closest[chosen] == 0.0) {
      chosen = std::max_element(closest.begin(), closest.end()) - closest.begin();
    }
    centers.row(c) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      closest[i] = std::min(closest[i], (points.row(i) - centers.row(c)).squaredNorm());
    }
  }

  const Eigen::RowVectorXd mean = points.colwise().mean();
  const double mean_var = (points.rowwise() - mean).array().square().colwise().mean().mean();
  const double tol = options.tolerance * mean_var;

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < num_clusters; ++c) {
        const double dd = (points.row(i) - centers.row(c)).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      assign[i] = best;
      dist[i] = best_d;
    }
    MatrixD next = MatrixD::Zero(num_clusters, d);
    std::vector<int> counts(num_clusters, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < num_clusters; ++c) {
      if (counts[c] > 0) {
        next.row(c) /= counts[c];
      } else {
        // Empty cluster: move it onto the point farthest from its center.
        const auto far = std::max_element(dist.begin(), dist.end()) - dist.begin();
        next.row(c) = points.row(far);
        dist[far] = 0.0;
      }
    }
    const double shift = (next - centers).squaredNorm();
    centers = std::move(next);
    if (shift <= tol) break;
  }

  std::vector<int> order(num_clusters);
  std::iota(order.begin(), order.end(), 0);
  std::vector<Eigen::Index> top(num_clusters);
  for (int c = 0; c < num_clusters; ++c) centers.row(c).maxCoeff(&top[c]);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return top[a] < top[b]; });
  MatrixD sorted(num_clusters, d);
  for (int c = 0; c < num_clusters; ++c) sorted.row(c) = centers.row(order[c]);
  return sorted;
}

}  // namespace csg
