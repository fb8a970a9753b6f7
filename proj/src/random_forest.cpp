#include "csg/random_forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace csg {

namespace {

double gini(const std::vector<int>& counts, int total) {
  if (total == 0) return 0.0;
  double s = 0.0;
  for (int c : counts) {
    const double p = static_cast<double>(c) / total;
    s += p * p;
  }
  return 1.0 - s;
}

}  // namespace

void RandomForest::fit(const MatrixD& x, std::span<const int> y) {
  if (x.rows() != static_cast<Eigen::Index>(y.size())) {
    throw DimensionError("feature rows and labels differ in count");
  }
  if (x.rows() == 0) throw ContractError("random forest fit on empty data");
  if (options_.num_trees < 1) throw ParameterError("num_trees must be >= 1");
  num_classes_ = *std::max_element(y.begin(), y.end()) + 1;
  if (*std::min_element(y.begin(), y.end()) < 0) throw IndexError("negative label", -1);
  std::vector<int> seen(num_classes_, 0);
  for (int v : y) seen[v] = 1;
  if (std::count(seen.begin(), seen.end(), 1) < 2) {
    throw ContractError("random forest needs at least two classes");
  }
  num_features_ = static_cast<int>(x.cols());
  trees_.clear();
  trees_.reserve(options_.num_trees);
  std::mt19937_64 rng(options_.seed);
  const auto n = static_cast<int>(x.rows());
  std::uniform_int_distribution<int> draw(0, n - 1);
  for (int t = 0; t < options_.num_trees; ++t) {
    std::vector<int> sample(n);
    for (auto& s : sample) s = draw(rng);
    trees_.push_back(grow(x, y, std::move(sample), rng()));
  }
}

RandomForest::Tree RandomForest::grow(const MatrixD& x, std::span<const int> y,
                                      std::vector<int> sample, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const int d = num_features_;
  const int max_features =
      options_.max_features > 0
          ? std::min(options_.max_features, d)
          : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
  Tree tree;
  struct Pending {
    int node;
    int begin;
    int end;
    int depth;
  };
  tree.nodes.push_back({});
  std::vector<Pending> stack{{0, 0, static_cast<int>(sample.size()), 0}};
  std::vector<int> features(d);
  std::iota(features.begin(), features.end(), 0);
  std::vector<std::pair<double, int>> column;

  auto make_leaf = [&](int node, int begin, int end) {
    tree.nodes[node].feature = -1;
    tree.nodes[node].dist = static_cast<int>(tree.leaf_dist.size());
    tree.leaf_dist.resize(tree.leaf_dist.size() + num_classes_, 0.0);
    double* dist = tree.leaf_dist.data() + tree.nodes[node].dist;
    for (int i = begin; i < end; ++i) dist[y[sample[i]]] += 1.0;
    for (int c = 0; c < num_classes_; ++c) dist[c] /= (end - begin);
  };

  while (!stack.empty()) {
    const Pending job = stack.back();
    stack.pop_back();
    const int count = job.end - job.begin;
    std::vector<int> counts(num_classes_, 0);
    for (int i = job.begin; i < job.end; ++i) ++counts[y[sample[i]]];
    const bool pure = std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) <= 1;
    if (pure || count < 2 * options_.min_samples_leaf ||
        (options_.max_depth > 0 && job.depth >= options_.max_depth)) {
      make_leaf(job.node, job.begin, job.end);
      continue;
    }
    const double parent = gini(counts, count);
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    // Partial Fisher-Yates: the first max_features entries are the candidates.
    for (int f = 0; f < max_features; ++f) {
      std::uniform_int_distribution<int> pick(f, d - 1);
      std::swap(features[f], features[pick(rng)]);
    }
    for (int fi = 0; fi < max_features; ++fi) {
      const int f = features[fi];
      column.clear();
      for (int i = job.begin; i < job.end; ++i) column.emplace_back(x(sample[i], f), y[sample[i]]);
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      std::vector<int> left(num_classes_, 0);
      std::vector<int> right = counts;
      for (int i = 0; i + 1 < count; ++i) {
        ++left[column[i].second];
        --right[column[i].second];
        if (column[i].first == column[i + 1].first) continue;
        const int nl = i + 1;
        const int nr = count - nl;
        if (nl < options_.min_samples_leaf || nr < options_.min_samples_leaf) continue;
        const double gain =
            parent - (nl * gini(left, nl) + nr * gini(right, nr)) / static_cast<double>(count);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (column[i].first + column[i + 1].first);
          if (best_threshold >= column[i + 1].first) best_threshold = column[i].first;
        }
      }
    }
    if (best_feature < 0) {
      make_leaf(job.node, job.begin, job.end);
      continue;
    }
    const auto mid = std::partition(sample.begin() + job.begin, sample.begin() + job.end,
                                    [&](int s) { return x(s, best_feature) <= best_threshold; });
    const int split = static_cast<int>(mid - sample.begin());
    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    Node& node = tree.nodes[job.node];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = left_id;
    node.right = left_id + 1;
    stack.push_back({left_id + 1, split, job.end, job.depth + 1});
    stack.push_back({left_id, job.begin, split, job.depth + 1});
  }
  return tree;
}

MatrixD RandomForest::predict_proba(const MatrixD& x) const {
  if (trees_.empty()) throw ContractError("random forest is not fitted");
  if (x.cols() != num_features_) throw DimensionError("feature dimension mismatch");
  MatrixD out = MatrixD::Zero(x.rows(), num_classes_);
  for (const Tree& tree : trees_) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int id = 0;
      while (tree.nodes[id].feature >= 0) {
        const Node& n = tree.nodes[id];
        id = x(i, n.feature) <= n.threshold ? n.left : n.right;
      }
      const double* dist = tree.leaf_dist.data() + tree.nodes[id].dist;
      for (int c = 0; c < num_classes_; ++c) out(i, c) += dist[c];
    }
  }
  out /= static_cast<double>(trees_.size());
  return out;
}

std::vector<int> RandomForest::predict(const MatrixD& x) const {
  const MatrixD p = predict_proba(x);
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    p.row(i).maxCoeff(&best);
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace csg
