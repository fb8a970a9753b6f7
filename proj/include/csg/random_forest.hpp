#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csg/tensor.hpp"

namespace csg {

struct RandomForestOptions {
  int num_trees = 100;
  int max_features = 0;  // 0: floor(sqrt(d))
  int min_samples_leaf = 1;
  int max_depth = 0;     // 0: unlimited
  std::uint64_t seed = 0;
};

// Bagged CART classifier with Gini splits; prediction is the mean of the
// trees' leaf class distributions.
class RandomForest {
 public:
  RandomForest() = default;
  explicit RandomForest(RandomForestOptions options) : options_(options) {}

  void fit(const MatrixD& x, std::span<const int> y);
  MatrixD predict_proba(const MatrixD& x) const;
  std::vector<int> predict(const MatrixD& x) const;

  int num_classes() const { return num_classes_; }
  int num_trees() const { return static_cast<int>(trees_.size()); }
  const RandomForestOptions& options() const { return options_; }

 private:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int dist = -1;  // offset into Tree::leaf_dist for leaves
  };
  struct Tree {
    std::vector<Node> nodes;
    std::vector<double> leaf_dist;
  };

  Tree grow(const MatrixD& x, std::span<const int> y, std::vector<int> sample,
            std::uint64_t seed) const;

  RandomForestOptions options_;
  int num_classes_ = 0;
  int num_features_ = 0;
  std::vector<Tree> trees_;
};

}  // namespace csg
