#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csg/dataset.hpp"
#include "csg/gates.hpp"
#include "csg/model.hpp"

namespace csg {

// K x K cosine similarities between filter weight vectors.
struct CorrelationMatrix {
  MatrixD values;
};

CorrelationMatrix correlation_matrix(const MatrixD& weight_vectors);
CorrelationMatrix correlation_matrix(const MatrixF& weight_vectors);

// Fraction of off-diagonal entries >= s.
double ratio_above(const CorrelationMatrix& corr, double s);

using FilterGroups = std::vector<std::vector<int>>;

// For each class, the m filters with the largest mean pooled activation over
// that class's samples (ties go to the lower filter index), sorted ascending.
FilterGroups top_activated_groups(const MatrixF& pooled, std::span<const int> labels,
                                  int num_classes, int m);
FilterGroups top_activated_groups(const Network<float>& model, const LabeledImages& data, int m);

// Mean correlation between filters of different classes' groups,
// normalized by C (C-1) m^2.
double inter_class_correlation(const CorrelationMatrix& corr, const FilterGroups& groups, int m);

enum class SampleSubset { TP, FN, ALL };
std::string to_string(SampleSubset subset);

// S[y][c] = cos(mean pooled feature of class-y samples in the subset, G_c);
// nullopt when class y has no sample in the subset.
struct SimilarityMatrix {
  std::vector<std::vector<std::optional<double>>> values;
  SampleSubset subset = SampleSubset::ALL;

  bool diagonally_dominant() const;
};

SimilarityMatrix similarity_matrix(const MatrixF& pooled, std::span<const int> labels,
                                   std::span<const int> predictions, const GateMatrix& gate,
                                   SampleSubset subset);
SimilarityMatrix similarity_matrix(const Network<float>& model, const LabeledImages& data,
                                   const GateMatrix& gate, SampleSubset subset);

struct MaskResult {
  Network<float> model;
  std::vector<int> masked_filters;
  bool warning = false;  // nothing selected, model returned unmasked
  std::string message;
};

// Zeroes the output of every filter k with G[c][k] > tau for some target class.
MaskResult mask_filters(const Network<float>& model, const GateMatrix& gate,
                        std::span<const int> target_classes, double tau = 0.5);

// Baseline without a gate: per target class, zero the round(fraction * K)
// filters (at least one) with the largest mean activation over that class.
MaskResult mask_top_activated(const Network<float>& model, const MatrixF& pooled,
                              std::span<const int> labels, std::span<const int> target_classes,
                              double fraction = 0.1);

struct KMeansOptions {
  int max_iterations = 300;
  double tolerance = 1e-4;  // relative to the mean per-feature variance
};

// k-means++ seeded Lloyd iterations. Centers are returned sorted by the index
// of their largest coordinate.
MatrixD kmeans_centers(const MatrixD& points, int num_clusters, std::uint64_t seed,
                       const KMeansOptions& options = {});

}  // namespace csg
