#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csg/tensor.hpp"

namespace csg {

// K x C mutual information between each filter's pooled activation and each
// one-vs-rest class indicator, in nats.
struct MIMatrix {
  MatrixD values;
  int sample_count = 0;
};

struct MIOptions {
  int k_neighbors = 3;
  std::uint64_t seed = 0;  // drives tie-breaking jitter on duplicate values
};

// Nearest-neighbour estimate of I(X; Y) for continuous X and binary Y
// (Ross, 2014). Returns 0 when Y is constant; result is clamped at 0.
// Throws ParameterError when N < 10 or k >= the smaller class count.
double mi_continuous_discrete(std::span<const double> samples,
                              std::span<const std::uint8_t> indicator, int k_neighbors = 3,
                              std::uint64_t seed = 0);

MIMatrix mi_matrix(const MatrixF& pooled_features, std::span<const int> labels,
                   int num_classes, const MIOptions& options = {});

// Mean over filters of the best class MI.
double mis(const MIMatrix& m);

// psi(n) for positive integers, exact up to rounding.
double digamma_int(long long n);

}  // namespace csg
