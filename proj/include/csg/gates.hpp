#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csg/tensor.hpp"

namespace csg {

// C x K class-filter gate matrix. Entries live in [0,1]; once projected,
// every column has maximum exactly 1.
class GateMatrix {
 public:
  GateMatrix() = default;
  // Validates that every entry lies in [0,1].
  explicit GateMatrix(MatrixF values, bool frozen = false);

  // All entries 0.5, then projected (so every entry becomes 1).
  static GateMatrix initial(int num_classes, int num_filters);

  int num_classes() const { return static_cast<int>(values_.rows()); }
  int num_filters() const { return static_cast<int>(values_.cols()); }
  const MatrixF& values() const { return values_; }
  float operator()(int c, int k) const { return values_(c, k); }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

  double l1_norm() const;

  bool operator==(const GateMatrix& o) const {
    return frozen_ == o.frozen_ && values_ == o.values_;
  }

 private:
  MatrixF values_;
  bool frozen_ = false;
};

enum class Psi { L1, L2, SmoothL1 };

std::string to_string(Psi psi);
Psi psi_from_string(const std::string& name);

// Configuration of d(a, b) = psi(ReLU(a - b)) applied to a = ||G||_1, b = g.
struct SparsityPenaltySpec {
  double g = 0.0;
  Psi psi = Psi::L1;
  double smooth_l1_beta = 1.0;

  SparsityPenaltySpec() = default;
  // Throws ConstraintError when g < num_filters (||G||_1 >= K always holds).
  SparsityPenaltySpec(double g_bound, Psi psi_kind, int num_filters,
                      double beta = 1.0);
};

struct PenaltyResult {
  double value = 0.0;
  MatrixD grad;  // d value / d G, C x K
};

// Row b of the result is G[labels[b]].
MatrixF select_gate_rows(const GateMatrix& gate, std::span<const int> labels);

// output[b,k,h,w] = activations[b,k,h,w] * gate_rows[b,k]
template <typename T>
Tensor4<T> apply_gate(const Tensor4<T>& activations, const MatrixX<T>& gate_rows);

template <typename T>
struct ApplyGateGrad {
  Tensor4<T> activations;
  MatrixX<T> gate_rows;
};

template <typename T>
ApplyGateGrad<T> apply_gate_backward(const Tensor4<T>& activations,
                                     const MatrixX<T>& gate_rows,
                                     const Tensor4<T>& grad_output);

// Divides every column by its largest entry, then clips to [0,1].
// Throws DegenerateColumnError when a column has no positive entry.
GateMatrix project(const MatrixF& raw, bool frozen = false);
GateMatrix project(const GateMatrix& gate);

PenaltyResult sparsity_penalty(const GateMatrix& gate, const SparsityPenaltySpec& spec);

// psi(ReLU(l1 - g)) as a scalar function of the L1 norm, and its derivative.
double penalty_of_norm(double l1, const SparsityPenaltySpec& spec);
double penalty_slope(double l1, const SparsityPenaltySpec& spec);

double l1_density(const GateMatrix& gate);

// [1/C, g/(C K)]; throws ConstraintError when g < K.
std::pair<double, double> convergence_interval(int num_classes, int num_filters, double g);

// Each class owns `per_class` consecutive filters; the last `shared` filters
// are open to every class. Returned gate is frozen.
GateMatrix fixed_gate(int num_classes, int num_filters, int per_class, int shared);

}  // namespace csg
