#include "csg/gates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace csg {

GateMatrix::GateMatrix(MatrixF values, bool frozen)
    : values_(std::move(values)), frozen_(frozen) {
  if (values_.rows() <= 0 || values_.cols() <= 0) {
    throw DimensionError("gate matrix must have positive shape");
  }
  for (Eigen::Index c = 0; c < values_.rows(); ++c) {
    for (Eigen::Index k = 0; k < values_.cols(); ++k) {
      const float v = values_(c, k);
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw ConstraintError("gate entry (" + std::to_string(c) + "," +
                              std::to_string(k) + ") = " + std::to_string(v) +
                              " outside [0,1]");
      }
    }
  }
}

GateMatrix GateMatrix::initial(int num_classes, int num_filters) {
  if (num_classes <= 0 || num_filters <= 0) {
    throw DimensionError("gate matrix must have positive shape");
  }
  return project(MatrixF::Constant(num_classes, num_filters, 0.5f));
}

double GateMatrix::l1_norm() const {
  double total = 0.0;
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    total += std::abs(static_cast<double>(values_.data()[i]));
  }
  return total;
}

std::string to_string(Psi psi) {
  switch (psi) {
    case Psi::L1:
      return "l1";
    case Psi::L2:
      return "l2";
    case Psi::SmoothL1:
      return "smooth_l1";
  }
  return "l1";
}

Psi psi_from_string(const std::string& name) {
  if (name == "l1" || name == "L1") return Psi::L1;
  if (name == "l2" || name == "L2") return Psi::L2;
  if (name == "smooth_l1" || name == "SmoothL1") return Psi::SmoothL1;
  throw ConfigError("unknown penalty norm '" + name + "' (expected l1, l2, smooth_l1)");
}

SparsityPenaltySpec::SparsityPenaltySpec(double g_bound, Psi psi_kind, int num_filters,
                                         double beta)
    : g(g_bound), psi(psi_kind), smooth_l1_beta(beta) {
  if (!(g_bound >= num_filters)) {
    throw ConstraintError("sparsity bound g=" + std::to_string(g_bound) +
                          " must be >= K=" + std::to_string(num_filters));
  }
  if (psi_kind == Psi::SmoothL1 && !(beta > 0.0)) {
    throw ConstraintError("smooth-L1 beta must be positive");
  }
}

MatrixF select_gate_rows(const GateMatrix& gate, std::span<const int> labels) {
  MatrixF rows(static_cast<Eigen::Index>(labels.size()), gate.num_filters());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const int y = labels[b];
    if (y < 0 || y >= gate.num_classes()) {
      throw IndexError("label " + std::to_string(y) + " out of range [0," +
                           std::to_string(gate.num_classes()) + ")",
                       y);
    }
    rows.row(static_cast<Eigen::Index>(b)) = gate.values().row(y);
  }
  return rows;
}

template <typename T>
Tensor4<T> apply_gate(const Tensor4<T>& activations, const MatrixX<T>& gate_rows) {
  if (gate_rows.rows() != activations.n || gate_rows.cols() != activations.c) {
    throw DimensionError("gate rows " + std::to_string(gate_rows.rows()) + "x" +
                         std::to_string(gate_rows.cols()) +
                         " do not match activations " + activations.shape_string());
  }
  Tensor4<T> out = activations;
  const std::size_t plane = activations.plane();
  for (int b = 0; b < activations.n; ++b) {
    for (int k = 0; k < activations.c; ++k) {
      T* p = out.data.data() + activations.offset(b, k, 0, 0);
      const T g = gate_rows(b, k);
      for (std::size_t i = 0; i < plane; ++i) p[i] *= g;
    }
  }
  return out;
}

template <typename T>
ApplyGateGrad<T> apply_gate_backward(const Tensor4<T>& activations,
                                     const MatrixX<T>& gate_rows,
                                     const Tensor4<T>& grad_output) {
  if (!activations.same_shape(grad_output)) {
    throw DimensionError("gradient shape " + grad_output.shape_string() +
                         " does not match activations " + activations.shape_string());
  }
  ApplyGateGrad<T> grads;
  grads.activations = apply_gate(grad_output, gate_rows);
  grads.gate_rows = MatrixX<T>::Zero(activations.n, activations.c);
  const std::size_t plane = activations.plane();
  for (int b = 0; b < activations.n; ++b) {
    for (int k = 0; k < activations.c; ++k) {
      const std::size_t o = activations.offset(b, k, 0, 0);
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        acc += activations.data[o + i] * grad_output.data[o + i];
      }
      grads.gate_rows(b, k) = acc;
    }
  }
  return grads;
}

template Tensor4<float> apply_gate(const Tensor4<float>&, const MatrixX<float>&);
template Tensor4<double> apply_gate(const Tensor4<double>&, const MatrixX<double>&);
template ApplyGateGrad<float> apply_gate_backward(const Tensor4<float>&,
                                                  const MatrixX<float>&,
                                                  const Tensor4<float>&);
template ApplyGateGrad<double> apply_gate_backward(const Tensor4<double>&,
                                                   const MatrixX<double>&,
                                                   const Tensor4<double>&);

GateMatrix project(const MatrixF& raw, bool frozen) {
  MatrixF out = raw;
  for (Eigen::Index k = 0; k < out.cols(); ++k) {
    // The column maximum coincides with the L-inf norm whenever the
    // largest-magnitude entry is positive, and keeps max == 1 otherwise.
    float top = -std::numeric_limits<float>::infinity();
    for (Eigen::Index c = 0; c < out.rows(); ++c) top = std::max(top, out(c, k));
    if (!(top > 0.0f) || !std::isfinite(top)) {
      throw DegenerateColumnError(static_cast<int>(k));
    }
    for (Eigen::Index c = 0; c < out.rows(); ++c) {
      out(c, k) = std::clamp(out(c, k) / top, 0.0f, 1.0f);
    }
  }
  return GateMatrix(std::move(out), frozen);
}

GateMatrix project(const GateMatrix& gate) { return project(gate.values(), gate.frozen()); }

double penalty_of_norm(double l1, const SparsityPenaltySpec& spec) {
  const double excess = std::max(0.0, l1 - spec.g);
  switch (spec.psi) {
    case Psi::L1:
    case Psi::L2:
      // Both norms reduce to |x| on a scalar.
      return excess;
    case Psi::SmoothL1: {
      const double beta = spec.smooth_l1_beta;
      return excess < beta ? 0.5 * excess * excess / beta : excess - 0.5 * beta;
    }
  }
  return excess;
}

double penalty_slope(double l1, const SparsityPenaltySpec& spec) {
  const double excess = l1 - spec.g;
  if (!(excess > 0.0)) return 0.0;  // subgradient 0 at and below the kink
  switch (spec.psi) {
    case Psi::L1:
    case Psi::L2:
      return 1.0;
    case Psi::SmoothL1:
      return excess < spec.smooth_l1_beta ? excess / spec.smooth_l1_beta : 1.0;
  }
  return 1.0;
}

PenaltyResult sparsity_penalty(const GateMatrix& gate, const SparsityPenaltySpec& spec) {
  PenaltyResult result;
  const double l1 = gate.l1_norm();
  result.value = penalty_of_norm(l1, spec);
  const double slope = penalty_slope(l1, spec);
  result.grad = MatrixD::Zero(gate.num_classes(), gate.num_filters());
  if (slope != 0.0) {
    for (int c = 0; c < gate.num_classes(); ++c) {
      for (int k = 0; k < gate.num_filters(); ++k) {
        const float v = gate(c, k);
        result.grad(c, k) = v > 0.0f ? slope : (v < 0.0f ? -slope : 0.0);
      }
    }
  }
  return result;
}

double l1_density(const GateMatrix& gate) {
  return gate.l1_norm() / (static_cast<double>(gate.num_classes()) * gate.num_filters());
}

std::pair<double, double> convergence_interval(int num_classes, int num_filters, double g) {
  if (num_classes < 1 || num_filters < 1) {
    throw DimensionError("C and K must be positive");
  }
  if (g < num_filters) {
    throw ConstraintError("g=" + std::to_string(g) + " must be >= K=" +
                          std::to_string(num_filters));
  }
  const double ck = static_cast<double>(num_classes) * num_filters;
  return {1.0 / num_classes, g / ck};
}

GateMatrix fixed_gate(int num_classes, int num_filters, int per_class, int shared) {
  if (num_classes < 1 || per_class < 0 || shared < 0 ||
      num_classes * per_class + shared != num_filters) {
    throw DimensionError("fixed gate requires C*m1 + m2 == K (got " +
                         std::to_string(num_classes) + "*" + std::to_string(per_class) +
                         " + " + std::to_string(shared) + " != " +
                         std::to_string(num_filters) + ")");
  }
  MatrixF values = MatrixF::Zero(num_classes, num_filters);
  for (int c = 0; c < num_classes; ++c) {
    for (int k = c * per_class; k < (c + 1) * per_class; ++k) values(c, k) = 1.0f;
  }
  for (int k = num_filters - shared; k < num_filters; ++k) {
    values.col(k).setOnes();
  }
  return GateMatrix(std::move(values), /*frozen=*/true);
}

}  // namespace csg
