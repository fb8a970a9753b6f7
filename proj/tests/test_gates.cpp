#include <doctest.h>

#include <cmath>
#include <random>

#include "csg/gates.hpp"

using namespace csg;

namespace {

MatrixF mat(int rows, int cols, std::initializer_list<float> v) {
  MatrixF m(rows, cols);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

MatrixF random_raw(int c, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.3f, 1.5f);
  MatrixF m(c, k);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < c; ++i) m(i, j) = u(rng);
    m(static_cast<int>(rng() % c), j) = 0.2f + std::abs(u(rng));  // positive max
  }
  return m;
}

}  // namespace

TEST_CASE("select_gate_rows picks the labelled rows") {
  GateMatrix id(mat(2, 2, {1, 0, 0, 1}));
  std::vector<int> l1{0};
  CHECK(select_gate_rows(id, l1) == mat(1, 2, {1, 0}));
  std::vector<int> l2{1, 0};
  CHECK(select_gate_rows(id, l2) == mat(2, 2, {0, 1, 1, 0}));

  GateMatrix g(mat(2, 3, {1, 0.5f, 0, 0, 1, 1}));
  std::vector<int> l3{0, 0};
  CHECK(select_gate_rows(g, l3) == mat(2, 3, {1, 0.5f, 0, 1, 0.5f, 0}));

  std::vector<int> bad{0, 2};
  try {
    select_gate_rows(g, bad);
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    CHECK(e.index() == 2);
  }
}

TEST_CASE("apply_gate scales each channel by its gate entry") {
  TensorF act(2, 3, 2, 2, 2.0f);
  MatrixF ones = MatrixF::Ones(2, 3);
  CHECK(apply_gate(act, ones).data == act.data);
  MatrixF zeros = MatrixF::Zero(2, 3);
  for (float v : apply_gate(act, zeros).data) CHECK(v == 0.0f);
  MatrixF half = MatrixF::Constant(2, 3, 0.5f);
  for (float v : apply_gate(act, half).data) CHECK(v == 1.0f);
  CHECK_THROWS_AS(apply_gate(act, MatrixF::Ones(2, 4).eval()), DimensionError);
  CHECK_THROWS_AS(apply_gate(act, MatrixF::Ones(1, 3).eval()), DimensionError);
}

TEST_CASE("apply_gate backward matches the product rule") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  TensorD act(2, 3, 2, 2), grad_out(2, 3, 2, 2);
  for (auto& v : act.data) v = u(rng);
  for (auto& v : grad_out.data) v = u(rng);
  MatrixD rows(2, 3);
  for (auto& v : std::span(rows.data(), rows.size())) v = u(rng);
  const auto g = apply_gate_backward(act, rows, grad_out);
  for (int b = 0; b < 2; ++b) {
    for (int k = 0; k < 3; ++k) {
      double expect_row = 0;
      for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
          CHECK(g.activations(b, k, y, x) == doctest::Approx(grad_out(b, k, y, x) * rows(b, k)));
          expect_row += grad_out(b, k, y, x) * act(b, k, y, x);
        }
      }
      CHECK(g.gate_rows(b, k) == doctest::Approx(expect_row));
    }
  }
}

TEST_CASE("project normalizes columns by their maximum then clips") {
  CHECK(project(mat(2, 1, {0.5f, 0.25f})).values() == mat(2, 1, {1.0f, 0.5f}));
  CHECK(project(mat(2, 1, {1.2f, -0.1f})).values() == mat(2, 1, {1.0f, 0.0f}));
  CHECK(project(mat(2, 1, {1.0f, 0.0f})).values() == mat(2, 1, {1.0f, 0.0f}));

  try {
    project(mat(2, 3, {1, 0, 0.5f, 1, -0.2f, 0.5f}));
    FAIL("expected DegenerateColumnError");
  } catch (const DegenerateColumnError& e) {
    CHECK(e.column() == 1);
  }
  CHECK_THROWS_AS(GateMatrix(mat(1, 2, {1.0f, 1.5f})), ConstraintError);
}

TEST_CASE("project is idempotent and lands in the constraint set") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GateMatrix once = project(random_raw(4, 16, seed));
    const GateMatrix twice = project(once);
    CHECK((once.values() - twice.values()).cwiseAbs().maxCoeff() <= 1e-12);
    for (int k = 0; k < 16; ++k) {
      CHECK(std::abs(once.values().col(k).maxCoeff() - 1.0f) <= 1e-6);
      CHECK(once.values().col(k).minCoeff() >= 0.0f);
    }
    const double d = l1_density(once);
    CHECK(d >= 0.25 - 1e-9);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("initial gate is all ones") {
  const GateMatrix g = GateMatrix::initial(4, 16);
  CHECK(g.values() == MatrixF::Ones(4, 16));
  CHECK(l1_density(g) == 1.0);
}

TEST_CASE("sparsity penalty values") {
  // Norm 7 from a 1 x 7 all-ones gate; K = 7 so g = 5 is rejected, use the
  // scalar form for the g < K examples.
  SparsityPenaltySpec l1;
  l1.g = 5;
  CHECK(penalty_of_norm(3, l1) == 0.0);
  CHECK(penalty_of_norm(7, l1) == 2.0);
  SparsityPenaltySpec l2 = l1;
  l2.psi = Psi::L2;
  CHECK(penalty_of_norm(7, l2) == doctest::Approx(2.0));
  SparsityPenaltySpec sm = l1;
  sm.psi = Psi::SmoothL1;
  sm.smooth_l1_beta = 1.0;
  CHECK(penalty_of_norm(5.5, sm) == doctest::Approx(0.125));
  CHECK(penalty_of_norm(7, sm) == doctest::Approx(1.5));

  // Kink: zero value and zero subgradient exactly at the bound.
  CHECK(penalty_of_norm(5, l1) == 0.0);
  CHECK(penalty_slope(5, l1) == 0.0);
  CHECK(penalty_slope(4, l2) == 0.0);

  CHECK_THROWS_AS(SparsityPenaltySpec(3.0, Psi::L1, 4), ConstraintError);
}

TEST_CASE("sparsity penalty is monotone in the norm") {
  for (Psi psi : {Psi::L1, Psi::L2, Psi::SmoothL1}) {
    SparsityPenaltySpec s(16.0, psi, 16);
    double prev = -1;
    for (double a = 10; a <= 64; a += 0.25) {
      const double v = penalty_of_norm(a, s);
      CHECK(v >= prev);
      if (a <= 16) CHECK(v == 0.0);
      prev = v;
    }
  }
}

TEST_CASE("sparsity penalty gradient matches finite differences") {
  for (Psi psi : {Psi::L1, Psi::L2, Psi::SmoothL1}) {
    SparsityPenaltySpec s(16.0, psi, 16, 4.0);
    const GateMatrix g = project(random_raw(4, 16, 11));
    REQUIRE(g.l1_norm() > 18.0);
    const PenaltyResult r = sparsity_penalty(g, s);
    CHECK(r.value == doctest::Approx(penalty_of_norm(g.l1_norm(), s)));
    constexpr double h = 1e-3;
    // Entries strictly inside (0,1) so the perturbation keeps G valid.
    for (int c = 0; c < 4; ++c) {
      for (int k = 0; k < 16; ++k) {
        const double v = g(c, k);
        if (v <= 2 * h || v >= 1 - 2 * h) continue;
        const double up = penalty_of_norm(g.l1_norm() + h, s);
        const double dn = penalty_of_norm(g.l1_norm() - h, s);
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(r.grad(c, k) - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("l1 density and convergence interval") {
  CHECK(l1_density(GateMatrix(MatrixF::Ones(3, 5))) == 1.0);
  MatrixF onehot = MatrixF::Zero(4, 16);
  for (int k = 0; k < 16; ++k) onehot(k % 4, k) = 1;
  CHECK(l1_density(GateMatrix(onehot)) == 0.25);

  auto [lo, hi] = convergence_interval(10, 64, 64);
  CHECK(lo == doctest::Approx(0.1));
  CHECK(hi == doctest::Approx(0.1));
  std::tie(lo, hi) = convergence_interval(6, 2048, 2457.6);
  CHECK(lo == doctest::Approx(0.1667).epsilon(1e-3));
  CHECK(hi == doctest::Approx(0.2));
  std::tie(lo, hi) = convergence_interval(1000, 512, 51200);
  CHECK(lo == doctest::Approx(0.001));
  CHECK(hi == doctest::Approx(0.1));
  CHECK_THROWS_AS(convergence_interval(4, 16, 15), ConstraintError);
}

TEST_CASE("fixed gate block layout") {
  const GateMatrix id = fixed_gate(2, 2, 1, 0);
  CHECK(id.values() == mat(2, 2, {1, 0, 0, 1}));
  CHECK(id.frozen());

  const GateMatrix g = fixed_gate(10, 64, 6, 4);
  for (int c = 0; c < 10; ++c) {
    for (int k = 0; k < 64; ++k) {
      const float expect = (k >= 60 || k / 6 == c) ? 1.0f : 0.0f;
      CHECK(g(c, k) == expect);
    }
  }
  CHECK(fixed_gate(10, 256, 25, 6).values().sum() == 250 + 60);
  CHECK_THROWS_AS(fixed_gate(4, 16, 3, 3), DimensionError);
}
