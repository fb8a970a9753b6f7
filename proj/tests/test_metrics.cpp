#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "csg/metrics.hpp"

using namespace csg;

namespace {

// Quadratic-time Ross estimator written out directly: for each point, the
// distance d to its k-th nearest same-label neighbour, m = number of points
// of any label strictly closer than d (itself included), then
// psi(N) - <psi(N_y)> + psi(k) - <psi(m)>.
double brute_ross(const std::vector<double>& x, const std::vector<std::uint8_t>& y, int k) {
  const int n = static_cast<int>(x.size());
  const int n1 = std::count(y.begin(), y.end(), 1);
  double sum_ny = 0, sum_m = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> same;
    for (int j = 0; j < n; ++j) {
      if (j != i && y[j] == y[i]) same.push_back(std::abs(x[j] - x[i]));
    }
    std::sort(same.begin(), same.end());
    const double d = same[k - 1];
    int m = 0;
    for (int j = 0; j < n; ++j) {
      if (std::abs(x[j] - x[i]) < d) ++m;
    }
    sum_ny += digamma_int(y[i] ? n1 : n - n1);
    sum_m += digamma_int(m);
  }
  const double mi = digamma_int(n) - sum_ny / n + digamma_int(k) - sum_m / n;
  return std::max(0.0, mi);
}

std::vector<std::uint8_t> balanced(int n) {
  std::vector<std::uint8_t> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % 2;
  return y;
}

}  // namespace

TEST_CASE("digamma at integers") {
  constexpr double euler = 0.5772156649015329;
  CHECK(digamma_int(1) == doctest::Approx(-euler).epsilon(1e-12));
  CHECK(digamma_int(2) == doctest::Approx(1 - euler).epsilon(1e-12));
  CHECK(digamma_int(5) == doctest::Approx(1 + 0.5 + 1.0 / 3 + 0.25 - euler).epsilon(1e-12));
  double h = -euler;
  for (int i = 1; i < 1000; ++i) h += 1.0 / i;
  CHECK(digamma_int(1000) == doctest::Approx(h).epsilon(1e-12));
}

TEST_CASE("estimator matches a brute-force implementation") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 60 + 20 * trial;
    std::vector<double> x(n);
    std::vector<std::uint8_t> y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = static_cast<std::uint8_t>(rng() % 3 == 0);
      x[i] = nd(rng) + 0.8 * y[i] * trial;
    }
    y[0] = 1;
    y[1] = 0;
    const double fast = mi_continuous_discrete(x, y, 3);
    CHECK(fast == doctest::Approx(brute_ross(x, y, 3)).epsilon(1e-9));
  }
}

TEST_CASE("near-deterministic binary feature carries ln 2") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.01);
  const auto y = balanced(2000);
  std::vector<double> x(2000);
  for (int i = 0; i < 2000; ++i) x[i] = y[i] + nd(rng);
  const double mi = mi_continuous_discrete(x, y, 3);
  CHECK(std::abs(mi - std::log(2.0)) < 0.05 * std::log(2.0));
}

TEST_CASE("independent feature carries almost nothing") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto y = balanced(2000);
  std::vector<double> x(2000);
  for (auto& v : x) v = nd(rng);
  CHECK(std::abs(mi_continuous_discrete(x, y, 3)) < 0.05);
}

TEST_CASE("estimator edge cases") {
  std::vector<double> x(20);
  std::iota(x.begin(), x.end(), 0.0);
  std::vector<std::uint8_t> constant(20, 1);
  CHECK(mi_continuous_discrete(x, constant, 3) == 0.0);

  std::vector<std::uint8_t> rare(20, 0);
  rare[0] = rare[1] = rare[2] = 1;
  CHECK_THROWS_AS(mi_continuous_discrete(x, rare, 3), ParameterError);
  std::vector<double> few(5, 1.0);
  CHECK_THROWS_AS(mi_continuous_discrete(few, balanced(5), 1), ParameterError);

  // Fully tied features still produce a finite, clamped estimate.
  std::vector<double> tied(40, 0.5);
  const double v = mi_continuous_discrete(tied, balanced(40), 3, 7);
  CHECK(std::isfinite(v));
  CHECK(v >= 0.0);
  CHECK(v == mi_continuous_discrete(tied, balanced(40), 3, 7));
}

TEST_CASE("mi matrix of class indicator codes") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 0.01);
  const int n = 2000;
  MatrixF f(n, 4);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % 4;
    for (int k = 0; k < 4; ++k) f(i, k) = static_cast<float>((labels[i] == k) + nd(rng));
  }
  const MIMatrix m = mi_matrix(f, labels, 4);
  CHECK(m.sample_count == n);
  const double h = -(0.25 * std::log(0.25) + 0.75 * std::log(0.75));
  for (int k = 0; k < 4; ++k) CHECK(std::abs(m.values(k, k) - h) < 0.05 * h);

  // Channel 1 replaced by class-independent noise: only the diagonal keeps
  // its information.
  for (int i = 0; i < n; ++i) f(i, 1) = static_cast<float>(nd(rng) * 100);
  const MIMatrix noisy = mi_matrix(f, labels, 4);
  for (int c = 0; c < 4; ++c) CHECK(noisy.values(1, c) < 0.05);
  for (int k : {0, 2, 3}) {
    for (int c = 0; c < 4; ++c) {
      if (c != k) CHECK(noisy.values(k, k) > noisy.values(k, c));
    }
  }
}

TEST_CASE("mi matrix invariances") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int n = 400;
  MatrixF f(n, 3);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % 3;
    for (int k = 0; k < 3; ++k) f(i, k) = static_cast<float>(nd(rng) + (labels[i] == k) * 1.5);
  }
  const MIMatrix base = mi_matrix(f, labels, 3);
  for (auto v : std::span(base.values.data(), base.values.size())) CHECK(v >= 0.0);

  // Same permutation of samples and labels.
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  MatrixF fp(n, 3);
  std::vector<int> lp(n);
  for (int i = 0; i < n; ++i) {
    fp.row(i) = f.row(perm[i]);
    lp[i] = labels[perm[i]];
  }
  const MIMatrix permuted = mi_matrix(fp, lp, 3);
  CHECK((permuted.values - base.values).cwiseAbs().maxCoeff() < 1e-12);

  // x -> 2x + 1 scales every distance uniformly.
  MatrixF scaled = (f.array() * 2.0f + 1.0f).matrix();
  const MIMatrix s = mi_matrix(scaled, labels, 3);
  CHECK((s.values - base.values).cwiseAbs().maxCoeff() < 1e-9);

  // A monotone but nonlinear transform stays within estimator tolerance.
  MatrixF cubed = f.array().cube().matrix();
  const MIMatrix t = mi_matrix(cubed, labels, 3);
  CHECK((t.values - base.values).cwiseAbs().maxCoeff() < 0.1);

  // Labels shuffled independently of the features.
  std::vector<int> shuffled = labels;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const MIMatrix null = mi_matrix(f, shuffled, 3);
  CHECK(null.values.mean() < 0.05);
  CHECK(null.values.maxCoeff() < 0.1);
  CHECK(base.values.diagonal().minCoeff() > 0.1);
}

TEST_CASE("mis summary") {
  MIMatrix z;
  z.values = MatrixD::Zero(3, 2);
  CHECK(mis(z) == 0.0);

  MIMatrix m;
  m.values.resize(2, 2);
  m.values << 0.1, 0.9, 0.3, 0.2;
  CHECK(mis(m) == doctest::Approx(0.6));

  MIMatrix swapped_cols = m;
  swapped_cols.values.col(0).swap(swapped_cols.values.col(1));
  MIMatrix swapped_rows = m;
  swapped_rows.values.row(0).swap(swapped_rows.values.row(1));
  CHECK(mis(swapped_cols) == mis(m));
  CHECK(mis(swapped_rows) == mis(m));
}
