#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "csg/localization.hpp"

using namespace csg;

namespace {

// Direct bilinear formula: output pixel centre maps to
// (i + 0.5) * in / out - 0.5, clamped to the source grid.
double bilinear_at(const MatrixD& src, int out_h, int out_w, int y, int x) {
  auto coord = [](int i, int in, int out) {
    const double s = (i + 0.5) * in / out - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  const double sy = coord(y, static_cast<int>(src.rows()), out_h);
  const double sx = coord(x, static_cast<int>(src.cols()), out_w);
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, static_cast<int>(src.rows()) - 1);
  const int x1 = std::min(x0 + 1, static_cast<int>(src.cols()) - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) +
         fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
}

SegMap from_rows(std::initializer_list<std::initializer_list<int>> rows) {
  SegMap m(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
  int y = 0;
  for (const auto& r : rows) {
    int x = 0;
    for (int v : r) m(y, x++) = static_cast<std::uint8_t>(v);
    ++y;
  }
  return m;
}

double brute_iou(const SegMap& a, const SegMap& b) {
  int inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      inter += a(y, x) && b(y, x);
      uni += a(y, x) || b(y, x);
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

Architecture arch() {
  Architecture a;
  a.image_size = 16;
  a.conv_channels = {4, 5, 6};
  a.num_classes = 3;
  return a;
}

TensorF random_images(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  TensorF x(n, 3, 16, 16);
  for (auto& v : x.data) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("bilinear resize matches the direct formula") {
  MatrixD src(2, 2);
  src << 4, 0, 0, 0;
  const MatrixD out = bilinear_resize(src, 4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) CHECK(out(y, x) == doctest::Approx(bilinear_at(src, 4, 4, y, x)));
  }
  CHECK(out(0, 0) == 4.0);
  CHECK(out(1, 1) == doctest::Approx(2.25));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  MatrixD r(3, 5);
  for (auto& v : std::span(r.data(), r.size())) v = u(rng);
  const MatrixD big = bilinear_resize(r, 7, 11);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 11; ++x) CHECK(big(y, x) == doctest::Approx(bilinear_at(r, 7, 11, y, x)));
  }
}

TEST_CASE("activation map of a single hot cell") {
  MatrixD src(2, 2);
  src << 4, 0, 0, 0;
  const SegMap m = activ_map_from_activation(src, 4, 4, 1.0);
  SegMap expect(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) expect(y, x) = bilinear_at(src, 4, 4, y, x) >= 1.0;
  }
  CHECK(m == expect);
  CHECK(m(0, 0) == 1);
  CHECK(m(3, 3) == 0);
  CHECK(m.count() == 6);

  // Everything below the threshold.
  CHECK(activ_map_from_activation(src, 4, 4, 5.0).empty());
  // Rescaled activations with a rescaled threshold give the same map.
  CHECK(activ_map_from_activation(src * 3.0, 4, 4, 3.0) == m);
}

TEST_CASE("iou by pixel counting") {
  const SegMap a = from_rows({{1, 1, 0, 0}, {1, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  const SegMap b = from_rows({{0, 1, 1, 0}, {0, 1, 1, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  const SegMap c = from_rows({{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 1, 1}, {0, 0, 1, 1}});
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, c) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(2.0 / 6.0));
  CHECK(iou(SegMap(4, 4), SegMap(4, 4)) == 0.0);
  CHECK_THROWS_AS(iou(a, SegMap(3, 4)), DimensionError);

  // Every pair of random 4x4 maps against brute force.
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    SegMap p(4, 4), q(4, 4);
    for (auto& v : p.values) v = rng() % 2;
    for (auto& v : q.values) v = rng() % 3 == 0;
    CHECK(iou(p, q) == brute_iou(p, q));
  }
}

TEST_CASE("APn and aggregate localization metrics") {
  CHECK(ap_n({0.1, 0.25, 0.4}, 20) == doctest::Approx(2.0 / 3.0));
  CHECK(ap_n({0.2}, 20) == 1.0);

  FilterIoUTable ones;
  ones.cells.assign(4, std::vector<std::vector<double>>(2, std::vector<double>(3, 1.0)));
  const auto r = localization_metrics(ones, 2, 30, "activmap");
  CHECK(r.avg_iou == 1.0);
  CHECK(r.apn == 1.0);
  for (const auto& f : r.filters) {
    CHECK(f.avg_iou == 1.0);
    CHECK(f.assigned_class == 0);  // tie goes to the lower class
  }

  // Filter 0 localizes class 1; filter 1 has an empty class-0 cell.
  FilterIoUTable t;
  t.cells = {{{0.1, 0.1}, {0.5, 0.7}}, {{}, {0.2, 0.4}}};
  const auto s = localization_metrics(t, 2, 30, "gradmap");
  CHECK(s.filters[0].assigned_class == 1);
  CHECK(s.filters[0].avg_iou == doctest::Approx(0.6));
  CHECK(s.filters[0].apn == 1.0);
  CHECK(s.filters[1].assigned_class == 1);
  CHECK(s.filters[1].apn == 0.5);
  CHECK_FALSE(s.warnings.empty());
  CHECK(s.avg_iou == doctest::Approx(0.45));
  CHECK(s.apn == doctest::Approx(0.75));
  CHECK(s.classes[0].count == 0);
  CHECK_FALSE(s.classes[0].avg_iou.has_value());
  CHECK(std::isfinite(s.avg_iou));

  const auto c = cam_metrics({0.5, 0.1, 0.4, 0.2}, {0, 0, 1, 1}, 2, 30);
  CHECK(c.avg_iou == doctest::Approx(0.3));
  CHECK(c.apn == doctest::Approx(0.5));
  CHECK(*c.classes[1].avg_iou == doctest::Approx(0.3));
}

TEST_CASE("gaussian blur preserves constants and mass") {
  const MatrixD flat = MatrixD::Constant(9, 7, 1.5);
  CHECK((gaussian_blur(flat, 2.0).array() - 1.5).abs().maxCoeff() < 1e-12);
  CHECK(threshold_above(gaussian_blur(flat, 2.0), 1.0).count() == 63);

  MatrixD impulse = MatrixD::Zero(21, 21);
  impulse(10, 10) = 1.0;
  const MatrixD b = gaussian_blur(impulse, 1.5);
  CHECK(b.sum() == doctest::Approx(1.0));
  CHECK(b(10, 10) == b.maxCoeff());
  CHECK(b(9, 10) == doctest::Approx(b(10, 9)));
}

TEST_CASE("percentile and threshold semantics") {
  CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
  CHECK(percentile({1, 2, 3, 4}, 70) == doctest::Approx(3.1));
  CHECK(percentile({7}, 30) == 7.0);
  MatrixD constant = MatrixD::Constant(4, 4, 2.0);
  CHECK(threshold_percentile(constant, 2.0).empty());
  MatrixD ramp(1, 4);
  ramp << 0, 1, 2, 3;
  CHECK(threshold_percentile(ramp, 1.0).count() == 3);
  CHECK(threshold_above(ramp, 1.0).count() == 2);
}

TEST_CASE("gradient map") {
  TensorD zero(1, 3, 8, 8);
  const SegOutcome z = grad_map_from_gradient(zero, 0);
  CHECK(z.map.empty());
  CHECK(z.warning);

  // A single strong pixel: the blurred magnitude relative to its RMS exceeds
  // 1 only near the pixel.
  TensorD g(1, 3, 16, 16);
  g(0, 1, 8, 8) = 5.0;
  const SegOutcome o = grad_map_from_gradient(g, 0, {1.0, 1.0});
  CHECK_FALSE(o.warning);
  CHECK(o.map(8, 8) == 1);
  CHECK(o.map(0, 0) == 0);

  // Zero-weight filter: no input depends on it.
  Network<float> net(arch(), 3);
  auto& w = net.parameter("conv3.weight").value;
  std::fill(w.begin(), w.begin() + 5 * 9, 0.0f);
  const SegOutcome dead = grad_map(net, random_images(1, 4), 0);
  CHECK(dead.map.empty());
  CHECK(dead.warning);
}

TEST_CASE("CAM spatial mean equals logit minus bias") {
  const Network<float> net(arch(), 5);
  const TensorF x = random_images(3, 6);
  const auto trace = net.forward_std(x);
  for (int b = 0; b < 3; ++b) {
    for (int c = 0; c < 3; ++c) {
      const MatrixD m = cam_map(net, x.slice(b, 1), c);
      CHECK(m.rows() == arch().penultimate_size());
      CHECK(std::abs(m.mean() - (trace.logits(b, c) - net.linear_bias()(c))) < 1e-5);
    }
  }
}

TEST_CASE("CAM degenerate and single-filter cases") {
  Network<float> net(arch(), 7);
  const TensorF x = random_images(1, 8);
  auto& fc = net.parameter("fc.weight").value;
  std::fill(fc.begin(), fc.end(), 0.0f);
  CHECK(cam(net, x, 0).empty());

  // One nonzero weight: CAM thresholds that filter's map at its own q70.
  fc[0 * 6 + 2] = 2.0f;
  const auto trace = net.forward_std(x);
  const int s = arch().penultimate_size();
  MatrixD a(s, s);
  for (int y = 0; y < s; ++y) {
    for (int xx = 0; xx < s; ++xx) a(y, xx) = trace.penultimate_maps(0, 2, y, xx);
  }
  const MatrixD up = bilinear_resize(a, 16, 16);
  std::vector<double> vals(up.data(), up.data() + up.size());
  CHECK(cam(net, x, 0) == activ_map_from_activation(a, 16, 16, percentile(vals, 70)));
}

TEST_CASE("activation map contracts") {
  const Network<float> net(arch(), 9);
  const TensorF x = random_images(4, 10);
  const auto th = activation_thresholds(net, x);
  CHECK(th.size() == 6u);
  CHECK_NOTHROW(activ_map(net, x, 1, th));
  CHECK_THROWS_AS(activ_map(net, x, 1, std::vector<double>{}), ContractError);
  CHECK(loc_method_from_string("cam") == LocMethod::CAM);
  CHECK(default_ap_percent(LocMethod::GradMap) == 20.0);
  CHECK(default_ap_percent(LocMethod::CAM) == 30.0);
}
