#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csg/dataset.hpp"
#include "csg/model.hpp"

namespace csg {

// Binary H x W map, 1 = object.
struct SegMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  SegMap() = default;
  SegMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t operator()(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  long long count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const SegMap&) const = default;

  // Plane i of an N x 1 x H x W mask tensor.
  static SegMap from_mask(const MaskTensor& masks, int i);
};

struct SegOutcome {
  SegMap map;
  bool warning = false;
  std::string message;
};

// Half-pixel-centre bilinear resampling with edge clamping.
MatrixD bilinear_resize(const MatrixD& src, int out_h, int out_w);

// Separable Gaussian, kernel truncated at 3 sigma, reflect boundary
// (d c b a | a b c d | d c b a).
MatrixD gaussian_blur(const MatrixD& src, double sigma);

// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

// 1 where value > threshold.
SegMap threshold_above(const MatrixD& map, double threshold);

// 1 where value >= threshold, except when threshold is the map maximum
// reached everywhere (constant map), which yields an empty map.
SegMap threshold_percentile(const MatrixD& map, double threshold);

struct GradMapOptions {
  double sigma = 5.0;
  double threshold = 1.0;
};

// gradient: channels x H x W for one image.
SegOutcome grad_map_from_gradient(const TensorD& gradient, int sample,
                                  const GradMapOptions& options = {});
SegOutcome grad_map(const Network<float>& model, const TensorF& image, int filter,
                    const GradMapOptions& options = {});

// 70th percentile of filter k's penultimate activations over every pixel of
// every image, one value per filter.
std::vector<double> activation_thresholds(const Network<float>& model, const TensorF& images,
                                          double q = 70.0);

SegMap activ_map_from_activation(const MatrixD& activation, int out_h, int out_w,
                                 double dataset_threshold);
SegMap activ_map(const Network<float>& model, const TensorF& image, int filter,
                 const std::vector<double>& dataset_thresholds);

// Unresized class activation map: sum_k W[c][k] * A_k.
MatrixD cam_map(const Network<float>& model, const TensorF& image, int cls);
SegMap cam_from_map(const MatrixD& map, int out_h, int out_w, double q = 70.0);
SegMap cam(const Network<float>& model, const TensorF& image, int cls);

double iou(const SegMap& a, const SegMap& b);

// Fraction of values >= n / 100.
double ap_n(const std::vector<double>& ious, double n_percent);

enum class LocMethod { GradMap, ActivMap, CAM };
std::string to_string(LocMethod method);
LocMethod loc_method_from_string(const std::string& name);
double default_ap_percent(LocMethod method);

// cells[k][c] holds the IoUs of filter k on class-c samples.
struct FilterIoUTable {
  std::vector<std::vector<std::vector<double>>> cells;
};

struct FilterScore {
  int filter = 0;
  int assigned_class = -1;  // -1 when every cell is empty
  double avg_iou = 0.0;
  double apn = 0.0;
};

struct ClassScore {
  int cls = 0;
  int count = 0;  // filters assigned (filter methods) or samples (CAM)
  std::optional<double> avg_iou;
  std::optional<double> apn;
};

struct LocalizationReport {
  std::string method;
  double n_percent = 30.0;
  std::vector<FilterScore> filters;  // empty for CAM
  std::vector<ClassScore> classes;
  double avg_iou = 0.0;
  double apn = 0.0;
  std::vector<std::string> warnings;
};

LocalizationReport localization_metrics(const FilterIoUTable& table, int num_classes,
                                        double n_percent, const std::string& method);
// CAM variant: per-sample IoU against the true-class map.
LocalizationReport cam_metrics(const std::vector<double>& ious, const std::vector<int>& labels,
                               int num_classes, double n_percent);

// Full evaluation over a masked dataset.
LocalizationReport evaluate_localization(const Network<float>& model, const LabeledImages& data,
                                         LocMethod method, std::optional<double> n_percent = {});

}  // namespace csg
