#include "csg/localization.hpp"

#include <algorithm>
#include <cmath>

#include "csg/training.hpp"

namespace csg {

long long SegMap::count() const {
  long long n = 0;
  for (auto v : values) n += v != 0;
  return n;
}

SegMap SegMap::from_mask(const MaskTensor& masks, int i) {
  SegMap out(masks.h, masks.w);
  const std::uint8_t* src = masks.sample(i);
  for (std::size_t p = 0; p < out.values.size(); ++p) out.values[p] = src[p] != 0;
  return out;
}

namespace {

// Fold an out-of-range index back with "reflect" semantics (edge repeated).
int reflect_index(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

MatrixD bilinear_resize(const MatrixD& src, int out_h, int out_w) {
  const auto in_h = static_cast<int>(src.rows());
  const auto in_w = static_cast<int>(src.cols());
  if (in_h < 1 || in_w < 1 || out_h < 1 || out_w < 1) {
    throw DimensionError("bilinear_resize needs non-empty shapes");
  }
  auto axis = [](int out, int in, std::vector<int>& lo, std::vector<int>& hi,
                 std::vector<double>& frac) {
    const double scale = static_cast<double>(in) / out;
    lo.resize(out);
    hi.resize(out);
    frac.resize(out);
    for (int o = 0; o < out; ++o) {
      double s = (o + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      lo[o] = static_cast<int>(std::floor(s));
      hi[o] = std::min(lo[o] + 1, in - 1);
      frac[o] = s - lo[o];
    }
  };
  std::vector<int> y0, y1, x0, x1;
  std::vector<double> fy, fx;
  axis(out_h, in_h, y0, y1, fy);
  axis(out_w, in_w, x0, x1, fx);
  MatrixD out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double top = src(y0[y], x0[x]) * (1 - fx[x]) + src(y0[y], x1[x]) * fx[x];
      const double bot = src(y1[y], x0[x]) * (1 - fx[x]) + src(y1[y], x1[x]) * fx[x];
      out(y, x) = top * (1 - fy[y]) + bot * fy[y];
    }
  }
  return out;
}

MatrixD gaussian_blur(const MatrixD& src, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (auto& v : kernel) v /= total;

  const auto h = static_cast<int>(src.rows());
  const auto w = static_cast<int>(src.cols());
  MatrixD tmp(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * src(y, reflect_index(x + i, w));
      tmp(y, x) = acc;
    }
  }
  MatrixD out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp(reflect_index(y + i, h), x);
      out(y, x) = acc;
    }
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile of an empty set");
  if (!(q >= 0.0 && q <= 100.0)) throw ParameterError("percentile q must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SegMap threshold_above(const MatrixD& map, double threshold) {
  SegMap out(static_cast<int>(map.rows()), static_cast<int>(map.cols()));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out(y, x) = map(y, x) > threshold;
  }
  return out;
}

SegMap threshold_percentile(const MatrixD& map, double threshold) {
  if (threshold >= map.maxCoeff()) return threshold_above(map, threshold);
  SegMap out(static_cast<int>(map.rows()), static_cast<int>(map.cols()));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out(y, x) = map(y, x) >= threshold;
  }
  return out;
}

SegOutcome grad_map_from_gradient(const TensorD& gradient, int sample,
                                  const GradMapOptions& options) {
  MatrixD mag = MatrixD::Zero(gradient.h, gradient.w);
  for (int ch = 0; ch < gradient.c; ++ch) {
    for (int y = 0; y < gradient.h; ++y) {
      for (int x = 0; x < gradient.w; ++x) {
        const double g = gradient(sample, ch, y, x);
        mag(y, x) += g * g;
      }
    }
  }
  mag = mag.array().sqrt().matrix();
  SegOutcome out;
  const double rms = std::sqrt(mag.array().square().mean());
  if (!(rms > 0.0) || !std::isfinite(rms)) {
    out.map = SegMap(gradient.h, gradient.w);
    out.warning = true;
    out.message = "all-zero gradient";
    return out;
  }
  mag /= rms;
  out.map = threshold_above(gaussian_blur(mag, options.sigma), options.threshold);
  return out;
}

SegOutcome grad_map(const Network<float>& model, const TensorF& image, int filter,
                    const GradMapOptions& options) {
  if (filter < 0 || filter >= model.num_filters()) throw IndexError("filter out of range", filter);
  const TensorF grad = model.input_gradient(image, ScalarHead::pooled(filter));
  return grad_map_from_gradient(grad.cast<double>(), 0, options);
}

namespace {

MatrixD filter_activation(const ForwardTrace<float>& trace, int sample, int filter) {
  const auto& maps = trace.penultimate_maps;
  MatrixD a(maps.h, maps.w);
  for (int y = 0; y < maps.h; ++y) {
    for (int x = 0; x < maps.w; ++x) a(y, x) = maps(sample, filter, y, x);
  }
  return a;
}

MatrixD class_map(const ForwardTrace<float>& trace, const MatrixF& weights, int sample, int cls) {
  const auto& maps = trace.penultimate_maps;
  MatrixD m = MatrixD::Zero(maps.h, maps.w);
  for (int k = 0; k < maps.c; ++k) {
    const double wk = weights(cls, k);
    if (wk == 0.0) continue;
    for (int y = 0; y < maps.h; ++y) {
      for (int x = 0; x < maps.w; ++x) m(y, x) += wk * maps(sample, k, y, x);
    }
  }
  return m;
}

}  // namespace

std::vector<double> activation_thresholds(const Network<float>& model, const TensorF& images,
                                          double q) {
  const int k_filters = model.num_filters();
  std::vector<std::vector<double>> values(k_filters);
  constexpr int kBatch = 128;
  for (int start = 0; start < images.n; start += kBatch) {
    const int count = std::min(kBatch, images.n - start);
    const ForwardTrace<float> trace = model.forward_std(images.slice(start, count));
    const auto& maps = trace.penultimate_maps;
    for (int b = 0; b < count; ++b) {
      for (int k = 0; k < k_filters; ++k) {
        const float* p = maps.data.data() + maps.offset(b, k, 0, 0);
        values[k].insert(values[k].end(), p, p + maps.plane());
      }
    }
  }
  std::vector<double> out(k_filters);
  for (int k = 0; k < k_filters; ++k) out[k] = percentile(std::move(values[k]), q);
  return out;
}

SegMap activ_map_from_activation(const MatrixD& activation, int out_h, int out_w,
                                 double dataset_threshold) {
  return threshold_percentile(bilinear_resize(activation, out_h, out_w), dataset_threshold);
}

SegMap activ_map(const Network<float>& model, const TensorF& image, int filter,
                 const std::vector<double>& dataset_thresholds) {
  if (dataset_thresholds.size() != static_cast<std::size_t>(model.num_filters())) {
    throw ContractError("activation thresholds not computed for this model");
  }
  if (filter < 0 || filter >= model.num_filters()) throw IndexError("filter out of range", filter);
  const ForwardTrace<float> trace = model.forward_std(image.slice(0, 1));
  return activ_map_from_activation(filter_activation(trace, 0, filter), image.h, image.w,
                                   dataset_thresholds[filter]);
}

MatrixD cam_map(const Network<float>& model, const TensorF& image, int cls) {
  if (cls < 0 || cls >= model.num_classes()) throw IndexError("class out of range", cls);
  const ForwardTrace<float> trace = model.forward_std(image.slice(0, 1));
  return class_map(trace, model.linear_weights(), 0, cls);
}

SegMap cam_from_map(const MatrixD& map, int out_h, int out_w, double q) {
  const MatrixD resized = bilinear_resize(map, out_h, out_w);
  std::vector<double> values(resized.data(), resized.data() + resized.size());
  return threshold_percentile(resized, percentile(std::move(values), q));
}

SegMap cam(const Network<float>& model, const TensorF& image, int cls) {
  return cam_from_map(cam_map(model, image, cls), image.h, image.w);
}

double iou(const SegMap& a, const SegMap& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("segmentation maps differ in shape");
  }
  long long inter = 0;
  long long uni = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool x = a.values[i] != 0;
    const bool y = b.values[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double ap_n(const std::vector<double>& ious, double n_percent) {
  if (ious.empty()) throw ContractError("APn of an empty set");
  const double cut = n_percent / 100.0;
  long long hits = 0;
  for (double v : ious) hits += v >= cut;
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

std::string to_string(LocMethod method) {
  switch (method) {
    case LocMethod::GradMap:
      return "gradmap";
    case LocMethod::ActivMap:
      return "activmap";
    case LocMethod::CAM:
      return "cam";
  }
  return "cam";
}

LocMethod loc_method_from_string(const std::string& name) {
  if (name == "gradmap") return LocMethod::GradMap;
  if (name == "activmap") return LocMethod::ActivMap;
  if (name == "cam") return LocMethod::CAM;
  throw ConfigError("unknown localization method '" + name + "' (gradmap|activmap|cam)");
}

double default_ap_percent(LocMethod method) { return method == LocMethod::GradMap ? 20.0 : 30.0; }

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

LocalizationReport localization_metrics(const FilterIoUTable& table, int num_classes,
                                        double n_percent, const std::string& method) {
  LocalizationReport rep;
  rep.method = method;
  rep.n_percent = n_percent;
  std::vector<std::vector<double>> class_iou(num_classes), class_ap(num_classes);
  std::vector<double> all_iou, all_ap;
  for (std::size_t k = 0; k < table.cells.size(); ++k) {
    const auto& row = table.cells[k];
    if (static_cast<int>(row.size()) != num_classes) {
      throw DimensionError("filter " + std::to_string(k) + " has " + std::to_string(row.size()) +
                           " class cells, expected " + std::to_string(num_classes));
    }
    FilterScore fs;
    fs.filter = static_cast<int>(k);
    double best_ap = -1.0;
    for (int c = 0; c < num_classes; ++c) {
      if (row[c].empty()) {
        rep.warnings.push_back("filter " + std::to_string(k) + " class " + std::to_string(c) +
                               ": no samples, cell excluded");
        continue;
      }
      const double ap = ap_n(row[c], n_percent);
      if (ap > best_ap) {
        best_ap = ap;
        fs.assigned_class = c;
        fs.apn = ap;
        fs.avg_iou = mean(row[c]);
      }
    }
    rep.filters.push_back(fs);
    if (fs.assigned_class < 0) continue;
    class_iou[fs.assigned_class].push_back(fs.avg_iou);
    class_ap[fs.assigned_class].push_back(fs.apn);
    all_iou.push_back(fs.avg_iou);
    all_ap.push_back(fs.apn);
  }
  for (int c = 0; c < num_classes; ++c) {
    ClassScore cs;
    cs.cls = c;
    cs.count = static_cast<int>(class_iou[c].size());
    if (cs.count > 0) {
      cs.avg_iou = mean(class_iou[c]);
      cs.apn = mean(class_ap[c]);
    }
    rep.classes.push_back(cs);
  }
  if (!all_iou.empty()) {
    rep.avg_iou = mean(all_iou);
    rep.apn = mean(all_ap);
  } else {
    rep.warnings.push_back("no filter could be scored");
  }
  return rep;
}

LocalizationReport cam_metrics(const std::vector<double>& ious, const std::vector<int>& labels,
                               int num_classes, double n_percent) {
  if (ious.size() != labels.size()) throw DimensionError("IoU and label counts differ");
  LocalizationReport rep;
  rep.method = "cam";
  rep.n_percent = n_percent;
  std::vector<std::vector<double>> per_class(num_classes);
  for (std::size_t i = 0; i < ious.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw IndexError("label out of range", labels[i]);
    per_class[labels[i]].push_back(ious[i]);
  }
  for (int c = 0; c < num_classes; ++c) {
    ClassScore cs;
    cs.cls = c;
    cs.count = static_cast<int>(per_class[c].size());
    if (cs.count > 0) {
      cs.avg_iou = mean(per_class[c]);
      cs.apn = ap_n(per_class[c], n_percent);
    } else {
      rep.warnings.push_back("class " + std::to_string(c) + ": no samples");
    }
    rep.classes.push_back(cs);
  }
  if (!ious.empty()) {
    rep.avg_iou = mean(ious);
    rep.apn = ap_n(ious, n_percent);
  }
  return rep;
}

LocalizationReport evaluate_localization(const Network<float>& model, const LabeledImages& data,
                                         LocMethod method, std::optional<double> n_percent) {
  if (!data.has_masks()) throw ContractError("localization needs ground-truth masks");
  const double n_pct = n_percent.value_or(default_ap_percent(method));
  const int classes = model.num_classes();
  const int k_filters = model.num_filters();
  const int h = data.images.h;
  const int w = data.images.w;
  constexpr int kBatch = 128;

  if (method == LocMethod::CAM) {
    const MatrixF weights = model.linear_weights();
    std::vector<double> ious;
    ious.reserve(data.size());
    for (int start = 0; start < data.size(); start += kBatch) {
      const int count = std::min(kBatch, data.size() - start);
      const ForwardTrace<float> trace = model.forward_std(data.images.slice(start, count));
      for (int b = 0; b < count; ++b) {
        const int i = start + b;
        const SegMap pred = cam_from_map(class_map(trace, weights, b, data.labels[i]), h, w);
        ious.push_back(iou(pred, SegMap::from_mask(data.masks, i)));
      }
    }
    return cam_metrics(ious, data.labels, classes, n_pct);
  }

  FilterIoUTable table;
  table.cells.assign(k_filters, std::vector<std::vector<double>>(classes));
  std::vector<std::string> warnings;
  if (method == LocMethod::ActivMap) {
    const std::vector<double> thresholds = activation_thresholds(model, data.images);
    for (int start = 0; start < data.size(); start += kBatch) {
      const int count = std::min(kBatch, data.size() - start);
      const ForwardTrace<float> trace = model.forward_std(data.images.slice(start, count));
      for (int b = 0; b < count; ++b) {
        const int i = start + b;
        const SegMap truth = SegMap::from_mask(data.masks, i);
        for (int k = 0; k < k_filters; ++k) {
          const SegMap pred =
              activ_map_from_activation(filter_activation(trace, b, k), h, w, thresholds[k]);
          table.cells[k][data.labels[i]].push_back(iou(pred, truth));
        }
      }
    }
  } else {
    long long zero_grads = 0;
    for (int k = 0; k < k_filters; ++k) {
      for (int start = 0; start < data.size(); start += kBatch) {
        const int count = std::min(kBatch, data.size() - start);
        // Samples are independent, so one batched backward pass yields every
        // per-image gradient of filter k's pooled activation.
        const TensorD grad =
            model.input_gradient(data.images.slice(start, count), ScalarHead::pooled(k))
                .cast<double>();
        for (int b = 0; b < count; ++b) {
          const int i = start + b;
          const SegOutcome pred = grad_map_from_gradient(grad, b);
          zero_grads += pred.warning;
          table.cells[k][data.labels[i]].push_back(
              iou(pred.map, SegMap::from_mask(data.masks, i)));
        }
      }
    }
    if (zero_grads > 0) {
      warnings.push_back(std::to_string(zero_grads) + " all-zero gradient maps (empty segmentation)");
    }
  }
  LocalizationReport rep = localization_metrics(table, classes, n_pct, to_string(method));
  rep.warnings.insert(rep.warnings.end(), warnings.begin(), warnings.end());
  return rep;
}

}  // namespace csg
