#include "csg/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "csg/io.hpp"

namespace csg {

Json Report::empty_metrics() {
  Json j = Json::object();
  for (const char* key : {"training", "evaluation", "mi", "gate", "correlation", "similarity",
                          "masking", "clusters", "localization", "attacks", "detection"}) {
    j[key] = Json::object();
  }
  return j;
}

namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json to_json(const MatrixD& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Json to_json(const Evaluation& eval, const std::vector<std::string>& class_names) {
  Json j;
  j["accuracy"] = eval.accuracy;
  j["class_names"] = class_names;
  j["confusion"] = Json::array();
  for (Eigen::Index i = 0; i < eval.confusion.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < eval.confusion.cols(); ++c) row.push_back(eval.confusion(i, c));
    j["confusion"].push_back(row);
  }
  Json recall = Json::array();
  for (double r : eval.recall()) recall.push_back(std::isfinite(r) ? Json(r) : Json(nullptr));
  j["recall"] = recall;
  return j;
}

Json to_json(const MIMatrix& mi) {
  Json j;
  j["mis"] = mis(mi);
  j["sample_count"] = mi.sample_count;
  j["values"] = to_json(mi.values);
  return j;
}

Json to_json(const GateMatrix& gate) {
  Json j;
  j["C"] = gate.num_classes();
  j["K"] = gate.num_filters();
  j["frozen"] = gate.frozen();
  j["l1_density"] = l1_density(gate);
  j["values"] = to_json(MatrixD(gate.values().cast<double>()));
  return j;
}

Json to_json(const SimilarityMatrix& s) {
  Json j;
  j["subset"] = to_string(s.subset);
  j["diagonally_dominant"] = s.diagonally_dominant();
  j["values"] = Json::array();
  for (const auto& row : s.values) {
    Json r = Json::array();
    for (const auto& v : row) r.push_back(optional_json(v));
    j["values"].push_back(r);
  }
  return j;
}

Json to_json(const LocalizationReport& rep) {
  Json j;
  j["method"] = rep.method;
  j["n_percent"] = rep.n_percent;
  j["avg_iou"] = rep.avg_iou;
  j["apn"] = rep.apn;
  j["filters"] = Json::array();
  for (const auto& f : rep.filters) {
    j["filters"].push_back({{"filter", f.filter},
                            {"assigned_class", f.assigned_class},
                            {"avg_iou", f.avg_iou},
                            {"apn", f.apn}});
  }
  j["classes"] = Json::array();
  for (const auto& c : rep.classes) {
    j["classes"].push_back({{"class", c.cls},
                            {"count", c.count},
                            {"avg_iou", optional_json(c.avg_iou)},
                            {"apn", optional_json(c.apn)}});
  }
  j["warnings"] = rep.warnings;
  return j;
}

Json to_json(const std::vector<DetectionRow>& rows) {
  Json j = Json::array();
  for (const auto& r : rows) {
    j.push_back({{"attack", r.attack},
                 {"train_per_class", r.train_per_class},
                 {"errors", r.errors},
                 {"mean_error", r.mean_error}});
  }
  return j;
}

CsvTable matrix_table(const std::string& name, const MatrixD& m, const std::string& row_prefix,
                      const std::string& col_prefix) {
  CsvTable t;
  t.name = name;
  t.header.push_back("");
  for (Eigen::Index j = 0; j < m.cols(); ++j) t.header.push_back(col_prefix + std::to_string(j));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row{row_prefix + std::to_string(i)};
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(fmt(m(i, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable localization_table(const LocalizationReport& rep) {
  CsvTable t;
  t.name = "localization_" + rep.method;
  const std::string ap = "ap" + fmt(rep.n_percent);
  t.header = {"scope", "index", "count", "avg_iou", ap};
  for (const auto& c : rep.classes) {
    t.rows.push_back({"class", std::to_string(c.cls), std::to_string(c.count),
                      c.avg_iou ? fmt(*c.avg_iou) : "", c.apn ? fmt(*c.apn) : ""});
  }
  for (const auto& f : rep.filters) {
    t.rows.push_back({"filter", std::to_string(f.filter), std::to_string(f.assigned_class),
                      fmt(f.avg_iou), fmt(f.apn)});
  }
  t.rows.push_back({"overall", "", "", fmt(rep.avg_iou), fmt(rep.apn)});
  return t;
}

CsvTable detection_table(const std::vector<DetectionRow>& rows) {
  CsvTable t;
  t.name = "detection";
  t.header = {"attack", "train_per_class", "mean_error", "errors"};
  for (const auto& r : rows) {
    std::string errs;
    for (double e : r.errors) errs += (errs.empty() ? "" : ";") + fmt(e);
    t.rows.push_back({r.attack, std::to_string(r.train_per_class), fmt(r.mean_error), errs});
  }
  return t;
}

CsvTable history_table(const TrainHistory& history) {
  CsvTable t;
  t.name = "history";
  t.header = {"epoch", "path", "std_ce", "csg_ce", "penalty", "train_accuracy", "test_accuracy",
              "l1_density", "mis"};
  for (const auto& r : history.epochs) {
    t.rows.push_back({std::to_string(r.epoch), r.csg ? "CSG" : "STD", fmt(r.std_ce),
                      r.csg ? fmt(r.csg_ce) : "", fmt(r.penalty), fmt(r.train_accuracy),
                      r.test_accuracy ? fmt(*r.test_accuracy) : "", fmt(r.l1_density),
                      r.mis ? fmt(*r.mis) : ""});
  }
  return t;
}

Image8 render_heatmap(const Heatmap& h, int cell) {
  Image8 img;
  img.width = static_cast<int>(h.values.cols()) * cell;
  img.height = static_cast<int>(h.values.rows()) * cell;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  const double span = h.hi > h.lo ? h.hi - h.lo : 1.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = h.values(y / cell, x / cell);
      const double t = std::isfinite(v) ? std::clamp((v - h.lo) / span, 0.0, 1.0) : 0.0;
      // White-to-dark-blue ramp; non-finite cells are grey.
      std::uint8_t rgb[3] = {static_cast<std::uint8_t>(255 * (1 - 0.9 * t)),
                             static_cast<std::uint8_t>(255 * (1 - 0.75 * t)),
                             static_cast<std::uint8_t>(255 * (1 - 0.45 * t))};
      if (!std::isfinite(v)) rgb[0] = rgb[1] = rgb[2] = 160;
      std::copy(rgb, rgb + 3, img.pixels.begin() + (static_cast<std::size_t>(y) * img.width + x) * 3);
    }
  }
  return img;
}

Image8 overlay_image(const TensorF& images, int index, const SegMap& predicted, const SegMap* truth,
                     int upscale) {
  Image8 img;
  img.width = images.w * upscale;
  img.height = images.h * upscale;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  auto on_edge = [&](const SegMap& m, int y, int x) {
    if (!m(y, x)) return false;
    const int dy[4] = {-1, 1, 0, 0};
    const int dx[4] = {0, 0, -1, 1};
    for (int d = 0; d < 4; ++d) {
      const int yy = y + dy[d];
      const int xx = x + dx[d];
      if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width || !m(yy, xx)) return true;
    }
    return false;
  };
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int sy = y / upscale;
      const int sx = x / upscale;
      double rgb[3];
      for (int ch = 0; ch < 3; ++ch) rgb[ch] = images(index, std::min(ch, images.c - 1), sy, sx);
      if (predicted(sy, sx)) {
        rgb[0] = 0.5 * rgb[0] + 0.5;
        rgb[1] *= 0.5;
        rgb[2] *= 0.5;
      }
      if (truth && on_edge(*truth, sy, sx)) {
        rgb[0] = 0.0;
        rgb[1] = 1.0;
        rgb[2] = 0.0;
      }
      for (int ch = 0; ch < 3; ++ch) {
        img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + ch] =
            static_cast<std::uint8_t>(std::lround(255 * std::clamp(rgb[ch], 0.0, 1.0)));
      }
    }
  }
  return img;
}

void emit_report(const Report& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create output directory " + out_dir.string());
  }
  write_file_atomic(out_dir / "metrics.json", report.metrics.dump(2) + "\n");
  for (const auto& t : report.tables) {
    std::string csv;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        csv += (i ? "," : "") + csv_escape(cells[i]);
      }
      csv += '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    write_file_atomic(out_dir / (t.name + ".csv"), csv);
  }
  for (const auto& h : report.heatmaps) write_png(out_dir / (h.name + ".png"), render_heatmap(h));
  for (const auto& o : report.overlays) write_png(out_dir / (o.name + ".png"), o.image);
}

}  // namespace csg
