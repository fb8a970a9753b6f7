#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "csg/analysis.hpp"
#include "csg/config.hpp"
#include "csg/image_io.hpp"
#include "csg/localization.hpp"
#include "csg/metrics.hpp"
#include "csg/robustness.hpp"
#include "csg/training.hpp"

namespace csg {

struct CsvTable {
  std::string name;  // file stem
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct Heatmap {
  std::string name;  // file stem
  MatrixD values;
  double lo = 0.0;
  double hi = 1.0;
};

struct Overlay {
  std::string name;
  Image8 image;
};

// Everything a command wants written. `metrics` always carries every
// canonical section, empty until filled.
struct Report {
  Json metrics = empty_metrics();
  std::vector<CsvTable> tables;
  std::vector<Heatmap> heatmaps;
  std::vector<Overlay> overlays;

  static Json empty_metrics();
};

// Writes metrics.json, <table>.csv, <heatmap>.png and <overlay>.png.
void emit_report(const Report& report, const std::filesystem::path& out_dir);

Json to_json(const MatrixD& m);
Json to_json(const Evaluation& eval, const std::vector<std::string>& class_names);
Json to_json(const MIMatrix& mi);
Json to_json(const GateMatrix& gate);
Json to_json(const SimilarityMatrix& s);
Json to_json(const LocalizationReport& rep);
Json to_json(const std::vector<DetectionRow>& rows);

CsvTable matrix_table(const std::string& name, const MatrixD& m, const std::string& row_prefix,
                      const std::string& col_prefix);
CsvTable localization_table(const LocalizationReport& rep);
CsvTable detection_table(const std::vector<DetectionRow>& rows);
CsvTable history_table(const TrainHistory& history);

// RGB image with the predicted region tinted and the truth contour drawn.
Image8 overlay_image(const TensorF& images, int index, const SegMap& predicted,
                     const SegMap* truth, int upscale = 4);
Image8 render_heatmap(const Heatmap& h, int cell = 16);

}  // namespace csg
