// Command-line entry point: one verb per experiment family.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "csg/analysis.hpp"
#include "csg/checkpoint.hpp"
#include "csg/config.hpp"
#include "csg/io.hpp"
#include "csg/localization.hpp"
#include "csg/metrics.hpp"
#include "csg/report.hpp"
#include "csg/robustness.hpp"
#include "csg/training.hpp"

namespace fs = std::filesystem;
using namespace csg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

struct DivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path resolve_output(const std::string& out) {
  fs::path p(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("CSG_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  }
  return p;
}

// Resolved settings of the invocation, stored next to its outputs.
void write_manifest(const fs::path& out, const std::string& command, const Json& resolved) {
  Json m;
  m["command"] = command;
  m["resolved"] = resolved;
  fs::create_directories(out);
  write_file_atomic(out / "resolved_config.json", m.dump(2) + "\n");
}

struct DataOptions {
  std::string data_dir;
  std::string config_path;
  std::string split = "test";
};

void add_data_options(CLI::App* cmd, DataOptions& o) {
  cmd->add_option("--data", o.data_dir, "Native dataset directory (from gen-data)");
  cmd->add_option("--config", o.config_path, "Experiment config used when --data is absent");
  cmd->add_option("--split", o.split, "Which split to use")
      ->check(CLI::IsMember({"train", "test", "all"}));
}

DatasetBundle load_bundle(const DataOptions& o) {
  if (!o.data_dir.empty()) return load_dataset(o.data_dir);
  const ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  return load_dataset_for(cfg.dataset);
}

LabeledImages pick_split(const DatasetBundle& d, const std::string& split) {
  if (split == "train") return d.train();
  if (split == "all") return d.all();
  return d.test();
}

Json data_json(const DataOptions& o) {
  return {{"data", o.data_dir}, {"config", o.config_path}, {"split", o.split}};
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

Json load_metrics(const fs::path& dir) {
  const fs::path p = dir / "metrics.json";
  if (!fs::exists(p)) return Report::empty_metrics();
  return Json::parse(read_file(p));
}

// --- gen-data -------------------------------------------------------------

struct GenDataArgs {
  std::string config_path;
  std::string source;
  std::string path;
  int classes = -1;
  int train_per_class = -1;
  int test_per_class = -1;
  int image_size = -1;
  long long seed = -1;
  double train_ratio = -1;
  std::string out = "data/synthetic";
};

int run_gen_data(const GenDataArgs& a) {
  ExperimentConfig cfg = a.config_path.empty() ? ExperimentConfig{} : load_config(a.config_path);
  DatasetConfig& d = cfg.dataset;
  if (!a.source.empty()) d.source = a.source;
  if (!a.path.empty()) d.path = a.path;
  if (a.classes > 0) d.synthetic.num_classes = a.classes;
  if (a.train_per_class > 0) d.synthetic.train_per_class = a.train_per_class;
  if (a.test_per_class > 0) d.synthetic.test_per_class = a.test_per_class;
  if (a.image_size > 0) d.image_size = a.image_size;
  if (a.seed >= 0) d.synthetic.seed = d.seed = static_cast<std::uint64_t>(a.seed);
  if (a.train_ratio > 0) d.train_ratio = a.train_ratio;
  if (d.source == "native") throw ConfigError("gen-data needs source synthetic or directory");
  const fs::path out = resolve_output(a.out);
  const DatasetBundle bundle = load_dataset_for(d);
  save_dataset(bundle, out);
  write_manifest(out, "gen-data", to_json(cfg)["dataset"]);
  std::cout << "wrote " << bundle.size() << " images (" << bundle.num_classes() << " classes) to "
            << out.string() << "\n";
  return kExitOk;
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string mode;
  int epochs = -1;
  long long seed = -1;
  std::string out;
};

int run_train(const TrainArgs& a) {
  ExperimentConfig cfg = a.config_path.empty() ? ExperimentConfig{} : load_config(a.config_path);
  if (!a.mode.empty()) cfg.train.mode = train_mode_from_string(a.mode);
  if (a.epochs >= 0) cfg.train.epochs = a.epochs;
  if (a.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (!a.data_dir.empty()) {
    cfg.dataset.source = "native";
    cfg.dataset.path = a.data_dir;
  }
  cfg.validate();
  const DatasetBundle data = load_dataset_for(cfg.dataset);
  // The model's input and output shape follow the dataset.
  cfg.model.num_classes = data.num_classes();
  cfg.model.in_channels = data.images.c;
  cfg.model.image_size = data.images.h;
  cfg.dataset.image_size = data.images.h;
  cfg.validate();
  const fs::path out = resolve_output(cfg.output_dir);
  fs::create_directories(out);
  save_config(cfg, out / "config.json");
  write_manifest(out, "train", to_json(cfg));

  const LabeledImages train_set = data.train();
  const LabeledImages test_set = data.test();

  TrainHistory running;
  TrainHooks hooks;
  hooks.on_epoch_end = [&](const EpochRecord& rec, const Network<float>& model,
                           const GateMatrix& gate, bool boundary) {
    running.epochs.push_back(rec);
    std::cout << "epoch " << rec.epoch << " [" << (rec.csg ? "CSG" : "STD") << "] ce "
              << rec.std_ce << " train_acc " << rec.train_accuracy;
    if (rec.test_accuracy) std::cout << " test_acc " << *rec.test_accuracy;
    std::cout << " density " << rec.l1_density << "\n";
    if (boundary && rec.epoch + 1 < cfg.train.epochs) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d", rec.epoch);
      save_checkpoint(out / "checkpoints" / name, {model, gate, running, rec.epoch, Json::object()});
    }
  };
  const Network<float> init(cfg.model, cfg.train.seed);
  TrainResult result = train(init, train_set, &test_set, cfg.train, hooks);

  write_file_atomic(out / "history.jsonl", result.history.to_jsonl());
  Report report;
  Json training;
  training["mode"] = to_string(cfg.train.mode);
  training["status"] = result.status == TrainStatus::Completed ? "completed" : "diverged";
  training["diagnostic"] = result.diagnostic;
  training["epochs"] = result.history.epochs.size();
  report.metrics["training"] = training;
  report.tables.push_back(history_table(result.history));
  if (result.status == TrainStatus::Diverged) {
    emit_report(report, out);
    throw DivergedError(result.diagnostic);
  }
  const Evaluation eval = evaluate(result.model, test_set);
  report.metrics["evaluation"] = to_json(eval, data.class_names);
  const Inference inf = infer(result.model, test_set.images);
  const MIMatrix mi = mi_matrix(inf.pooled, test_set.labels, data.num_classes());
  report.metrics["mi"] = to_json(mi);
  report.metrics["gate"] = to_json(result.gate);
  report.heatmaps.push_back({"gate", result.gate.values().cast<double>(), 0.0, 1.0});
  report.heatmaps.push_back({"mi", mi.values, 0.0, std::max(1e-9, mi.values.maxCoeff())});
  const int final_epoch = result.history.epochs.empty() ? 0 : result.history.epochs.back().epoch;
  save_checkpoint(out / "checkpoint",
                  {result.model, result.gate, result.history, final_epoch,
                   Json{{"accuracy", eval.accuracy}, {"mis", mis(mi)},
                        {"l1_density", l1_density(result.gate)}}});
  emit_report(report, out);
  std::cout << "accuracy " << eval.accuracy << " MIS " << mis(mi) << " L1-density "
            << l1_density(result.gate) << "\n";
  return kExitOk;
}

// --- eval -----------------------------------------------------------------

struct ModelArgs {
  std::string checkpoint;
  DataOptions data;
  std::string out;
};

void add_model_options(CLI::App* cmd, ModelArgs& a, const std::string& default_out) {
  a.out = default_out;
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
  add_data_options(cmd, a.data);
  cmd->add_option("--out", a.out, "Output directory");
}

int run_eval(const ModelArgs& a) {
  const fs::path out = resolve_output(a.out);
  write_manifest(out, "eval", {{"checkpoint", a.checkpoint}, {"data", data_json(a.data)}});
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const DatasetBundle data = load_bundle(a.data);
  const LabeledImages set = pick_split(data, a.data.split);
  Report report;
  const Evaluation eval = evaluate(ckpt.model, set);
  report.metrics["evaluation"] = to_json(eval, data.class_names);
  const MIMatrix mi = mi_matrix(infer(ckpt.model, set.images).pooled, set.labels, data.num_classes());
  report.metrics["mi"] = to_json(mi);
  report.metrics["gate"] = to_json(ckpt.gate);
  MatrixD conf = eval.confusion.cast<double>();
  for (Eigen::Index r = 0; r < conf.rows(); ++r) {
    const double s = conf.row(r).sum();
    if (s > 0) conf.row(r) /= s;
  }
  report.heatmaps.push_back({"confusion", conf, 0.0, 1.0});
  report.tables.push_back(matrix_table("confusion", eval.confusion.cast<double>(), "true", "pred"));
  emit_report(report, out);
  std::cout << "accuracy " << eval.accuracy << " MIS " << mis(mi) << "\n";
  return kExitOk;
}

// --- analyze --------------------------------------------------------------

struct AnalyzeArgs {
  ModelArgs model;
  std::string kind;
  std::string compare;  // second checkpoint for side-by-side correlation
  int m = 0;
  std::vector<double> thresholds{0.1, 0.2, 0.3};
  double tau = 0.5;
  std::string classes = "0";
  double fraction = 0.1;
  bool use_gate = true;
  int clusters = 0;
  long long seed = 0;
};

int run_analyze(const AnalyzeArgs& a) {
  const fs::path out = resolve_output(a.model.out);
  write_manifest(out, "analyze " + a.kind,
                 {{"checkpoint", a.model.checkpoint}, {"data", data_json(a.model.data)},
                  {"m", a.m}, {"thresholds", a.thresholds}, {"tau", a.tau},
                  {"classes", a.classes}, {"fraction", a.fraction}, {"use_gate", a.use_gate},
                  {"clusters", a.clusters}, {"seed", a.seed}});
  const Checkpoint ckpt = load_checkpoint(a.model.checkpoint);
  const DatasetBundle data = load_bundle(a.model.data);
  const LabeledImages set = pick_split(data, a.model.data.split);
  const int classes = ckpt.model.num_classes();
  const int k_filters = ckpt.model.num_filters();
  Report report;
  report.metrics = load_metrics(out);

  if (a.kind == "mi") {
    const MIMatrix mi = mi_matrix(infer(ckpt.model, set.images).pooled, set.labels, classes);
    report.metrics["mi"] = to_json(mi);
    report.metrics["gate"] = to_json(ckpt.gate);
    report.heatmaps.push_back({"mi", mi.values, 0.0, std::max(1e-9, mi.values.maxCoeff())});
    report.heatmaps.push_back({"gate", ckpt.gate.values().cast<double>(), 0.0, 1.0});
    report.tables.push_back(matrix_table("mi", mi.values, "filter", "class"));
    std::cout << "MIS " << mis(mi) << "\n";
  } else if (a.kind == "correlation") {
    const CorrelationMatrix corr = correlation_matrix(ckpt.model.filter_weight_vectors());
    const int m = a.m > 0 ? a.m : std::max(1, k_filters / classes);
    const FilterGroups groups = top_activated_groups(ckpt.model, set, m);
    Json j;
    j["values"] = to_json(corr.values);
    j["diagonal_excluded"] = true;
    Json ratios = Json::object();
    for (double s : a.thresholds) ratios[std::to_string(s)] = ratio_above(corr, s);
    j["r_s"] = ratios;
    j["m"] = m;
    j["groups"] = groups;
    j["c_ic"] = inter_class_correlation(corr, groups, m);
    report.metrics["correlation"] = j;
    report.heatmaps.push_back({"correlation", corr.values, -1.0, 1.0});
    report.tables.push_back(matrix_table("correlation", corr.values, "filter", "filter"));
    std::cout << "C_IC " << j["c_ic"].get<double>() << "\n";
  } else if (a.kind == "similarity") {
    Json j;
    for (SampleSubset s : {SampleSubset::TP, SampleSubset::FN, SampleSubset::ALL}) {
      const SimilarityMatrix sim = similarity_matrix(ckpt.model, set, ckpt.gate, s);
      j[to_string(s)] = to_json(sim);
      MatrixD m(classes, classes);
      for (int y = 0; y < classes; ++y) {
        for (int c = 0; c < classes; ++c) {
          m(y, c) = sim.values[y][c].value_or(std::numeric_limits<double>::quiet_NaN());
        }
      }
      report.heatmaps.push_back({"similarity_" + to_string(s), m, 0.0, 1.0});
      report.tables.push_back(matrix_table("similarity_" + to_string(s), m, "class", "gate"));
    }
    report.metrics["similarity"] = j;
  } else if (a.kind == "mask") {
    const std::vector<int> targets = parse_int_list(a.classes);
    const Evaluation before = evaluate(ckpt.model, set);
    MaskResult masked =
        a.use_gate ? mask_filters(ckpt.model, ckpt.gate, targets, a.tau)
                   : mask_top_activated(ckpt.model, infer(ckpt.model, set.images).pooled,
                                        set.labels, targets, a.fraction);
    const Evaluation after = evaluate(masked.model, set);
    Json j;
    j["selection"] = a.use_gate ? "gate" : "activation";
    j["targets"] = targets;
    j["masked_filters"] = masked.masked_filters;
    j["warning"] = masked.warning ? Json(masked.message) : Json(nullptr);
    j["before"] = to_json(before, data.class_names);
    j["after"] = to_json(after, data.class_names);
    report.metrics["masking"] = j;
    report.tables.push_back(matrix_table("confusion_masked", after.confusion.cast<double>(), "true", "pred"));
    if (masked.warning) std::cerr << "warning: " << masked.message << "\n";
  } else if (a.kind == "cluster") {
    const int clusters = a.clusters > 0 ? a.clusters : classes;
    const MatrixD centers = kmeans_centers(infer(ckpt.model, set.images).pooled.cast<double>(),
                                           clusters, static_cast<std::uint64_t>(a.seed));
    report.metrics["clusters"] = {{"num_clusters", clusters}, {"centers", to_json(centers)}};
    report.heatmaps.push_back({"clusters", centers, 0.0, std::max(1e-9, centers.maxCoeff())});
    report.tables.push_back(matrix_table("clusters", centers, "center", "filter"));
  } else {
    throw ConfigError("unknown analysis '" + a.kind + "'");
  }
  emit_report(report, out);
  return kExitOk;
}

// --- localize -------------------------------------------------------------

struct LocalizeArgs {
  ModelArgs model;
  std::string method;
  double n_percent = -1;
  int overlays = 0;
};

int run_localize(const LocalizeArgs& a) {
  const fs::path out = resolve_output(a.model.out);
  const LocMethod method = loc_method_from_string(a.method);
  const double n_pct = a.n_percent > 0 ? a.n_percent : default_ap_percent(method);
  write_manifest(out, "localize " + a.method,
                 {{"checkpoint", a.model.checkpoint}, {"data", data_json(a.model.data)},
                  {"n_percent", n_pct}, {"overlays", a.overlays}});
  const Checkpoint ckpt = load_checkpoint(a.model.checkpoint);
  const DatasetBundle data = load_bundle(a.model.data);
  const LabeledImages set = pick_split(data, a.model.data.split);
  const LocalizationReport rep = evaluate_localization(ckpt.model, set, method, n_pct);
  Report report;
  report.metrics = load_metrics(out);
  report.metrics["localization"][rep.method] = to_json(rep);
  report.tables.push_back(localization_table(rep));
  for (int i = 0; i < std::min(a.overlays, set.size()); ++i) {
    const TensorF img = set.images.slice(i, 1);
    const SegMap truth = SegMap::from_mask(set.masks, i);
    SegMap pred;
    if (method == LocMethod::CAM) {
      pred = cam(ckpt.model, img, set.labels[i]);
    } else {
      // Show the filter assigned to this sample's class with the best APn.
      int best = 0;
      double best_ap = -1;
      for (const auto& f : rep.filters) {
        if (f.assigned_class == set.labels[i] && f.apn > best_ap) {
          best_ap = f.apn;
          best = f.filter;
        }
      }
      pred = method == LocMethod::GradMap
                 ? grad_map(ckpt.model, img, best).map
                 : activ_map(ckpt.model, img, best, activation_thresholds(ckpt.model, set.images));
    }
    report.overlays.push_back({"overlay_" + rep.method + "_" + std::to_string(i),
                               overlay_image(set.images, i, pred, &truth)});
  }
  emit_report(report, out);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << rep.method << " Avg-IoU " << rep.avg_iou << " AP" << n_pct << " " << rep.apn << "\n";
  return kExitOk;
}

// --- attack ---------------------------------------------------------------

struct AttackArgs {
  ModelArgs model;
  std::string method;
  double epsilon = 0.031;
  int iterations = 7;
  double step_size = -1;
  bool untargeted = false;
  long long seed = 0;
};

AttackConfig make_attack_config(const AttackArgs& a) {
  AttackConfig cfg;
  cfg.method = attack_method_from_string(a.method);
  cfg.epsilon = a.epsilon;
  cfg.iterations = a.iterations;
  if (a.step_size > 0) cfg.step_size = a.step_size;
  cfg.targeted = !a.untargeted;
  cfg.seed = static_cast<std::uint64_t>(a.seed);
  cfg.validate();
  return cfg;
}

int run_attack(const AttackArgs& a) {
  const fs::path out = resolve_output(a.model.out);
  const AttackConfig cfg = make_attack_config(a);
  const Json sidecar_base = {{"method", to_string(cfg.method)}, {"epsilon", cfg.epsilon},
                             {"iterations", cfg.iterations}, {"step_size", cfg.step()},
                             {"targeted", cfg.targeted}, {"seed", cfg.seed}};
  write_manifest(out, "attack " + a.method,
                 {{"checkpoint", a.model.checkpoint}, {"data", data_json(a.model.data)},
                  {"attack", sidecar_base}});
  const Checkpoint ckpt = load_checkpoint(a.model.checkpoint);
  const DatasetBundle data = load_bundle(a.model.data);
  const LabeledImages set = pick_split(data, a.model.data.split);
  const std::vector<int> targets =
      cfg.targeted ? choose_targets(set.labels, ckpt.model.num_classes(), cfg.seed) : set.labels;
  const TensorF adv = attack(ckpt.model, set.images, targets, cfg);
  const BudgetCheck budget = check_budget(set.images, adv);
  const double success =
      attack_success_rate(ckpt.model, set.images, adv, set.labels, targets, cfg.targeted);

  DatasetBundle adv_bundle;
  adv_bundle.images = adv;
  adv_bundle.labels = set.labels;
  adv_bundle.masks = set.masks;
  adv_bundle.class_names = data.class_names;
  // The native format requires both splits; mark every other sample as test.
  adv_bundle.is_test.resize(set.labels.size());
  for (std::size_t i = 0; i < set.labels.size(); ++i) adv_bundle.is_test[i] = i % 2;
  save_dataset(adv_bundle, out / "adversarial");
  Json sidecar = sidecar_base;
  sidecar["targets"] = targets;
  sidecar["source_split"] = a.model.data.split;
  write_file_atomic(out / "adversarial" / "attack.json", sidecar.dump(2) + "\n");

  Report report;
  report.metrics = load_metrics(out);
  report.metrics["attacks"][to_string(cfg.method)] = {{"success_rate", success},
                                                      {"max_abs_perturbation", budget.max_abs_diff},
                                                      {"in_range", budget.in_range},
                                                      {"within_budget", budget.within(cfg.epsilon)},
                                                      {"targeted", cfg.targeted}};
  emit_report(report, out);
  std::cout << to_string(cfg.method) << " success " << success << " max |dx| "
            << budget.max_abs_diff << "\n";
  return budget.within(cfg.epsilon) ? kExitOk : kExitFailure;
}

// --- detect ---------------------------------------------------------------

struct DetectArgs {
  ModelArgs model;
  std::string attacks = "fgsm,pgd";
  std::string train_sizes = "50,100,200";
  int test_per_class = 10;
  int repetitions = 5;
  int trees = 100;
  double epsilon = 0.031;
  int iterations = 7;
  bool untargeted = false;
  long long seed = 0;
};

int run_detect(const DetectArgs& a) {
  const fs::path out = resolve_output(a.model.out);
  write_manifest(out, "detect",
                 {{"checkpoint", a.model.checkpoint}, {"data", data_json(a.model.data)},
                  {"attacks", a.attacks}, {"train_sizes", a.train_sizes},
                  {"test_per_class", a.test_per_class}, {"repetitions", a.repetitions},
                  {"trees", a.trees}, {"epsilon", a.epsilon}, {"iterations", a.iterations},
                  {"untargeted", a.untargeted}, {"seed", a.seed}});
  const Checkpoint ckpt = load_checkpoint(a.model.checkpoint);
  const DatasetBundle data = load_bundle(a.model.data);
  const LabeledImages pool = pick_split(data, a.model.data.split);
  DetectionProtocol protocol;
  protocol.train_per_class = parse_int_list(a.train_sizes);
  protocol.test_per_class = a.test_per_class;
  protocol.repetitions = a.repetitions;
  protocol.num_trees = a.trees;
  protocol.seed = static_cast<std::uint64_t>(a.seed);

  std::vector<DetectionRow> rows;
  std::stringstream ss(a.attacks);
  std::string name;
  while (std::getline(ss, name, ',')) {
    AttackArgs aa;
    aa.method = name;
    aa.epsilon = a.epsilon;
    aa.iterations = a.iterations;
    aa.untargeted = a.untargeted;
    aa.seed = a.seed;
    const AttackConfig cfg = make_attack_config(aa);
    const std::vector<int> targets =
        cfg.targeted ? choose_targets(pool.labels, ckpt.model.num_classes(), cfg.seed) : pool.labels;
    const TensorF adv = attack(ckpt.model, pool.images, targets, cfg);
    for (auto& r : run_detection_protocol(ckpt.model, pool, adv, name, protocol)) {
      std::cout << r.attack << " train/class " << r.train_per_class << " mean error "
                << r.mean_error << "\n";
      rows.push_back(std::move(r));
    }
  }
  Report report;
  report.metrics = load_metrics(out);
  report.metrics["detection"] = {{"feature_dim", ckpt.model.architecture().detection_feature_dim()},
                                 {"rows", to_json(rows)}};
  report.tables.push_back(detection_table(rows));
  emit_report(report, out);
  return kExitOk;
}

// --- report ---------------------------------------------------------------

int run_report(const std::vector<std::string>& inputs, const std::string& out_arg) {
  const fs::path out = resolve_output(out_arg);
  write_manifest(out, "report", {{"inputs", inputs}});
  Report report;
  for (const auto& in : inputs) {
    const Json m = load_metrics(resolve_output(in));
    for (const auto& [key, value] : m.items()) {
      if (!value.is_object() || value.empty()) continue;
      report.metrics[key] = value;
    }
  }
  emit_report(report, out);
  std::cout << "merged " << inputs.size() << " result directories into " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-specific gate CNN training and analysis"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate or import a dataset");
  gen_cmd->add_option("--config", gen.config_path, "Experiment config supplying the dataset section");
  gen_cmd->add_option("--source", gen.source, "Dataset source")->check(CLI::IsMember({"synthetic", "directory"}));
  gen_cmd->add_option("--path", gen.path, "Class-per-subdirectory image folder");
  gen_cmd->add_option("--classes", gen.classes, "Number of shape classes");
  gen_cmd->add_option("--train-per-class", gen.train_per_class, "Training images per class");
  gen_cmd->add_option("--test-per-class", gen.test_per_class, "Test images per class");
  gen_cmd->add_option("--image-size", gen.image_size, "Image side in pixels");
  gen_cmd->add_option("--seed", gen.seed, "Generator or split seed");
  gen_cmd->add_option("--train-ratio", gen.train_ratio, "Training fraction per class (directory source)");
  gen_cmd->add_option("--out", gen.out, "Output dataset directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config_path, "Experiment config (JSON)");
  train_cmd->add_option("--data", tr.data_dir, "Native dataset directory");
  train_cmd->add_option("--mode", tr.mode, "Training mode")->check(CLI::IsMember({"csg", "std", "fixed-gate"}));
  train_cmd->add_option("--epochs", tr.epochs, "Override train.epochs");
  train_cmd->add_option("--seed", tr.seed, "Override train.seed");
  train_cmd->add_option("--out", tr.out, "Output directory");

  ModelArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy, confusion matrix and MI of a checkpoint");
  add_model_options(eval_cmd, ev, "runs/eval");

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Filter-level analyses");
  analyze_cmd->add_option("kind", an.kind)
      ->required()
      ->check(CLI::IsMember({"mi", "correlation", "similarity", "mask", "cluster"}));
  add_model_options(analyze_cmd, an.model, "runs/analysis");
  analyze_cmd->add_option("--m", an.m, "Group size for C_IC (default K / C)");
  analyze_cmd->add_option("--thresholds", an.thresholds, "Thresholds s for r_s");
  analyze_cmd->add_option("--tau", an.tau, "Gate threshold for masking");
  analyze_cmd->add_option("--classes", an.classes, "Comma-separated target classes");
  analyze_cmd->add_option("--fraction", an.fraction, "Masked fraction without a gate");
  analyze_cmd->add_flag("!--by-activation", an.use_gate, "Select filters by mean activation");
  analyze_cmd->add_option("--clusters", an.clusters, "Number of k-means centres");
  analyze_cmd->add_option("--seed", an.seed, "k-means seed");

  LocalizeArgs lo;
  auto* loc_cmd = app.add_subcommand("localize", "Localization with filter or class maps");
  loc_cmd->add_option("method", lo.method)
      ->required()
      ->check(CLI::IsMember({"gradmap", "activmap", "cam"}));
  add_model_options(loc_cmd, lo.model, "runs/localization");
  loc_cmd->add_option("--n-percent", lo.n_percent, "IoU cut for APn (default 20 or 30)");
  loc_cmd->add_option("--overlays", lo.overlays, "Number of overlay PNGs to write");

  AttackArgs at;
  auto* attack_cmd = app.add_subcommand("attack", "Generate adversarial examples");
  attack_cmd->add_option("method", at.method, "Attack method")->required()->check(CLI::IsMember({"fgsm", "pgd"}));
  add_model_options(attack_cmd, at.model, "runs/attack");
  attack_cmd->add_option("--epsilon", at.epsilon, "L-infinity budget");
  attack_cmd->add_option("--iterations", at.iterations, "PGD iterations");
  attack_cmd->add_option("--step-size", at.step_size, "PGD step (default 2.5 * epsilon / iterations)");
  attack_cmd->add_flag("--untargeted", at.untargeted, "Push away from the true class instead of toward a random target");
  attack_cmd->add_option("--seed", at.seed, "Target selection seed");

  DetectArgs de;
  auto* detect_cmd = app.add_subcommand("detect", "Adversarial detection protocol");
  add_model_options(detect_cmd, de.model, "runs/detection");
  de.model.data.split = "all";
  detect_cmd->add_option("--attacks", de.attacks, "Comma-separated attacks (fgsm,pgd)");
  detect_cmd->add_option("--train-sizes", de.train_sizes, "Training images per class");
  detect_cmd->add_option("--test-per-class", de.test_per_class, "Held-out images per class");
  detect_cmd->add_option("--repetitions", de.repetitions, "Resampled splits per train size");
  detect_cmd->add_option("--trees", de.trees, "Random forest size");
  detect_cmd->add_option("--epsilon", de.epsilon, "L-infinity budget");
  detect_cmd->add_option("--iterations", de.iterations, "PGD iterations");
  detect_cmd->add_flag("--untargeted", de.untargeted, "Push away from the true class instead of toward a random target");
  detect_cmd->add_option("--seed", de.seed, "Target and split seed");

  std::vector<std::string> report_inputs;
  std::string report_out = "runs/report";
  auto* report_cmd = app.add_subcommand("report", "Merge result directories into one report");
  report_cmd->add_option("inputs", report_inputs, "Result directories holding metrics.json")->required();
  report_cmd->add_option("--out", report_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (train_cmd->parsed()) return run_train(tr);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (analyze_cmd->parsed()) return run_analyze(an);
    if (loc_cmd->parsed()) return run_localize(lo);
    if (attack_cmd->parsed()) return run_attack(at);
    if (detect_cmd->parsed()) return run_detect(de);
    if (report_cmd->parsed()) return run_report(report_inputs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergedError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
