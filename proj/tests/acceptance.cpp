// Reference-run acceptance checks. Prints one PASS/FAIL line per criterion
// and exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "csg/analysis.hpp"
#include "csg/checkpoint.hpp"
#include "csg/dataset.hpp"
#include "csg/io.hpp"
#include "csg/localization.hpp"
#include "csg/metrics.hpp"
#include "csg/robustness.hpp"
#include "csg/training.hpp"

using namespace csg;
namespace fs = std::filesystem;

namespace {

constexpr int kClasses = 4;
constexpr int kFilters = 16;
constexpr int kSeeds = 3;
// Minimum mean MIS gain over STD, in nats.
constexpr double kMisMargin = 0.05;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f = "%.4f") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(f, v[i]);
  return "[" + s + "]";
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct Run {
  TrainResult result;
  double accuracy = 0.0;
  double mis = 0.0;
  double density = 0.0;
  double worst_column_max = 0.0;  // largest |max_c G - 1| seen after any step
  double worst_range = 0.0;       // largest distance of an entry outside [0,1]
  long long steps_checked = 0;
  double seconds = 0.0;
};

Run train_run(const DatasetBundle& data, TrainMode mode, std::uint64_t seed) {
  Architecture arch;
  arch.num_classes = kClasses;
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  Run run;
  TrainHooks hooks;
  hooks.on_step = [&](int, int, bool csg, const GateMatrix& gate) {
    if (!csg) return;
    const MatrixF& g = gate.values();
    for (Eigen::Index k = 0; k < g.cols(); ++k) {
      run.worst_column_max = std::max(run.worst_column_max,
                                      std::abs(static_cast<double>(g.col(k).maxCoeff()) - 1.0));
    }
    run.worst_range = std::max({run.worst_range, static_cast<double>(-g.minCoeff()),
                                static_cast<double>(g.maxCoeff()) - 1.0});
    ++run.steps_checked;
  };
  const auto t0 = std::chrono::steady_clock::now();
  const LabeledImages train_set = data.train();
  const LabeledImages test_set = data.test();
  run.result = train(Network<float>(arch, seed), train_set, &test_set, cfg, hooks);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (run.result.status != TrainStatus::Completed) {
    std::printf("  training diverged: %s\n", run.result.diagnostic.c_str());
    return run;
  }
  run.accuracy = evaluate(run.result.model, test_set).accuracy;
  const Inference inf = infer(run.result.model, test_set.images);
  run.mis = mis(mi_matrix(inf.pooled, test_set.labels, kClasses));
  run.density = l1_density(run.result.gate);
  std::printf("  %s seed %llu: acc %.4f MIS %.4f density %.4f (%.0f s)\n", to_string(mode).c_str(),
              static_cast<unsigned long long>(seed), run.accuracy, run.mis, run.density, run.seconds);
  std::fflush(stdout);
  return run;
}

std::vector<double> recalls(const Network<float>& model, const LabeledImages& data) {
  return evaluate(model, data).recall();
}

// Indispensability on one seed: gate masking for CSG, activation masking for STD.
Outcome masking(const Run& csg, const Run& std_run, const DatasetBundle& data) {
  const LabeledImages test = data.test();
  const LabeledImages train_set = data.train();
  const auto base_csg = recalls(csg.result.model, test);
  const auto base_std = recalls(std_run.result.model, test);
  const Inference std_inf = infer(std_run.result.model, train_set.images);
  bool ok = true;
  std::string detail;
  for (int c = 0; c < kClasses; ++c) {
    const std::vector<int> target{c};
    const MaskResult gm = mask_filters(csg.result.model, csg.result.gate, target, 0.5);
    const auto r = recalls(gm.model, test);
    double other = 0.0;
    for (int o = 0; o < kClasses; ++o) {
      if (o != c) other = std::max(other, base_csg[o] - r[o]);
    }
    const double own = base_csg[c] - r[c];
    const MaskResult am = mask_top_activated(std_run.result.model, std_inf.pooled, train_set.labels, target, 0.1);
    const double std_drop = std::abs(base_std[c] - recalls(am.model, test)[c]);
    ok = ok && own > 0.5 && other < 0.1 && std_drop <= 0.2;
    detail += " c" + std::to_string(c) + ":own " + fmt("%.2f", own) + " other " + fmt("%.2f", other) +
              " std " + fmt("%.2f", std_drop);
  }
  return {ok, detail};
}

struct Structure {
  double cic = 0.0;
  double r01 = 0.0;
};

Structure structure(const Network<float>& model, const LabeledImages& test) {
  const CorrelationMatrix corr = correlation_matrix(model.filter_weight_vectors());
  const int m = kFilters / kClasses;
  const FilterGroups groups = top_activated_groups(model, test, m);
  return {inter_class_correlation(corr, groups, m), ratio_above(corr, 0.1)};
}

// MI estimator oracle, same construction as the unit test.
Outcome mi_oracle() {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> small(0.0, 0.01), unit(0.0, 1.0);
  std::vector<std::uint8_t> y(2000);
  std::vector<double> x(2000), z(2000);
  for (int i = 0; i < 2000; ++i) {
    y[i] = static_cast<std::uint8_t>(i % 2);
    x[i] = y[i] + small(rng);
    z[i] = unit(rng);
  }
  const double dep = mi_continuous_discrete(x, y, 3);
  const double ind = mi_continuous_discrete(z, y, 3);
  const bool ok = std::abs(dep - std::log(2.0)) < 0.05 * std::log(2.0) && std::abs(ind) < 0.05;
  return {ok, "dependent " + fmt("%.4f", dep) + " (ln2 0.6931), independent " + fmt("%.4f", ind)};
}

// Exhaustive 4x4 pixel-counting oracle plus the CAM identity on trained models.
Outcome localization_oracle(const std::vector<const Network<float>*>& models, const LabeledImages& test) {
  std::mt19937_64 rng(3);
  bool exact = true;
  std::vector<double> ious;
  for (int t = 0; t < 500; ++t) {
    SegMap a(4, 4), b(4, 4);
    for (auto& v : a.values) v = rng() % 2;
    for (auto& v : b.values) v = rng() % 3 == 0;
    int inter = 0, uni = 0;
    for (int i = 0; i < 16; ++i) {
      inter += a.values[i] && b.values[i];
      uni += a.values[i] || b.values[i];
    }
    const double want = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
    exact = exact && iou(a, b) == want;
    ious.push_back(want);
  }
  // Avg-IoU and APn of the same list by counting.
  long long hits = 0;
  for (double v : ious) hits += v >= 0.2;
  const std::vector<int> labels(ious.size(), 0);
  const LocalizationReport rep = cam_metrics(ious, labels, 1, 20);
  exact = exact && rep.apn == static_cast<double>(hits) / static_cast<double>(ious.size());
  exact = exact && std::abs(rep.avg_iou - mean(ious)) < 1e-12;

  double worst = 0.0;
  for (const auto* model : models) {
    const auto trace = model->forward_std(test.images.slice(0, 8));
    for (int b = 0; b < 8; ++b) {
      for (int c = 0; c < kClasses; ++c) {
        const MatrixD m = cam_map(*model, test.images.slice(b, 1), c);
        worst = std::max(worst, std::abs(m.mean() - (trace.logits(b, c) - model->linear_bias()(c))));
      }
    }
  }
  return {exact && worst < 1e-5, std::string("pixel counting ") + (exact ? "exact" : "MISMATCH") +
                                     ", CAM identity max error " + fmt("%.2e", worst)};
}

struct AttackStats {
  bool budget_ok = true;
  double fgsm_success = 0.0;
  double pgd_success = 0.0;
  TensorF fgsm_adv;
  TensorF pgd_adv;
};

AttackStats attacks(const Network<float>& model, const LabeledImages& pool) {
  AttackStats s;
  AttackConfig cfg;
  cfg.epsilon = 0.031;
  cfg.iterations = 7;
  const std::vector<int> targets = choose_targets(pool.labels, kClasses, 0);
  cfg.method = AttackMethod::FGSM;
  s.fgsm_adv = attack(model, pool.images, targets, cfg);
  cfg.method = AttackMethod::PGD;
  s.pgd_adv = attack(model, pool.images, targets, cfg);
  for (const TensorF* adv : {&s.fgsm_adv, &s.pgd_adv}) {
    s.budget_ok = s.budget_ok && check_budget(pool.images, *adv).within(cfg.epsilon);
    for (std::size_t i = 0; i < adv->data.size(); ++i) {
      const float v = adv->data[i];
      s.budget_ok = s.budget_ok && v >= 0.0f && v <= 1.0f &&
                    std::abs(static_cast<double>(v) - pool.images.data[i]) <= cfg.epsilon;
    }
  }
  s.fgsm_success = attack_success_rate(model, pool.images, s.fgsm_adv, pool.labels, targets, true);
  s.pgd_success = attack_success_rate(model, pool.images, s.pgd_adv, pool.labels, targets, true);
  return s;
}

double detection_error(const Network<float>& model, const LabeledImages& pool, const TensorF& adv,
                       const std::string& name) {
  DetectionProtocol p;
  p.train_per_class = {50};
  p.test_per_class = 10;
  p.repetitions = 5;
  return run_detection_protocol(model, pool, adv, name, p).at(0).mean_error;
}

}  // namespace

int main() {
  SyntheticSpec spec;
  spec.num_classes = kClasses;
  spec.train_per_class = 500;
  spec.test_per_class = 100;
  spec.image_size = 32;
  spec.seed = 0;
  const DatasetBundle data = generate_synthetic_shapes(spec);
  const LabeledImages test = data.test();

  std::printf("reference runs: C=%d K=%d, %d train / %d test, 60 epochs, %d seeds\n", kClasses, kFilters,
              data.train().size(), test.size(), kSeeds);
  std::vector<Run> csg, std_runs;
  for (int s = 0; s < kSeeds; ++s) {
    csg.push_back(train_run(data, TrainMode::CSG, static_cast<std::uint64_t>(s)));
    std_runs.push_back(train_run(data, TrainMode::STD, static_cast<std::uint64_t>(s)));
  }
  bool all_completed = true;
  for (const auto& r : csg) all_completed = all_completed && r.result.status == TrainStatus::Completed;
  for (const auto& r : std_runs) all_completed = all_completed && r.result.status == TrainStatus::Completed;

  std::map<int, Outcome> results;
  auto per_seed = [&](auto get, const std::vector<Run>& runs) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(get(r));
    return v;
  };

  {
    double col = 0, range = 0;
    long long steps = 0;
    for (const auto& r : csg) {
      col = std::max(col, r.worst_column_max);
      range = std::max(range, r.worst_range);
      steps += r.steps_checked;
    }
    results[1] = {steps > 0 && col <= 1e-6 && range <= 0.0,
                  std::to_string(steps) + " gated steps, max |colmax-1| " + fmt("%.2e", col) +
                      ", max range violation " + fmt("%.2e", range)};
  }
  {
    const auto d = per_seed([](const Run& r) { return r.density; }, csg);
    const double hi = 16.0 / (kClasses * kFilters) + 0.02;
    bool ok = all_completed;
    for (double v : d) ok = ok && v >= 1.0 / kClasses - 1e-9 && v <= hi;
    results[2] = {ok, "density " + join(d) + " in [0.25, " + fmt("%.2f", hi) + "]"};
  }
  {
    const auto a = per_seed([](const Run& r) { return r.mis; }, csg);
    const auto b = per_seed([](const Run& r) { return r.mis; }, std_runs);
    bool ok = all_completed;
    std::vector<double> gap;
    for (int s = 0; s < kSeeds; ++s) {
      ok = ok && a[s] > b[s];
      gap.push_back(a[s] - b[s]);
    }
    ok = ok && mean(gap) > kMisMargin;
    results[3] = {ok, "MIS csg " + join(a) + " std " + join(b) + ", mean gap " + fmt("%.4f", mean(gap)) +
                          " (> " + fmt("%.2f", kMisMargin) + ")"};
  }
  {
    const auto a = per_seed([](const Run& r) { return r.accuracy; }, csg);
    const auto b = per_seed([](const Run& r) { return r.accuracy; }, std_runs);
    const double diff = std::abs(mean(a) - mean(b));
    results[4] = {all_completed && diff <= 0.02,
                  "acc csg " + join(a) + " std " + join(b) + ", |mean diff| " + fmt("%.4f", diff)};
  }
  {
    bool ok = all_completed;
    std::string detail;
    for (int s = 0; s < kSeeds && all_completed; ++s) {
      const Outcome o = masking(csg[s], std_runs[s], data);
      ok = ok && o.pass;
      detail += " | seed " + std::to_string(s) + o.detail;
    }
    results[5] = {ok, detail.empty() ? "training incomplete" : detail.substr(3)};
  }
  {
    bool ok = all_completed;
    std::string detail;
    for (int s = 0; s < kSeeds && all_completed; ++s) {
      const SimilarityMatrix tp = similarity_matrix(csg[s].result.model, test, csg[s].result.gate, SampleSubset::TP);
      ok = ok && tp.diagonally_dominant();
      detail += std::string(s ? ", " : "") + "seed " + std::to_string(s) + (tp.diagonally_dominant() ? " yes" : " no");
    }
    results[6] = {ok, "TP similarity diagonally dominant: " + detail};
  }
  {
    std::vector<double> cic_c, cic_s, r_c, r_s;
    for (int s = 0; s < kSeeds && all_completed; ++s) {
      const Structure a = structure(csg[s].result.model, test);
      const Structure b = structure(std_runs[s].result.model, test);
      cic_c.push_back(a.cic);
      cic_s.push_back(b.cic);
      r_c.push_back(a.r01);
      r_s.push_back(b.r01);
    }
    const bool ok = all_completed && mean(cic_c) < 0.7 * mean(cic_s) && mean(r_c) < mean(r_s);
    results[7] = {ok, "C_IC csg " + join(cic_c) + " std " + join(cic_s) + ", r_0.1 csg " + join(r_c) +
                          " std " + join(r_s)};
  }
  results[8] = mi_oracle();
  {
    std::vector<const Network<float>*> models;
    for (const auto& r : csg) models.push_back(&r.result.model);
    for (const auto& r : std_runs) models.push_back(&r.result.model);
    results[9] = localization_oracle(models, test);
  }
  {
    std::vector<double> a, b;
    for (int s = 0; s < kSeeds && all_completed; ++s) {
      a.push_back(evaluate_localization(csg[s].result.model, test, LocMethod::CAM).avg_iou);
      b.push_back(evaluate_localization(std_runs[s].result.model, test, LocMethod::CAM).avg_iou);
    }
    results[10] = {all_completed && mean(a) >= mean(b),
                   "CAM Avg-IoU csg " + join(a) + " std " + join(b)};
  }
  {
    bool budget = all_completed, stronger = all_completed;
    std::vector<double> fg, pg;
    std::vector<double> det_fc, det_fs, det_pc, det_ps;
    for (int s = 0; s < kSeeds && all_completed; ++s) {
      for (const Run* r : {&csg[s], &std_runs[s]}) {
        const AttackStats st = attacks(r->result.model, test);
        budget = budget && st.budget_ok;
        stronger = stronger && st.pgd_success >= st.fgsm_success;
        fg.push_back(st.fgsm_success);
        pg.push_back(st.pgd_success);
        const bool is_csg = r == &csg[s];
        (is_csg ? det_fc : det_fs).push_back(detection_error(r->result.model, test, st.fgsm_adv, "fgsm"));
        (is_csg ? det_pc : det_ps).push_back(detection_error(r->result.model, test, st.pgd_adv, "pgd"));
      }
    }
    results[11] = {budget && stronger, std::string("budget ") + (budget ? "exact" : "VIOLATED") +
                                           ", success fgsm " + join(fg, "%.3f") + " pgd " + join(pg, "%.3f")};
    const bool ok = all_completed && mean(det_fc) <= mean(det_fs) && mean(det_pc) <= mean(det_ps);
    results[12] = {ok, "detector error fgsm csg " + join(det_fc, "%.3f") + " std " + join(det_fs, "%.3f") +
                           ", pgd csg " + join(det_pc, "%.3f") + " std " + join(det_ps, "%.3f")};
  }
  {
    const Run again = train_run(data, TrainMode::CSG, 0);
    const fs::path root = fs::temp_directory_path() / "csg_acceptance_determinism";
    fs::remove_all(root);
    auto ckpt_bytes = [&](const Run& r, const std::string& name) {
      const fs::path dir = root / name;
      save_checkpoint(dir, {r.result.model, r.result.gate, r.result.history, 59, Json::object()});
      std::map<std::string, std::string> files;
      for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
      }
      return files;
    };
    const bool history = again.result.history.to_jsonl() == csg[0].result.history.to_jsonl();
    const bool ckpt = ckpt_bytes(again, "a") == ckpt_bytes(csg[0], "b");
    fs::remove_all(root);
    results[13] = {history && ckpt, std::string("history ") + (history ? "identical" : "DIFFERS") +
                                        ", checkpoint " + (ckpt ? "identical" : "DIFFERS")};
  }

  const char* names[] = {"",
                         "gate constraint after every gated step",
                         "L1-density convergence",
                         "class-specificity (MIS)",
                         "accuracy preservation",
                         "filter indispensability",
                         "TP similarity diagonal dominance",
                         "orthogonality and redundancy",
                         "MI estimator oracle",
                         "localization math oracle",
                         "CAM localization benefit",
                         "attack contracts",
                         "detection benefit",
                         "determinism"};
  int failed = 0;
  for (const auto& [id, o] : results) {
    std::printf("%s [%2d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, names[id], o.detail.c_str());
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failed, results.size());
  return failed == 0 ? 0 : 1;
}
