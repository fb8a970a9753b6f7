#include "csg/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "csg/training.hpp"

namespace csg {

std::string to_string(AttackMethod method) { return method == AttackMethod::PGD ? "pgd" : "fgsm"; }

AttackMethod attack_method_from_string(const std::string& name) {
  if (name == "fgsm") return AttackMethod::FGSM;
  if (name == "pgd") return AttackMethod::PGD;
  throw ConfigError("unknown attack '" + name + "' (fgsm|pgd)");
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("attack epsilon must be positive");
  if (method == AttackMethod::PGD) {
    if (iterations < 1) throw ConfigError("PGD iterations must be >= 1");
    if (!(step() > 0.0)) throw ConfigError("PGD step size must be positive");
  }
}

std::vector<int> choose_targets(std::span<const int> labels, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ParameterError("targeted attacks need >= 2 classes");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> other(0, num_classes - 2);
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = other(rng);
    out[i] = t >= labels[i] ? t + 1 : t;
  }
  return out;
}

namespace {

// One signed-gradient step from `current`, then projection onto the
// epsilon-ball around `clean` and onto [0, 1]. The result is nudged so that
// the budget holds exactly when measured in double precision.
void signed_step(const TensorF& clean, TensorF& current, const TensorF& grad, double step,
                 double epsilon, bool descend) {
  const auto dir = static_cast<float>(descend ? -step : step);
  const auto eps = static_cast<float>(epsilon);
  for (std::size_t i = 0; i < current.data.size(); ++i) {
    const float g = grad.data[i];
    const float s = g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
    const float x = clean.data[i];
    float v = current.data[i] + dir * s;
    v = std::clamp(v, x - eps, x + eps);
    v = std::clamp(v, 0.0f, 1.0f);
    while (static_cast<double>(v) - x > epsilon) v = std::nextafter(v, x);
    while (static_cast<double>(x) - v > epsilon) v = std::nextafter(v, x);
    current.data[i] = v;
  }
}

void check_targets(const TensorF& images, std::span<const int> targets, int classes) {
  if (static_cast<int>(targets.size()) != images.n) {
    throw DimensionError("one target per image required");
  }
  for (int t : targets) {
    if (t < 0 || t >= classes) throw IndexError("attack target out of range", t);
  }
}

}  // namespace

TensorF fgsm(const Network<float>& model, const TensorF& images, std::span<const int> targets,
             const AttackConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw ConfigError("attack epsilon must be positive");
  check_targets(images, targets, model.num_classes());
  const TensorF grad = model.input_gradient(
      images, ScalarHead::cross_entropy(std::vector<int>(targets.begin(), targets.end())));
  TensorF out = images;
  signed_step(images, out, grad, cfg.epsilon, cfg.epsilon, cfg.targeted);
  return out;
}

TensorF pgd_attack(const Network<float>& model, const TensorF& images,
                   std::span<const int> targets, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.method = AttackMethod::PGD;
  c.validate();
  check_targets(images, targets, model.num_classes());
  const ScalarHead head =
      ScalarHead::cross_entropy(std::vector<int>(targets.begin(), targets.end()));
  TensorF out = images;
  for (int it = 0; it < c.iterations; ++it) {
    const TensorF grad = model.input_gradient(out, head);
    signed_step(images, out, grad, c.step(), c.epsilon, c.targeted);
  }
  return out;
}

TensorF attack(const Network<float>& model, const TensorF& images, std::span<const int> targets,
               const AttackConfig& cfg) {
  constexpr int kBatch = 128;
  TensorF out = images;
  for (int start = 0; start < images.n; start += kBatch) {
    const int count = std::min(kBatch, images.n - start);
    const TensorF chunk = images.slice(start, count);
    const auto t = targets.subspan(start, count);
    const TensorF adv = cfg.method == AttackMethod::PGD ? pgd_attack(model, chunk, t, cfg)
                                                        : fgsm(model, chunk, t, cfg);
    std::copy(adv.data.begin(), adv.data.end(), out.sample(start));
  }
  return out;
}

BudgetCheck check_budget(const TensorF& clean, const TensorF& adversarial) {
  if (!clean.same_shape(adversarial)) throw DimensionError("adversarial batch shape mismatch");
  BudgetCheck out;
  for (std::size_t i = 0; i < clean.data.size(); ++i) {
    const double v = adversarial.data[i];
    out.max_abs_diff = std::max(out.max_abs_diff, std::abs(v - clean.data[i]));
    if (!(v >= 0.0 && v <= 1.0)) out.in_range = false;
  }
  return out;
}

double attack_success_rate(const Network<float>& model, const TensorF& clean,
                           const TensorF& adversarial, std::span<const int> labels,
                           std::span<const int> targets, bool targeted) {
  const std::vector<int> before = infer(model, clean).predictions;
  const std::vector<int> after = infer(model, adversarial).predictions;
  long long correct = 0;
  long long flipped = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (before[i] != labels[i]) continue;
    ++correct;
    flipped += targeted ? after[i] == targets[i] : after[i] != labels[i];
  }
  return correct == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(correct);
}

MatrixD extract_detection_features(const Network<float>& model, const TensorF& images) {
  return infer(model, images).layer_features.cast<double>();
}

DetectorResult train_detector(const DetectionSplit& split, std::uint64_t seed, int num_trees) {
  if (split.normal_train.rows() == 0 || split.adversarial_train.rows() == 0) {
    throw ContractError("detector training needs both normal and adversarial samples");
  }
  if (split.normal_test.rows() + split.adversarial_test.rows() == 0) {
    throw ContractError("detector evaluation set is empty");
  }
  auto stack = [](const MatrixD& a, const MatrixD& b, std::vector<int>& y) {
    MatrixD x(a.rows() + b.rows(), a.cols());
    x << a, b;
    y.assign(static_cast<std::size_t>(a.rows()), 0);
    y.insert(y.end(), static_cast<std::size_t>(b.rows()), 1);
    return x;
  };
  std::vector<int> y_train, y_test;
  const MatrixD x_train = stack(split.normal_train, split.adversarial_train, y_train);
  const MatrixD x_test = stack(split.normal_test, split.adversarial_test, y_test);
  DetectorResult out;
  out.forest = RandomForest({.num_trees = num_trees, .seed = seed});
  out.forest.fit(x_train, y_train);
  const std::vector<int> pred = out.forest.predict(x_test);
  long long wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != y_test[i];
  out.error_rate = static_cast<double>(wrong) / static_cast<double>(pred.size());
  return out;
}

std::vector<DetectionRow> run_detection_protocol(const Network<float>& model,
                                                 const LabeledImages& pool,
                                                 const TensorF& adversarial,
                                                 const std::string& attack_name,
                                                 const DetectionProtocol& protocol) {
  if (!pool.images.same_shape(adversarial)) {
    throw DimensionError("adversarial batch does not match the image pool");
  }
  const MatrixD clean_features = extract_detection_features(model, pool.images);
  const MatrixD adv_features = extract_detection_features(model, adversarial);
  const int classes = model.num_classes();
  std::vector<std::vector<int>> by_class(classes);
  for (int i = 0; i < pool.size(); ++i) by_class.at(pool.labels[i]).push_back(i);

  auto rows_of = [](const MatrixD& m, const std::vector<int>& idx) {
    MatrixD out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = m.row(idx[i]);
    return out;
  };

  std::vector<DetectionRow> rows;
  for (int per_class : protocol.train_per_class) {
    for (const auto& members : by_class) {
      if (static_cast<int>(members.size()) < per_class + protocol.test_per_class) {
        throw ParameterError("pool has " + std::to_string(members.size()) +
                             " images for a class; protocol needs " +
                             std::to_string(per_class + protocol.test_per_class));
      }
    }
    DetectionRow row;
    row.attack = attack_name;
    row.train_per_class = per_class;
    for (int rep = 0; rep < protocol.repetitions; ++rep) {
      std::mt19937_64 rng(protocol.seed + 1000003ULL * static_cast<std::uint64_t>(rep) +
                          static_cast<std::uint64_t>(per_class));
      std::vector<int> train_idx, test_idx;
      for (auto members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        train_idx.insert(train_idx.end(), members.begin(), members.begin() + per_class);
        test_idx.insert(test_idx.end(), members.begin() + per_class,
                        members.begin() + per_class + protocol.test_per_class);
      }
      const DetectionSplit split{rows_of(clean_features, train_idx),
                                 rows_of(adv_features, train_idx),
                                 rows_of(clean_features, test_idx),
                                 rows_of(adv_features, test_idx)};
      row.errors.push_back(train_detector(split, rng(), protocol.num_trees).error_rate);
    }
    double s = 0.0;
    for (double e : row.errors) s += e;
    row.mean_error = s / static_cast<double>(row.errors.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace csg
