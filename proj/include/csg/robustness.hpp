#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csg/dataset.hpp"
#include "csg/model.hpp"
#include "csg/random_forest.hpp"

namespace csg {

enum class AttackMethod { FGSM, PGD };
std::string to_string(AttackMethod method);
AttackMethod attack_method_from_string(const std::string& name);

struct AttackConfig {
  AttackMethod method = AttackMethod::FGSM;
  double epsilon = 0.031;
  int iterations = 7;
  std::optional<double> step_size;  // PGD; defaults to 2.5 * epsilon / iterations
  bool targeted = true;
  std::uint64_t seed = 0;

  double step() const { return step_size.value_or(2.5 * epsilon / iterations); }
  void validate() const;
};

// Per image a class != labels[i], uniformly among the other C - 1.
std::vector<int> choose_targets(std::span<const int> labels, int num_classes, std::uint64_t seed);

// `targets` are the attack targets in targeted mode, the true labels otherwise.
TensorF fgsm(const Network<float>& model, const TensorF& images, std::span<const int> targets,
             const AttackConfig& cfg);
TensorF pgd_attack(const Network<float>& model, const TensorF& images,
                   std::span<const int> targets, const AttackConfig& cfg);
TensorF attack(const Network<float>& model, const TensorF& images, std::span<const int> targets,
               const AttackConfig& cfg);

// Largest |x' - x| and whether every value lies in [0, 1].
struct BudgetCheck {
  double max_abs_diff = 0.0;
  bool in_range = true;
  bool within(double epsilon) const { return in_range && max_abs_diff <= epsilon; }
};
BudgetCheck check_budget(const TensorF& clean, const TensorF& adversarial);

// Fraction of initially correct samples whose prediction the attack changes
// (untargeted) or turns into the target (targeted).
double attack_success_rate(const Network<float>& model, const TensorF& clean,
                           const TensorF& adversarial, std::span<const int> labels,
                           std::span<const int> targets, bool targeted);

// GAP of every conv layer, concatenated in layer order.
MatrixD extract_detection_features(const Network<float>& model, const TensorF& images);

struct DetectionSplit {
  MatrixD normal_train;
  MatrixD adversarial_train;
  MatrixD normal_test;
  MatrixD adversarial_test;
};

struct DetectorResult {
  RandomForest forest;
  double error_rate = 0.0;
};

// Label 0 = normal, 1 = adversarial.
DetectorResult train_detector(const DetectionSplit& split, std::uint64_t seed, int num_trees = 100);

struct DetectionProtocol {
  std::vector<int> train_per_class{50, 100, 200};
  int test_per_class = 10;
  int repetitions = 5;
  int num_trees = 100;
  std::uint64_t seed = 0;
};

struct DetectionRow {
  std::string attack;
  int train_per_class = 0;
  std::vector<double> errors;  // one per repetition
  double mean_error = 0.0;
};

// Draws disjoint stratified train/test images per repetition; the detector
// sees the clean and attacked versions of the same images.
std::vector<DetectionRow> run_detection_protocol(const Network<float>& model,
                                                 const LabeledImages& pool,
                                                 const TensorF& adversarial,
                                                 const std::string& attack_name,
                                                 const DetectionProtocol& protocol);

}  // namespace csg
