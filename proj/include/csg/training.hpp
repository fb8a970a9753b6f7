#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csg/dataset.hpp"
#include "csg/gates.hpp"
#include "csg/model.hpp"

namespace csg {

enum class TrainMode { CSG, STD, FixedGate };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

// Update rule for the network weights; the gate always takes plain
// gradient steps.
enum class Optimizer { SGD, Adam };
std::string to_string(Optimizer opt);
Optimizer optimizer_from_string(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::CSG;
  double lambda1 = 1.0;
  double lambda2 = 10.0;
  std::optional<double> g;  // defaults to K
  Psi psi = Psi::L1;
  double smooth_l1_beta = 1.0;
  int period = 3;
  int csg_epochs_per_period = 0;
  int warmup_epochs = 10;  // leading epochs forced onto the STD path
  int epochs = 60;
  Optimizer optimizer = Optimizer::SGD;
  double lr_theta = 0.01;
  double lr_gate = 0.01;
  double momentum = 0.9;  // SGD momentum, Adam beta1
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  int lr_step_epochs = 0;  // 0 disables step decay
  double lr_step_gamma = 0.1;
  bool lr_cosine = false;  // per-epoch half-cosine from 1 toward 0, on top of step decay
  int batch_size = 64;
  std::uint64_t seed = 0;
  // Fixed-gate mode block layout; per_class == 0 derives K / C with the
  // remainder shared.
  int fixed_per_class = 0;
  int fixed_shared = 0;
  int mis_every = 0;  // 0: no intermediate MIS snapshots

  void validate(int num_filters) const;
  SparsityPenaltySpec penalty(int num_filters) const;
  // Whether epoch `e` of this configuration runs the gated path.
  bool csg_epoch(int e) const;
  bool operator==(const TrainConfig&) const = default;
};

// Algorithm schedule: epoch e runs the gated path iff e mod period <= n.
bool is_csg_epoch(int epoch, int period, int n);

// Mean negative log-probability of the true class, in nats. Probabilities are
// clamped at 1e-12.
double cross_entropy(const MatrixF& probabilities, std::span<const int> labels);

struct StepLosses {
  double std_ce = 0.0;
  double csg_ce = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  int correct = 0;  // STD-path correct predictions in the batch
  bool finite = true;
  int reseeded_columns = 0;
};

struct EpochRecord {
  int epoch = 0;
  bool csg = false;
  double std_ce = 0.0;
  double csg_ce = 0.0;
  double penalty = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  double l1_density = 0.0;
  std::optional<double> mis;
  int reseeded_columns = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  // One JSON object per line, one line per epoch.
  std::string to_jsonl() const;
  static TrainHistory from_jsonl(const std::string& text);
};

enum class TrainStatus { Completed, Diverged };

// Holds model, gate and optimizer state for the alternating scheme.
class Trainer {
 public:
  Trainer(Network<float> model, GateMatrix gate, TrainConfig cfg);

  // Gated path: lambda1 * CE(gated) + lambda2 * d(||G||_1, g). One gradient
  // step on G followed by projection (skipped when G is frozen), then one
  // optimizer step on the network weights against the same loss.
  StepLosses csg_step(const TensorF& images, std::span<const int> labels);
  // Ungated path: CE only; G untouched.
  StepLosses std_step(const TensorF& images, std::span<const int> labels);

  const Network<float>& model() const { return model_; }
  Network<float>& model() { return model_; }
  const GateMatrix& gate() const { return gate_; }
  const TrainConfig& config() const { return cfg_; }
  void set_lr_scale(double scale) { lr_scale_ = scale; }

 private:
  void update_weights(const Gradients<float>& grads);
  int update_gate(const MatrixD& grad);

  Network<float> model_;
  GateMatrix gate_;
  TrainConfig cfg_;
  SparsityPenaltySpec penalty_;
  std::vector<std::vector<float>> velocity_;  // SGD velocity or Adam first moment
  std::vector<std::vector<float>> second_;    // Adam second moment
  long long steps_ = 0;
  double lr_scale_ = 1.0;
};

struct TrainHooks {
  // After every optimizer step.
  std::function<void(int epoch, int batch, bool csg, const GateMatrix&)> on_step;
  // After every epoch; `phase_boundary` is true on the last epoch of a gated
  // run of epochs (and on the final epoch).
  std::function<void(const EpochRecord&, const Network<float>&, const GateMatrix&,
                     bool phase_boundary)>
      on_epoch_end;
};

struct TrainResult {
  Network<float> model;
  GateMatrix gate;
  TrainHistory history;
  TrainStatus status = TrainStatus::Completed;
  std::string diagnostic;
};

// Gate used when training starts: fixed block gate in FixedGate mode,
// otherwise the projected 0.5 initialization.
GateMatrix initial_gate_for(const TrainConfig& cfg, int num_classes, int num_filters);

TrainResult train(Network<float> model, const LabeledImages& train_set,
                  const LabeledImages* test_set, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});
// Starts from a caller-provided gate (e.g. a resumed or frozen one).
TrainResult train(Network<float> model, GateMatrix gate, const LabeledImages& train_set,
                  const LabeledImages* test_set, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

struct Inference {
  MatrixF logits;                 // N x C
  MatrixF pooled;                 // N x K
  MatrixF layer_features;         // N x sum(C_l): GAP of every conv layer
  std::vector<int> predictions;
};

Inference infer(const Network<float>& model, const TensorF& images, int batch_size = 128);

struct Evaluation {
  double accuracy = 0.0;
  MatrixX<long long> confusion;  // [true][predicted]
  std::vector<int> predictions;
  // Recall per class; NaN for classes absent from the data.
  std::vector<double> recall() const;
};

// STD-path accuracy and confusion matrix. Throws ContractError when empty.
Evaluation evaluate(const Network<float>& model, const LabeledImages& data,
                    int batch_size = 128);

}  // namespace csg
