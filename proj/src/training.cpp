#include "csg/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "csg/metrics.hpp"

namespace csg {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::CSG:
      return "csg";
    case TrainMode::STD:
      return "std";
    case TrainMode::FixedGate:
      return "fixed-gate";
  }
  return "csg";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "csg") return TrainMode::CSG;
  if (name == "std") return TrainMode::STD;
  if (name == "fixed-gate" || name == "fixed_gate") return TrainMode::FixedGate;
  throw ConfigError("unknown training mode '" + name + "' (expected csg, std, fixed-gate)");
}

std::string to_string(Optimizer opt) { return opt == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "sgd") return Optimizer::SGD;
  if (name == "adam") return Optimizer::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd, adam)");
}

void TrainConfig::validate(int num_filters) const {
  if (period < 1) throw ConfigError("period must be >= 1");
  if (csg_epochs_per_period < 0 || csg_epochs_per_period >= period) {
    throw ConfigError("csg_epochs_per_period must satisfy 0 <= n < period");
  }
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lambda1 < 0 || lambda2 < 0) throw ConfigError("lambda1 and lambda2 must be >= 0");
  if (!(lr_theta >= 0) || !(lr_gate >= 0)) throw ConfigError("learning rates must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0,1)");
  if (!(adam_beta2 >= 0 && adam_beta2 < 1)) throw ConfigError("adam_beta2 must lie in [0,1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (lr_step_epochs < 0) throw ConfigError("lr_step_epochs must be >= 0");
  try {
    (void)penalty(num_filters);
  } catch (const ConstraintError& e) {
    throw ConfigError(e.what());
  }
}

SparsityPenaltySpec TrainConfig::penalty(int num_filters) const {
  return SparsityPenaltySpec(g.value_or(static_cast<double>(num_filters)), psi, num_filters,
                             smooth_l1_beta);
}

bool is_csg_epoch(int epoch, int period, int n) { return epoch % period <= n; }

bool TrainConfig::csg_epoch(int e) const {
  return mode != TrainMode::STD && e >= warmup_epochs &&
         is_csg_epoch(e, period, csg_epochs_per_period);
}

double cross_entropy(const MatrixF& probabilities, std::span<const int> labels) {
  if (probabilities.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw DimensionError("probabilities and labels disagree on batch size");
  }
  if (labels.empty()) throw ContractError("cross-entropy of an empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = probabilities.row(static_cast<Eigen::Index>(b));
    const double sum = row.template cast<double>().sum();
    if (std::abs(sum - 1.0) > 1e-5) {
      throw ContractError("probability row " + std::to_string(b) + " sums to " +
                          std::to_string(sum));
    }
    const int y = labels[b];
    if (y < 0 || y >= probabilities.cols()) {
      throw IndexError("label " + std::to_string(y) + " out of range", y);
    }
    total -= std::log(std::max(static_cast<double>(row(y)), 1e-12));
  }
  return total / static_cast<double>(labels.size());
}

namespace {

// (softmax - onehot) / B
MatrixF ce_logit_grad(const MatrixF& probs, std::span<const int> labels) {
  MatrixF d = probs;
  for (std::size_t b = 0; b < labels.size(); ++b) d(static_cast<Eigen::Index>(b), labels[b]) -= 1.0f;
  d /= static_cast<float>(labels.size());
  return d;
}

bool is_weight(const Parameter<float>& p) { return p.shape.size() > 1; }

}  // namespace

Trainer::Trainer(Network<float> model, GateMatrix gate, TrainConfig cfg)
    : model_(std::move(model)),
      gate_(std::move(gate)),
      cfg_(std::move(cfg)),
      penalty_(cfg_.penalty(model_.num_filters())) {
  cfg_.validate(model_.num_filters());
  if (gate_.num_classes() != model_.num_classes() || gate_.num_filters() != model_.num_filters()) {
    throw DimensionError("gate shape does not match the model's C x K");
  }
  velocity_.reserve(model_.parameters().size());
  for (const auto& p : model_.parameters()) velocity_.emplace_back(p.value.size(), 0.0f);
  if (cfg_.optimizer == Optimizer::Adam) second_ = velocity_;
}

void Trainer::update_weights(const Gradients<float>& grads) {
  const float lr = static_cast<float>(cfg_.lr_theta * lr_scale_);
  const float mu = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  const bool adam = cfg_.optimizer == Optimizer::Adam;
  ++steps_;
  float step = lr;
  if (adam) {
    // Bias corrections folded into the step size.
    const double c1 = 1.0 - std::pow(cfg_.momentum, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(steps_));
    step = static_cast<float>(cfg_.lr_theta * lr_scale_ * std::sqrt(c2) / c1);
  }
  const float b2 = static_cast<float>(cfg_.adam_beta2);
  const float eps = static_cast<float>(cfg_.adam_eps);
  auto& params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].value;
    auto& vel = velocity_[i];
    const auto& g = grads.params[i];
    const bool decay = wd > 0.0f && is_weight(params[i]);
    if (adam) {
      auto& sq = second_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const float grad = decay ? g[j] + wd * value[j] : g[j];
        vel[j] = mu * vel[j] + (1.0f - mu) * grad;
        sq[j] = b2 * sq[j] + (1.0f - b2) * grad * grad;
        value[j] -= step * vel[j] / (std::sqrt(sq[j]) + eps);
      }
    } else {
      for (std::size_t j = 0; j < value.size(); ++j) {
        const float grad = decay ? g[j] + wd * value[j] : g[j];
        vel[j] = mu * vel[j] + grad;
        value[j] -= lr * vel[j];
      }
    }
  }
}

int Trainer::update_gate(const MatrixD& grad) {
  MatrixF raw = gate_.values();
  const double lr = cfg_.lr_gate;
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    raw.data()[i] = static_cast<float>(raw.data()[i] - lr * grad.data()[i]);
  }
  int reseeded = 0;
  for (;;) {
    try {
      gate_ = project(raw, gate_.frozen());
      return reseeded;
    } catch (const DegenerateColumnError& e) {
      // A column pushed entirely non-positive restarts from uniform.
      raw.col(e.column()).setConstant(0.5f);
      ++reseeded;
    }
  }
}

StepLosses Trainer::csg_step(const TensorF& images, std::span<const int> labels) {
  StepLosses out;
  const MatrixF rows = select_gate_rows(gate_, labels);
  Network<float>::Tape tape;
  try {
    tape = model_.forward(images, &rows);
  } catch (const NumericError&) {
    out.finite = false;
    out.total = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const MatrixF probs = softmax_rows(tape.trace.logits);
  MatrixF std_logits = tape.trace.pooled_features * model_.linear_weights().transpose();
  std_logits.rowwise() += model_.linear_bias().transpose();
  const MatrixF std_probs = softmax_rows(std_logits);
  const auto preds = argmax_rows(std_logits);

  out.csg_ce = cross_entropy(probs, labels);
  out.std_ce = cross_entropy(std_probs, labels);
  const PenaltyResult pen = sparsity_penalty(gate_, penalty_);
  out.penalty = pen.value;
  out.total = cfg_.lambda1 * out.csg_ce + cfg_.lambda2 * out.penalty;
  for (std::size_t b = 0; b < labels.size(); ++b) out.correct += preds[b] == labels[b];
  if (!std::isfinite(out.total)) {
    out.finite = false;
    return out;
  }

  MatrixF d_logits = ce_logit_grad(probs, labels);
  if (cfg_.lambda1 != 1.0) d_logits *= static_cast<float>(cfg_.lambda1);
  const Gradients<float> grads = model_.backward(tape, d_logits);

  if (!gate_.frozen()) {
    MatrixD gate_grad = cfg_.lambda2 * pen.grad;
    for (std::size_t b = 0; b < labels.size(); ++b) {
      gate_grad.row(labels[b]) += grads.gate_rows.row(static_cast<Eigen::Index>(b)).cast<double>();
    }
    out.reseeded_columns = update_gate(gate_grad);
  }
  update_weights(grads);
  return out;
}

StepLosses Trainer::std_step(const TensorF& images, std::span<const int> labels) {
  StepLosses out;
  Network<float>::Tape tape;
  try {
    tape = model_.forward(images, nullptr);
  } catch (const NumericError&) {
    out.finite = false;
    out.total = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const MatrixF probs = softmax_rows(tape.trace.logits);
  const auto preds = argmax_rows(tape.trace.logits);
  out.std_ce = cross_entropy(probs, labels);
  out.total = out.std_ce;
  for (std::size_t b = 0; b < labels.size(); ++b) out.correct += preds[b] == labels[b];
  if (!std::isfinite(out.total)) {
    out.finite = false;
    return out;
  }
  update_weights(model_.backward(tape, ce_logit_grad(probs, labels)));
  return out;
}

GateMatrix initial_gate_for(const TrainConfig& cfg, int num_classes, int num_filters) {
  if (cfg.mode == TrainMode::FixedGate) {
    int per_class = cfg.fixed_per_class;
    int shared = cfg.fixed_shared;
    if (per_class == 0) {
      per_class = num_filters / num_classes;
      shared = num_filters - per_class * num_classes;
    }
    return fixed_gate(num_classes, num_filters, per_class, shared);
  }
  return GateMatrix::initial(num_classes, num_filters);
}

TrainResult train(Network<float> model, const LabeledImages& train_set,
                  const LabeledImages* test_set, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  GateMatrix gate = initial_gate_for(cfg, model.num_classes(), model.num_filters());
  return train(std::move(model), std::move(gate), train_set, test_set, cfg, hooks);
}

TrainResult train(Network<float> model, GateMatrix gate, const LabeledImages& train_set,
                  const LabeledImages* test_set, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  if (train_set.size() == 0) throw ContractError("training set is empty");
  {
    std::vector<int> per_class(model.num_classes(), 0);
    for (int y : train_set.labels) {
      if (y < 0 || y >= model.num_classes()) throw IndexError("label out of range", y);
      ++per_class[y];
    }
    for (int c = 0; c < model.num_classes(); ++c) {
      if (per_class[c] == 0) {
        throw ContractError("class " + std::to_string(c) + " has no training samples");
      }
    }
  }

  Trainer trainer(std::move(model), std::move(gate), cfg);
  TrainResult result;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> order(static_cast<std::size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), 0);

  int consecutive_bad = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool csg = cfg.csg_epoch(epoch);
    double lr_scale = 1.0;
    if (cfg.lr_step_epochs > 0) lr_scale = std::pow(cfg.lr_step_gamma, epoch / cfg.lr_step_epochs);
    if (cfg.lr_cosine) lr_scale *= 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
    trainer.set_lr_scale(lr_scale);
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.csg = csg;
    double std_sum = 0, csg_sum = 0, pen_sum = 0;
    long long correct = 0, seen = 0;
    int batches = 0;
    for (int start = 0, batch = 0; start < train_set.size(); start += cfg.batch_size, ++batch) {
      const int count = std::min(cfg.batch_size, train_set.size() - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + count);
      const TensorF images = train_set.images.gather(idx);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_set.labels[idx[i]];

      const StepLosses losses =
          csg ? trainer.csg_step(images, labels) : trainer.std_step(images, labels);
      if (!losses.finite) {
        if (++consecutive_bad >= 3) {
          std::ostringstream msg;
          msg << "diverged at epoch " << epoch << ", batch " << batch
              << ": std_ce=" << losses.std_ce << " csg_ce=" << losses.csg_ce
              << " penalty=" << losses.penalty;
          result.status = TrainStatus::Diverged;
          result.diagnostic = msg.str();
          result.model = trainer.model();
          result.gate = trainer.gate();
          return result;
        }
        continue;
      }
      consecutive_bad = 0;
      std_sum += losses.std_ce;
      csg_sum += losses.csg_ce;
      pen_sum += losses.penalty;
      correct += losses.correct;
      seen += count;
      rec.reseeded_columns += losses.reseeded_columns;
      ++batches;
      if (hooks.on_step) hooks.on_step(epoch, batch, csg, trainer.gate());
    }
    if (batches > 0) {
      rec.std_ce = std_sum / batches;
      rec.csg_ce = csg ? csg_sum / batches : 0.0;
      rec.penalty = pen_sum / batches;
      rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    }
    if (!csg) rec.penalty = sparsity_penalty(trainer.gate(), trainer.config().penalty(trainer.model().num_filters())).value;
    rec.l1_density = l1_density(trainer.gate());
    // The last update may have overflowed; the next steps then report the
    // divergence, so a non-finite evaluation just leaves the fields empty.
    if (test_set && test_set->size() > 0) {
      try {
        rec.test_accuracy = evaluate(trainer.model(), *test_set).accuracy;
        if (cfg.mis_every > 0 && (epoch + 1) % cfg.mis_every == 0) {
          const Inference inf = infer(trainer.model(), test_set->images);
          rec.mis = mis(mi_matrix(inf.pooled, test_set->labels, trainer.model().num_classes()));
        }
      } catch (const NumericError&) {
        rec.test_accuracy.reset();
        rec.mis.reset();
      }
    }
    result.history.epochs.push_back(rec);

    const bool last = epoch + 1 == cfg.epochs;
    const bool next_csg = !last && cfg.csg_epoch(epoch + 1);
    const bool boundary = last || (csg && !next_csg);
    if (hooks.on_epoch_end) hooks.on_epoch_end(rec, trainer.model(), trainer.gate(), boundary);
  }
  if (consecutive_bad > 0) {
    result.status = TrainStatus::Diverged;
    result.diagnostic = "last " + std::to_string(consecutive_bad) + " steps were non-finite";
  }
  result.model = trainer.model();
  result.gate = trainer.gate();
  return result;
}

std::string TrainHistory::to_jsonl() const {
  std::string out;
  for (const auto& r : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["path"] = r.csg ? "CSG" : "STD";
    j["std_ce"] = r.std_ce;
    j["csg_ce"] = r.csg ? nlohmann::ordered_json(r.csg_ce) : nlohmann::ordered_json(nullptr);
    j["penalty"] = r.penalty;
    j["train_accuracy"] = r.train_accuracy;
    j["test_accuracy"] = r.test_accuracy ? nlohmann::ordered_json(*r.test_accuracy)
                                         : nlohmann::ordered_json(nullptr);
    j["l1_density"] = r.l1_density;
    j["mis"] = r.mis ? nlohmann::ordered_json(*r.mis) : nlohmann::ordered_json(nullptr);
    j["reseeded_columns"] = r.reseeded_columns;
    out += j.dump();
    out += '\n';
  }
  return out;
}

TrainHistory TrainHistory::from_jsonl(const std::string& text) {
  TrainHistory h;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.csg = j.at("path").get<std::string>() == "CSG";
    r.std_ce = j.at("std_ce").get<double>();
    if (!j.at("csg_ce").is_null()) r.csg_ce = j.at("csg_ce").get<double>();
    r.penalty = j.at("penalty").get<double>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    if (!j.at("test_accuracy").is_null()) r.test_accuracy = j.at("test_accuracy").get<double>();
    r.l1_density = j.at("l1_density").get<double>();
    if (!j.at("mis").is_null()) r.mis = j.at("mis").get<double>();
    r.reseeded_columns = j.value("reseeded_columns", 0);
    h.epochs.push_back(r);
  }
  return h;
}

Inference infer(const Network<float>& model, const TensorF& images, int batch_size) {
  const int n = images.n;
  const auto& arch = model.architecture();
  Inference out;
  out.logits.resize(n, model.num_classes());
  out.pooled.resize(n, model.num_filters());
  out.layer_features.resize(n, arch.detection_feature_dim());
  out.predictions.resize(static_cast<std::size_t>(n));
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    const ForwardTrace<float> trace = model.forward_std(images.slice(start, count));
    out.logits.middleRows(start, count) = trace.logits;
    out.pooled.middleRows(start, count) = trace.pooled_features;
    int col = 0;
    for (const auto& layer : trace.per_layer_pooled) {
      out.layer_features.block(start, col, count, layer.cols()) = layer;
      col += static_cast<int>(layer.cols());
    }
    const auto preds = argmax_rows(trace.logits);
    std::copy(preds.begin(), preds.end(), out.predictions.begin() + start);
  }
  return out;
}

std::vector<double> Evaluation::recall() const {
  std::vector<double> out(static_cast<std::size_t>(confusion.rows()));
  for (Eigen::Index c = 0; c < confusion.rows(); ++c) {
    const long long total = confusion.row(c).sum();
    out[static_cast<std::size_t>(c)] =
        total == 0 ? std::numeric_limits<double>::quiet_NaN()
                   : static_cast<double>(confusion(c, c)) / static_cast<double>(total);
  }
  return out;
}

Evaluation evaluate(const Network<float>& model, const LabeledImages& data, int batch_size) {
  if (data.size() == 0) throw ContractError("cannot evaluate on an empty dataset");
  const Inference inf = infer(model, data.images, batch_size);
  Evaluation ev;
  ev.confusion = MatrixX<long long>::Zero(model.num_classes(), model.num_classes());
  long long correct = 0;
  for (int i = 0; i < data.size(); ++i) {
    const int y = data.labels[i];
    const int p = inf.predictions[i];
    ++ev.confusion(y, p);
    correct += y == p;
  }
  ev.accuracy = static_cast<double>(correct) / data.size();
  ev.predictions = inf.predictions;
  return ev;
}

}  // namespace csg
