#include "csg/config.hpp"

#include <set>

#include "csg/io.hpp"

namespace csg {

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type: " + j.at(key).dump());
  }
}

}  // namespace

Json to_json(const Architecture& arch) {
  Json j;
  j["in_channels"] = arch.in_channels;
  j["image_size"] = arch.image_size;
  j["conv_channels"] = arch.conv_channels;
  j["num_classes"] = arch.num_classes;
  j["input_shift"] = arch.input_shift;
  j["input_scale"] = arch.input_scale;
  return j;
}

Architecture architecture_from_json(const Json& j) {
  reject_unknown(j, {"in_channels", "image_size", "conv_channels", "num_classes", "input_shift", "input_scale"},
                 "model");
  Architecture a;
  read(j, "in_channels", a.in_channels, "model");
  read(j, "image_size", a.image_size, "model");
  read(j, "conv_channels", a.conv_channels, "model");
  read(j, "num_classes", a.num_classes, "model");
  read(j, "input_shift", a.input_shift, "model");
  read(j, "input_scale", a.input_scale, "model");
  return a;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["mode"] = to_string(c.mode);
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["g"] = c.g ? Json(*c.g) : Json(nullptr);
  j["psi"] = to_string(c.psi);
  j["smooth_l1_beta"] = c.smooth_l1_beta;
  j["period"] = c.period;
  j["csg_epochs_per_period"] = c.csg_epochs_per_period;
  j["warmup_epochs"] = c.warmup_epochs;
  j["epochs"] = c.epochs;
  j["optimizer"] = to_string(c.optimizer);
  j["lr_theta"] = c.lr_theta;
  j["lr_gate"] = c.lr_gate;
  j["momentum"] = c.momentum;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["lr_step_epochs"] = c.lr_step_epochs;
  j["lr_step_gamma"] = c.lr_step_gamma;
  j["lr_cosine"] = c.lr_cosine;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["fixed_per_class"] = c.fixed_per_class;
  j["fixed_shared"] = c.fixed_shared;
  j["mis_every"] = c.mis_every;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  const std::string w = "train";
  reject_unknown(j,
                 {"mode", "lambda1", "lambda2", "g", "psi", "smooth_l1_beta", "period",
                  "csg_epochs_per_period", "warmup_epochs", "epochs", "optimizer", "lr_theta", "lr_gate", "momentum",
                  "adam_beta2", "adam_eps", "weight_decay", "lr_step_epochs", "lr_step_gamma", "lr_cosine", "batch_size", "seed",
                  "fixed_per_class", "fixed_shared", "mis_every"},
                 w);
  TrainConfig c;
  std::string mode = to_string(c.mode);
  read(j, "mode", mode, w);
  c.mode = train_mode_from_string(mode);
  read(j, "lambda1", c.lambda1, w);
  read(j, "lambda2", c.lambda2, w);
  if (j.contains("g") && !j.at("g").is_null()) {
    double g = 0.0;
    read(j, "g", g, w);
    c.g = g;
  }
  std::string psi = to_string(c.psi);
  read(j, "psi", psi, w);
  try {
    c.psi = psi_from_string(psi);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  read(j, "smooth_l1_beta", c.smooth_l1_beta, w);
  read(j, "period", c.period, w);
  read(j, "csg_epochs_per_period", c.csg_epochs_per_period, w);
  read(j, "warmup_epochs", c.warmup_epochs, w);
  read(j, "epochs", c.epochs, w);
  std::string opt = to_string(c.optimizer);
  read(j, "optimizer", opt, w);
  c.optimizer = optimizer_from_string(opt);
  read(j, "lr_theta", c.lr_theta, w);
  read(j, "lr_gate", c.lr_gate, w);
  read(j, "momentum", c.momentum, w);
  read(j, "adam_beta2", c.adam_beta2, w);
  read(j, "adam_eps", c.adam_eps, w);
  read(j, "weight_decay", c.weight_decay, w);
  read(j, "lr_step_epochs", c.lr_step_epochs, w);
  read(j, "lr_step_gamma", c.lr_step_gamma, w);
  read(j, "lr_cosine", c.lr_cosine, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "seed", c.seed, w);
  read(j, "fixed_per_class", c.fixed_per_class, w);
  read(j, "fixed_shared", c.fixed_shared, w);
  read(j, "mis_every", c.mis_every, w);
  return c;
}

Json to_json(const ExperimentConfig& cfg) {
  Json d;
  d["source"] = cfg.dataset.source;
  d["path"] = cfg.dataset.path;
  d["num_classes"] = cfg.dataset.synthetic.num_classes;
  d["train_per_class"] = cfg.dataset.synthetic.train_per_class;
  d["test_per_class"] = cfg.dataset.synthetic.test_per_class;
  d["synthetic_seed"] = cfg.dataset.synthetic.seed;
  d["train_ratio"] = cfg.dataset.train_ratio;
  d["split_seed"] = cfg.dataset.seed;
  d["image_size"] = cfg.dataset.image_size;
  Json j;
  j["dataset"] = d;
  j["model"] = to_json(cfg.model);
  j["train"] = to_json(cfg.train);
  j["output_dir"] = cfg.output_dir;
  return j;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  reject_unknown(j, {"dataset", "model", "train", "output_dir"}, "config");
  ExperimentConfig cfg;
  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    const std::string w = "dataset";
    reject_unknown(d,
                   {"source", "path", "num_classes", "train_per_class", "test_per_class",
                    "synthetic_seed", "train_ratio", "split_seed", "image_size"},
                   w);
    read(d, "source", cfg.dataset.source, w);
    read(d, "path", cfg.dataset.path, w);
    read(d, "num_classes", cfg.dataset.synthetic.num_classes, w);
    read(d, "train_per_class", cfg.dataset.synthetic.train_per_class, w);
    read(d, "test_per_class", cfg.dataset.synthetic.test_per_class, w);
    read(d, "synthetic_seed", cfg.dataset.synthetic.seed, w);
    read(d, "train_ratio", cfg.dataset.train_ratio, w);
    read(d, "split_seed", cfg.dataset.seed, w);
    read(d, "image_size", cfg.dataset.image_size, w);
  }
  cfg.dataset.synthetic.image_size = cfg.dataset.image_size;
  if (j.contains("model")) cfg.model = architecture_from_json(j.at("model"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  read(j, "output_dir", cfg.output_dir, "config");
  return cfg;
}

void ExperimentConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "directory" && dataset.source != "native") {
    throw ConfigError("dataset.source must be synthetic|directory|native, got '" +
                      dataset.source + "'");
  }
  if (dataset.source != "synthetic" && dataset.path.empty()) {
    throw ConfigError("dataset.path is required for source '" + dataset.source + "'");
  }
  if (dataset.image_size != model.image_size) {
    throw ConfigError("dataset.image_size and model.image_size differ");
  }
  if (dataset.source == "synthetic" && dataset.synthetic.num_classes != model.num_classes) {
    throw ConfigError("dataset.num_classes and model.num_classes differ");
  }
  try {
    model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  train.validate(model.num_filters());
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return experiment_config_from_json(j);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(cfg).dump(2) + "\n");
}

DatasetBundle load_dataset_for(const DatasetConfig& cfg) {
  if (cfg.source == "synthetic") {
    SyntheticSpec spec = cfg.synthetic;
    spec.image_size = cfg.image_size;
    return generate_synthetic_shapes(spec);
  }
  if (cfg.source == "directory") {
    return load_directory_dataset(cfg.path, cfg.train_ratio, cfg.seed, cfg.image_size);
  }
  return load_dataset(cfg.path);
}

}  // namespace csg
