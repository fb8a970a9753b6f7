#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "csg/dataset.hpp"
#include "csg/model.hpp"
#include "csg/training.hpp"

namespace csg {

using Json = nlohmann::ordered_json;

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | directory | native
  std::string path;                  // directory or native dataset location
  SyntheticSpec synthetic;
  double train_ratio = 0.8;
  std::uint64_t seed = 0;            // split seed for directory datasets
  int image_size = 32;

  bool operator==(const DatasetConfig&) const = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  Architecture model;
  TrainConfig train;
  std::string output_dir = "runs/default";

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

Json to_json(const Architecture& arch);
Architecture architecture_from_json(const Json& j);
Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults; unknown keys raise ConfigError.
ExperimentConfig experiment_config_from_json(const Json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

DatasetBundle load_dataset_for(const DatasetConfig& cfg);

}  // namespace csg
