#pragma once

#include <filesystem>

#include "csg/config.hpp"
#include "csg/gates.hpp"
#include "csg/model.hpp"
#include "csg/training.hpp"

namespace csg {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Network<float> model;
  GateMatrix gate;
  TrainHistory history;
  int epoch = 0;
  Json metrics = Json::object();  // snapshot stored in the manifest
};

// Layout: manifest.json, params/<name>.f32 per tensor, gate.bin (JSON
// descriptor line then row-major float32), history.jsonl.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Serialised gate: descriptor line + little-endian payload.
std::string encode_gate(const GateMatrix& gate);
GateMatrix decode_gate(const std::string& bytes);

}  // namespace csg
