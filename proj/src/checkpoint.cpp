#include "csg/checkpoint.hpp"

#include "csg/io.hpp"

namespace csg {

std::string encode_gate(const GateMatrix& gate) {
  Json desc;
  desc["C"] = gate.num_classes();
  desc["K"] = gate.num_filters();
  desc["frozen"] = gate.frozen();
  const MatrixF& v = gate.values();
  return desc.dump() + "\n" + encode_f32_le(std::span<const float>(v.data(), v.size()));
}

GateMatrix decode_gate(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw IntegrityError("gate blob has no descriptor line", 1, 0);
  Json desc;
  try {
    desc = Json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed gate descriptor: ") + e.what());
  }
  const int c = desc.at("C");
  const int k = desc.at("K");
  const std::size_t want = static_cast<std::size_t>(c) * k * 4;
  const std::size_t have = bytes.size() - nl - 1;
  if (have != want) {
    throw IntegrityError("gate payload: expected " + std::to_string(want) + " bytes after offset " +
                             std::to_string(nl + 1) + ", found " + std::to_string(have),
                         want, have);
  }
  const std::vector<float> values = decode_f32_le(std::string_view(bytes).substr(nl + 1));
  MatrixF m(c, k);
  std::copy(values.begin(), values.end(), m.data());
  return GateMatrix(std::move(m), desc.at("frozen").get<bool>());
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  const auto& arch = ckpt.model.architecture();
  if (ckpt.gate.num_classes() != arch.num_classes || ckpt.gate.num_filters() != arch.num_filters()) {
    throw DimensionError("gate shape does not match the model");
  }
  std::filesystem::create_directories(dir / "params");
  Json params = Json::array();
  for (const auto& p : ckpt.model.parameters()) {
    const std::string file = "params/" + p.name + ".f32";
    write_file_atomic(dir / file, encode_f32_le(p.value));
    Json e;
    e["name"] = p.name;
    e["shape"] = p.shape;
    e["file"] = file;
    e["bytes"] = p.value.size() * 4;
    params.push_back(e);
  }
  const std::string gate = encode_gate(ckpt.gate);
  write_file_atomic(dir / "gate.bin", gate);
  write_file_atomic(dir / "history.jsonl", ckpt.history.to_jsonl());

  Json m;
  m["format"] = "csg-checkpoint";
  m["version"] = kCheckpointVersion;
  m["architecture"] = to_json(arch);
  m["C"] = arch.num_classes;
  m["K"] = arch.num_filters();
  m["epoch"] = ckpt.epoch;
  m["parameters"] = params;
  m["filter_mask"] = ckpt.model.filter_mask();
  m["gate"] = {{"file", "gate.bin"}, {"bytes", gate.size()}};
  m["history"] = "history.jsonl";
  m["metrics"] = ckpt.metrics;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Json m;
  try {
    m = Json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  if (m.value("format", "") != "csg-checkpoint") throw IoError(dir.string() + " is not a checkpoint");
  const int version = m.value("version", 0);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.model = Network<float>::zeros(architecture_from_json(m.at("architecture")));
  ckpt.epoch = m.at("epoch");
  const Json& params = m.at("parameters");
  auto& mine = ckpt.model.parameters();
  if (params.size() != mine.size()) {
    throw IoError("manifest lists " + std::to_string(params.size()) + " tensors, architecture has " +
                  std::to_string(mine.size()));
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    const Json& e = params[i];
    if (e.at("name").get<std::string>() != mine[i].name ||
        e.at("shape").get<std::vector<int>>() != mine[i].shape) {
      throw IoError("tensor " + e.at("name").get<std::string>() + " does not match the architecture");
    }
    const std::string blob = read_file(dir / e.at("file").get<std::string>());
    const std::size_t want = mine[i].value.size() * 4;
    if (blob.size() != want) {
      throw IntegrityError(e.at("file").get<std::string>() + ": expected " + std::to_string(want) +
                               " bytes, found " + std::to_string(blob.size()),
                           want, blob.size());
    }
    const std::vector<float> v = decode_f32_le(blob);
    mine[i].value.assign(v.begin(), v.end());
  }
  const auto mask = m.at("filter_mask").get<std::vector<float>>();
  ckpt.model.set_filter_mask(Buffer<float>(mask.begin(), mask.end()));
  ckpt.gate = decode_gate(read_file(dir / m.at("gate").at("file").get<std::string>()));
  if (ckpt.gate.num_classes() != m.at("C").get<int>() || ckpt.gate.num_filters() != m.at("K").get<int>()) {
    throw IoError("gate dimensions disagree with the manifest");
  }
  ckpt.history = TrainHistory::from_jsonl(read_file(dir / m.at("history").get<std::string>()));
  ckpt.metrics = m.value("metrics", Json::object());
  return ckpt;
}

}  // namespace csg
