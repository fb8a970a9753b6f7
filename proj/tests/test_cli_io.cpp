#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "csg/checkpoint.hpp"
#include "csg/config.hpp"
#include "csg/dataset.hpp"
#include "csg/io.hpp"
#include "csg/report.hpp"

using namespace csg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_pgm(const fs::path& path, int w, int h, std::uint8_t value) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::string px(static_cast<std::size_t>(w * h), static_cast<char>(value));
  out << px;
}

// Byte-for-byte snapshot of every file below `dir`.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return files;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CSGNET_EXE) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Architecture small_arch() {
  Architecture a;
  a.image_size = 16;
  a.conv_channels = {4, 5, 6};
  a.num_classes = 3;
  return a;
}

}  // namespace

TEST_CASE("synthetic shapes are deterministic and masked") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.train_per_class = 6;
  spec.test_per_class = 2;
  spec.image_size = 24;
  spec.seed = 5;
  const DatasetBundle a = generate_synthetic_shapes(spec);
  const DatasetBundle b = generate_synthetic_shapes(spec);
  CHECK(a.images.data == b.images.data);
  CHECK(a.masks.data == b.masks.data);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 24);
  CHECK(a.train().size() == 18);
  CHECK(a.test().size() == 6);
  CHECK_NOTHROW(a.validate());
  for (int i = 0; i < a.size(); ++i) {
    int count = 0;
    for (int p = 0; p < 24 * 24; ++p) count += a.masks.sample(i)[p];
    CHECK(count > 0);
  }
  for (float v : a.images.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  spec.seed = 6;
  CHECK(generate_synthetic_shapes(spec).images.data != a.images.data);

  spec.num_classes = static_cast<int>(shape_prototypes().size()) + 1;
  try {
    generate_synthetic_shapes(spec);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(shape_prototypes()[0]) != std::string::npos);
  }
}

TEST_CASE("foreground area does not reveal the class") {
  // Best possible classifier on the mask pixel count: bin the counts, take
  // the majority training class per bin, score on the test split.
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.train_per_class = 300;
  spec.test_per_class = 100;
  spec.seed = 1;
  const DatasetBundle d = generate_synthetic_shapes(spec);
  const int hw = spec.image_size * spec.image_size;
  constexpr int kBins = 12;
  auto bin_of = [&](int i) {
    int count = 0;
    for (int p = 0; p < hw; ++p) count += d.masks.sample(i)[p];
    return std::min(kBins - 1, count * kBins / (hw / 2 + 1));
  };
  std::vector<std::vector<int>> votes(kBins, std::vector<int>(4, 0));
  for (int i = 0; i < d.size(); ++i) {
    if (!d.is_test[i]) ++votes[bin_of(i)][d.labels[i]];
  }
  int correct = 0, total = 0;
  for (int i = 0; i < d.size(); ++i) {
    if (!d.is_test[i]) continue;
    const auto& v = votes[bin_of(i)];
    correct += static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()) == d.labels[i];
    ++total;
  }
  CHECK(static_cast<double>(correct) / total <= 0.25 + 0.10);
}

TEST_CASE("directory dataset split") {
  const fs::path root = scratch("dirdata");
  for (const char* cls : {"alpha", "beta"}) {
    fs::create_directories(root / cls);
    for (int i = 0; i < 10; ++i) {
      write_pgm(root / cls / ("img" + std::to_string(i) + ".pgm"), 8, 6, static_cast<std::uint8_t>(20 * i));
    }
  }
  const auto before = snapshot(root);
  const DatasetBundle d = load_directory_dataset(root, 0.8, 3, 16);
  CHECK(d.class_names == std::vector<std::string>{"alpha", "beta"});
  CHECK(d.train().size() == 16);
  CHECK(d.test().size() == 4);
  CHECK(d.images.h == 16);
  CHECK(d.images.w == 16);
  const DatasetBundle again = load_directory_dataset(root, 0.8, 3, 16);
  CHECK(again.is_test == d.is_test);
  CHECK(again.images.data == d.images.data);
  CHECK(snapshot(root) == before);

  // Imbalanced classes keep their proportions in each split.
  for (int i = 10; i < 20; ++i) write_pgm(root / "beta" / ("x" + std::to_string(i) + ".pgm"), 4, 4, 7);
  const DatasetBundle imb = load_directory_dataset(root, 0.8, 3, 16);
  int beta_train = 0, beta_test = 0;
  for (int i = 0; i < imb.size(); ++i) (imb.is_test[i] ? beta_test : beta_train) += imb.labels[i] == 1;
  CHECK(std::abs(beta_train - 16) <= 1);
  CHECK(std::abs(beta_test - 4) <= 1);

  write_pgm(root / "alpha" / "broken.pgm", 4, 4, 1);
  {
    std::ofstream(root / "alpha" / "broken.pgm", std::ios::trunc) << "P5\n4 4\n255\n";
  }
  try {
    load_directory_dataset(root, 0.8, 3, 16);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("broken.pgm") != std::string::npos);
  }

  const fs::path empty = scratch("dirempty");
  fs::create_directories(empty / "a");
  fs::create_directories(empty / "b");
  write_pgm(empty / "a" / "one.pgm", 4, 4, 1);
  CHECK_THROWS_AS(load_directory_dataset(empty, 0.8, 0, 16), Error);
}

TEST_CASE("native dataset round trip") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 3;
  spec.test_per_class = 2;
  spec.image_size = 12;
  const DatasetBundle d = generate_synthetic_shapes(spec);
  const fs::path dir = scratch("native");
  save_dataset(d, dir);
  const DatasetBundle r = load_dataset(dir);
  CHECK(r.images.data == d.images.data);
  CHECK(r.masks.data == d.masks.data);
  CHECK(r.labels == d.labels);
  CHECK(r.is_test == d.is_test);
  CHECK(r.class_names == d.class_names);
}

TEST_CASE("little-endian codecs") {
  const std::vector<float> f{1.0f, -0.5f, 3.25e-8f};
  const std::string bytes = encode_f32_le(f);
  CHECK(bytes.size() == 12);
  CHECK(static_cast<unsigned char>(bytes[3]) == 0x3f);  // 1.0f = 0x3f800000
  CHECK(decode_f32_le(bytes) == f);
  const std::vector<std::int32_t> i{1, -2, 65536};
  CHECK(decode_i32_le(encode_i32_le(i)) == i);
  CHECK_THROWS(decode_f32_le(bytes.substr(0, 5)));
}

TEST_CASE("config round trip") {
  ExperimentConfig cfg;
  cfg.train.epochs = 7;
  cfg.train.lambda1 = 0.25;
  cfg.model.conv_channels = {8, 9, 10};
  cfg.dataset.synthetic.seed = 42;
  cfg.output_dir = "somewhere";
  const ExperimentConfig back = experiment_config_from_json(to_json(cfg));
  CHECK(back == cfg);
  CHECK(to_json(back).dump() == to_json(cfg).dump());

  const fs::path dir = scratch("config");
  save_config(cfg, dir / "c.json");
  CHECK(load_config(dir / "c.json") == cfg);

  // Empty document gives all defaults.
  CHECK(experiment_config_from_json(Json::object()) == ExperimentConfig{});
  Json bad = Json::object();
  bad["train"]["no_such_key"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  MatrixF g = MatrixF::Ones(3, 6);
  g(1, 2) = 0.25f;
  Checkpoint ck{Network<float>(small_arch(), 1), GateMatrix(g), TrainHistory{}, 4};
  ck.metrics["accuracy"] = 0.5;
  const fs::path a = scratch("ckpt_a"), b = scratch("ckpt_b");
  save_checkpoint(a, ck);
  const Checkpoint loaded = load_checkpoint(a);
  save_checkpoint(b, loaded);
  CHECK(snapshot(a) == snapshot(b));
  CHECK(loaded.epoch == 4);
  CHECK(loaded.gate == ck.gate);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  TensorF probe(3, 3, 16, 16);
  for (auto& v : probe.data) v = u(rng);
  CHECK(loaded.model.forward_std(probe).logits == ck.model.forward_std(probe).logits);

  const Json manifest = Json::parse(read_file(a / "manifest.json"));
  const GateMatrix blob = decode_gate(read_file(a / "gate.bin"));
  CHECK(manifest.at("C").get<int>() == blob.num_classes());
  CHECK(manifest.at("K").get<int>() == blob.num_filters());

  // Truncated parameter blob.
  fs::path victim;
  for (const auto& e : fs::directory_iterator(a / "params")) victim = e.path();
  const std::string full = read_file(victim);
  write_file_atomic(victim, full.substr(0, full.size() - 6));
  try {
    load_checkpoint(a);
    FAIL("expected IntegrityError");
  } catch (const IntegrityError& e) {
    CHECK(std::string(e.what()).find(std::to_string(full.size())) != std::string::npos);
  }

  Json bumped = manifest;
  bumped["version"] = kCheckpointVersion + 1;
  write_file_atomic(b / "manifest.json", bumped.dump());
  CHECK_THROWS(load_checkpoint(b));
}

TEST_CASE("report files") {
  const fs::path out = scratch("report_empty");
  emit_report(Report{}, out);
  const Json empty = Json::parse(read_file(out / "metrics.json"));
  CHECK(empty == Report::empty_metrics());

  Report r;
  MatrixD m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  r.metrics["mi"]["values"] = to_json(m);
  r.tables.push_back(matrix_table("mi", m, "filter", "class"));
  r.heatmaps.push_back(Heatmap{"mi", m, 0.0, 6.0});
  const fs::path full = scratch("report_full");
  emit_report(r, full);
  CHECK(Json::parse(read_file(full / "metrics.json")) == r.metrics);
  const std::string csv = read_file(full / "mi.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(fs::exists(full / "mi.png"));
}

TEST_CASE("command line exit codes and determinism") {
  const fs::path root = scratch("cli");
  const std::string data = (root / "data").string();
  REQUIRE(run_cli("gen-data --classes 2 --train-per-class 10 --test-per-class 8 --image-size 16 --seed 3 --out " +
                  data) == 0);
  const auto data_before = snapshot(data);

  std::ofstream(root / "cfg.json") << R"({"model":{"conv_channels":[4,4,6]},"train":{"batch_size":8}})";
  const std::string base = "train --data " + data + " --config " + (root / "cfg.json").string() + " --epochs 2 --seed 1";
  REQUIRE(run_cli(base + " --out " + (root / "r1").string()) == 0);
  REQUIRE(run_cli(base + " --out " + (root / "r2").string()) == 0);
  CHECK(snapshot(root / "r1" / "checkpoint") == snapshot(root / "r2" / "checkpoint"));
  CHECK(read_file(root / "r1" / "history.jsonl") == read_file(root / "r2" / "history.jsonl"));
  CHECK(fs::exists(root / "r1" / "resolved_config.json"));
  CHECK(snapshot(data) == data_before);

  CHECK(run_cli("eval --checkpoint " + (root / "r1" / "checkpoint").string() + " --data " + data + " --out " +
                (root / "ev").string()) == 0);
  CHECK(fs::exists(root / "ev" / "metrics.json"));

  std::ofstream(root / "bad.json") << R"({"train":{"epochs":"many"}})";
  CHECK(run_cli("train --data " + data + " --config " + (root / "bad.json").string()) == 2);
  CHECK(run_cli("train --bogus-flag") == 2);

  std::ofstream(root / "wild.json")
      << R"({"model":{"conv_channels":[4,4,6]},"train":{"mode":"std","optimizer":"sgd","lr_theta":1e12}})";
  CHECK(run_cli("train --data " + data + " --config " + (root / "wild.json").string() + " --epochs 3 --out " +
                (root / "wild").string()) == 3);
}
