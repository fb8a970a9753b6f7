#include "csg/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <numbers>
#include <random>

#include <json.hpp>

#include "csg/image_io.hpp"
#include "csg/io.hpp"
#include "csg/localization.hpp"

namespace csg {

LabeledImages LabeledImages::subset(const std::vector<int>& indices) const {
  LabeledImages out;
  out.images = images.gather(indices);
  out.labels.reserve(indices.size());
  for (int i : indices) out.labels.push_back(labels[i]);
  if (has_masks()) out.masks = masks.gather(indices);
  return out;
}

namespace {

LabeledImages split_part(const DatasetBundle& d, int want) {
  std::vector<int> idx;
  for (int i = 0; i < d.size(); ++i) {
    if (want < 0 || d.is_test[i] == want) idx.push_back(i);
  }
  LabeledImages all{d.images, d.labels, d.masks};
  return all.subset(idx);
}

}  // namespace

LabeledImages DatasetBundle::train() const { return split_part(*this, 0); }
LabeledImages DatasetBundle::test() const { return split_part(*this, 1); }
LabeledImages DatasetBundle::all() const { return {images, labels, masks}; }

void DatasetBundle::validate() const {
  const int n = images.n;
  if (static_cast<int>(labels.size()) != n || static_cast<int>(is_test.size()) != n) {
    throw ContractError("labels/split do not align with " + std::to_string(n) + " images");
  }
  if (has_masks() && (masks.n != n || masks.c != 1 || masks.h != images.h || masks.w != images.w)) {
    throw ContractError("masks " + masks.shape_string() + " do not align with images " +
                        images.shape_string());
  }
  const int classes = num_classes();
  std::vector<std::array<int, 2>> seen(classes, {0, 0});
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ContractError("label " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    ++seen[labels[i]][is_test[i] ? 1 : 0];
  }
  for (int c = 0; c < classes; ++c) {
    if (seen[c][0] == 0 || seen[c][1] == 0) {
      throw ContractError("class '" + class_names[c] + "' missing from the " +
                          (seen[c][0] == 0 ? "train" : "test") + " split");
    }
  }
  for (float v : images.data) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("image values outside [0, 1]");
  }
}

const std::vector<std::string>& shape_prototypes() {
  static const std::vector<std::string> names{"circle", "square", "triangle", "cross",
                                              "ring",   "bar",    "l-shape",  "dot-cluster"};
  return names;
}

namespace {

// Membership test in the prototype's unit frame (roughly [-1, 1]^2).
bool inside(int shape, double u, double v) {
  const double r2 = u * u + v * v;
  switch (shape) {
    case 0:
      return r2 <= 1.0;
    case 1:
      return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    case 2: {
      // Equilateral triangle with circumradius 1, apex up.
      const double s = std::sqrt(3.0);
      return v >= -0.5 && s * u - v >= -1.0 && -s * u - v >= -1.0;
    }
    case 3:
      return (std::abs(u) <= 1.0 && std::abs(v) <= 0.3) || (std::abs(v) <= 1.0 && std::abs(u) <= 0.3);
    case 4:
      return r2 <= 1.0 && r2 >= 0.36;
    case 5:
      return std::abs(u) <= 1.0 && std::abs(v) <= 0.25;
    case 6:
      return (u >= -0.8 && u <= 0.8 && v >= -0.8 && v <= -0.25) ||
             (u >= -0.8 && u <= -0.25 && v >= -0.8 && v <= 0.8);
    case 7: {
      for (double cx : {-0.5, 0.5}) {
        for (double cy : {-0.5, 0.5}) {
          if ((u - cx) * (u - cx) + (v - cy) * (v - cy) <= 0.1225) return true;
        }
      }
      return false;
    }
    default:
      return false;
  }
}

// Area (unit frame) and extent radius of each prototype, by dense sampling.
struct ShapeStats {
  double area;
  double extent;
};

const std::vector<ShapeStats>& shape_stats() {
  static const std::vector<ShapeStats> stats = [] {
    std::vector<ShapeStats> out;
    constexpr int kGrid = 800;
    const double step = 3.0 / kGrid;
    for (int s = 0; s < static_cast<int>(shape_prototypes().size()); ++s) {
      long long hits = 0;
      double extent = 0.0;
      for (int i = 0; i < kGrid; ++i) {
        for (int j = 0; j < kGrid; ++j) {
          const double u = -1.5 + (i + 0.5) * step;
          const double v = -1.5 + (j + 0.5) * step;
          if (inside(s, u, v)) {
            ++hits;
            extent = std::max(extent, std::hypot(u, v));
          }
        }
      }
      out.push_back({static_cast<double>(hits) * step * step, extent + step});
    }
    return out;
  }();
  return stats;
}

constexpr double kMinArea = 90.0;   // pixels at 32 x 32
constexpr double kMaxArea = 180.0;
constexpr int kSuper = 4;           // supersampling per axis

void render_sample(int shape, int size, std::mt19937_64& rng, float* image, std::uint8_t* mask) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double px = static_cast<double>(size) * size / 1024.0;
  const ShapeStats& st = shape_stats()[shape];
  const double area = (kMinArea + (kMaxArea - kMinArea) * unit(rng)) * px;
  const double scale = std::sqrt(area / st.area);
  const double radius = st.extent * scale;
  const double margin = std::min(radius + 0.5, size / 2.0);
  const double cx = margin + (size - 2 * margin) * unit(rng);
  const double cy = margin + (size - 2 * margin) * unit(rng);
  const double angle = 2.0 * std::numbers::pi * unit(rng);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);

  // Dark textured background, brighter shape; colours independent of class.
  std::array<double, 3> bg{}, fg{};
  for (auto& b : bg) b = 0.05 + 0.35 * unit(rng);
  for (auto& f : fg) f = 0.6 + 0.4 * unit(rng);
  const double fx = 0.2 + 0.6 * unit(rng);
  const double fy = 0.2 + 0.6 * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  std::normal_distribution<double> noise(0.0, 0.03);

  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int cover = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double dx = x + (sx + 0.5) / kSuper - cx;
          const double dy = y + (sy + 0.5) / kSuper - cy;
          const double u = (ca * dx + sa * dy) / scale;
          const double v = (-sa * dx + ca * dy) / scale;
          cover += inside(shape, u, v);
        }
      }
      const double a = static_cast<double>(cover) / (kSuper * kSuper);
      const std::size_t p = static_cast<std::size_t>(y) * size + x;
      mask[p] = 2 * cover >= kSuper * kSuper;
      const double wave = 0.05 * std::sin(fx * x + fy * y + phase);
      for (int ch = 0; ch < 3; ++ch) {
        const double b = bg[ch] + wave + noise(rng);
        const double f = fg[ch] + noise(rng);
        image[ch * plane + p] = static_cast<float>(std::clamp(b * (1 - a) + f * a, 0.0, 1.0));
      }
    }
  }
}

}  // namespace

DatasetBundle generate_synthetic_shapes(const SyntheticSpec& spec) {
  const auto& names = shape_prototypes();
  if (spec.num_classes < 2 || spec.num_classes > static_cast<int>(names.size())) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("synthetic dataset supports 2.." + std::to_string(names.size()) +
                      " classes (" + list + "), got " + std::to_string(spec.num_classes));
  }
  if (spec.train_per_class < 1 || spec.test_per_class < 1) {
    throw ConfigError("synthetic dataset needs >= 1 train and test image per class");
  }
  if (spec.image_size < 8) throw ConfigError("synthetic image_size must be >= 8");
  const int per_class = spec.train_per_class + spec.test_per_class;
  const int n = spec.num_classes * per_class;
  DatasetBundle d;
  d.images = TensorF(n, 3, spec.image_size, spec.image_size);
  d.masks = MaskTensor(n, 1, spec.image_size, spec.image_size);
  d.class_names.assign(names.begin(), names.begin() + spec.num_classes);
  std::mt19937_64 rng(spec.seed);
  // Interleave classes so that any prefix is roughly balanced.
  int i = 0;
  for (int j = 0; j < per_class; ++j) {
    for (int c = 0; c < spec.num_classes; ++c, ++i) {
      render_sample(c, spec.image_size, rng, d.images.sample(i), d.masks.sample(i));
      d.labels.push_back(c);
      d.is_test.push_back(j >= spec.train_per_class);
    }
  }
  return d;
}

DatasetBundle load_directory_dataset(const std::filesystem::path& root, double train_ratio,
                                     std::uint64_t seed, int image_size) {
  namespace fs = std::filesystem;
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train_ratio must lie in (0, 1)");
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() < 2) throw ContractError("need at least two class directories in " + root.string());

  DatasetBundle d;
  std::vector<std::vector<float>> pixels;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[c])) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2) {
      throw ContractError("class directory " + class_dirs[c].string() +
                          " needs at least two images");
    }
    d.class_names.push_back(class_dirs[c].filename().string());
    std::vector<int> order(files.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_train = std::clamp(static_cast<int>(std::lround(train_ratio * files.size())), 1,
                                   static_cast<int>(files.size()) - 1);
    std::vector<std::uint8_t> test_flag(files.size(), 1);
    for (int j = 0; j < n_train; ++j) test_flag[order[j]] = 0;
    for (std::size_t f = 0; f < files.size(); ++f) {
      const Image8 img = read_image(files[f]);
      std::vector<float> out(3 * static_cast<std::size_t>(image_size) * image_size);
      for (int ch = 0; ch < 3; ++ch) {
        MatrixD plane(img.height, img.width);
        const int src_ch = img.channels == 3 ? ch : 0;
        for (int y = 0; y < img.height; ++y) {
          for (int x = 0; x < img.width; ++x) {
            plane(y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels +
                                     src_ch] / 255.0;
          }
        }
        const MatrixD resized = bilinear_resize(plane, image_size, image_size);
        for (int p = 0; p < image_size * image_size; ++p) {
          out[ch * image_size * image_size + p] =
              static_cast<float>(std::clamp(resized.data()[p], 0.0, 1.0));
        }
      }
      pixels.push_back(std::move(out));
      d.labels.push_back(static_cast<int>(c));
      d.is_test.push_back(test_flag[f]);
    }
  }
  d.images = TensorF(static_cast<int>(pixels.size()), 3, image_size, image_size);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    std::copy(pixels[i].begin(), pixels[i].end(), d.images.sample(static_cast<int>(i)));
  }
  d.validate();
  return d;
}

void save_dataset(const DatasetBundle& data, const std::filesystem::path& dir) {
  data.validate();
  nlohmann::ordered_json j;
  j["format"] = "csg-dataset";
  j["version"] = 1;
  j["num_samples"] = data.size();
  j["channels"] = data.images.c;
  j["height"] = data.images.h;
  j["width"] = data.images.w;
  j["class_names"] = data.class_names;
  j["has_masks"] = data.has_masks();
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "images.f32", encode_f32_le(data.images.data));
  std::vector<std::int32_t> labels(data.labels.begin(), data.labels.end());
  write_file_atomic(dir / "labels.i32", encode_i32_le(labels));
  write_file_atomic(dir / "split.u8", std::string(data.is_test.begin(), data.is_test.end()));
  if (data.has_masks()) {
    write_file_atomic(dir / "masks.u8", std::string(data.masks.data.begin(), data.masks.data.end()));
  }
  write_file_atomic(dir / "dataset.json", j.dump(2) + "\n");
}

DatasetBundle load_dataset(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "dataset.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + (dir / "dataset.json").string() + ": " + e.what());
  }
  if (j.value("format", "") != "csg-dataset") throw IoError("not a dataset directory: " + dir.string());
  if (j.value("version", 0) != 1) {
    throw IoError("unsupported dataset version " + j.value("version", nlohmann::json()).dump());
  }
  DatasetBundle d;
  const int n = j.at("num_samples");
  const int c = j.at("channels");
  const int h = j.at("height");
  const int w = j.at("width");
  d.class_names = j.at("class_names").get<std::vector<std::string>>();
  d.images = TensorF(n, c, h, w);
  auto check = [&](const std::string& name, std::size_t got, std::size_t want) {
    if (got != want) {
      throw IntegrityError(name + ": expected " + std::to_string(want) + " bytes, found " +
                               std::to_string(got),
                           want, got);
    }
  };
  const std::string img = read_file(dir / "images.f32");
  check("images.f32", img.size(), d.images.size() * 4);
  const std::vector<float> pixels = decode_f32_le(img);
  d.images.data.assign(pixels.begin(), pixels.end());
  const std::string lab = read_file(dir / "labels.i32");
  check("labels.i32", lab.size(), static_cast<std::size_t>(n) * 4);
  const auto labels = decode_i32_le(lab);
  d.labels.assign(labels.begin(), labels.end());
  const std::string split = read_file(dir / "split.u8");
  check("split.u8", split.size(), static_cast<std::size_t>(n));
  d.is_test.assign(split.begin(), split.end());
  if (j.at("has_masks").get<bool>()) {
    d.masks = MaskTensor(n, 1, h, w);
    const std::string m = read_file(dir / "masks.u8");
    check("masks.u8", m.size(), d.masks.size());
    d.masks.data.assign(m.begin(), m.end());
  }
  d.validate();
  return d;
}

}  // namespace csg
