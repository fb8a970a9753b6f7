#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "csg/tensor.hpp"

namespace csg {

using MaskTensor = Tensor4<std::uint8_t>;  // N x 1 x H x W, 1 = object

struct LabeledImages {
  TensorF images;
  std::vector<int> labels;
  MaskTensor masks;  // empty (n == 0) when no masks are available

  int size() const { return images.n; }
  bool has_masks() const { return masks.n > 0; }
  LabeledImages subset(const std::vector<int>& indices) const;
};

struct DatasetBundle {
  TensorF images;                  // N x channels x H x W in [0,1]
  std::vector<int> labels;         // [0, C)
  MaskTensor masks;                // optional; n == 0 when absent
  std::vector<std::uint8_t> is_test;  // split membership per sample
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int size() const { return images.n; }
  bool has_masks() const { return masks.n > 0; }

  LabeledImages train() const;
  LabeledImages test() const;
  LabeledImages all() const;

  // Throws ContractError when labels, masks or splits are inconsistent.
  void validate() const;
};

// Shape prototypes available to the synthetic generator, in class order.
const std::vector<std::string>& shape_prototypes();

struct SyntheticSpec {
  int num_classes = 4;
  int train_per_class = 500;
  int test_per_class = 100;
  int image_size = 32;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticSpec&) const = default;
};

// One prototype shape per image at a random pose over a textured background.
// Shape areas are drawn from a class-independent distribution so that the
// foreground pixel count carries no label information. Exact masks included.
DatasetBundle generate_synthetic_shapes(const SyntheticSpec& spec);

// One sub-directory per class (sorted by name) holding PNG/PPM/PGM images.
// Images are resized bilinearly to `image_size` and split per class.
DatasetBundle load_directory_dataset(const std::filesystem::path& root, double train_ratio,
                                     std::uint64_t seed, int image_size = 32);

// Native on-disk format: dataset.json + images.f32 + labels.i32
// (+ masks.u8) + split.u8, all little-endian.
void save_dataset(const DatasetBundle& data, const std::filesystem::path& dir);
DatasetBundle load_dataset(const std::filesystem::path& dir);

}  // namespace csg
