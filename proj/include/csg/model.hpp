#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csg/tensor.hpp"

namespace csg {

// Stacked 3x3 conv blocks (conv, ReLU, 2x2 max-pool between blocks), global
// average pooling over the last conv output, then one linear layer.
struct Architecture {
  int in_channels = 3;
  int image_size = 32;
  std::vector<int> conv_channels{16, 32, 16};
  int num_classes = 4;
  // Pixels enter the first layer as (x - input_shift) * input_scale.
  double input_shift = 0.5;
  double input_scale = 1.0;

  int num_filters() const { return conv_channels.back(); }
  int num_conv_layers() const { return static_cast<int>(conv_channels.size()); }
  // Spatial side of conv layer `layer`'s output.
  int layer_size(int layer) const { return image_size >> layer; }
  int penultimate_size() const { return layer_size(num_conv_layers() - 1); }
  int detection_feature_dim() const;
  void validate() const;

  bool operator==(const Architecture&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  Buffer<T> value;
};

template <typename T>
struct ForwardTrace {
  MatrixX<T> logits;                     // B x C
  Tensor4<T> penultimate_maps;           // B x K x H' x W', ungated
  MatrixX<T> pooled_features;            // B x K, spatial mean of penultimate_maps
  std::vector<MatrixX<T>> per_layer_pooled;  // one B x C_l matrix per conv layer
};

enum class HeadKind { Constant, Logit, PooledActivation, CrossEntropy, ArgmaxClass };

// A scalar function of the forward trace whose input gradient is requested.
// `indices` holds one class/filter index per sample, or a single index that
// applies to every sample.
struct ScalarHead {
  HeadKind kind = HeadKind::Constant;
  std::vector<int> indices;

  static ScalarHead constant() { return {HeadKind::Constant, {}}; }
  static ScalarHead logit(int c) { return {HeadKind::Logit, {c}}; }
  static ScalarHead pooled(int k) { return {HeadKind::PooledActivation, {k}}; }
  static ScalarHead cross_entropy(std::vector<int> labels) {
    return {HeadKind::CrossEntropy, std::move(labels)};
  }
  // Not differentiable; input_gradient rejects it.
  static ScalarHead argmax_class() { return {HeadKind::ArgmaxClass, {}}; }
};

template <typename T>
struct Gradients {
  std::vector<Buffer<T>> params;  // same order as Network::parameters()
  MatrixX<T> gate_rows;                // B x K, empty on the STD path
  Tensor4<T> input;                    // only when requested
};

template <typename T>
class Network {
 public:
  // Cached activations of one forward pass; consumed by backward().
  struct Tape {
    ForwardTrace<T> trace;
    MatrixX<T> gate_rows;   // empty for the STD path
    MatrixX<T> features;    // pooled features after gating, fed to the linear layer
    std::vector<Buffer<T>> cols;      // im2col buffer per layer
    std::vector<Buffer<T>> relu_out;  // per layer, channel-major C x B x H x W
    std::vector<std::vector<std::uint8_t>> pool_arg;
    int batch = 0;
  };

  Network() = default;
  // He-normal conv weights, uniform linear weights, zero biases.
  Network(Architecture arch, std::uint64_t seed);
  // All parameters zero.
  static Network zeros(Architecture arch);

  const Architecture& architecture() const { return arch_; }
  int num_classes() const { return arch_.num_classes; }
  int num_filters() const { return arch_.num_filters(); }

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>& parameter(const std::string& name);
  const Parameter<T>& parameter(const std::string& name) const;

  // Per-filter multiplier on the penultimate maps (1 = keep, 0 = removed).
  const Buffer<T>& filter_mask() const { return mask_; }
  void set_filter_mask(Buffer<T> mask);

  ForwardTrace<T> forward_std(const Tensor4<T>& images) const;
  // Penultimate maps gated by `gate_rows` (one row per sample) before pooling.
  MatrixX<T> forward_csg(const Tensor4<T>& images, const MatrixX<T>& gate_rows) const;

  Tape forward(const Tensor4<T>& images, const MatrixX<T>* gate_rows,
               bool keep_tape = true) const;
  // Backpropagates d_logits (and optionally an extra gradient on the ungated
  // pooled features) through the network.
  Gradients<T> backward(const Tape& tape, const MatrixX<T>& d_logits,
                        const MatrixX<T>* d_pooled = nullptr,
                        bool want_input_grad = false) const;

  // Gradient of the sum over samples of `head` with respect to the images.
  Tensor4<T> input_gradient(const Tensor4<T>& images, const ScalarHead& head) const;

  // Row k: flattened weights of filter k in the last conv layer.
  MatrixX<T> filter_weight_vectors() const;
  void set_filter_weight_vectors(const MatrixX<T>& rows);
  MatrixX<T> linear_weights() const;  // C x K
  VectorX<T> linear_bias() const;

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    out.arch_ = arch_;
    out.params_.reserve(params_.size());
    for (const auto& p : params_) {
      out.params_.push_back({p.name, p.shape, Buffer<U>(p.value.begin(), p.value.end())});
    }
    out.mask_.assign(mask_.begin(), mask_.end());
    return out;
  }

 private:
  template <typename U>
  friend class Network;

  void allocate();
  std::size_t conv_weight_index(int layer) const { return 2 * static_cast<std::size_t>(layer); }
  std::size_t fc_weight_index() const { return 2 * static_cast<std::size_t>(arch_.num_conv_layers()); }

  Architecture arch_;
  std::vector<Parameter<T>> params_;
  Buffer<T> mask_;
};

// Numerically stable row-wise softmax.
template <typename T>
MatrixX<T> softmax_rows(const MatrixX<T>& logits);

template <typename T>
std::vector<int> argmax_rows(const MatrixX<T>& m);

}  // namespace csg
