#include "csg/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace csg {

namespace {

template <typename T>
using RowMap = Eigen::Map<MatrixX<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const MatrixX<T>>;

template <typename T>
void check_finite(const T* data, std::size_t count, int layer, const char* what) {
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericError(std::string("non-finite ") + what + " at layer " +
                             std::to_string(layer),
                         layer);
    }
  }
}

// x: channel-major Cin x B x S x S. col: (Cin*9) x (B*S*S).
template <typename T>
void im2col(const T* x, int cin, int batch, int side, T* col) {
  const std::size_t hw = static_cast<std::size_t>(side) * side;
  const std::size_t bhw = hw * batch;
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * bhw;
        for (int b = 0; b < batch; ++b) {
          const T* src = x + (static_cast<std::size_t>(ci) * batch + b) * hw;
          T* out = dst + b * hw;
          for (int y = 0; y < side; ++y) {
            const int sy = y + ky - 1;
            T* row = out + static_cast<std::size_t>(y) * side;
            if (sy < 0 || sy >= side) {
              std::fill(row, row + side, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(sy) * side;
            for (int xx = 0; xx < side; ++xx) {
              const int sx = xx + kx - 1;
              row[xx] = (sx < 0 || sx >= side) ? T(0) : srow[sx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int cin, int batch, int side, T* dx) {
  const std::size_t hw = static_cast<std::size_t>(side) * side;
  const std::size_t bhw = hw * batch;
  std::fill(dx, dx + static_cast<std::size_t>(cin) * bhw, T(0));
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * bhw;
        for (int b = 0; b < batch; ++b) {
          T* dst = dx + (static_cast<std::size_t>(ci) * batch + b) * hw;
          const T* in = src + b * hw;
          for (int y = 0; y < side; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= side) continue;
            const T* row = in + static_cast<std::size_t>(y) * side;
            T* drow = dst + static_cast<std::size_t>(sy) * side;
            for (int xx = 0; xx < side; ++xx) {
              const int sx = xx + kx - 1;
              if (sx >= 0 && sx < side) drow[sx] += row[xx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

int Architecture::detection_feature_dim() const {
  int total = 0;
  for (int c : conv_channels) total += c;
  return total;
}

void Architecture::validate() const {
  if (in_channels <= 0 || num_classes <= 0 || conv_channels.empty()) {
    throw ConfigError("architecture needs positive channels, classes and >= 1 conv layer");
  }
  for (int c : conv_channels) {
    if (c <= 0) throw ConfigError("conv channel counts must be positive");
  }
  if (!std::isfinite(input_shift) || !std::isfinite(input_scale) || input_scale == 0.0) {
    throw ConfigError("input_shift must be finite and input_scale finite and nonzero");
  }
  const int downsamples = num_conv_layers() - 1;
  if (image_size <= 0 || image_size % (1 << downsamples) != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " must be divisible by 2^" + std::to_string(downsamples));
  }
}

template <typename T>
void Network<T>::allocate() {
  arch_.validate();
  params_.clear();
  int cin = arch_.in_channels;
  for (int l = 0; l < arch_.num_conv_layers(); ++l) {
    const int cout = arch_.conv_channels[l];
    const std::string prefix = "conv" + std::to_string(l + 1);
    params_.push_back({prefix + ".weight", {cout, cin, 3, 3},
                       Buffer<T>(static_cast<std::size_t>(cout) * cin * 9, T(0))});
    params_.push_back({prefix + ".bias", {cout}, Buffer<T>(cout, T(0))});
    cin = cout;
  }
  const int k = arch_.num_filters();
  const int c = arch_.num_classes;
  params_.push_back({"fc.weight", {c, k}, Buffer<T>(static_cast<std::size_t>(c) * k, T(0))});
  params_.push_back({"fc.bias", {c}, Buffer<T>(c, T(0))});
  mask_.assign(k, T(1));
}

template <typename T>
Network<T>::Network(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  allocate();
  std::mt19937_64 rng(seed);
  int cin = arch_.in_channels;
  for (int l = 0; l < arch_.num_conv_layers(); ++l) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (cin * 9.0)));
    for (auto& v : params_[conv_weight_index(l)].value) v = static_cast<T>(dist(rng));
    cin = arch_.conv_channels[l];
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(arch_.num_filters()));
  std::uniform_real_distribution<double> fc(-bound, bound);
  for (auto& v : params_[fc_weight_index()].value) v = static_cast<T>(fc(rng));
}

template <typename T>
Network<T> Network<T>::zeros(Architecture arch) {
  Network net;
  net.arch_ = std::move(arch);
  net.allocate();
  return net;
}

template <typename T>
Parameter<T>& Network<T>::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named '" + name + "'");
}

template <typename T>
const Parameter<T>& Network<T>::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named '" + name + "'");
}

template <typename T>
void Network<T>::set_filter_mask(Buffer<T> mask) {
  if (static_cast<int>(mask.size()) != num_filters()) {
    throw DimensionError("filter mask has " + std::to_string(mask.size()) +
                         " entries, expected K=" + std::to_string(num_filters()));
  }
  mask_ = std::move(mask);
}

template <typename T>
typename Network<T>::Tape Network<T>::forward(const Tensor4<T>& images,
                                              const MatrixX<T>* gate_rows,
                                              bool keep_tape) const {
  if (images.c != arch_.in_channels || images.h != arch_.image_size ||
      images.w != arch_.image_size) {
    throw DimensionError("images " + images.shape_string() + " do not match architecture (" +
                         std::to_string(arch_.in_channels) + " channels, " +
                         std::to_string(arch_.image_size) + " px)");
  }
  const int batch = images.n;
  const int layers = arch_.num_conv_layers();
  const int k_filters = arch_.num_filters();
  if (gate_rows && (gate_rows->rows() != batch || gate_rows->cols() != k_filters)) {
    throw DimensionError("gate rows must be B x K");
  }

  Tape tape;
  tape.batch = batch;
  tape.cols.resize(layers);
  tape.relu_out.resize(layers);
  tape.pool_arg.resize(layers);
  tape.trace.per_layer_pooled.resize(layers);

  // Convert NCHW input to channel-major C x B x H x W.
  Buffer<T> x(images.size());
  {
    const std::size_t hw = images.plane();
    const T shift = static_cast<T>(arch_.input_shift);
    const T scale = static_cast<T>(arch_.input_scale);
    for (int b = 0; b < batch; ++b) {
      for (int ch = 0; ch < images.c; ++ch) {
        const T* src = images.data.data() + images.offset(b, ch, 0, 0);
        T* dst = x.data() + (static_cast<std::size_t>(ch) * batch + b) * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] = (src[i] - shift) * scale;
      }
    }
  }

  int cin = arch_.in_channels;
  for (int l = 0; l < layers; ++l) {
    const int side = arch_.layer_size(l);
    const int cout = arch_.conv_channels[l];
    const std::size_t hw = static_cast<std::size_t>(side) * side;
    const std::size_t bhw = hw * batch;

    Buffer<T> col(static_cast<std::size_t>(cin) * 9 * bhw);
    im2col(x.data(), cin, batch, side, col.data());

    Buffer<T> z(static_cast<std::size_t>(cout) * bhw);
    ConstRowMap<T> weight(params_[conv_weight_index(l)].value.data(), cout, cin * 9);
    ConstRowMap<T> colm(col.data(), cin * 9, static_cast<Eigen::Index>(bhw));
    RowMap<T> zm(z.data(), cout, static_cast<Eigen::Index>(bhw));
    zm.noalias() = weight * colm;
    const auto& bias = params_[conv_weight_index(l) + 1].value;
    for (int co = 0; co < cout; ++co) {
      T* row = z.data() + co * bhw;
      const T bv = bias[co];
      for (std::size_t i = 0; i < bhw; ++i) row[i] = std::max(row[i] + bv, T(0));
    }
    check_finite(z.data(), z.size(), l, "activation");

    MatrixX<T> pooled(batch, cout);
    for (int co = 0; co < cout; ++co) {
      for (int b = 0; b < batch; ++b) {
        const T* p = z.data() + (static_cast<std::size_t>(co) * batch + b) * hw;
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        pooled(b, co) = acc / static_cast<T>(hw);
      }
    }

    if (l + 1 < layers) {
      tape.trace.per_layer_pooled[l] = std::move(pooled);
      const int half = side / 2;
      const std::size_t ohw = static_cast<std::size_t>(half) * half;
      Buffer<T> next(static_cast<std::size_t>(cout) * batch * ohw);
      std::vector<std::uint8_t> arg(keep_tape ? next.size() : 0);
      for (std::size_t plane = 0; plane < static_cast<std::size_t>(cout) * batch; ++plane) {
        const T* src = z.data() + plane * hw;
        T* dst = next.data() + plane * ohw;
        for (int y = 0; y < half; ++y) {
          for (int xx = 0; xx < half; ++xx) {
            const T* p0 = src + static_cast<std::size_t>(2 * y) * side + 2 * xx;
            const T cand[4] = {p0[0], p0[1], p0[side], p0[side + 1]};
            int best = 0;
            for (int q = 1; q < 4; ++q) {
              if (cand[q] > cand[best]) best = q;
            }
            dst[y * half + xx] = cand[best];
            if (keep_tape) arg[plane * ohw + y * half + xx] = static_cast<std::uint8_t>(best);
          }
        }
      }
      if (keep_tape) {
        tape.cols[l] = std::move(col);
        tape.relu_out[l] = std::move(z);
        tape.pool_arg[l] = std::move(arg);
      }
      x = std::move(next);
    } else {
      // Penultimate layer: apply the filter mask, then pool.
      Tensor4<T> maps(batch, cout, side, side);
      for (int co = 0; co < cout; ++co) {
        const T m = mask_[co];
        for (int b = 0; b < batch; ++b) {
          const T* src = z.data() + (static_cast<std::size_t>(co) * batch + b) * hw;
          T* dst = maps.data.data() + maps.offset(b, co, 0, 0);
          for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * m;
          pooled(b, co) *= m;
        }
      }
      tape.trace.per_layer_pooled[l] = pooled;
      tape.trace.pooled_features = std::move(pooled);
      tape.trace.penultimate_maps = std::move(maps);
      if (keep_tape) {
        tape.cols[l] = std::move(col);
        tape.relu_out[l] = std::move(z);
      }
    }
    cin = cout;
  }

  tape.features = tape.trace.pooled_features;
  if (gate_rows) {
    tape.gate_rows = *gate_rows;
    tape.features.array() *= gate_rows->array();
  }
  ConstRowMap<T> fc(params_[fc_weight_index()].value.data(), arch_.num_classes, k_filters);
  const auto& fc_bias = params_[fc_weight_index() + 1].value;
  tape.trace.logits.noalias() = tape.features * fc.transpose();
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < arch_.num_classes; ++c) tape.trace.logits(b, c) += fc_bias[c];
  }
  check_finite(tape.trace.logits.data(), static_cast<std::size_t>(tape.trace.logits.size()),
               layers, "logit");
  return tape;
}

template <typename T>
ForwardTrace<T> Network<T>::forward_std(const Tensor4<T>& images) const {
  return forward(images, nullptr, /*keep_tape=*/false).trace;
}

template <typename T>
MatrixX<T> Network<T>::forward_csg(const Tensor4<T>& images, const MatrixX<T>& gate_rows) const {
  return forward(images, &gate_rows, /*keep_tape=*/false).trace.logits;
}

template <typename T>
Gradients<T> Network<T>::backward(const Tape& tape, const MatrixX<T>& d_logits,
                                  const MatrixX<T>* d_pooled, bool want_input_grad) const {
  const int batch = tape.batch;
  const int layers = arch_.num_conv_layers();
  const int k_filters = arch_.num_filters();
  const int classes = arch_.num_classes;
  if (d_logits.rows() != batch || d_logits.cols() != classes) {
    throw DimensionError("d_logits must be B x C");
  }
  if (tape.relu_out.empty() || tape.relu_out[layers - 1].empty()) {
    throw ContractError("backward() needs a tape recorded with keep_tape = true");
  }

  Gradients<T> grads;
  grads.params.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    grads.params[i].assign(params_[i].value.size(), T(0));
  }

  // Linear layer.
  ConstRowMap<T> fc(params_[fc_weight_index()].value.data(), classes, k_filters);
  RowMap<T> d_fc(grads.params[fc_weight_index()].data(), classes, k_filters);
  d_fc.noalias() = d_logits.transpose() * tape.features;
  for (int c = 0; c < classes; ++c) grads.params[fc_weight_index() + 1][c] = d_logits.col(c).sum();
  MatrixX<T> d_features = d_logits * fc;

  MatrixX<T> d_pool;
  if (tape.gate_rows.size() > 0) {
    grads.gate_rows = d_features.cwiseProduct(tape.trace.pooled_features);
    d_pool = d_features.cwiseProduct(tape.gate_rows);
  } else {
    d_pool = std::move(d_features);
  }
  if (d_pooled) {
    if (d_pooled->rows() != batch || d_pooled->cols() != k_filters) {
      throw DimensionError("d_pooled must be B x K");
    }
    d_pool += *d_pooled;
  }

  // Gradient on the last conv's pre-activation, channel-major.
  int side = arch_.penultimate_size();
  std::size_t hw = static_cast<std::size_t>(side) * side;
  Buffer<T> dz(static_cast<std::size_t>(k_filters) * batch * hw);
  {
    const auto& relu = tape.relu_out[layers - 1];
    const T inv = T(1) / static_cast<T>(hw);
    for (int co = 0; co < k_filters; ++co) {
      for (int b = 0; b < batch; ++b) {
        const std::size_t o = (static_cast<std::size_t>(co) * batch + b) * hw;
        const T g = d_pool(b, co) * inv * mask_[co];
        for (std::size_t i = 0; i < hw; ++i) dz[o + i] = relu[o + i] > T(0) ? g : T(0);
      }
    }
  }

  Buffer<T> dx;
  for (int l = layers - 1; l >= 0; --l) {
    const int cout = arch_.conv_channels[l];
    const int cin = l == 0 ? arch_.in_channels : arch_.conv_channels[l - 1];
    const std::size_t bhw = hw * batch;
    ConstRowMap<T> dzm(dz.data(), cout, static_cast<Eigen::Index>(bhw));
    ConstRowMap<T> colm(tape.cols[l].data(), cin * 9, static_cast<Eigen::Index>(bhw));
    RowMap<T> dw(grads.params[conv_weight_index(l)].data(), cout, cin * 9);
    dw.noalias() = dzm * colm.transpose();
    auto& db = grads.params[conv_weight_index(l) + 1];
    for (int co = 0; co < cout; ++co) db[co] = dzm.row(co).sum();

    if (l == 0 && !want_input_grad) break;

    ConstRowMap<T> weight(params_[conv_weight_index(l)].value.data(), cout, cin * 9);
    Buffer<T> dcol(static_cast<std::size_t>(cin) * 9 * bhw);
    RowMap<T> dcolm(dcol.data(), cin * 9, static_cast<Eigen::Index>(bhw));
    dcolm.noalias() = weight.transpose() * dzm;
    dx.assign(static_cast<std::size_t>(cin) * bhw, T(0));
    col2im(dcol.data(), cin, batch, side, dx.data());
    if (l == 0) break;

    // Route through the max-pool of layer l-1, then its ReLU.
    const int prev_side = side * 2;
    const std::size_t prev_hw = static_cast<std::size_t>(prev_side) * prev_side;
    const auto& arg = tape.pool_arg[l - 1];
    const auto& relu = tape.relu_out[l - 1];
    Buffer<T> dprev(static_cast<std::size_t>(cin) * batch * prev_hw, T(0));
    for (std::size_t plane = 0; plane < static_cast<std::size_t>(cin) * batch; ++plane) {
      for (int y = 0; y < side; ++y) {
        for (int xx = 0; xx < side; ++xx) {
          const std::size_t oi = plane * hw + static_cast<std::size_t>(y) * side + xx;
          const int q = arg[oi];
          const std::size_t pi = plane * prev_hw +
                                 static_cast<std::size_t>(2 * y + q / 2) * prev_side +
                                 (2 * xx + q % 2);
          if (relu[pi] > T(0)) dprev[pi] += dx[oi];
        }
      }
    }
    dz = std::move(dprev);
    side = prev_side;
    hw = prev_hw;
  }

  if (want_input_grad) {
    Tensor4<T> input(batch, arch_.in_channels, arch_.image_size, arch_.image_size);
    const std::size_t in_hw = input.plane();
    const T scale = static_cast<T>(arch_.input_scale);
    for (int b = 0; b < batch; ++b) {
      for (int ch = 0; ch < arch_.in_channels; ++ch) {
        const T* src = dx.data() + (static_cast<std::size_t>(ch) * batch + b) * in_hw;
        T* dst = input.data.data() + input.offset(b, ch, 0, 0);
        for (std::size_t i = 0; i < in_hw; ++i) dst[i] = src[i] * scale;
      }
    }
    grads.input = std::move(input);
  }
  return grads;
}

template <typename T>
Tensor4<T> Network<T>::input_gradient(const Tensor4<T>& images, const ScalarHead& head) const {
  const int batch = images.n;
  auto index_for = [&](int b, int limit, const char* what) {
    if (head.indices.empty()) throw ContractError(std::string(what) + " head needs an index");
    const int idx = head.indices.size() == 1 ? head.indices[0] : head.indices.at(b);
    if (idx < 0 || idx >= limit) {
      throw ContractError(std::string(what) + " head index " + std::to_string(idx) +
                          " out of range");
    }
    return idx;
  };
  if (head.indices.size() > 1 && static_cast<int>(head.indices.size()) != batch) {
    throw ContractError("head has " + std::to_string(head.indices.size()) +
                        " indices for a batch of " + std::to_string(batch));
  }
  switch (head.kind) {
    case HeadKind::ArgmaxClass:
      throw ContractError("argmax head is not differentiable");
    case HeadKind::Constant:
      return Tensor4<T>(images.n, images.c, images.h, images.w);
    default:
      break;
  }

  Tape tape = forward(images, nullptr, /*keep_tape=*/true);
  MatrixX<T> d_logits = MatrixX<T>::Zero(batch, arch_.num_classes);
  MatrixX<T> d_pool;
  switch (head.kind) {
    case HeadKind::Logit:
      for (int b = 0; b < batch; ++b) d_logits(b, index_for(b, arch_.num_classes, "logit")) = 1;
      break;
    case HeadKind::PooledActivation:
      d_pool = MatrixX<T>::Zero(batch, num_filters());
      for (int b = 0; b < batch; ++b) d_pool(b, index_for(b, num_filters(), "pooled")) = 1;
      break;
    case HeadKind::CrossEntropy: {
      d_logits = softmax_rows(tape.trace.logits);
      for (int b = 0; b < batch; ++b) d_logits(b, index_for(b, arch_.num_classes, "cross-entropy")) -= 1;
      break;
    }
    default:
      break;
  }
  return backward(tape, d_logits, d_pool.size() ? &d_pool : nullptr, true).input;
}

template <typename T>
MatrixX<T> Network<T>::filter_weight_vectors() const {
  const int last = arch_.num_conv_layers() - 1;
  const int cin = last == 0 ? arch_.in_channels : arch_.conv_channels[last - 1];
  return ConstRowMap<T>(params_[conv_weight_index(last)].value.data(), num_filters(), cin * 9);
}

template <typename T>
void Network<T>::set_filter_weight_vectors(const MatrixX<T>& rows) {
  const int last = arch_.num_conv_layers() - 1;
  const int cin = last == 0 ? arch_.in_channels : arch_.conv_channels[last - 1];
  if (rows.rows() != num_filters() || rows.cols() != cin * 9) {
    throw DimensionError("filter weight vectors must be K x (in_channels*9)");
  }
  RowMap<T>(params_[conv_weight_index(last)].value.data(), num_filters(), cin * 9) = rows;
}

template <typename T>
MatrixX<T> Network<T>::linear_weights() const {
  return ConstRowMap<T>(params_[fc_weight_index()].value.data(), arch_.num_classes, num_filters());
}

template <typename T>
VectorX<T> Network<T>::linear_bias() const {
  const auto& b = params_[fc_weight_index() + 1].value;
  return Eigen::Map<const VectorX<T>>(b.data(), static_cast<Eigen::Index>(b.size()));
}

template <typename T>
MatrixX<T> softmax_rows(const MatrixX<T>& logits) {
  MatrixX<T> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T top = logits.row(r).maxCoeff();
    T total = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - top);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const MatrixX<T>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

template class Network<float>;
template class Network<double>;
template MatrixX<float> softmax_rows(const MatrixX<float>&);
template MatrixX<double> softmax_rows(const MatrixX<double>&);
template std::vector<int> argmax_rows(const MatrixX<float>&);
template std::vector<int> argmax_rows(const MatrixX<double>&);

}  // namespace csg
