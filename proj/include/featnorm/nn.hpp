/*
 * Copyright 2026 The featnorm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FEATNORM_NN_HPP
#define FEATNORM_NN_HPP

// Dense multilayer perceptron with explicit forward/backward passes, softmax
// cross-entropy, plain SGD updates in either direction, and a central
// finite-difference gradient oracle.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "featnorm/error.hpp"
#include "featnorm/matrix.hpp"
#include "featnorm/random.hpp"

namespace featnorm {

enum class Activation { identity, relu, tanh };

inline std::string_view to_string(Activation a) noexcept {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

inline Activation parse_activation(std::string_view text) {
  if (text == "identity") return Activation::identity;
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  throw ValidationError("unknown activation '" + std::string(text) + "'");
}

/// y = act(x W + b). W is in_dim x out_dim.
class DenseLayer {
 public:
  DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation activation)
      : weight_(in_dim, out_dim), bias_(out_dim, 0.0), activation_(activation) {
    if (in_dim == 0 || out_dim == 0) throw ValidationError("dense layer dimensions must be positive");
  }

  DenseLayer(Matrix weight, std::vector<double> bias, Activation activation)
      : weight_(std::move(weight)), bias_(std::move(bias)), activation_(activation) {
    if (weight_.rows() == 0 || weight_.cols() == 0) {
      throw ValidationError("dense layer dimensions must be positive");
    }
    if (bias_.size() != weight_.cols()) {
      throw ShapeError("bias length " + std::to_string(bias_.size()) + " does not match weight " +
                       weight_.shape());
    }
  }

  /// Glorot-uniform weights in [-a, a], a = sqrt(6 / (in + out)); zero bias.
  static DenseLayer glorot(std::size_t in_dim, std::size_t out_dim, Activation activation,
                           Stream& rng) {
    DenseLayer layer(in_dim, out_dim, activation);
    const double a = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (double& w : layer.weight_.data()) w = rng.uniform(-a, a);
    return layer;
  }

  std::size_t in_dim() const noexcept { return weight_.rows(); }
  std::size_t out_dim() const noexcept { return weight_.cols(); }
  Activation activation() const noexcept { return activation_; }
  std::size_t parameter_count() const noexcept { return weight_.size() + bias_.size(); }

  const Matrix& weight() const noexcept { return weight_; }
  const std::vector<double>& bias() const noexcept { return bias_; }
  Matrix& weight() noexcept { return weight_; }
  std::vector<double>& bias() noexcept { return bias_; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;

 private:
  Matrix weight_;
  std::vector<double> bias_;
  Activation activation_;
};

/// Ordered stack of dense layers.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ValidationError("an Mlp needs at least one layer");
    for (std::size_t i = 1; i < layers_.size(); ++i) {
      if (layers_[i - 1].out_dim() != layers_[i].in_dim()) {
        throw ShapeError("layer " + std::to_string(i - 1) + " outputs " +
                         std::to_string(layers_[i - 1].out_dim()) + " but layer " +
                         std::to_string(i) + " expects " + std::to_string(layers_[i].in_dim()));
      }
    }
  }

  /// dims = {in, h1, ..., out}; hidden layers use `hidden`, the last uses `output`.
  static Mlp glorot(std::span<const std::size_t> dims, Activation hidden, Activation output,
                    Stream& rng) {
    if (dims.size() < 2) throw ValidationError("an Mlp needs at least input and output dims");
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      const bool last = i + 2 == dims.size();
      layers.push_back(DenseLayer::glorot(dims[i], dims[i + 1], last ? output : hidden, rng));
    }
    return Mlp(std::move(layers));
  }

  std::size_t in_dim() const noexcept { return layers_.front().in_dim(); }
  std::size_t out_dim() const noexcept { return layers_.back().out_dim(); }
  std::size_t depth() const noexcept { return layers_.size(); }
  std::span<const DenseLayer> layers() const noexcept { return layers_; }
  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
  }

  /// Flat parameter view: per layer, weights row-major then bias.
  double parameter(std::size_t index) const { return const_cast<Mlp*>(this)->slot(index); }

  void set_parameter(std::size_t index, double value) {
    slot(index) = value;
    ++version_;
  }

  /// Mutable layer access; invalidates outstanding forward caches.
  DenseLayer& mutable_layer(std::size_t i) {
    ++version_;
    return layers_.at(i);
  }

  /// Bumped on every mutation; forward caches remember the value they saw.
  std::uint64_t version() const noexcept { return version_; }

  /// Parameter equality; the mutation counter is ignored.
  friend bool operator==(const Mlp& a, const Mlp& b) { return a.layers_ == b.layers_; }

 private:
  double& slot(std::size_t index) {
    for (auto& l : layers_) {
      if (index < l.weight().size()) return l.weight().data()[index];
      index -= l.weight().size();
      if (index < l.bias().size()) return l.bias()[index];
      index -= l.bias().size();
    }
    throw ValidationError("parameter index out of range");
  }

  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 0;
};

/// Everything backward() needs from a forward() call.
struct ForwardCache {
  std::vector<Matrix> inputs;   // per layer input
  std::vector<Matrix> outputs;  // per layer post-activation output
  std::vector<std::size_t> dims;
  std::uint64_t version = 0;
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

namespace detail {

inline std::vector<std::size_t> layer_dims(const Mlp& net) {
  std::vector<std::size_t> dims{net.in_dim()};
  for (const auto& l : net.layers()) dims.push_back(l.out_dim());
  return dims;
}

inline Matrix dense_apply(const DenseLayer& layer, const Matrix& input) {
  Matrix out = matmul(input, layer.weight());
  const auto& bias = layer.bias();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      double z = row[c] + bias[c];
      switch (layer.activation()) {
        case Activation::identity: break;
        case Activation::relu: z = z > 0.0 ? z : 0.0; break;
        case Activation::tanh: z = std::tanh(z); break;
      }
      row[c] = z;
    }
  }
  return out;
}

inline void check_input(const Mlp& net, const Matrix& input) {
  if (net.depth() == 0) throw ValidationError("empty Mlp");
  if (input.cols() != net.in_dim()) {
    throw ShapeError("input " + input.shape() + " does not match network input dim " +
                     std::to_string(net.in_dim()) + " (first layer weight " +
                     net.layer(0).weight().shape() + ")");
  }
}

}  // namespace detail

inline ForwardResult forward(const Mlp& net, const Matrix& input) {
  detail::check_input(net, input);
  ForwardResult result;
  result.cache.dims = detail::layer_dims(net);
  result.cache.version = net.version();
  Matrix current = input;
  for (const auto& layer : net.layers()) {
    result.cache.inputs.push_back(current);
    current = detail::dense_apply(layer, current);
    result.cache.outputs.push_back(current);
  }
  result.output = std::move(current);
  return result;
}

/// Forward pass without keeping activations.
inline Matrix infer(const Mlp& net, const Matrix& input) {
  detail::check_input(net, input);
  Matrix current = input;
  for (const auto& layer : net.layers()) current = detail::dense_apply(layer, current);
  return current;
}

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
inline LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    throw ValidationError("label count " + std::to_string(labels.size()) + " does not match " +
                          std::to_string(logits.rows()) + " logit rows");
  }
  if (logits.rows() == 0) throw ValidationError("empty batch");
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  LossResult result{0.0, Matrix(logits.rows(), logits.cols())};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
      throw ValidationError("label " + std::to_string(label) + " at row " + std::to_string(r) +
                            " outside [0, " + std::to_string(logits.cols()) + ")");
    }
    auto row = logits.row(r);
    std::size_t top = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[top]) top = c;
    }
    const double peak = row[top];
    // log Σ exp(v - peak) = log1p(Σ_{c != top} exp(v_c - peak)), exact for confident rows.
    double rest = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c != top) rest += std::exp(row[c] - peak);
    }
    const double log_sum = std::log1p(rest);
    result.loss += -(row[label] - peak - log_sum);
    auto grad = result.dlogits.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double p = std::exp(row[c] - peak - log_sum);
      grad[c] = (p - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  result.loss *= inv_n;
  return result;
}

struct LayerGradients {
  Matrix weight;
  std::vector<double> bias;

  friend bool operator==(const LayerGradients&, const LayerGradients&) = default;
};

/// Per-layer parameter gradients, shaped exactly like the owning Mlp.
struct Gradients {
  std::vector<LayerGradients> layers;

  static Gradients zeros_like(const Mlp& net) {
    Gradients g;
    for (const auto& l : net.layers()) {
      g.layers.push_back({Matrix(l.in_dim(), l.out_dim()), std::vector<double>(l.out_dim(), 0.0)});
    }
    return g;
  }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Same flat ordering as Mlp::parameter().
  double& at(std::size_t index) {
    for (auto& l : layers) {
      if (index < l.weight.size()) return l.weight.data()[index];
      index -= l.weight.size();
      if (index < l.bias.size()) return l.bias[index];
      index -= l.bias.size();
    }
    throw ValidationError("gradient index out of range");
  }
  double at(std::size_t index) const { return const_cast<Gradients*>(this)->at(index); }

  bool all_finite() const noexcept {
    for (const auto& l : layers) {
      if (!l.weight.all_finite()) return false;
      for (double b : l.bias) {
        if (!std::isfinite(b)) return false;
      }
    }
    return true;
  }

  bool mirrors(const Mlp& net) const noexcept {
    if (layers.size() != net.depth()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = net.layer(i);
      if (layers[i].weight.rows() != l.in_dim() || layers[i].weight.cols() != l.out_dim() ||
          layers[i].bias.size() != l.out_dim()) {
        return false;
      }
    }
    return true;
  }

  friend bool operator==(const Gradients&, const Gradients&) = default;
};

struct BackwardResult {
  Gradients grads;
  Matrix dinput;
};

/// Gradients of a scalar loss given dL/d(output), plus dL/d(input).
inline BackwardResult backward(const Mlp& net, const ForwardCache& cache, const Matrix& doutput) {
  if (cache.version != net.version() || cache.dims != detail::layer_dims(net) ||
      cache.inputs.size() != net.depth() || cache.outputs.size() != net.depth()) {
    throw ContractError("forward cache does not belong to this network state");
  }
  const Matrix& last = cache.outputs.back();
  if (doutput.rows() != last.rows() || doutput.cols() != last.cols()) {
    throw ShapeError("doutput " + doutput.shape() + " does not match forward output " +
                     last.shape());
  }
  BackwardResult result;
  result.grads.layers.resize(net.depth());
  Matrix delta = doutput;
  for (std::size_t li = net.depth(); li-- > 0;) {
    const DenseLayer& layer = net.layer(li);
    const Matrix& out = cache.outputs[li];
    // dL/dz from dL/dy through the activation.
    switch (layer.activation()) {
      case Activation::identity: break;
      case Activation::relu:
        for (std::size_t i = 0; i < delta.size(); ++i) {
          if (!(out.data()[i] > 0.0)) delta.data()[i] = 0.0;
        }
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < delta.size(); ++i) {
          const double y = out.data()[i];
          delta.data()[i] *= 1.0 - y * y;
        }
        break;
    }
    LayerGradients& g = result.grads.layers[li];
    g.weight = matmul_tn(cache.inputs[li], delta);
    g.bias.assign(layer.out_dim(), 0.0);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += row[c];
    }
    delta = matmul_nt(delta, layer.weight());
  }
  result.dinput = std::move(delta);
  return result;
}

enum class Direction { descent, ascent };

/// p <- p - rate*g (descent) or p <- p + rate*g (ascent). Parameters with a
/// zero gradient are left bit-unchanged.
inline void apply_update(Mlp& net, const Gradients& grads, double rate, Direction direction) {
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw ValidationError("update rate must be finite and positive, got " + std::to_string(rate));
  }
  if (!grads.mirrors(net)) throw ShapeError("gradients do not mirror the network shape");
  if (!grads.all_finite()) throw ValidationError("non-finite gradient");
  for (std::size_t li = 0; li < net.depth(); ++li) {
    DenseLayer& layer = net.mutable_layer(li);
    const LayerGradients& g = grads.layers[li];
    auto w = layer.weight().data();
    auto gw = g.weight.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (gw[i] == 0.0) continue;
      if (direction == Direction::descent) {
        w[i] -= rate * gw[i];
      } else {
        w[i] += rate * gw[i];
      }
    }
    auto& b = layer.bias();
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (g.bias[i] == 0.0) continue;
      if (direction == Direction::descent) {
        b[i] -= rate * g.bias[i];
      } else {
        b[i] += rate * g.bias[i];
      }
    }
  }
}

/// Central differences (f(p+h) - f(p-h)) / 2h for every parameter of `net`.
inline Gradients finite_diff_grad(const std::function<double(const Mlp&)>& loss_fn, Mlp net,
                                  double step) {
  if (!(step > 0.0)) throw ValidationError("finite-difference step must be positive");
  Gradients g = Gradients::zeros_like(net);
  const std::size_t n = net.parameter_count();
  for (std::size_t i = 0; i < n; ++i) {
    const double original = net.parameter(i);
    net.set_parameter(i, original + step);
    const double plus = loss_fn(net);
    net.set_parameter(i, original - step);
    const double minus = loss_fn(net);
    net.set_parameter(i, original);
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw OracleError("non-finite loss while probing parameter " + std::to_string(i), i);
    }
    g.at(i) = (plus - minus) / (2.0 * step);
  }
  return g;
}

/// FNV-1a over shapes, activation tags and parameter bit patterns.
inline std::uint64_t parameter_hash(const Mlp& net, std::uint64_t h = 0xcbf29ce484222325ULL) {
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& l : net.layers()) {
    mix(l.in_dim());
    mix(l.out_dim());
    mix(static_cast<std::uint64_t>(l.activation()));
    for (double w : l.weight().data()) mix(std::bit_cast<std::uint64_t>(w));
    for (double b : l.bias()) mix(std::bit_cast<std::uint64_t>(b));
  }
  return h;
}

// Text format:
//   featnorm-mlp 1
//   layers <n>
//   layer <in> <out> <activation>      (n lines)
//   then per layer: <in> weight rows, one bias row; values %.17g, space separated.

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_mlp(std::ostream& out, const Mlp& net) {
  out << "featnorm-mlp 1\n";
  out << "layers " << net.depth() << '\n';
  for (const auto& l : net.layers()) {
    out << "layer " << l.in_dim() << ' ' << l.out_dim() << ' ' << to_string(l.activation()) << '\n';
  }
  for (const auto& l : net.layers()) {
    for (std::size_t r = 0; r < l.weight().rows(); ++r) {
      auto row = l.weight().row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out << ' ';
        out << format_double(row[c]);
      }
      out << '\n';
    }
    for (std::size_t c = 0; c < l.bias().size(); ++c) {
      if (c) out << ' ';
      out << format_double(l.bias()[c]);
    }
    out << '\n';
  }
}

namespace detail {

struct LineReader {
  std::istream& in;
  std::size_t line_no = 0;

  std::string next(const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(std::string("unexpected end of input, expected ") + what, line_no + 1);
    ++line_no;
    return line;
  }

  std::vector<double> numbers(std::size_t expected, const char* what) {
    std::istringstream row(next(what));
    std::vector<double> values;
    std::string token;
    while (row >> token) {
      char* end = nullptr;
      const double v = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size() || !std::isfinite(v)) {
        throw ParseError("bad number '" + token + "' in " + what, line_no);
      }
      values.push_back(v);
    }
    if (values.size() != expected) {
      throw ParseError(std::string(what) + ": expected " + std::to_string(expected) +
                           " values, found " + std::to_string(values.size()),
                       line_no);
    }
    return values;
  }
};

inline Mlp read_mlp(LineReader& reader) {
  if (reader.next("mlp header") != "featnorm-mlp 1") {
    throw ParseError("expected 'featnorm-mlp 1'", reader.line_no);
  }
  std::istringstream count_line(reader.next("layer count"));
  std::string key;
  std::size_t n = 0;
  if (!(count_line >> key >> n) || key != "layers" || n == 0) {
    throw ParseError("expected 'layers <n>' with n >= 1", reader.line_no);
  }
  struct Shape {
    std::size_t in, out;
    Activation act;
  };
  std::vector<Shape> shapes;
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream ls(reader.next("layer line"));
    std::string act;
    Shape s{};
    if (!(ls >> key >> s.in >> s.out >> act) || key != "layer" || s.in == 0 || s.out == 0) {
      throw ParseError("expected 'layer <in> <out> <activation>'", reader.line_no);
    }
    try {
      s.act = parse_activation(act);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), reader.line_no);
    }
    shapes.push_back(s);
  }
  std::vector<DenseLayer> layers;
  for (const auto& s : shapes) {
    std::vector<double> w;
    w.reserve(s.in * s.out);
    for (std::size_t r = 0; r < s.in; ++r) {
      auto row = reader.numbers(s.out, "weight row");
      w.insert(w.end(), row.begin(), row.end());
    }
    auto b = reader.numbers(s.out, "bias row");
    layers.emplace_back(Matrix(s.in, s.out, std::move(w)), std::move(b), s.act);
  }
  try {
    return Mlp(std::move(layers));
  } catch (const Error& e) {
    throw ParseError(e.what(), reader.line_no);
  }
}

}  // namespace detail

inline Mlp read_mlp(std::istream& in) {
  detail::LineReader reader{in};
  return detail::read_mlp(reader);
}

}  // namespace featnorm

#endif  // FEATNORM_NN_HPP
