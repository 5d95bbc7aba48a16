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

#ifndef FEATNORM_GRADCHECK_HPP
#define FEATNORM_GRADCHECK_HPP

// Randomized backward() vs. central-difference comparison, covering both
// parameter gradients and the input gradient used to chain heads into the
// upstream encoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "featnorm/matrix.hpp"
#include "featnorm/nn.hpp"
#include "featnorm/random.hpp"

namespace featnorm {

struct GradcheckConfig {
  std::size_t models = 20;
  std::size_t max_params = 10000;
  double step = 1e-5;
  double tolerance = 1e-4;
  double absolute_floor = 1e-7;
  std::uint64_t seed = 0;
  /// Test hook: perturbs one analytic gradient entry per instance.
  bool corrupt_gradient = false;
};

struct GradcheckInstance {
  std::string description;
  std::size_t parameters = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;       // flat parameter index, or input index
  bool worst_is_input = false;
  std::size_t violations = 0;
};

struct GradcheckReport {
  std::vector<GradcheckInstance> instances;
  double max_relative_error = 0.0;
  std::size_t violations = 0;

  bool passed() const noexcept { return violations == 0; }
};

namespace detail {

/// Smallest |pre-activation| feeding any relu unit.
inline double relu_margin(const Mlp& net, const Matrix& input) {
  double margin = INFINITY;
  Matrix current = input;
  for (const auto& layer : net.layers()) {
    Matrix z = matmul(current, layer.weight());
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += layer.bias()[c];
    }
    if (layer.activation() == Activation::relu) {
      for (double v : z.data()) margin = std::min(margin, std::abs(v));
    }
    current = dense_apply(layer, current);
  }
  return margin;
}

struct Comparison {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t worst = 0;
  std::size_t violations = 0;
};

// An entry fails when it misses both the relative tolerance and the absolute
// floor. Relative error is tracked only where the relative test binds, i.e.
// where max(|a|, |b|) >= floor / tolerance.
inline void compare_entry(double analytic, double numeric, std::size_t index,
                          const GradcheckConfig& cfg, Comparison& out) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double rel = scale > 0.0 ? diff / scale : 0.0;
  out.max_abs = std::max(out.max_abs, diff);
  if (scale >= cfg.absolute_floor / cfg.tolerance && rel > out.max_rel) {
    out.max_rel = rel;
    out.worst = index;
  }
  if (diff > cfg.absolute_floor && rel > cfg.tolerance) {
    ++out.violations;
    if (scale < cfg.absolute_floor / cfg.tolerance && rel > out.max_rel) {
      out.max_rel = rel;
      out.worst = index;
    }
  }
}

inline GradcheckInstance check_instance(const std::string& description, const Mlp& net,
                                        std::size_t batch, std::uint64_t seed,
                                        const GradcheckConfig& cfg) {
  Stream rng(seed, "gradcheck_data");
  Matrix x(batch, net.in_dim());
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (double& v : x.data()) v = rng.normal();
    if (relu_margin(net, x) > 1e-3) break;
  }
  std::vector<int> labels(batch);
  for (int& l : labels) l = static_cast<int>(rng.below(net.out_dim()));

  auto fwd = forward(net, x);
  auto loss = softmax_cross_entropy(fwd.output, labels);
  auto back = backward(net, fwd.cache, loss.dlogits);
  if (cfg.corrupt_gradient) back.grads.at(0) += 1e-3 * (1.0 + std::abs(back.grads.at(0)));

  const auto numeric = finite_diff_grad(
      [&](const Mlp& probe) { return softmax_cross_entropy(infer(probe, x), labels).loss; }, net,
      cfg.step);

  GradcheckInstance inst;
  inst.description = description;
  inst.parameters = net.parameter_count();
  Comparison params;
  for (std::size_t i = 0; i < inst.parameters; ++i) {
    compare_entry(back.grads.at(i), numeric.at(i), i, cfg, params);
  }
  Comparison input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix xp = x;
    Matrix xm = x;
    xp.data()[i] += cfg.step;
    xm.data()[i] -= cfg.step;
    const double d = (softmax_cross_entropy(infer(net, xp), labels).loss -
                      softmax_cross_entropy(infer(net, xm), labels).loss) /
                     (2.0 * cfg.step);
    compare_entry(back.dinput.data()[i], d, i, cfg, input);
  }
  inst.violations = params.violations + input.violations;
  inst.max_absolute_error = std::max(params.max_abs, input.max_abs);
  if (input.max_rel > params.max_rel) {
    inst.max_relative_error = input.max_rel;
    inst.worst_index = input.worst;
    inst.worst_is_input = true;
  } else {
    inst.max_relative_error = params.max_rel;
    inst.worst_index = params.worst;
  }
  return inst;
}

}  // namespace detail

/// Instance 0 is the default encoder stacked with an emotion head, instance
/// 1 adds a tanh projector; the rest are random depths, widths and
/// activations, each kept under max_params.
inline GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  GradcheckReport report;
  for (std::size_t m = 0; m < cfg.models; ++m) {
    Stream rng(cfg.seed, "gradcheck_model", m);
    Mlp net;
    std::string description;
    if (m == 0) {
      const std::size_t dims[] = {32, 64, 32, 4};
      net = Mlp::glorot(dims, Activation::relu, Activation::identity, rng);
      description = "default encoder + emotion head";
    } else if (m == 1) {
      std::vector<DenseLayer> layers;
      layers.push_back(DenseLayer::glorot(32, 64, Activation::relu, rng));
      layers.push_back(DenseLayer::glorot(64, 32, Activation::relu, rng));
      layers.push_back(DenseLayer::glorot(32, 32, Activation::tanh, rng));
      layers.push_back(DenseLayer::glorot(32, 10, Activation::identity, rng));
      net = Mlp(std::move(layers));
      description = "default encoder + projector + speaker head";
    } else {
      do {
        const std::size_t depth = 1 + rng.below(4);
        std::vector<DenseLayer> layers;
        std::size_t in = 1 + rng.below(24);
        description = std::to_string(in);
        for (std::size_t l = 0; l < depth; ++l) {
          const bool last = l + 1 == depth;
          const std::size_t out = last ? 2 + rng.below(8) : 1 + rng.below(32);
          const auto act = last ? Activation::identity : static_cast<Activation>(rng.below(3));
          layers.push_back(DenseLayer::glorot(in, out, act, rng));
          // Non-zero biases so relu kinks are not aligned with the origin.
          for (double& b : layers.back().bias()) b = rng.uniform(-0.5, 0.5);
          description += "-" + std::string(to_string(act)) + "-" + std::to_string(out);
          in = out;
        }
        net = Mlp(std::move(layers));
      } while (net.parameter_count() > cfg.max_params);
    }
    const std::size_t batch = 1 + rng.below(6);
    auto inst = detail::check_instance(description, net, batch, derive_seed(cfg.seed, "gradcheck_batch", m), cfg);
    report.max_relative_error = std::max(report.max_relative_error, inst.max_relative_error);
    report.violations += inst.violations;
    report.instances.push_back(std::move(inst));
  }
  return report;
}

}  // namespace featnorm

#endif  // FEATNORM_GRADCHECK_HPP
