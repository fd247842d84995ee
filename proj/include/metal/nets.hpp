/* Copyright 2026 The metal Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.

   Parameter containers and forward passes for the three networks involved
   in adaptation: the base learner (an MLP solving the task), the loss
   learner (a 2-layer MLP scoring task-state rows into a scalar objective),
   and the adapter (a 2-layer MLP emitting per-tensor affine transforms of
   the loss learner's parameters).
*/
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "metal/rng.hpp"
#include "metal/tensor.hpp"

namespace metal {

enum class Activation { relu, leaky_relu };
enum class TaskKind { regression, classification };

struct ModelSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths;
  std::size_t output_dim = 1;  // N: regression targets or classification ways
  Activation activation = Activation::relu;
  TaskKind task_kind = TaskKind::regression;
  double leaky_slope = 0.01;

  /// L: number of weight matrices.
  std::size_t layer_count() const { return hidden_widths.size() + 1; }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden_widths.begin(), hidden_widths.end());
    w.push_back(output_dim);
    return w;
  }

  void validate() const {
    if (input_dim == 0 || output_dim == 0)
      throw ContractError("model spec: zero-width layer");
    for (std::size_t h : hidden_widths)
      if (h == 0) throw ContractError("model spec: zero-width layer");
  }
};

/// Named, ordered base-learner parameters (W1, b1, W2, b2, ...).
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t layer_count() const { return tensors.size() / 2; }
  const Tensor& weight(std::size_t layer) const { return tensors[2 * layer]; }
  const Tensor& bias(std::size_t layer) const { return tensors[2 * layer + 1]; }
};

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::param(std::move(v), Shape{fan_in, fan_out});
}

}  // namespace detail

/// Glorot-uniform weights, zero biases; deterministic in the seed.
inline ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamSet p;
  auto w = spec.widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    p.names.push_back("W" + std::to_string(l + 1));
    p.tensors.push_back(detail::glorot_uniform(w[l], w[l + 1], rng));
    p.names.push_back("b" + std::to_string(l + 1));
    p.tensors.push_back(Tensor::param(std::vector<double>(w[l + 1], 0.0),
                                      Shape{1, w[l + 1]}));
  }
  return p;
}

/// MLP forward; activation between layers, raw affine output at the end.
inline Tensor forward_base(const ModelSpec& spec, const ParamSet& params,
                           const Tensor& inputs) {
  if (inputs.rank() != 2 || inputs.dim(1) != spec.input_dim)
    throw DimensionError("forward_base: input shape " +
                         shape_str(inputs.shape()) + " does not match spec");
  Tensor h = inputs;
  std::size_t L = params.layer_count();
  for (std::size_t l = 0; l < L; ++l) {
    h = add(matmul(h, params.weight(l)), params.bias(l));
    if (l + 1 < L)
      h = spec.activation == Activation::relu
              ? relu(h)
              : leaky_relu(h, spec.leaky_slope);
  }
  return h;
}

/// Scalar task loss with the conventional reduction (mean over examples).
inline Tensor task_loss(const ModelSpec& spec, const ParamSet& params,
                        const Tensor& x, const Tensor& y_regression,
                        const std::vector<int>& labels) {
  Tensor out = forward_base(spec, params, x);
  if (spec.task_kind == TaskKind::regression)
    return loss_mse(out, y_regression);
  return loss_softmax_ce(out, labels);
}

// ---------------------------------------------------------------------------
// Meta-networks: both are 2-layer MLPs with ReLU between the layers.
// ---------------------------------------------------------------------------

struct MetaNetParams {
  Tensor W1, b1, W2, b2;

  std::vector<Tensor> tensors() const { return {W1, b1, W2, b2}; }
  static constexpr std::array<const char*, 4> names{"W1", "b1", "W2", "b2"};
};

using LossLearnerParams = MetaNetParams;  // in/hidden S, out 1
using AdapterParams = MetaNetParams;      // in/hidden S, out 4 * 2 = 8

/// Number of affine scalars produced by the adapter: one gamma and one beta
/// for each of the loss learner's 2 weight and 2 bias tensors.
inline constexpr std::size_t kAdapterOutputDim = 8;

inline MetaNetParams init_meta_net(std::size_t in_dim, std::size_t out_dim,
                                   std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0)
    throw ContractError("meta net: zero-width layer");
  Rng rng(seed);
  MetaNetParams p;
  p.W1 = detail::glorot_uniform(in_dim, in_dim, rng);
  p.b1 = Tensor::param(std::vector<double>(in_dim, 0.0), Shape{1, in_dim});
  p.W2 = detail::glorot_uniform(in_dim, out_dim, rng);
  p.b2 = Tensor::param(std::vector<double>(out_dim, 0.0), Shape{1, out_dim});
  return p;
}

inline LossLearnerParams init_loss_learner(std::size_t state_width,
                                           std::uint64_t seed) {
  return init_meta_net(state_width, 1, seed);
}

inline AdapterParams init_adapter(std::size_t state_width, std::uint64_t seed) {
  return init_meta_net(state_width, kAdapterOutputDim, seed);
}

inline MetaNetParams zero_meta_net(std::size_t in_dim, std::size_t out_dim) {
  MetaNetParams p;
  p.W1 = Tensor::param(std::vector<double>(in_dim * in_dim, 0.0), {in_dim, in_dim});
  p.b1 = Tensor::param(std::vector<double>(in_dim, 0.0), {1, in_dim});
  p.W2 = Tensor::param(std::vector<double>(in_dim * out_dim, 0.0), {in_dim, out_dim});
  p.b2 = Tensor::param(std::vector<double>(out_dim, 0.0), {1, out_dim});
  return p;
}

/// Per-tensor affine transform of the loss learner: 4 scales and 4 shifts,
/// ordered like MetaNetParams::tensors() (W1, b1, W2, b2). Values stay
/// differentiable w.r.t. whatever produced them.
struct AffineParams {
  std::array<Tensor, 4> gamma;
  std::array<Tensor, 4> beta;

  static AffineParams identity() {
    AffineParams a;
    for (std::size_t i = 0; i < 4; ++i) {
      a.gamma[i] = Tensor::scalar(1.0);
      a.beta[i] = Tensor::scalar(0.0);
    }
    return a;
  }
};

/// Per-row scalar through the 2-layer MLP, then mean over rows.
inline Tensor forward_loss_learner(const LossLearnerParams& p,
                                   const Tensor& state_rows) {
  if (state_rows.rank() != 2 || state_rows.dim(1) != p.W1.dim(0))
    throw DimensionError("forward_loss_learner: state width " +
                         shape_str(state_rows.shape()) +
                         " does not match parameters");
  Tensor h = relu(add(matmul(state_rows, p.W1), p.b1));
  return mean(add(matmul(h, p.W2), p.b2));
}

/// State rows are mean-reduced first, so one transform is produced per task.
/// gamma comes out as 1 + raw output: a zero adapter is the identity.
inline AffineParams forward_adapter(const AdapterParams& p,
                                    const Tensor& state_rows) {
  if (state_rows.rank() != 2 || state_rows.dim(1) != p.W1.dim(0))
    throw DimensionError("forward_adapter: state width " +
                         shape_str(state_rows.shape()) +
                         " does not match parameters");
  Tensor m = mean(state_rows, 0);
  Tensor h = relu(add(matmul(m, p.W1), p.b1));
  Tensor out = add(matmul(h, p.W2), p.b2);  // [1 x 8]
  AffineParams a;
  for (std::size_t i = 0; i < 4; ++i) {
    a.gamma[i] = add(reshape(slice(out, 1, i, 1), {}), Tensor::scalar(1.0));
    a.beta[i] = reshape(slice(out, 1, 4 + i, 1), {});
  }
  return a;
}

/// phi' = gamma * phi + beta, tensor by tensor.
inline LossLearnerParams adapt_loss_params(const LossLearnerParams& phi,
                                           const AffineParams& a) {
  auto tf = [&](const Tensor& t, std::size_t i) {
    return add(mul(t, a.gamma[i]), a.beta[i]);
  };
  LossLearnerParams out;
  out.W1 = tf(phi.W1, 0);
  out.b1 = tf(phi.b1, 1);
  out.W2 = tf(phi.W2, 2);
  out.b2 = tf(phi.b2, 3);
  return out;
}

// ---------------------------------------------------------------------------
// Per-step, per-example-set meta-parameter bank.
// ---------------------------------------------------------------------------

struct MetaNetPair {
  LossLearnerParams loss;
  AdapterParams adapter;
};

struct BankSlot {
  MetaNetPair support;
  MetaNetPair query;
};

/// One (loss learner, adapter) pair per inner step and per example-set role.
/// Query slots exist even when semi-supervision is off; they just go unused.
struct MetaParamBank {
  std::vector<BankSlot> slots;
  bool shared = false;  // ablation: every step reuses slot 0

  const BankSlot& slot(std::size_t step) const {
    return shared ? slots.at(0) : slots.at(step);
  }
  std::size_t step_count() const { return shared ? 1 : slots.size(); }
};

inline MetaParamBank init_bank(std::size_t state_width, std::size_t inner_steps,
                               std::uint64_t seed, bool shared = false) {
  MetaParamBank bank;
  bank.shared = shared;
  std::size_t n = shared ? 1 : inner_steps;
  for (std::size_t j = 0; j < n; ++j) {
    BankSlot s;
    s.support.loss = init_loss_learner(state_width, mix_seed(seed, 10, j));
    s.support.adapter = init_adapter(state_width, mix_seed(seed, 11, j));
    s.query.loss = init_loss_learner(state_width, mix_seed(seed, 12, j));
    s.query.adapter = init_adapter(state_width, mix_seed(seed, 13, j));
    bank.slots.push_back(std::move(s));
  }
  return bank;
}

}  // namespace metal
