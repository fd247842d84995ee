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

   Differentiable inner-loop adaptation.

   One step descends the inner objective at rate alpha; when built with
   create_graph the resulting parameters stay differentiable w.r.t. the
   initialization and the meta-networks, which is what lets the outer loop
   train through the adaptation. Variants select the objective:

     m1  plain task loss (MSE / cross-entropy)
     m2  learned loss
     m3  learned loss + task loss
     m4  learned loss with affine adaptation
     m5  learned loss, semi-supervised
     m6  adaptive + semi-supervised (the full method)
     m7/m8/m9  m6 with task-state factors ablated (loss slot only /
               +weights / +predictions)
*/
#pragma once

#include <optional>
#include <string>
#include <utility>

#include "metal/nets.hpp"
#include "metal/taskgen.hpp"
#include "metal/taskstate.hpp"

namespace metal {

enum class Model {
  maml,                    // (1)
  learned_loss,            // (2)
  learned_plus_task_loss,  // (3)
  task_adaptive,           // (4)
  semi_fixed,              // (5)
  metal,                   // (6)
};

struct Variant {
  Model model = Model::metal;
  bool state_use_weights = true;
  bool state_use_predictions = true;

  bool uses_learned_loss() const { return model != Model::maml; }
  bool uses_adapter() const {
    return model == Model::task_adaptive || model == Model::metal;
  }
  bool uses_semi() const {
    return model == Model::semi_fixed || model == Model::metal;
  }
  bool adds_task_loss() const { return model == Model::learned_plus_task_loss; }

  static Variant from_name(const std::string& name) {
    Variant v;
    if (name == "m1" || name == "maml") v.model = Model::maml;
    else if (name == "m2" || name == "learned_loss") v.model = Model::learned_loss;
    else if (name == "m3" || name == "learned_plus_task") v.model = Model::learned_plus_task_loss;
    else if (name == "m4" || name == "task_adaptive") v.model = Model::task_adaptive;
    else if (name == "m5" || name == "semi_fixed") v.model = Model::semi_fixed;
    else if (name == "m6" || name == "metal") v.model = Model::metal;
    else if (name == "m7") { v.model = Model::metal; v.state_use_weights = false; v.state_use_predictions = false; }
    else if (name == "m8") { v.model = Model::metal; v.state_use_predictions = false; }
    else if (name == "m9") { v.model = Model::metal; v.state_use_weights = false; }
    else throw ContractError("unknown variant: " + name);
    return v;
  }

  std::string name() const {
    switch (model) {
      case Model::maml: return "m1";
      case Model::learned_loss: return "m2";
      case Model::learned_plus_task_loss: return "m3";
      case Model::task_adaptive: return "m4";
      case Model::semi_fixed: return "m5";
      case Model::metal:
        if (!state_use_weights && !state_use_predictions) return "m7";
        if (!state_use_predictions) return "m8";
        if (!state_use_weights) return "m9";
        return "m6";
    }
    return "?";
  }

  StateOptions state_options(const StateOptions& base = {}) const {
    StateOptions o = base;
    o.use_weights = state_use_weights;
    o.use_predictions = state_use_predictions;
    return o;
  }
};

/// Detached affine values recorded per step for inspection/export; tensor
/// order (W1, b1, W2, b2).
struct AffineValues {
  std::array<double, 4> gamma{1, 1, 1, 1};
  std::array<double, 4> beta{0, 0, 0, 0};

  static AffineValues from(const AffineParams& a) {
    AffineValues v;
    for (std::size_t i = 0; i < 4; ++i) {
      v.gamma[i] = a.gamma[i].item();
      v.beta[i] = a.beta[i].item();
    }
    return v;
  }
};

struct TraceEntry {
  std::size_t step = 0;
  std::uint64_t task_id = 0;
  double inner_loss = 0.0;
  std::optional<AffineValues> support_affine;
  std::optional<AffineValues> query_affine;
};

/// One record per inner step.
using AdaptTrace = std::vector<TraceEntry>;

inline Tensor task_loss(const ModelSpec& spec, const ParamSet& params,
                        const Task& task, bool on_query = false) {
  const Tensor& x = on_query ? task.query_x : task.support_x;
  const Tensor& y = on_query ? task.query_y : task.support_y;
  const std::vector<int>& l = on_query ? task.query_labels : task.support_labels;
  return task_loss(spec, params, x, y, l);
}

namespace detail {

inline ParamSet descend(const ParamSet& params, const GradMap& grads,
                        double alpha) {
  ParamSet next;
  next.names = params.names;
  next.tensors.reserve(params.tensors.size());
  for (const Tensor& t : params.tensors)
    next.tensors.push_back(sub(t, scale(grads.at(t), alpha)));
  return next;
}

inline void check_finite_objective(const Tensor& obj, std::size_t step) {
  if (!obj.finite())
    throw NumericError("inner step " + std::to_string(step) +
                       ": non-finite objective");
}

}  // namespace detail

/// theta_{j+1} = theta_j - alpha * d(task loss)/d(theta_j).
inline ParamSet inner_step_maml(const ModelSpec& spec, const ParamSet& theta,
                                const Task& task, double alpha,
                                bool create_graph = true,
                                std::size_t step_index = 0,
                                double* objective_value = nullptr) {
  if (alpha < 0.0) throw ContractError("inner_step_maml: alpha must be >= 0");
  Tensor obj = task_loss(spec, theta, task);
  detail::check_finite_objective(obj, step_index);
  if (objective_value) *objective_value = obj.item();
  GradMap grads = backward(obj, std::span<const Tensor>(theta.tensors), create_graph);
  return detail::descend(theta, grads, alpha);
}

/// One adaptive step: build the task state(s), transform the loss learner,
/// descend the learned objective. Returns the new parameters and the trace
/// record of what the adapter produced.
inline std::pair<ParamSet, TraceEntry> inner_step_metal(
    const ModelSpec& spec, const Variant& variant, const ParamSet& theta,
    const Task& task, const BankSlot& slot, double alpha,
    bool create_graph = true, std::size_t step_index = 0,
    const StateOptions& base_options = {}) {
  StateOptions opts = variant.state_options(base_options);
  TraceEntry entry;
  entry.step = step_index;
  entry.task_id = task.descriptor.seed;

  TaskState state_s = build_state_supervised(
      spec, theta, task.support_x, task.support_y, task.support_labels, opts);

  LossLearnerParams phi_s = slot.support.loss;
  if (variant.uses_adapter()) {
    AffineParams a = forward_adapter(slot.support.adapter, state_s);
    entry.support_affine = AffineValues::from(a);
    phi_s = adapt_loss_params(phi_s, a);
  }
  Tensor objective = forward_loss_learner(phi_s, state_s);

  if (variant.uses_semi()) {
    if (!task.has_unlabeled())
      throw ContractError("inner_step_metal: semi-supervised variant needs an "
                          "unlabeled pool (see make_semi_split)");
    TaskState state_q =
        build_state_unlabeled(spec, theta, task.unlabeled_pool(), opts);
    LossLearnerParams phi_q = slot.query.loss;
    if (variant.uses_adapter()) {
      AffineParams a = forward_adapter(slot.query.adapter, state_q);
      entry.query_affine = AffineValues::from(a);
      phi_q = adapt_loss_params(phi_q, a);
    }
    objective = add(objective, forward_loss_learner(phi_q, state_q));
  }

  if (variant.adds_task_loss())
    objective = add(objective, task_loss(spec, theta, task));

  detail::check_finite_objective(objective, step_index);
  entry.inner_loss = objective.item();
  GradMap grads =
      backward(objective, std::span<const Tensor>(theta.tensors), create_graph);
  return {detail::descend(theta, grads, alpha), std::move(entry)};
}

/// J sequential steps, each with its own bank slot; the result stays
/// differentiable w.r.t. (theta_0, bank) when create_graph is set.
inline std::pair<ParamSet, AdaptTrace> run_inner_loop(
    const ModelSpec& spec, const Variant& variant, const Task& task,
    const ParamSet& theta0, const MetaParamBank& bank, double alpha,
    std::size_t inner_steps, bool create_graph = true,
    const StateOptions& base_options = {}) {
  if (inner_steps == 0) throw ContractError("run_inner_loop: J must be >= 1");
  ParamSet theta = theta0;
  AdaptTrace trace;
  trace.reserve(inner_steps);
  for (std::size_t j = 0; j < inner_steps; ++j) {
    if (variant.model == Model::maml) {
      TraceEntry e;
      e.step = j;
      e.task_id = task.descriptor.seed;
      theta = inner_step_maml(spec, theta, task, alpha, create_graph, j,
                              &e.inner_loss);
      trace.push_back(std::move(e));
    } else {
      auto [next, entry] = inner_step_metal(spec, variant, theta, task,
                                            bank.slot(j), alpha, create_graph,
                                            j, base_options);
      theta = std::move(next);
      trace.push_back(std::move(entry));
    }
  }
  return {std::move(theta), std::move(trace)};
}

}  // namespace metal
