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

   Task-state construction: the per-example summary of the current learning
   status that the meta-networks consume. Each row is

       [ loss slot | layer-wise weight means (same on every row) | outputs ]

   giving width 1 + L + N for an L-layer base learner with N outputs. For
   unlabeled examples the loss slot holds the prediction entropy
   (classification) or a dispersion surrogate (regression).
*/
#pragma once

#include "metal/nets.hpp"
#include "metal/tensor.hpp"

namespace metal {

/// Rows of the task state; width 1 + L + N when all factors are enabled.
using TaskState = Tensor;

enum class UnlabeledSlot { dispersion, zero };

struct StateOptions {
  bool use_weights = true;      // include the L layer-mean columns
  bool use_predictions = true;  // include the N output columns
  bool outputs_as_probabilities = true;  // classification outputs fed softmaxed
  UnlabeledSlot regression_unlabeled_slot = UnlabeledSlot::dispersion;
};

inline std::size_t state_width(const ModelSpec& spec, const StateOptions& o) {
  return 1 + (o.use_weights ? spec.layer_count() : 0) +
         (o.use_predictions ? spec.output_dim : 0);
}

/// Joint mean over W_l and b_l entries for each layer, shape [1xL].
inline Tensor layerwise_weight_means(const ParamSet& params) {
  std::vector<Tensor> cols;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const Tensor& w = params.weight(l);
    const Tensor& b = params.bias(l);
    double inv = 1.0 / static_cast<double>(w.size() + b.size());
    Tensor total = add(sum(w), sum(b));
    cols.push_back(reshape(scale(total, inv), {1, 1}));
  }
  return concat(cols, 1);
}

namespace detail {

inline Tensor assemble_state(const ModelSpec& spec, const ParamSet& params,
                             const Tensor& loss_col, const Tensor& outputs,
                             const StateOptions& o) {
  std::size_t batch = outputs.dim(0);
  std::vector<Tensor> cols{loss_col};
  if (o.use_weights)
    cols.push_back(broadcast_to(layerwise_weight_means(params),
                                {batch, spec.layer_count()}));
  if (o.use_predictions) cols.push_back(outputs);
  return concat(cols, 1);
}

/// Per-example squared deviation of the prediction from the batch-mean
/// prediction; stands in for entropy on regression outputs.
inline Tensor dispersion_rows(const Tensor& outputs) {
  Tensor center = broadcast_to(mean(outputs, 0), outputs.shape());
  return mean(square(sub(outputs, center)), 1);
}

}  // namespace detail

/// Task state over labeled examples: loss slot carries the per-example task
/// loss (same reduction as the plain task loss when averaged).
inline TaskState build_state_supervised(const ModelSpec& spec,
                                        const ParamSet& params, const Tensor& x,
                                        const Tensor& y_regression,
                                        const std::vector<int>& labels,
                                        const StateOptions& o = {}) {
  if (x.rank() != 2 || x.dim(0) == 0)
    throw ContractError("build_state_supervised: empty support set");
  Tensor out = forward_base(spec, params, x);
  Tensor loss_col, preds;
  if (spec.task_kind == TaskKind::regression) {
    loss_col = loss_mse_per_example(out, y_regression);
    preds = out;
  } else {
    loss_col = loss_softmax_ce_per_example(out, labels);
    preds = o.outputs_as_probabilities ? softmax_rows(out) : out;
  }
  return detail::assemble_state(spec, params, loss_col, preds, o);
}

/// Task state over unlabeled examples; same width as the supervised state so
/// one meta-network input dimension serves both.
inline TaskState build_state_unlabeled(const ModelSpec& spec,
                                       const ParamSet& params, const Tensor& x,
                                       const StateOptions& o = {}) {
  if (x.rank() != 2 || x.dim(0) == 0)
    throw ContractError("build_state_unlabeled: empty example set");
  Tensor out = forward_base(spec, params, x);
  Tensor loss_col, preds;
  if (spec.task_kind == TaskKind::regression) {
    loss_col = o.regression_unlabeled_slot == UnlabeledSlot::dispersion
                   ? detail::dispersion_rows(out)
                   : Tensor::zeros({out.dim(0), 1});
    preds = out;
  } else {
    Tensor probs = softmax_rows(out);
    loss_col = entropy_rows(probs);
    preds = o.outputs_as_probabilities ? probs : out;
  }
  return detail::assemble_state(spec, params, loss_col, preds, o);
}

}  // namespace metal
