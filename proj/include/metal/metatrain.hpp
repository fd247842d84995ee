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

   Outer-loop meta-training: sample a batch of episodes, adapt the base
   learner per episode through the differentiable inner loop, sum the query
   losses of the adapted learners, and descend (theta, phi, psi) through the
   whole computation. Plus the matching evaluation pass.

   Everything is counter-seeded from (config seed, stream tag, position), so
   identical (seed, config) runs are bit-identical and a run resumed from a
   checkpoint replays the exact task stream.
*/
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metal/config.hpp"
#include "metal/innerloop.hpp"
#include "metal/nets.hpp"
#include "metal/taskgen.hpp"

namespace metal {

namespace detail {
// seed stream tags of the trainer
inline constexpr std::uint64_t kStreamInit = 100;
inline constexpr std::uint64_t kStreamTrainTasks = 101;
inline constexpr std::uint64_t kStreamValTasks = 102;
inline constexpr std::uint64_t kStreamEvalTasks = 103;
}  // namespace detail

/// Optimizer state, keyed by parameter name so it survives checkpointing.
struct OptState {
  std::uint64_t step_count = 0;
  std::map<std::string, std::vector<double>> m, v;  // adam moments
};

/// Best-validation snapshot (named raw values).
struct ParamSnapshot {
  double metric = 0.0;
  std::map<std::string, std::vector<double>> values;
};

struct MetaModel {
  ModelSpec spec;
  ParamSet theta;
  MetaParamBank bank;
  OptState opt;

  // training position (for resume) and records
  std::size_t next_epoch = 0;
  std::size_t next_iter = 0;
  std::vector<std::string> history;
  std::optional<ParamSnapshot> best;
};

/// Fresh model for a config: theta plus one meta-net pair per inner step and
/// example-set role, sized to the variant's task-state width.
inline MetaModel init_model(const TrainConfig& cfg) {
  cfg.validate();
  MetaModel m;
  m.spec = cfg.model_spec();
  m.theta = init_params(m.spec, mix_seed(cfg.seed, detail::kStreamInit));
  m.bank = init_bank(cfg.state_width(), cfg.inner_steps,
                     mix_seed(cfg.seed, detail::kStreamInit, 1),
                     cfg.share_bank_slots);
  return m;
}

// ---------------------------------------------------------------------------
// Trainable parameters, in a fixed order.
// ---------------------------------------------------------------------------

struct TrainableRef {
  std::string name;
  Tensor* slot;
};

namespace detail {

inline void add_meta_net(std::vector<TrainableRef>& out, MetaNetParams& p,
                         const std::string& prefix) {
  out.push_back({prefix + ".W1", &p.W1});
  out.push_back({prefix + ".b1", &p.b1});
  out.push_back({prefix + ".W2", &p.W2});
  out.push_back({prefix + ".b2", &p.b2});
}

}  // namespace detail

/// theta first (layer-major), then per bank slot: support loss net, support
/// adapter, query loss net, query adapter — restricted to what the variant
/// actually trains, so unused parameters stay untouched.
inline std::vector<TrainableRef> collect_trainables(MetaModel& model,
                                                    const Variant& variant) {
  std::vector<TrainableRef> out;
  for (std::size_t i = 0; i < model.theta.tensors.size(); ++i)
    out.push_back({"theta." + model.theta.names[i], &model.theta.tensors[i]});
  if (!variant.uses_learned_loss()) return out;
  for (std::size_t j = 0; j < model.bank.step_count(); ++j) {
    BankSlot& slot = model.bank.slots[j];
    std::string p = "bank.s" + std::to_string(j);
    detail::add_meta_net(out, slot.support.loss, p + ".support.loss");
    if (variant.uses_adapter())
      detail::add_meta_net(out, slot.support.adapter, p + ".support.adapter");
    if (variant.uses_semi()) {
      detail::add_meta_net(out, slot.query.loss, p + ".query.loss");
      if (variant.uses_adapter())
        detail::add_meta_net(out, slot.query.adapter, p + ".query.adapter");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outer optimizers (plain value updates on leaf parameters).
// ---------------------------------------------------------------------------

namespace detail {

inline void apply_outer_update(std::vector<TrainableRef>& trainables,
                               const std::vector<std::vector<double>>& grads,
                               OptState& opt, const TrainConfig& cfg) {
  opt.step_count += 1;
  for (std::size_t i = 0; i < trainables.size(); ++i) {
    Tensor& w = *trainables[i].slot;
    std::vector<double> values(w.values().begin(), w.values().end());
    const std::vector<double>& g = grads[i];
    if (cfg.outer_opt == OuterOpt::sgd) {
      for (std::size_t k = 0; k < values.size(); ++k)
        values[k] -= cfg.outer_lr * g[k];
    } else {
      auto& m = opt.m[trainables[i].name];
      auto& v = opt.v[trainables[i].name];
      if (m.empty()) m.assign(values.size(), 0.0);
      if (v.empty()) v.assign(values.size(), 0.0);
      double t = static_cast<double>(opt.step_count);
      double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
      double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
      for (std::size_t k = 0; k < values.size(); ++k) {
        m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * g[k];
        v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * g[k] * g[k];
        values[k] -= cfg.outer_lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
      }
    }
    w = Tensor::param(std::move(values), w.shape());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Episode sampling for a config.
// ---------------------------------------------------------------------------

struct SemiSplit {
  std::size_t query = 0, nonquery = 0, distractor = 0;
};

/// Build one episode for the config. Semi-supervised variants get an
/// unlabeled pool attached; by default evaluation-style tasks use the full
/// query set (transductive), training tasks use the configured counts.
inline Task sample_task(const TrainConfig& cfg, std::uint64_t task_seed,
                        std::size_t query_count,
                        std::optional<SemiSplit> split = std::nullopt) {
  Task t = cfg.family == TaskFamily::sinusoid
               ? sample_sinusoid_task(task_seed, cfg.shots, query_count)
               : sample_cluster_task(task_seed, cfg.shots, query_count,
                                     cfg.cluster);
  if (cfg.variant.uses_semi()) {
    SemiSplit s = split.value_or(SemiSplit{query_count, 0, 0});
    t = make_semi_split(std::move(t), s.query, s.nonquery, s.distractor);
  }
  return t;
}

inline SemiSplit train_semi_split(const TrainConfig& cfg) {
  return SemiSplit{cfg.semi_query, cfg.semi_nonquery, cfg.semi_distractor};
}

/// Task source used by meta_train: deterministic in (seed, iteration, slot).
using TaskSource = std::function<Task(std::size_t iteration, std::size_t slot)>;

inline TaskSource default_task_source(const TrainConfig& cfg) {
  return [cfg](std::size_t iteration, std::size_t slot) {
    std::uint64_t s = mix_seed(mix_seed(cfg.seed, detail::kStreamTrainTasks, iteration), slot);
    return sample_task(cfg, s, cfg.train_query, train_semi_split(cfg));
  };
}

/// Fixed, seeded validation pool.
inline std::vector<Task> validation_tasks(const TrainConfig& cfg) {
  std::vector<Task> out;
  out.reserve(cfg.val_tasks);
  for (std::size_t i = 0; i < cfg.val_tasks; ++i)
    out.push_back(sample_task(
        cfg, mix_seed(cfg.seed, detail::kStreamValTasks, i), cfg.eval_query));
  return out;
}

/// Held-out evaluation pool (distinct stream from validation).
inline std::vector<Task> evaluation_tasks(const TrainConfig& cfg,
                                          std::size_t count = 0,
                                          std::optional<SemiSplit> split = std::nullopt) {
  std::size_t n = count ? count : cfg.eval_tasks;
  std::vector<Task> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(sample_task(
        cfg, mix_seed(cfg.seed, detail::kStreamEvalTasks, i), cfg.eval_query,
        split));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string metric;  // "mse" or "accuracy"
  double mean = 0.0;
  double ci95 = 0.0;
  std::size_t n_tasks = 0;
  bool degenerate = false;  // n < 2: ci95 pinned to 0 by convention
  std::vector<double> per_task;
  std::string config_fingerprint;
};

/// Adapt per task (inner loop only) and score the query set. Pure: the model
/// is untouched.
inline EvalReport meta_evaluate(const MetaModel& model,
                                const std::vector<Task>& tasks,
                                const TrainConfig& cfg) {
  if (tasks.empty()) throw ContractError("meta_evaluate: no tasks");
  EvalReport r;
  r.metric = cfg.task_kind() == TaskKind::regression ? "mse" : "accuracy";
  r.config_fingerprint = config_fingerprint(cfg);
  r.per_task.reserve(tasks.size());
  for (const Task& task : tasks) {
    auto [theta, trace] =
        run_inner_loop(model.spec, cfg.variant, task, model.theta, model.bank,
                       cfg.inner_lr, cfg.inner_steps, /*create_graph=*/false,
                       cfg.state_options());
    NoGradGuard ng;
    Tensor out = forward_base(model.spec, theta, task.query_x);
    if (cfg.task_kind() == TaskKind::regression) {
      r.per_task.push_back(loss_mse(out, task.query_y).item());
    } else {
      std::size_t correct = 0, n = out.dim(0), ways = out.dim(1);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < ways; ++j)
          if (out.at(i, j) > out.at(i, arg)) arg = j;
        correct += static_cast<int>(arg) == task.query_labels[i];
      }
      r.per_task.push_back(static_cast<double>(correct) / static_cast<double>(n));
    }
  }
  r.n_tasks = r.per_task.size();
  double s = 0.0;
  for (double v : r.per_task) s += v;
  r.mean = s / static_cast<double>(r.n_tasks);
  if (r.n_tasks < 2) {
    r.degenerate = true;
    r.ci95 = 0.0;
  } else {
    double ss = 0.0;
    for (double v : r.per_task) ss += (v - r.mean) * (v - r.mean);
    double sd = std::sqrt(ss / static_cast<double>(r.n_tasks - 1));
    r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(r.n_tasks));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

/// One outer step over a task batch; returns the mean query loss.
inline double meta_train_step(MetaModel& model, const std::vector<Task>& tasks,
                              const TrainConfig& cfg) {
  if (tasks.empty()) throw ContractError("meta_train_step: empty batch");
  std::vector<TrainableRef> trainables = collect_trainables(model, cfg.variant);

  Tensor total = Tensor::scalar(0.0);
  for (const Task& task : tasks) {
    auto [theta, trace] =
        run_inner_loop(model.spec, cfg.variant, task, model.theta, model.bank,
                       cfg.inner_lr, cfg.inner_steps, /*create_graph=*/true,
                       cfg.state_options());
    total = add(total, task_loss(model.spec, theta, task, /*on_query=*/true));
  }
  if (!total.finite())
    throw NumericError("meta_train_step: non-finite meta-loss");

  std::vector<Tensor> wrt;
  wrt.reserve(trainables.size());
  for (const auto& t : trainables) wrt.push_back(*t.slot);
  GradMap gm = backward(total, std::span<const Tensor>(wrt), false);

  std::vector<std::vector<double>> grads;
  grads.reserve(trainables.size());
  for (const auto& t : trainables) {
    Tensor g = gm.at(*t.slot);
    grads.emplace_back(g.values().begin(), g.values().end());
  }
  detail::apply_outer_update(trainables, grads, model.opt, cfg);
  return total.item() / static_cast<double>(tasks.size());
}

struct TrainCallbacks {
  std::function<void(const std::string& line)> on_progress;
  std::function<void(const MetaModel&, std::size_t epoch)> on_epoch_end;
  std::function<void(const MetaModel&)> on_abort;
};

namespace detail {

inline std::map<std::string, std::vector<double>> named_values(
    MetaModel& model, const Variant& variant) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& t : collect_trainables(model, variant))
    out[t.name] = {t.slot->values().begin(), t.slot->values().end()};
  return out;
}

inline void restore_values(MetaModel& model, const Variant& variant,
                           const std::map<std::string, std::vector<double>>& values) {
  for (auto& t : collect_trainables(model, variant)) {
    auto it = values.find(t.name);
    if (it == values.end()) continue;
    *t.slot = Tensor::param(it->second, t.slot->shape());
  }
}

}  // namespace detail

/// Full training run: epochs x iterations meta-steps with per-epoch
/// validation on a fixed pool. The best-validation parameters are restored
/// into the model after the final epoch. Resumes cleanly from a mid-run
/// model state (next_epoch / next_iter).
inline void meta_train(MetaModel& model, const TaskSource& source,
                       const TrainConfig& cfg,
                       const TrainCallbacks& cb = {}) {
  cfg.validate();
  auto emit = [&](const std::string& line) {
    model.history.push_back(line);
    if (cb.on_progress) cb.on_progress(line);
  };
  std::vector<Task> val_pool;
  bool lower_is_better = cfg.task_kind() == TaskKind::regression;

  try {
    for (std::size_t epoch = model.next_epoch; epoch < cfg.epochs; ++epoch) {
      std::size_t start_iter = epoch == model.next_epoch ? model.next_iter : 0;
      for (std::size_t iter = start_iter; iter < cfg.iters_per_epoch; ++iter) {
        std::size_t global = epoch * cfg.iters_per_epoch + iter;
        std::vector<Task> batch;
        batch.reserve(cfg.meta_batch);
        for (std::size_t k = 0; k < cfg.meta_batch; ++k)
          batch.push_back(source(global, k));
        double loss = meta_train_step(model, batch, cfg);
        model.next_epoch = epoch;
        model.next_iter = iter + 1;
        char line[128];
        std::snprintf(line, sizeof(line), "epoch=%zu iter=%zu train_loss=%.17g",
                      epoch, iter, loss);
        emit(line);
      }
      model.next_epoch = epoch + 1;
      model.next_iter = 0;

      if (val_pool.empty() && cfg.val_tasks > 0) val_pool = validation_tasks(cfg);
      if (!val_pool.empty()) {
        EvalReport val = meta_evaluate(model, val_pool, cfg);
        bool improved = !model.best ||
                        (lower_is_better ? val.mean < model.best->metric
                                         : val.mean > model.best->metric);
        if (improved) {
          ParamSnapshot snap;
          snap.metric = val.mean;
          snap.values = detail::named_values(model, cfg.variant);
          model.best = std::move(snap);
        }
        char line[160];
        std::snprintf(line, sizeof(line),
                      "epoch=%zu val_%s=%.17g best_%s=%.17g", epoch,
                      val.metric.c_str(), val.mean, val.metric.c_str(),
                      model.best->metric);
        emit(line);
      }
      if (cb.on_epoch_end) cb.on_epoch_end(model, epoch);
    }
  } catch (const NumericError&) {
    if (cb.on_abort) cb.on_abort(model);
    throw;
  }

  if (model.best && model.next_epoch == cfg.epochs) {
    detail::restore_values(model, cfg.variant, model.best->values);
    char line[96];
    std::snprintf(line, sizeof(line), "restored_best_validation=%.17g",
                  model.best->metric);
    emit(line);
  }
}

}  // namespace metal
