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

   Run configuration: one struct covering episode generation, variant
   selection, network sizes and the optimization schedule, plus a
   key-value text form (the config file format) and named presets.
*/
#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metal/innerloop.hpp"
#include "metal/nets.hpp"
#include "metal/taskgen.hpp"
#include "metal/taskstate.hpp"

namespace metal {

enum class OuterOpt { sgd, adam };

struct TrainConfig {
  TaskFamily family = TaskFamily::sinusoid;
  Variant variant;

  std::size_t shots = 10;       // support examples (per way for cluster)
  std::size_t train_query = 15; // query count during training (per way for cluster)
  std::size_t eval_query = 100; // query count at evaluation
  std::size_t eval_tasks = 1000;
  std::size_t val_tasks = 100;

  double inner_lr = 0.1;
  double outer_lr = 0.001;
  std::size_t inner_steps = 1;
  std::size_t meta_batch = 4;
  std::size_t epochs = 20;
  std::size_t iters_per_epoch = 200;
  std::uint64_t seed = 1;

  OuterOpt outer_opt = OuterOpt::adam;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;

  std::vector<std::size_t> hidden = {80, 80};
  Activation activation = Activation::relu;
  double leaky_slope = 0.01;

  bool state_probs = true;  // feed softmaxed outputs into task states
  UnlabeledSlot unlabeled_slot = UnlabeledSlot::dispersion;
  bool share_bank_slots = false;

  // unlabeled pool for training episodes (per way for cluster, totals for
  // sinusoid); evaluation defaults to full transduction over the query set
  std::size_t semi_query = 15, semi_nonquery = 0, semi_distractor = 0;

  ClusterTaskParams cluster;

  TaskKind task_kind() const {
    return family == TaskFamily::sinusoid ? TaskKind::regression
                                          : TaskKind::classification;
  }

  ModelSpec model_spec() const {
    ModelSpec s;
    s.input_dim = family == TaskFamily::sinusoid ? 1 : cluster.dim;
    s.hidden_widths = hidden;
    s.output_dim = family == TaskFamily::sinusoid ? 1 : cluster.way;
    s.activation = activation;
    s.leaky_slope = leaky_slope;
    s.task_kind = task_kind();
    return s;
  }

  StateOptions state_options() const {
    StateOptions o;
    o.outputs_as_probabilities = state_probs;
    o.regression_unlabeled_slot = unlabeled_slot;
    return variant.state_options(o);
  }

  std::size_t state_width() const {
    return metal::state_width(model_spec(), state_options());
  }

  void validate() const {
    if (inner_lr <= 0.0 || outer_lr < 0.0)
      throw ContractError("config: learning rates must be positive");
    if (inner_steps == 0) throw ContractError("config: inner_steps must be >= 1");
    if (meta_batch == 0) throw ContractError("config: meta_batch must be >= 1");
    if (shots == 0 || train_query == 0 || eval_query == 0)
      throw ContractError("config: episode sizes must be >= 1");
    model_spec().validate();
  }
};

// ---------------------------------------------------------------------------
// Key-value text form.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoull(item));
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v) { return std::stod(v); }

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("config: bad boolean '" + v + "'");
}

}  // namespace detail

inline std::string serialize_config(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "family = " << (c.family == TaskFamily::sinusoid ? "sinusoid" : "cluster") << "\n";
  os << "variant = " << c.variant.name() << "\n";
  os << "shots = " << c.shots << "\n";
  os << "train_query = " << c.train_query << "\n";
  os << "eval_query = " << c.eval_query << "\n";
  os << "eval_tasks = " << c.eval_tasks << "\n";
  os << "val_tasks = " << c.val_tasks << "\n";
  os << "inner_lr = " << c.inner_lr << "\n";
  os << "outer_lr = " << c.outer_lr << "\n";
  os << "inner_steps = " << c.inner_steps << "\n";
  os << "meta_batch = " << c.meta_batch << "\n";
  os << "epochs = " << c.epochs << "\n";
  os << "iters_per_epoch = " << c.iters_per_epoch << "\n";
  os << "seed = " << c.seed << "\n";
  os << "outer_opt = " << (c.outer_opt == OuterOpt::adam ? "adam" : "sgd") << "\n";
  os << "adam_beta1 = " << c.adam_beta1 << "\n";
  os << "adam_beta2 = " << c.adam_beta2 << "\n";
  os << "adam_eps = " << c.adam_eps << "\n";
  os << "hidden = " << detail::join_sizes(c.hidden) << "\n";
  os << "activation = " << (c.activation == Activation::relu ? "relu" : "leaky_relu") << "\n";
  os << "leaky_slope = " << c.leaky_slope << "\n";
  os << "state_outputs = " << (c.state_probs ? "probs" : "logits") << "\n";
  os << "unlabeled_slot = "
     << (c.unlabeled_slot == UnlabeledSlot::dispersion ? "dispersion" : "zero") << "\n";
  os << "share_bank_slots = " << (c.share_bank_slots ? "true" : "false") << "\n";
  os << "semi_query = " << c.semi_query << "\n";
  os << "semi_nonquery = " << c.semi_nonquery << "\n";
  os << "semi_distractor = " << c.semi_distractor << "\n";
  os << "cluster_way = " << c.cluster.way << "\n";
  os << "cluster_dim = " << c.cluster.dim << "\n";
  os << "cluster_radius = " << c.cluster.radius << "\n";
  os << "cluster_sigma = " << c.cluster.sigma << "\n";
  return os.str();
}

/// Parse the key-value text form. Applies keys onto `base`, so partial
/// configs act as overrides.
inline TrainConfig parse_config(const std::string& text,
                                TrainConfig base = {}) {
  TrainConfig c = base;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = detail::trim(t.substr(0, eq));
    std::string val = detail::trim(t.substr(eq + 1));
    try {
      if (key == "family") {
        if (val == "sinusoid") c.family = TaskFamily::sinusoid;
        else if (val == "cluster") c.family = TaskFamily::cluster;
        else throw FormatError("config: unknown family '" + val + "'");
      } else if (key == "variant") c.variant = Variant::from_name(val);
      else if (key == "shots") c.shots = std::stoull(val);
      else if (key == "train_query") c.train_query = std::stoull(val);
      else if (key == "eval_query") c.eval_query = std::stoull(val);
      else if (key == "eval_tasks") c.eval_tasks = std::stoull(val);
      else if (key == "val_tasks") c.val_tasks = std::stoull(val);
      else if (key == "inner_lr") c.inner_lr = detail::parse_double(val);
      else if (key == "outer_lr") c.outer_lr = detail::parse_double(val);
      else if (key == "inner_steps") c.inner_steps = std::stoull(val);
      else if (key == "meta_batch") c.meta_batch = std::stoull(val);
      else if (key == "epochs") c.epochs = std::stoull(val);
      else if (key == "iters_per_epoch") c.iters_per_epoch = std::stoull(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "outer_opt") {
        if (val == "adam") c.outer_opt = OuterOpt::adam;
        else if (val == "sgd") c.outer_opt = OuterOpt::sgd;
        else throw FormatError("config: unknown outer_opt '" + val + "'");
      } else if (key == "adam_beta1") c.adam_beta1 = detail::parse_double(val);
      else if (key == "adam_beta2") c.adam_beta2 = detail::parse_double(val);
      else if (key == "adam_eps") c.adam_eps = detail::parse_double(val);
      else if (key == "hidden") c.hidden = detail::parse_sizes(val);
      else if (key == "activation") {
        if (val == "relu") c.activation = Activation::relu;
        else if (val == "leaky_relu") c.activation = Activation::leaky_relu;
        else throw FormatError("config: unknown activation '" + val + "'");
      } else if (key == "leaky_slope") c.leaky_slope = detail::parse_double(val);
      else if (key == "state_outputs") c.state_probs = (val == "probs");
      else if (key == "unlabeled_slot") {
        if (val == "dispersion") c.unlabeled_slot = UnlabeledSlot::dispersion;
        else if (val == "zero") c.unlabeled_slot = UnlabeledSlot::zero;
        else throw FormatError("config: unknown unlabeled_slot '" + val + "'");
      } else if (key == "share_bank_slots") c.share_bank_slots = detail::parse_bool(val);
      else if (key == "semi_query") c.semi_query = std::stoull(val);
      else if (key == "semi_nonquery") c.semi_nonquery = std::stoull(val);
      else if (key == "semi_distractor") c.semi_distractor = std::stoull(val);
      else if (key == "cluster_way") c.cluster.way = std::stoull(val);
      else if (key == "cluster_dim") c.cluster.dim = std::stoull(val);
      else if (key == "cluster_radius") c.cluster.radius = detail::parse_double(val);
      else if (key == "cluster_sigma") c.cluster.sigma = detail::parse_double(val);
      else throw FormatError("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw FormatError("config line " + std::to_string(lineno) +
                        ": bad value for " + key);
    }
  }
  return c;
}

/// FNV-1a over the canonical text form; identifies a configuration in
/// reports and file names.
inline std::string config_fingerprint(const TrainConfig& c) {
  std::string text = serialize_config(c);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Presets.
// ---------------------------------------------------------------------------

/// Sinusoid regression setup: 3 layers of width 80, one inner step at
/// alpha = 0.1, desk-scale outer budget. Outer rates are tuned per variant
/// family for this budget: adapter variants need a larger step to train the
/// affine generator out of its noisy initial regime.
inline TrainConfig sinusoid_preset(const std::string& variant_name,
                                   std::size_t shots = 10) {
  TrainConfig c;
  c.family = TaskFamily::sinusoid;
  c.variant = Variant::from_name(variant_name);
  c.shots = shots;
  c.train_query = 100;
  c.eval_query = 100;
  c.eval_tasks = 1000;
  c.val_tasks = 200;
  c.inner_lr = 0.1;
  c.outer_lr = c.variant.uses_adapter() ? 0.01 : 0.003;
  c.inner_steps = 1;
  c.meta_batch = 4;
  c.epochs = 20;
  c.iters_per_epoch = 200;
  c.hidden = {80, 80};
  c.semi_query = 100;
  return c;
}

/// 5-way 5-shot Gaussian-cluster classification with a calibrated noise
/// level (Bayes-optimal accuracy near 0.90) so variant orderings resolve.
inline TrainConfig cluster_preset(const std::string& variant_name) {
  TrainConfig c;
  c.family = TaskFamily::cluster;
  c.variant = Variant::from_name(variant_name);
  c.shots = 5;
  c.train_query = 15;
  c.eval_query = 15;
  c.eval_tasks = 400;
  c.val_tasks = 60;
  c.inner_lr = 0.1;
  c.outer_lr = 0.001;
  c.inner_steps = 5;
  c.meta_batch = 2;
  c.epochs = 24;
  c.iters_per_epoch = 125;
  c.hidden = {40, 40};
  c.semi_query = 15;
  return c;
}

inline TrainConfig preset_by_name(const std::string& name) {
  auto starts = [&name](const std::string& p) {
    return name.rfind(p, 0) == 0;
  };
  if (starts("sinusoid-")) {
    std::string rest = name.substr(9);
    std::size_t shots = 10;
    std::size_t dash = rest.find('-');
    std::string variant = rest;
    if (dash != std::string::npos) {
      variant = rest.substr(0, dash);
      std::string shot_part = rest.substr(dash + 1);
      if (shot_part.size() > 4 && shot_part.substr(shot_part.size() - 4) == "shot")
        shots = std::stoull(shot_part.substr(0, shot_part.size() - 4));
      else
        throw ContractError("unknown preset: " + name);
    }
    return sinusoid_preset(variant, shots);
  }
  if (starts("cluster-")) return cluster_preset(name.substr(8));
  throw ContractError("unknown preset: " + name);
}

/// Variant subsets for the ablation matrices.
inline std::vector<std::string> ablation_set(const std::string& name) {
  if (name == "table4") return {"m1", "m2", "m3"};
  if (name == "table5") return {"m2", "m4", "m5", "m6"};
  if (name == "table6") return {"m7", "m8", "m9", "m6"};
  if (name == "full") return {"m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9"};
  throw ContractError("unknown ablation set: " + name);
}

}  // namespace metal
