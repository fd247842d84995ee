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

   Command-line front end:

     metal train    --preset NAME | --config FILE   [--seed N] [--out DIR]
     metal eval     --checkpoint FILE [--tasks N] [--semi q,n,d] [--out DIR]
     metal ablate   --preset table4|table5|table6|full [--base PRESET]
     metal trace    --checkpoint FILE [--tasks N] [--out DIR]
     metal selftest

   Exit codes: 0 success, 2 usage error, 1 anything else.
*/
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "metal/checkpoint.hpp"
#include "metal/episode.hpp"
#include "metal/gradcheck.hpp"
#include "metal/report.hpp"

namespace fs = std::filesystem;
using namespace metal;

namespace {

struct CommonArgs {
  std::string preset;
  std::string config_path;
  std::string out_dir = "runs/out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

TrainConfig resolve_config(const CommonArgs& a, bool need_any = true) {
  TrainConfig cfg;
  bool have = false;
  if (!a.preset.empty()) {
    cfg = preset_by_name(a.preset);
    have = true;
  }
  if (!a.config_path.empty()) {
    std::ifstream f(a.config_path);
    if (!f) throw FormatError("cannot read config file " + a.config_path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    cfg = parse_config(text, cfg);
    have = true;
  }
  if (need_any && !have)
    throw ContractError("train: give --preset or --config");
  if (a.seed_set) cfg.seed = a.seed;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f << text;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "metric = " << r.metric << "\n"
     << "mean = " << r.mean << "\n"
     << "ci95 = " << r.ci95 << "\n"
     << "n_tasks = " << r.n_tasks << "\n"
     << "degenerate = " << (r.degenerate ? "true" : "false") << "\n"
     << "config_fingerprint = " << r.config_fingerprint << "\n";
  return os.str();
}

int cmd_train(const CommonArgs& a) {
  TrainConfig cfg = resolve_config(a);
  fs::create_directories(a.out_dir);
  write_text(fs::path(a.out_dir) / "config.txt", serialize_config(cfg));

  std::ofstream log(fs::path(a.out_dir) / "train.log", std::ios::trunc);
  MetaModel model = init_model(cfg);
  TrainCallbacks cb;
  cb.on_progress = [&](const std::string& line) {
    std::cout << line << "\n";
    log << line << "\n";
  };
  std::string ckpt = (fs::path(a.out_dir) / "model.ckpt").string();
  cb.on_epoch_end = [&](const MetaModel& m, std::size_t) {
    save_checkpoint(m, cfg, ckpt);
  };
  cb.on_abort = [&](const MetaModel& m) {
    std::string dump = (fs::path(a.out_dir) / "abort.ckpt").string();
    save_checkpoint(m, cfg, dump);
    std::cerr << "non-finite meta-loss; state dumped to " << dump << "\n";
  };
  meta_train(model, default_task_source(cfg), cfg, cb);
  save_checkpoint(model, cfg, ckpt);

  EvalReport r = meta_evaluate(model, evaluation_tasks(cfg), cfg);
  std::string rep = report_text(r);
  write_text(fs::path(a.out_dir) / "eval.txt", rep);
  std::cout << rep;
  return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& ckpt_path,
             std::size_t n_tasks, const std::string& semi_spec) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  TrainConfig cfg = ck.config;
  if (a.seed_set) cfg.seed = a.seed;

  std::optional<SemiSplit> split;
  if (!semi_spec.empty()) {
    SemiSplit s;
    if (std::sscanf(semi_spec.c_str(), "%zu,%zu,%zu", &s.query, &s.nonquery,
                    &s.distractor) != 3)
      throw ContractError("eval: --semi expects q,n,d counts");
    split = s;
  }
  std::vector<Task> tasks = evaluation_tasks(cfg, n_tasks, split);
  EvalReport r = meta_evaluate(ck.model, tasks, cfg);
  std::string rep = report_text(r);
  std::cout << rep;
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    write_text(fs::path(a.out_dir) / "eval.txt", rep);
  }
  return 0;
}

int cmd_ablate(const CommonArgs& a, const std::string& set_name,
               const std::string& base_preset) {
  std::vector<std::string> variants = ablation_set(set_name);
  fs::create_directories(a.out_dir);

  std::vector<std::string> names;
  std::vector<EvalReport> reports;
  for (const std::string& v : variants) {
    TrainConfig cfg = preset_by_name(base_preset + "-" + v);
    if (!a.config_path.empty()) {
      std::ifstream f(a.config_path);
      if (!f) throw FormatError("cannot read config file " + a.config_path);
      std::string text((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
      cfg = parse_config(text, cfg);
    }
    if (a.seed_set) cfg.seed = a.seed;
    std::cout << "== training variant " << v << " ==\n";
    std::ofstream log(fs::path(a.out_dir) / ("train_" + v + ".log"),
                      std::ios::trunc);
    MetaModel model = init_model(cfg);
    TrainCallbacks cb;
    cb.on_progress = [&](const std::string& line) { log << line << "\n"; };
    meta_train(model, default_task_source(cfg), cfg, cb);
    save_checkpoint(model, cfg,
                    (fs::path(a.out_dir) / ("model_" + v + ".ckpt")).string());
    reports.push_back(meta_evaluate(model, evaluation_tasks(cfg), cfg));
    names.push_back(v);
  }
  ComparisonTable table = compare_report(names, reports);
  std::cout << table.text;
  write_text(fs::path(a.out_dir) / "comparison.txt", table.text);
  write_text(fs::path(a.out_dir) / "comparison.csv", table.csv);
  return 0;
}

int cmd_trace(const CommonArgs& a, const std::string& ckpt_path,
              std::size_t n_tasks) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  TrainConfig cfg = ck.config;
  if (a.seed_set) cfg.seed = a.seed;
  fs::create_directories(a.out_dir);
  std::string path = (fs::path(a.out_dir) / "affine_trace.csv").string();
  std::size_t rows =
      export_affine_trace(ck.model, cfg, evaluation_tasks(cfg, n_tasks), path);
  std::cout << "wrote " << rows << " rows to " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meta-learning with a task-adaptive learned inner-loop loss"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  CommonArgs common;
  app.add_option("--seed", common.seed, "run seed")
      ->each([&common](const std::string&) { common.seed_set = true; });
  app.add_option("--config", common.config_path, "key-value config file");
  app.add_option("--out", common.out_dir, "output directory");

  auto* train = app.add_subcommand("train", "meta-train a model");
  train->add_option("--preset", common.preset,
                    "preset name, e.g. sinusoid-metal, sinusoid-maml-20shot, "
                    "cluster-m6");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path, semi_spec;
  std::size_t n_tasks = 0;
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--tasks", n_tasks, "number of held-out tasks");
  eval->add_option("--semi", semi_spec,
                   "unlabeled pool as query,nonquery,distractor counts");

  auto* ablate = app.add_subcommand("ablate", "train and compare variants");
  std::string set_name = "table4", base_preset = "cluster";
  ablate->add_option("--preset", set_name,
                     "variant set: table4, table5, table6 or full");
  ablate->add_option("--base", base_preset, "base preset family (cluster)");

  auto* trace = app.add_subcommand("trace", "export per-step affine values");
  trace->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  trace->add_option("--tasks", n_tasks, "tasks to trace")->default_val(10);

  app.add_subcommand("selftest", "finite-difference gradient oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems exit 2
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(common);
    if (app.got_subcommand("eval"))
      return cmd_eval(common, ckpt_path, n_tasks, semi_spec);
    if (app.got_subcommand("ablate"))
      return cmd_ablate(common, set_name, base_preset);
    if (app.got_subcommand("trace"))
      return cmd_trace(common, ckpt_path, n_tasks ? n_tasks : 10);
    if (app.got_subcommand("selftest"))
      return selftest::run() == 0 ? 0 : 1;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    // unknown preset names and malformed invocations are usage errors
    std::string what = e.what();
    if (what.find("unknown preset") != std::string::npos ||
        what.find("unknown variant") != std::string::npos ||
        what.find("unknown ablation set") != std::string::npos ||
        what.find("give --preset or --config") != std::string::npos)
      return 2;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
