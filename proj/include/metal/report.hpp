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

   Result tables and the affine-trace export.
*/
#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "metal/metatrain.hpp"

namespace metal {

struct ComparisonTable {
  std::string text;  // aligned, human-readable
  std::string csv;   // machine-readable
};

/// Per-variant mean +/- ci95 rows over a shared metric.
inline ComparisonTable compare_report(const std::vector<std::string>& names,
                                      const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ContractError("compare_report: no reports");
  if (names.size() != reports.size())
    throw ContractError("compare_report: one name per report required");
  for (const auto& r : reports)
    if (r.metric != reports[0].metric)
      throw ContractError("compare_report: metric mismatch (" + r.metric +
                          " vs " + reports[0].metric + ")");
  ComparisonTable out;
  std::ostringstream text, csv;
  std::size_t width = 8;
  for (const auto& n : names) width = std::max(width, n.size() + 2);
  text << std::left << std::setw(static_cast<int>(width)) << "variant"
       << reports[0].metric << " (mean +/- ci95, n)\n";
  csv << "variant," << reports[0].metric << "_mean,ci95,n_tasks\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    text << std::left << std::setw(static_cast<int>(width)) << names[i]
         << std::fixed << std::setprecision(4) << r.mean << " +/- "
         << std::setprecision(4) << r.ci95 << "  (n=" << r.n_tasks
         << (r.degenerate ? ", degenerate" : "") << ")\n";
    csv << names[i] << ',' << std::setprecision(10) << r.mean << ',' << r.ci95
        << ',' << r.n_tasks << "\n";
  }
  out.text = text.str();
  out.csv = csv.str();
  return out;
}

/// Run adaptation on each task and write one CSV row per
/// (task, step, example-set role, loss-learner tensor):
///
///   task_id,step,set,param,gamma,beta
///
/// Requires a variant with an adapter. Returns the number of data rows.
inline std::size_t export_affine_trace(const MetaModel& model,
                                       const TrainConfig& cfg,
                                       const std::vector<Task>& tasks,
                                       const std::string& path) {
  if (!cfg.variant.uses_adapter())
    throw ContractError("export_affine_trace: variant " + cfg.variant.name() +
                        " has no adapter");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("trace export: cannot write " + path);
  f << "task_id,step,set,param,gamma,beta\n";
  static constexpr const char* kParams[4] = {"W1", "b1", "W2", "b2"};
  std::size_t rows = 0;
  f << std::setprecision(17);
  for (const Task& task : tasks) {
    auto [theta, trace] =
        run_inner_loop(model.spec, cfg.variant, task, model.theta, model.bank,
                       cfg.inner_lr, cfg.inner_steps, /*create_graph=*/false,
                       cfg.state_options());
    for (const TraceEntry& e : trace) {
      auto write_set = [&](const char* set, const AffineValues& a) {
        for (std::size_t p = 0; p < 4; ++p) {
          f << task.descriptor.seed << ',' << e.step << ',' << set << ','
            << kParams[p] << ',' << a.gamma[p] << ',' << a.beta[p] << "\n";
          ++rows;
        }
      };
      if (e.support_affine) write_set("support", *e.support_affine);
      if (e.query_affine) write_set("query", *e.query_affine);
    }
  }
  if (!f) throw FormatError("trace export: short write to " + path);
  return rows;
}

}  // namespace metal
