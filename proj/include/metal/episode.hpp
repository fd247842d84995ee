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

   Structured-text episode format for test fixtures:

     descriptor lines    key = value
     array lines         name = ROWS COLS : v1 v2 ...   (row-major, %.17g)
     label lines         name = l1 l2 ...

   Arrays carried: support_x/y, query_x/y, optional unlabeled pools and
   cluster_means; labels for classification episodes.
*/
#pragma once

#include <fstream>
#include <sstream>

#include "metal/config.hpp"  // detail::trim
#include "metal/taskgen.hpp"

namespace metal {

namespace detail {

inline void write_array(std::ostream& os, const char* name, const Tensor& t) {
  os << name << " = " << t.dim(0) << ' ' << t.dim(1) << " :";
  os.precision(17);
  for (double v : t.values()) os << ' ' << v;
  os << '\n';
}

inline Tensor read_array(const std::string& value) {
  std::istringstream is(value);
  std::size_t r, c;
  char colon;
  if (!(is >> r >> c >> colon) || colon != ':')
    throw FormatError("episode: bad array header '" + value + "'");
  std::vector<double> vals(r * c);
  for (double& v : vals)
    if (!(is >> v)) throw FormatError("episode: truncated array");
  return Tensor(std::move(vals), Shape{r, c});
}

}  // namespace detail

inline void save_task(const Task& t, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("episode: cannot write " + path);
  const TaskDescriptor& d = t.descriptor;
  f.precision(17);
  f << "family = " << (d.family == TaskFamily::sinusoid ? "sinusoid" : "cluster") << '\n';
  f << "seed = " << d.seed << '\n';
  if (d.family == TaskFamily::sinusoid) {
    f << "amplitude = " << d.sinusoid.amplitude << '\n';
    f << "frequency = " << d.sinusoid.frequency << '\n';
    f << "phase = " << d.sinusoid.phase << '\n';
  } else {
    f << "way = " << d.cluster.way << '\n';
    f << "dim = " << d.cluster.dim << '\n';
    f << "radius = " << d.cluster.radius << '\n';
    f << "sigma = " << d.cluster.sigma << '\n';
    detail::write_array(f, "cluster_means", d.cluster_means);
  }
  f << "semi_query = " << d.semi_query << '\n';
  f << "semi_nonquery = " << d.semi_nonquery << '\n';
  f << "semi_distractor = " << d.semi_distractor << '\n';
  detail::write_array(f, "support_x", t.support_x);
  detail::write_array(f, "query_x", t.query_x);
  if (d.family == TaskFamily::sinusoid) {
    detail::write_array(f, "support_y", t.support_y);
    detail::write_array(f, "query_y", t.query_y);
  } else {
    f << "support_labels =";
    for (int l : t.support_labels) f << ' ' << l;
    f << '\n';
    f << "query_labels =";
    for (int l : t.query_labels) f << ' ' << l;
    f << '\n';
  }
  if (t.unlabeled_query_x)
    detail::write_array(f, "unlabeled_query_x", *t.unlabeled_query_x);
  if (t.unlabeled_nonquery_x)
    detail::write_array(f, "unlabeled_nonquery_x", *t.unlabeled_nonquery_x);
  if (t.distractor_x) detail::write_array(f, "distractor_x", *t.distractor_x);
  if (!f) throw FormatError("episode: short write to " + path);
}

inline Task load_task(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("episode: cannot read " + path);
  Task t;
  std::string line;
  while (std::getline(f, line)) {
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    TaskDescriptor& d = t.descriptor;
    if (key == "family")
      d.family = val == "cluster" ? TaskFamily::cluster : TaskFamily::sinusoid;
    else if (key == "seed") d.seed = std::stoull(val);
    else if (key == "amplitude") d.sinusoid.amplitude = std::stod(val);
    else if (key == "frequency") d.sinusoid.frequency = std::stod(val);
    else if (key == "phase") d.sinusoid.phase = std::stod(val);
    else if (key == "way") d.cluster.way = std::stoull(val);
    else if (key == "dim") d.cluster.dim = std::stoull(val);
    else if (key == "radius") d.cluster.radius = std::stod(val);
    else if (key == "sigma") d.cluster.sigma = std::stod(val);
    else if (key == "semi_query") d.semi_query = std::stoull(val);
    else if (key == "semi_nonquery") d.semi_nonquery = std::stoull(val);
    else if (key == "semi_distractor") d.semi_distractor = std::stoull(val);
    else if (key == "cluster_means") d.cluster_means = detail::read_array(val);
    else if (key == "support_x") t.support_x = detail::read_array(val);
    else if (key == "support_y") t.support_y = detail::read_array(val);
    else if (key == "query_x") t.query_x = detail::read_array(val);
    else if (key == "query_y") t.query_y = detail::read_array(val);
    else if (key == "unlabeled_query_x") t.unlabeled_query_x = detail::read_array(val);
    else if (key == "unlabeled_nonquery_x") t.unlabeled_nonquery_x = detail::read_array(val);
    else if (key == "distractor_x") t.distractor_x = detail::read_array(val);
    else if (key == "support_labels" || key == "query_labels") {
      std::istringstream is(val);
      std::vector<int> labels;
      int l;
      while (is >> l) labels.push_back(l);
      (key[0] == 's' ? t.support_labels : t.query_labels) = std::move(labels);
    } else {
      throw FormatError("episode: unknown key '" + key + "'");
    }
  }
  return t;
}

}  // namespace metal
