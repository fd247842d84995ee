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

   Checkpoint container, version 1:

     magic "METALCK1" | u32 version
     | u64 len, config text        (key-value form, see config.hpp)
     | u64 len, position text      (next_epoch / next_iter / opt_steps /
                                    best_metric; task sampling is
                                    counter-seeded so this plus the config
                                    seed IS the full rng state)
     | u64 count, arrays           (u64 len + name, u32 ndim, u64 dims,
                                    f64 values)
     | u64 len, history text       (line-delimited progress records)

   All integers and reals are little-endian. Arrays cover theta, the whole
   meta-parameter bank, adam moments (opt.m.* / opt.v.*) and the
   best-validation snapshot (best.*). Loading validates every shape against
   the config and never returns a partially-read model.
*/
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "metal/config.hpp"
#include "metal/metatrain.hpp"

namespace metal {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

inline void put_blob(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out.append(s);
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;
  std::string context = "header";

  void need(std::size_t n) const {
    if (pos + n > data.size())
      throw FormatError("checkpoint: unexpected end of file in " + context);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string blob() {
    std::uint64_t n = u64();
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

inline void put_array(std::string& out, const std::string& name,
                      const Shape& shape, std::span<const double> values) {
  put_blob(out, name);
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put_u64(out, d);
  for (double v : values) put_f64(out, v);
}

}  // namespace detail

struct Checkpoint {
  std::uint32_t version = 1;
  TrainConfig config;
  MetaModel model;
};

namespace detail {

/// Every persistent tensor with its canonical name. The whole bank is
/// stored regardless of what the variant trains.
inline std::vector<std::pair<std::string, Tensor*>> persistent_tensors(
    MetaModel& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < m.theta.tensors.size(); ++i)
    out.emplace_back("theta." + m.theta.names[i], &m.theta.tensors[i]);
  for (std::size_t j = 0; j < m.bank.slots.size(); ++j) {
    BankSlot& s = m.bank.slots[j];
    std::string p = "bank.s" + std::to_string(j);
    auto net = [&out](const std::string& prefix, MetaNetParams& n) {
      out.emplace_back(prefix + ".W1", &n.W1);
      out.emplace_back(prefix + ".b1", &n.b1);
      out.emplace_back(prefix + ".W2", &n.W2);
      out.emplace_back(prefix + ".b2", &n.b2);
    };
    net(p + ".support.loss", s.support.loss);
    net(p + ".support.adapter", s.support.adapter);
    net(p + ".query.loss", s.query.loss);
    net(p + ".query.adapter", s.query.adapter);
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const MetaModel& model, const TrainConfig& config,
                            const std::string& path) {
  std::string out;
  out.append("METALCK1");
  detail::put_u32(out, 1);
  detail::put_blob(out, serialize_config(config));

  std::ostringstream pos;
  pos << "next_epoch = " << model.next_epoch << "\n"
      << "next_iter = " << model.next_iter << "\n"
      << "opt_steps = " << model.opt.step_count << "\n"
      << "has_best = " << (model.best ? "true" : "false") << "\n";
  detail::put_blob(out, pos.str());

  MetaModel& m = const_cast<MetaModel&>(model);  // name/tensor walk only
  auto tensors = detail::persistent_tensors(m);
  std::uint64_t count = tensors.size() + model.opt.m.size() + model.opt.v.size();
  if (model.best) count += model.best->values.size() + 1;
  detail::put_u64(out, count);
  for (auto& [name, t] : tensors)
    detail::put_array(out, name, t->shape(), t->values());
  for (const auto& [name, vals] : model.opt.m)
    detail::put_array(out, "opt.m." + name, {vals.size()}, vals);
  for (const auto& [name, vals] : model.opt.v)
    detail::put_array(out, "opt.v." + name, {vals.size()}, vals);
  if (model.best) {
    for (const auto& [name, vals] : model.best->values)
      detail::put_array(out, "best." + name, {vals.size()}, vals);
    std::vector<double> metric{model.best->metric};
    detail::put_array(out, "best.metric", {1}, metric);
  }

  std::string hist;
  for (const auto& line : model.history) {
    hist += line;
    hist += '\n';
  }
  detail::put_blob(out, hist);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("checkpoint: short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot read " + path);
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  detail::Reader r{data};

  r.need(8);
  if (data.compare(0, 8, "METALCK1") != 0)
    throw FormatError("checkpoint: bad magic");
  r.pos = 8;
  std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version));

  r.context = "config";
  Checkpoint ck;
  ck.version = version;
  ck.config = parse_config(r.blob());

  r.context = "position";
  std::map<std::string, std::string> posmap;
  {
    std::istringstream is(r.blob());
    std::string line;
    while (std::getline(is, line)) {
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      posmap[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
  }

  // read all arrays first
  r.context = "array table";
  std::uint64_t count = r.u64();
  std::map<std::string, std::pair<Shape, std::vector<double>>> arrays;
  for (std::uint64_t i = 0; i < count; ++i) {
    r.context = "array name";
    std::string name = r.blob();
    r.context = "array '" + name + "'";
    std::uint32_t ndim = r.u32();
    Shape shape(ndim);
    for (auto& d : shape) d = r.u64();
    std::vector<double> vals(numel(shape));
    for (double& v : vals) v = r.f64();
    arrays[name] = {std::move(shape), std::move(vals)};
  }
  r.context = "history";
  std::string hist = r.blob();

  // assemble the model, validating shapes against the config
  MetaModel model = init_model(ck.config);
  auto expected = detail::persistent_tensors(model);
  for (auto& [name, slot] : expected) {
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw FormatError("checkpoint: missing array '" + name + "'");
    if (it->second.first != slot->shape())
      throw FormatError("checkpoint: array '" + name + "' has shape " +
                        shape_str(it->second.first) + ", expected " +
                        shape_str(slot->shape()));
    *slot = Tensor::param(it->second.second, slot->shape());
  }
  for (const auto& [name, arr] : arrays) {
    if (name.rfind("opt.m.", 0) == 0) model.opt.m[name.substr(6)] = arr.second;
    else if (name.rfind("opt.v.", 0) == 0) model.opt.v[name.substr(6)] = arr.second;
  }
  if (posmap["has_best"] == "true") {
    ParamSnapshot snap;
    auto it = arrays.find("best.metric");
    if (it == arrays.end())
      throw FormatError("checkpoint: missing array 'best.metric'");
    snap.metric = it->second.second.at(0);
    for (const auto& [name, arr] : arrays)
      if (name.rfind("best.", 0) == 0 && name != "best.metric")
        snap.values[name.substr(5)] = arr.second;
    model.best = std::move(snap);
  }
  model.next_epoch = std::stoull(posmap["next_epoch"]);
  model.next_iter = std::stoull(posmap["next_iter"]);
  model.opt.step_count = std::stoull(posmap["opt_steps"]);
  {
    std::istringstream is(hist);
    std::string line;
    while (std::getline(is, line)) model.history.push_back(line);
  }
  ck.model = std::move(model);
  return ck;
}

}  // namespace metal
