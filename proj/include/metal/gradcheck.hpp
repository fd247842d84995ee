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

   Finite-difference verification of analytic gradients.

   The checker only drives forward evaluations of the function under test,
   so it stays independent of the reverse-mode path it validates.
*/
#pragma once

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "metal/tensor.hpp"

namespace metal {

/// Scalar-valued function of flat parameter vectors, rebuilt per evaluation.
using ScalarOfVecs = std::function<double(const std::vector<std::vector<double>>&)>;

struct GradCheckResult {
  bool ok = true;
  double worst_rel_err = 0.0;
  std::string detail;
};

inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-2});
  return std::abs(a - b) / denom;
}

/// Central finite difference of f in coordinate (vec, idx).
inline double central_diff(const ScalarOfVecs& f,
                           std::vector<std::vector<double>> x, std::size_t vec,
                           std::size_t idx, double h = 1e-5) {
  double orig = x[vec][idx];
  x[vec][idx] = orig + h;
  double fp = f(x);
  x[vec][idx] = orig - h;
  double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

/// Compare analytic gradients against central differences over every
/// coordinate of every input vector.
inline GradCheckResult check_grads(
    const ScalarOfVecs& f, const std::vector<std::vector<double>>& x,
    const std::vector<std::vector<double>>& analytic, double tol,
    double h = 1e-5) {
  GradCheckResult r;
  for (std::size_t v = 0; v < x.size(); ++v) {
    for (std::size_t i = 0; i < x[v].size(); ++i) {
      double fd = central_diff(f, x, v, i, h);
      double e = rel_err(analytic[v][i], fd);
      if (e > r.worst_rel_err) r.worst_rel_err = e;
      if (e > tol) {
        r.ok = false;
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "input %zu coord %zu: analytic %.12g vs fd %.12g (rel %.3g)",
                      v, i, analytic[v][i], fd, e);
        r.detail = buf;
        return r;
      }
    }
  }
  return r;
}

namespace selftest {

// ---------------------------------------------------------------------------
// Randomized first- and second-order oracle suite over every differentiable
// op. Returns the number of failures and prints one line per op family.
// ---------------------------------------------------------------------------

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

inline std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n,
                                      double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, lo, hi);
  return v;
}

/// One op family: builds a scalar from named parameter vectors.
struct OpCase {
  std::string name;
  std::vector<std::size_t> sizes;   // flat length per input vector
  double lo, hi;                    // sampling range
  std::function<Tensor(const std::vector<Tensor>&)> build;
};

inline Tensor as2d(const Tensor& t, std::size_t r, std::size_t c) {
  return reshape(t, {r, c});
}

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto weighted_sum = [](const Tensor& t) {
    // mix coordinates unevenly so gradients are not all-ones
    std::vector<double> w(t.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    return sum(mul(t, Tensor(std::move(w), t.shape())));
  };
  cases.push_back({"matmul", {6, 8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(matmul(as2d(in[0], 3, 2), as2d(in[1], 2, 4)));
                   }});
  cases.push_back({"add", {8, 8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(add(as2d(in[0], 2, 4), as2d(in[1], 2, 4)));
                   }});
  cases.push_back({"add_row_bcast", {8, 4}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(add(as2d(in[0], 2, 4), as2d(in[1], 1, 4)));
                   }});
  cases.push_back({"sub", {8, 8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(sub(as2d(in[0], 2, 4), as2d(in[1], 2, 4)));
                   }});
  cases.push_back({"mul", {8, 8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(mul(as2d(in[0], 2, 4), as2d(in[1], 2, 4)));
                   }});
  cases.push_back({"mul_scalar_bcast", {8, 1}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(mul(as2d(in[0], 2, 4), in[1]));
                   }});
  cases.push_back({"scale", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(scale(in[0], -1.7));
                   }});
  cases.push_back({"relu", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(relu(in[0]));
                   }});
  cases.push_back({"leaky_relu", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(leaky_relu(in[0], 0.01));
                   }});
  cases.push_back({"exp", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(exp(in[0]));
                   }});
  cases.push_back({"log", {8}, 0.3, 3.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(log(in[0]));
                   }});
  cases.push_back({"recip", {8}, 0.3, 3.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(recip(in[0]));
                   }});
  cases.push_back({"square", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(square(in[0]));
                   }});
  cases.push_back({"xlogx", {8}, 0.05, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(xlogx(in[0]));
                   }});
  cases.push_back({"sum_mean", {12}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     Tensor m = as2d(in[0], 3, 4);
                     return add(mean(m), weighted_sum(sum(m, 0)));
                   }});
  cases.push_back({"mean_axis", {12}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(mean(as2d(in[0], 3, 4), 1));
                   }});
  cases.push_back({"concat_slice", {6, 3}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     Tensor c = concat({as2d(in[0], 3, 2), as2d(in[1], 3, 1)}, 1);
                     return weighted_sum(slice(c, 1, 1, 2));
                   }});
  cases.push_back({"broadcast_to", {4}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(broadcast_to(as2d(in[0], 1, 4), {3, 4}));
                   }});
  cases.push_back({"transpose", {6}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(transpose(as2d(in[0], 2, 3)));
                   }});
  cases.push_back({"gather_cols", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(gather_cols(as2d(in[0], 2, 4), {1, 3}));
                   }});
  cases.push_back({"softmax", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(softmax_rows(as2d(in[0], 2, 4)));
                   }});
  cases.push_back({"loss_mse", {6, 6}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     Tensor s = loss_mse(as2d(in[0], 3, 2), as2d(in[1], 3, 2));
                     return add(s, weighted_sum(loss_mse_per_example(
                                       as2d(in[0], 3, 2), as2d(in[1], 3, 2))));
                   }});
  cases.push_back({"loss_softmax_ce", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return loss_softmax_ce(as2d(in[0], 2, 4), {2, 0});
                   }});
  cases.push_back({"entropy", {8}, -2.0, 2.0,
                   [=](const std::vector<Tensor>& in) {
                     return weighted_sum(
                         entropy_rows(softmax_rows(as2d(in[0], 2, 4))));
                   }});
  return cases;
}

/// First-order: analytic vs central differences on `trials` random draws.
inline bool check_first_order(const OpCase& c, std::mt19937_64& rng, int trials,
                              double tol, double* worst) {
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<double>> x;
    for (std::size_t n : c.sizes) x.push_back(random_vec(rng, n, c.lo, c.hi));
    // keep relu/leaky inputs away from the kink where fd is meaningless
    if (c.name == "relu" || c.name == "leaky_relu")
      for (double& v : x[0])
        if (std::abs(v) < 5e-3) v = v < 0 ? -5e-3 : 5e-3;

    std::vector<Tensor> params;
    for (const auto& xi : x)
      params.push_back(Tensor::param(xi, Shape{xi.size()}));
    Tensor out = c.build(params);
    GradMap gm = backward(out, std::span<const Tensor>(params), false);

    std::vector<std::vector<double>> analytic;
    for (const auto& p : params) {
      Tensor g = gm.at(p);
      analytic.emplace_back(g.values().begin(), g.values().end());
    }
    ScalarOfVecs f = [&c](const std::vector<std::vector<double>>& xs) {
      NoGradGuard ng;
      std::vector<Tensor> ps;
      for (const auto& xi : xs) ps.push_back(Tensor(xi, Shape{xi.size()}));
      return c.build(ps).item();
    };
    GradCheckResult r = check_grads(f, x, analytic, tol);
    if (worst) *worst = std::max(*worst, r.worst_rel_err);
    if (!r.ok) {
      std::fprintf(stderr, "  %s trial %d: %s\n", c.name.c_str(), t,
                   r.detail.c_str());
      return false;
    }
  }
  return true;
}

/// Second-order: h(x) = sum of dF/dx (built with create_graph) checked
/// against finite differences of the first gradient.
inline bool check_second_order(const OpCase& c, std::mt19937_64& rng,
                               int trials, double tol, double* worst) {
  auto grad_sum = [&c](const std::vector<std::vector<double>>& xs) {
    std::vector<Tensor> ps;
    for (const auto& xi : xs) ps.push_back(Tensor::param(xi, Shape{xi.size()}));
    Tensor out = c.build(ps);
    GradMap gm = backward(out, std::span<const Tensor>(ps), false);
    double s = 0.0;
    for (const auto& p : ps)
      for (double v : gm.at(p).values()) s += v;
    return s;
  };
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<double>> x;
    for (std::size_t n : c.sizes) x.push_back(random_vec(rng, n, c.lo, c.hi));
    if (c.name == "relu" || c.name == "leaky_relu")
      for (double& v : x[0])
        if (std::abs(v) < 5e-3) v = v < 0 ? -5e-3 : 5e-3;

    std::vector<Tensor> params;
    for (const auto& xi : x)
      params.push_back(Tensor::param(xi, Shape{xi.size()}));
    Tensor out = c.build(params);
    GradMap gm = backward(out, std::span<const Tensor>(params), true);
    Tensor total = Tensor::scalar(0.0);
    for (const auto& p : params) total = add(total, sum(gm.at(p)));
    GradMap gm2 = backward(total, std::span<const Tensor>(params), false);

    std::vector<std::vector<double>> analytic;
    for (const auto& p : params) {
      Tensor g = gm2.at(p);
      analytic.emplace_back(g.values().begin(), g.values().end());
    }
    GradCheckResult r = check_grads(grad_sum, x, analytic, tol);
    if (worst) *worst = std::max(*worst, r.worst_rel_err);
    if (!r.ok) {
      std::fprintf(stderr, "  %s (2nd) trial %d: %s\n", c.name.c_str(), t,
                   r.detail.c_str());
      return false;
    }
  }
  return true;
}

/// Full suite; prints one line per op family, returns failure count.
inline int run(std::uint64_t seed = 12345, int first_trials = 100,
               int second_trials = 10) {
  int failures = 0;
  for (const OpCase& c : op_cases()) {
    std::mt19937_64 rng(seed);
    double worst1 = 0.0, worst2 = 0.0;
    bool ok1 = check_first_order(c, rng, first_trials, 1e-6, &worst1);
    bool ok2 = check_second_order(c, rng, second_trials, 1e-4, &worst2);
    std::printf("%-18s first-order %s (worst rel %.2e)  second-order %s (worst rel %.2e)\n",
                c.name.c_str(), ok1 ? "ok" : "FAIL", worst1,
                ok2 ? "ok" : "FAIL", worst2);
    failures += !ok1 + !ok2;
  }
  return failures;
}

}  // namespace selftest
}  // namespace metal
