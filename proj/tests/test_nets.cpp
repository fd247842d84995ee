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
*/
#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "metal/gradcheck.hpp"
#include "metal/nets.hpp"

using namespace metal;

static std::vector<double> vals(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

TEST_CASE("init_params shapes and determinism") {
  ModelSpec spec;
  spec.input_dim = 1;
  spec.hidden_widths = {80, 80};
  spec.output_dim = 1;

  ParamSet p = init_params(spec, 42);
  REQUIRE(spec.layer_count() == 3);
  CHECK(p.weight(0).shape() == Shape{1, 80});
  CHECK(p.weight(1).shape() == Shape{80, 80});
  CHECK(p.weight(2).shape() == Shape{80, 1});
  CHECK(p.names == std::vector<std::string>{"W1", "b1", "W2", "b2", "W3", "b3"});

  ParamSet q = init_params(spec, 42);
  for (std::size_t i = 0; i < p.tensors.size(); ++i)
    CHECK(vals(p.tensors[i]) == vals(q.tensors[i]));

  ParamSet r = init_params(spec, 43);
  CHECK(vals(p.weight(0)) != vals(r.weight(0)));

  for (std::size_t l = 0; l < 3; ++l)
    for (double b : p.bias(l).values()) CHECK(b == 0.0);

  // glorot bound
  double bound = std::sqrt(6.0 / (80.0 + 80.0));
  for (double w : p.weight(1).values()) CHECK(std::abs(w) <= bound);

  ModelSpec bad = spec;
  bad.hidden_widths = {80, 0};
  CHECK_THROWS_AS(init_params(bad, 1), ContractError);
}

TEST_CASE("forward_base") {
  ModelSpec spec;
  spec.input_dim = 1;
  spec.hidden_widths = {};
  spec.output_dim = 1;

  ParamSet p;
  p.names = {"W1", "b1"};
  p.tensors = {Tensor::param({2}, {1, 1}), Tensor::param({1}, {1, 1})};
  Tensor out = forward_base(spec, p, Tensor::matrix({{3}}));
  CHECK(out.item() == 7.0);

  // zero params -> zero output, any input
  ModelSpec spec2;
  spec2.input_dim = 2;
  spec2.hidden_widths = {4};
  spec2.output_dim = 3;
  ParamSet z;
  z.names = {"W1", "b1", "W2", "b2"};
  z.tensors = {Tensor::zeros({2, 4}), Tensor::zeros({1, 4}),
               Tensor::zeros({4, 3}), Tensor::zeros({1, 3})};
  Tensor out2 = forward_base(spec2, z, Tensor::matrix({{1, -2}, {0.5, 3}}));
  for (double v : out2.values()) CHECK(v == 0.0);

  // batch shape contract
  ParamSet g = init_params(spec2, 7);
  Tensor batch = Tensor::zeros({5, 2});
  CHECK(forward_base(spec2, g, batch).shape() == Shape{5, 3});
  CHECK_THROWS_AS(forward_base(spec2, g, Tensor::zeros({5, 3})), DimensionError);
}

TEST_CASE("forward_loss_learner") {
  // all-zero parameters give 0 whatever the input
  LossLearnerParams zero = zero_meta_net(3, 1);
  Tensor rows = Tensor::matrix({{0.4, -1.0, 2.0}, {1, 1, 1}});
  CHECK(forward_loss_learner(zero, rows).item() == 0.0);

  // frozen two-layer pencil-and-paper evaluation, B=1
  LossLearnerParams p;
  p.W1 = Tensor::param({0.1, -0.3, 0.2, 0.4, 0.1, -0.1, -0.2, 0.2, 0.3}, {3, 3});
  p.b1 = Tensor::param({0.05, -0.05, 0.1}, {1, 3});
  p.W2 = Tensor::param({0.7, -0.4, 0.2}, {3, 1});
  p.b2 = Tensor::param({0.03}, {1, 1});
  Tensor row = Tensor::matrix({{0.3, -0.2, 0.5}});
  CHECK(forward_loss_learner(p, row).item() ==
        Catch::Approx(0.096).epsilon(1e-12));

  // duplicating every row leaves the mean unchanged
  Tensor doubled = concat({row, row}, 0);
  CHECK(forward_loss_learner(p, doubled).item() ==
        Catch::Approx(forward_loss_learner(p, row).item()).epsilon(1e-12));

  CHECK_THROWS_AS(forward_loss_learner(p, Tensor::zeros({2, 4})),
                  DimensionError);
}

TEST_CASE("forward_adapter") {
  // zero adapter -> identity transform
  AdapterParams zero = zero_meta_net(3, kAdapterOutputDim);
  Tensor rows = Tensor::matrix({{0.2, -0.1, 0.4}, {0.0, 0.3, -0.2}});
  AffineParams a = forward_adapter(zero, rows);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.gamma[i].item() == 1.0);
    CHECK(a.beta[i].item() == 0.0);
  }

  // permutation invariance (mean of rows)
  AdapterParams p = init_adapter(3, 99);
  Tensor swapped = concat({slice(rows, 0, 1, 1), slice(rows, 0, 0, 1)}, 0);
  AffineParams a1 = forward_adapter(p, rows);
  AffineParams a2 = forward_adapter(p, swapped);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a1.gamma[i].item() == Catch::Approx(a2.gamma[i].item()).epsilon(1e-12));
    CHECK(a1.beta[i].item() == Catch::Approx(a2.beta[i].item()).epsilon(1e-12));
  }

  // frozen two-layer pencil-and-paper evaluation, B=2
  AdapterParams h;
  h.W1 = Tensor::param({0.2, 0.1, -0.3, -0.1, 0.4, 0.2, 0.3, -0.2, 0.1}, {3, 3});
  h.b1 = Tensor::param({0.01, 0.02, -0.03}, {1, 3});
  h.W2 = Tensor::param({0.1,  -0.2, 0.3,  0.05, -0.1,  0.2,  -0.3, 0.15,
                        0.2,  0.1,  -0.1, 0.3,  0.25,  -0.05, 0.1, -0.2,
                        -0.15, 0.3,  0.2,  -0.1, 0.05,  0.1,  0.2,  0.3},
                       {3, 8});
  h.b2 = Tensor::param({0.0, 0.01, -0.01, 0.02, 0.03, -0.02, 0.0, 0.01}, {1, 8});
  AffineParams af = forward_adapter(h, rows);
  CHECK(af.gamma[0].item() == Catch::Approx(1.015).margin(1e-12));
  CHECK(af.gamma[1].item() == Catch::Approx(1.005).margin(1e-12));
  CHECK(af.gamma[2].item() == Catch::Approx(1.0).margin(1e-12));
  CHECK(af.gamma[3].item() == Catch::Approx(1.0375).margin(1e-12));
  CHECK(af.beta[0].item() == Catch::Approx(0.0375).margin(1e-12));
  CHECK(af.beta[1].item() == Catch::Approx(-0.0125).margin(1e-12));
  CHECK(af.beta[2].item() == Catch::Approx(-0.01).margin(1e-12));
  CHECK(af.beta[3].item() == Catch::Approx(0.0075).margin(1e-12));
}

TEST_CASE("adapt_loss_params") {
  LossLearnerParams phi = init_loss_learner(4, 5);

  // identity affine is bit-exact
  LossLearnerParams same = adapt_loss_params(phi, AffineParams::identity());
  CHECK(vals(same.W1) == vals(phi.W1));
  CHECK(vals(same.b1) == vals(phi.b1));
  CHECK(vals(same.W2) == vals(phi.W2));
  CHECK(vals(same.b2) == vals(phi.b2));

  // gamma = 0, beta = c collapses every entry to c
  AffineParams collapse;
  for (std::size_t i = 0; i < 4; ++i) {
    collapse.gamma[i] = Tensor::scalar(0.0);
    collapse.beta[i] = Tensor::scalar(2.5);
  }
  LossLearnerParams c = adapt_loss_params(phi, collapse);
  for (double v : c.W1.values()) CHECK(v == 2.5);
  for (double v : c.b2.values()) CHECK(v == 2.5);

  // gamma = 2, beta = 1 on a known entry: 2 * 3 + 1 = 7
  AffineParams two;
  for (std::size_t i = 0; i < 4; ++i) {
    two.gamma[i] = Tensor::scalar(2.0);
    two.beta[i] = Tensor::scalar(1.0);
  }
  LossLearnerParams phi3;
  phi3.W1 = Tensor::full({2, 2}, 3.0);
  phi3.b1 = Tensor::full({1, 2}, 3.0);
  phi3.W2 = Tensor::full({2, 1}, 3.0);
  phi3.b2 = Tensor::full({1, 1}, 3.0);
  CHECK(adapt_loss_params(phi3, two).W1.values()[0] == 7.0);
}

TEST_CASE("gradients through adapt + loss learner match finite differences") {
  // d/d(phi, psi) of loss_learner(adapt(phi, adapter(psi, rows)), rows)
  const std::size_t S = 3;
  std::mt19937_64 rng(31);
  auto rows_values = selftest::random_vec(rng, 2 * S, -1.0, 1.0);

  auto build = [&](const std::vector<Tensor>& in) {
    // in[0..3] phi, in[4..7] psi flattened
    LossLearnerParams phi{reshape(in[0], {S, S}), reshape(in[1], {1, S}),
                          reshape(in[2], {S, 1}), reshape(in[3], {1, 1})};
    AdapterParams psi{reshape(in[4], {S, S}), reshape(in[5], {1, S}),
                      reshape(in[6], {S, kAdapterOutputDim}),
                      reshape(in[7], {1, kAdapterOutputDim})};
    Tensor rows(rows_values, Shape{2, S});
    AffineParams a = forward_adapter(psi, rows);
    return forward_loss_learner(adapt_loss_params(phi, a), rows);
  };

  std::vector<std::vector<double>> x;
  x.push_back(selftest::random_vec(rng, S * S, -0.8, 0.8));
  x.push_back(selftest::random_vec(rng, S, -0.5, 0.5));
  x.push_back(selftest::random_vec(rng, S, -0.8, 0.8));
  x.push_back(selftest::random_vec(rng, 1, -0.5, 0.5));
  x.push_back(selftest::random_vec(rng, S * S, -0.8, 0.8));
  x.push_back(selftest::random_vec(rng, S, -0.5, 0.5));
  x.push_back(selftest::random_vec(rng, S * kAdapterOutputDim, -0.8, 0.8));
  x.push_back(selftest::random_vec(rng, kAdapterOutputDim, -0.5, 0.5));

  std::vector<Tensor> params;
  for (const auto& xi : x) params.push_back(Tensor::param(xi, {xi.size()}));
  Tensor out = build(params);
  GradMap gm = backward(out, std::span<const Tensor>(params), false);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    Tensor g = gm.at(p);
    analytic.emplace_back(g.values().begin(), g.values().end());
  }
  ScalarOfVecs f = [&](const std::vector<std::vector<double>>& xs) {
    NoGradGuard ng;
    std::vector<Tensor> ps;
    for (const auto& xi : xs) ps.push_back(Tensor(xi, {xi.size()}));
    return build(ps).item();
  };
  GradCheckResult r = check_grads(f, x, analytic, 1e-5);
  INFO(r.detail);
  CHECK(r.ok);
}

TEST_CASE("meta bank layout") {
  MetaParamBank bank = init_bank(5, 3, 77);
  CHECK(bank.slots.size() == 3);
  CHECK(bank.slot(2).support.loss.W1.shape() == Shape{5, 5});
  CHECK(bank.slot(2).support.loss.W2.shape() == Shape{5, 1});
  CHECK(bank.slot(1).query.adapter.W2.shape() == Shape{5, 8});

  MetaParamBank shared = init_bank(5, 3, 77, /*shared=*/true);
  CHECK(shared.slots.size() == 1);
  CHECK(vals(shared.slot(0).support.loss.W1) ==
        vals(shared.slot(2).support.loss.W1));
}
