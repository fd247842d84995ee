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
#include "metal/taskstate.hpp"

using namespace metal;

TEST_CASE("layerwise_weight_means") {
  ParamSet zero;
  zero.names = {"W1", "b1", "W2", "b2"};
  zero.tensors = {Tensor::zeros({2, 3}), Tensor::zeros({1, 3}),
                  Tensor::zeros({3, 1}), Tensor::zeros({1, 1})};
  Tensor zmeans = layerwise_weight_means(zero);
  for (double v : zmeans.values()) CHECK(v == 0.0);

  // single layer W=[[1,3]], b=[[2]] -> (1+3+2)/3 = 2
  ParamSet one;
  one.names = {"W1", "b1"};
  one.tensors = {Tensor::matrix({{1, 3}}), Tensor::matrix({{2}})};
  CHECK(layerwise_weight_means(one).values()[0] == 2.0);

  ModelSpec spec;
  spec.input_dim = 1;
  spec.hidden_widths = {4, 4};
  spec.output_dim = 1;
  ParamSet p = init_params(spec, 3);
  CHECK(layerwise_weight_means(p).shape() == Shape{1, 3});
}

TEST_CASE("supervised state layout (regression)") {
  ModelSpec spec;
  spec.input_dim = 1;
  spec.hidden_widths = {4, 4};  // L = 3
  spec.output_dim = 1;          // N = 1
  ParamSet p = init_params(spec, 11);

  Tensor x = Tensor::matrix({{0.5}, {-1.0}, {2.0}});
  Tensor y = Tensor::matrix({{1.0}, {0.0}, {-0.5}});
  TaskState s = build_state_supervised(spec, p, x, y, {});
  CHECK(s.shape() == Shape{3, 5});  // 1 + L + N

  // layer-mean columns identical across rows
  for (std::size_t c = 1; c <= 3; ++c) {
    CHECK(s.at(0, c) == s.at(1, c));
    CHECK(s.at(1, c) == s.at(2, c));
  }

  // perfect predictions zero the loss column
  Tensor yhat = forward_base(spec, p, x).detach();
  TaskState s2 = build_state_supervised(spec, p, x, yhat, {});
  for (std::size_t r = 0; r < 3; ++r) CHECK(s2.at(r, 0) == 0.0);

  // column 0 mean equals the scalar task loss (same reduction)
  double col0 = (s.at(0, 0) + s.at(1, 0) + s.at(2, 0)) / 3.0;
  double scalar_loss = task_loss(spec, p, x, y, {}).item();
  CHECK(col0 == Catch::Approx(scalar_loss).epsilon(1e-12));

  CHECK_THROWS_AS(build_state_supervised(spec, p, Tensor::zeros({0, 1}), y, {}),
                  ContractError);
}

TEST_CASE("supervised state layout (classification)") {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.hidden_widths = {6, 6};  // L = 3
  spec.output_dim = 5;          // N = 5
  spec.task_kind = TaskKind::classification;
  ParamSet p = init_params(spec, 21);

  Tensor x = Tensor::matrix({{0.5, 1.0}, {-1.0, 0.0}});
  std::vector<int> labels{0, 3};
  TaskState s = build_state_supervised(spec, p, x, Tensor(), labels);
  CHECK(s.shape() == Shape{2, 9});  // 1 + 3 + 5

  // with probability outputs, prediction columns sum to 1 per row
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (std::size_t c = 4; c < 9; ++c) sum += s.at(r, c);
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-9));
  }

  // column 0 mean equals scalar cross-entropy
  double col0 = (s.at(0, 0) + s.at(1, 0)) / 2.0;
  CHECK(col0 == Catch::Approx(task_loss(spec, p, x, Tensor(), labels).item())
                    .epsilon(1e-12));
}

TEST_CASE("unlabeled state") {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.hidden_widths = {6};
  spec.output_dim = 5;
  spec.task_kind = TaskKind::classification;

  // zero parameters emit uniform logits -> entropy column = ln N
  ParamSet zero;
  zero.names = {"W1", "b1", "W2", "b2"};
  zero.tensors = {Tensor::zeros({2, 6}), Tensor::zeros({1, 6}),
                  Tensor::zeros({6, 5}), Tensor::zeros({1, 5})};
  Tensor x = Tensor::matrix({{0.5, 1.0}, {-1.0, 0.0}, {0, 0}});
  TaskState s = build_state_unlabeled(spec, zero, x);
  CHECK(s.shape() == Shape{3, 8});  // 1 + L(2) + N(5)
  for (std::size_t r = 0; r < 3; ++r)
    CHECK(s.at(r, 0) == Catch::Approx(std::log(5.0)).epsilon(1e-12));

  // confident outputs -> entropy near 0
  ParamSet conf = zero;
  conf.tensors[3] = Tensor::param({50, -50, -50, -50, -50}, {1, 5});
  TaskState s2 = build_state_unlabeled(spec, conf, x);
  for (std::size_t r = 0; r < 3; ++r)
    CHECK(s2.at(r, 0) == Catch::Approx(0.0).margin(1e-12));

  // width matches the supervised state
  ParamSet p = init_params(spec, 5);
  TaskState sup = build_state_supervised(spec, p, x, Tensor(), {0, 1, 2});
  TaskState unl = build_state_unlabeled(spec, p, x);
  CHECK(sup.shape() == unl.shape());

  CHECK_THROWS_AS(build_state_unlabeled(spec, p, Tensor::zeros({0, 2})),
                  ContractError);
}

TEST_CASE("unlabeled regression state uses the dispersion surrogate") {
  ModelSpec spec;
  spec.input_dim = 1;
  spec.hidden_widths = {4};
  spec.output_dim = 1;
  ParamSet p = init_params(spec, 17);
  Tensor x = Tensor::matrix({{-2.0}, {0.0}, {2.0}});

  StateOptions opts;
  TaskState s = build_state_unlabeled(spec, p, x, opts);
  Tensor out = forward_base(spec, p, x).detach();
  double m = (out.at(0, 0) + out.at(1, 0) + out.at(2, 0)) / 3.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double d = out.at(r, 0) - m;
    CHECK(s.at(r, 0) == Catch::Approx(d * d).margin(1e-12));
  }

  opts.regression_unlabeled_slot = UnlabeledSlot::zero;
  TaskState sz = build_state_unlabeled(spec, p, x, opts);
  for (std::size_t r = 0; r < 3; ++r) CHECK(sz.at(r, 0) == 0.0);
}

TEST_CASE("state ablation flags change the width") {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.hidden_widths = {6, 6};
  spec.output_dim = 5;
  spec.task_kind = TaskKind::classification;
  ParamSet p = init_params(spec, 9);
  Tensor x = Tensor::matrix({{1, 0}});

  StateOptions o;
  o.use_weights = false;
  o.use_predictions = false;
  CHECK(build_state_supervised(spec, p, x, Tensor(), {1}, o).shape() ==
        Shape{1, 1});
  o.use_weights = true;
  CHECK(build_state_supervised(spec, p, x, Tensor(), {1}, o).shape() ==
        Shape{1, 4});
  o.use_weights = false;
  o.use_predictions = true;
  CHECK(build_state_supervised(spec, p, x, Tensor(), {1}, o).shape() ==
        Shape{1, 6});
  CHECK(state_width(spec, StateOptions{}) == 9);
}

TEST_CASE("state builders are differentiable w.r.t. theta") {
  ModelSpec spec;
  spec.input_dim = 1;
  spec.hidden_widths = {3};
  spec.output_dim = 1;

  std::mt19937_64 rng(41);
  Tensor x = Tensor::matrix({{0.3}, {-0.7}});
  Tensor y = Tensor::matrix({{0.1}, {0.4}});

  auto build = [&](const std::vector<Tensor>& in) {
    ParamSet p;
    p.names = {"W1", "b1", "W2", "b2"};
    p.tensors = {reshape(in[0], {1, 3}), reshape(in[1], {1, 3}),
                 reshape(in[2], {3, 1}), reshape(in[3], {1, 1})};
    Tensor sup = build_state_supervised(spec, p, x, y, {});
    Tensor unl = build_state_unlabeled(spec, p, x);
    return add(sum(sup), sum(unl));
  };

  std::vector<std::vector<double>> xv;
  xv.push_back(selftest::random_vec(rng, 3, -1, 1));
  xv.push_back(selftest::random_vec(rng, 3, -0.5, 0.5));
  xv.push_back(selftest::random_vec(rng, 3, -1, 1));
  xv.push_back(selftest::random_vec(rng, 1, -0.5, 0.5));

  std::vector<Tensor> params;
  for (const auto& v : xv) params.push_back(Tensor::param(v, {v.size()}));
  GradMap gm = backward(build(params), std::span<const Tensor>(params), false);
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
  GradCheckResult r = check_grads(f, xv, analytic, 1e-5);
  INFO(r.detail);
  CHECK(r.ok);
}
