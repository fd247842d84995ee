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
#include <cstdio>
#include <filesystem>

#include "metal/episode.hpp"
#include "metal/taskgen.hpp"

using namespace metal;

static std::vector<double> vals(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

TEST_CASE("sinusoid tasks") {
  Task t = sample_sinusoid_task(123, 5, 10);
  CHECK(t.support_x.shape() == Shape{5, 1});
  CHECK(t.query_x.shape() == Shape{10, 1});

  // y = A sin(wx + b) exactly, no observation noise
  const SinusoidParams& p = t.descriptor.sinusoid;
  for (std::size_t i = 0; i < 5; ++i) {
    double y = p.amplitude * std::sin(p.frequency * t.support_x.at(i, 0) + p.phase);
    CHECK(t.support_y.at(i, 0) == y);
  }

  // hand value: A=1, w=1, b=0 at x=pi/2 -> 1
  CHECK(std::sin(3.14159265358979323846 / 2) == Catch::Approx(1.0));

  // parameter ranges over many draws
  for (std::uint64_t s = 0; s < 10000; ++s) {
    Task u = sample_sinusoid_task(s, 1, 1);
    const SinusoidParams& q = u.descriptor.sinusoid;
    REQUIRE(q.amplitude >= 0.1);
    REQUIRE(q.amplitude <= 5.0);
    REQUIRE(q.frequency >= 0.8);
    REQUIRE(q.frequency <= 1.2);
    REQUIRE(q.phase >= 0.0);
    REQUIRE(q.phase <= 3.14159265358979323846);
    REQUIRE(u.support_x.values()[0] >= -5.0);
    REQUIRE(u.support_x.values()[0] <= 5.0);
  }

  // replays are bit-identical
  Task t2 = sample_sinusoid_task(123, 5, 10);
  CHECK(vals(t.support_x) == vals(t2.support_x));
  CHECK(vals(t.query_y) == vals(t2.query_y));

  // support draws do not depend on the query count
  Task t3 = sample_sinusoid_task(123, 5, 50);
  CHECK(vals(t.support_x) == vals(t3.support_x));
  CHECK(vals(t.support_y) == vals(t3.support_y));

  CHECK_THROWS_AS(sample_sinusoid_task(1, 0, 5), ContractError);
}

TEST_CASE("cluster tasks") {
  ClusterTaskParams p;  // defaults: 5-way, d=20, r=1, calibrated sigma
  Task t = sample_cluster_task(7, 5, 15, p);
  CHECK(t.support_x.shape() == Shape{25, 20});
  CHECK(t.query_x.shape() == Shape{75, 20});
  CHECK(t.descriptor.cluster_means.shape() == Shape{5, 20});

  // exactly k support examples per class
  std::vector<int> hist(5, 0);
  for (int l : t.support_labels) hist[static_cast<std::size_t>(l)]++;
  for (int h : hist) CHECK(h == 5);

  // means live on the radius-1 sphere
  for (std::size_t c = 0; c < 5; ++c) {
    double n2 = 0;
    for (std::size_t j = 0; j < 20; ++j)
      n2 += t.descriptor.cluster_means.at(c, j) * t.descriptor.cluster_means.at(c, j);
    CHECK(std::sqrt(n2) == Catch::Approx(1.0).epsilon(1e-9));
  }

  // sigma = 0: nearest-mean classification is perfect
  ClusterTaskParams clean = p;
  clean.sigma = 0.0;
  Task ct = sample_cluster_task(9, 2, 2, clean);
  for (std::size_t i = 0; i < ct.support_x.dim(0); ++i) {
    std::size_t best = 0;
    double bestd = 1e300;
    for (std::size_t c = 0; c < 5; ++c) {
      double d2 = 0;
      for (std::size_t j = 0; j < 20; ++j) {
        double d = ct.support_x.at(i, j) - ct.descriptor.cluster_means.at(c, j);
        d2 += d * d;
      }
      if (d2 < bestd) { bestd = d2; best = c; }
    }
    CHECK(static_cast<int>(best) == ct.support_labels[i]);
  }

  CHECK_THROWS_AS(sample_cluster_task(1, 0, 1, p), ContractError);
}

TEST_CASE("calibrated sigma puts Bayes accuracy near 0.90") {
  // Monte-Carlo estimate of the Bayes-optimal (nearest-mean) accuracy at
  // the default noise level, 1e5 samples.
  ClusterTaskParams p;
  std::size_t correct = 0, total = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Task t = sample_cluster_task(mix_seed(999, s), 10, 10, p);
    const Tensor& means = t.descriptor.cluster_means;
    for (std::size_t i = 0; i < t.support_x.dim(0); ++i) {
      std::size_t best = 0;
      double bestd = 1e300;
      for (std::size_t c = 0; c < p.way; ++c) {
        double d2 = 0;
        for (std::size_t j = 0; j < p.dim; ++j) {
          double d = t.support_x.at(i, j) - means.at(c, j);
          d2 += d * d;
        }
        if (d2 < bestd) { bestd = d2; best = c; }
      }
      correct += static_cast<int>(best) == t.support_labels[i];
      total += 1;
    }
  }
  double acc = static_cast<double>(correct) / static_cast<double>(total);
  INFO("bayes accuracy " << acc << " over " << total << " samples");
  CHECK(acc > 0.88);
  CHECK(acc < 0.92);
}

TEST_CASE("semi splits") {
  // (15, 0, 0): pool is exactly the query inputs (transductive default)
  Task t = sample_sinusoid_task(5, 5, 15);
  Task s = make_semi_split(t, 15, 0, 0);
  REQUIRE(s.unlabeled_query_x.has_value());
  CHECK_FALSE(s.unlabeled_nonquery_x.has_value());
  CHECK_FALSE(s.distractor_x.has_value());
  CHECK(vals(*s.unlabeled_query_x) == vals(t.query_x));
  CHECK(vals(s.unlabeled_pool()) == vals(t.query_x));

  // (0, 0, 0) degenerates to the supervised setting
  Task none = make_semi_split(t, 0, 0, 0);
  CHECK_FALSE(none.has_unlabeled());

  // cluster: counts are per way
  Task c = sample_cluster_task(11, 5, 15);
  Task cs = make_semi_split(c, 15, 0, 0);
  CHECK(cs.unlabeled_query_x->shape() == Shape{75, 20});
  CHECK(vals(*cs.unlabeled_query_x) == vals(c.query_x));

  Task cs2 = make_semi_split(c, 5, 10, 0);
  CHECK(cs2.unlabeled_query_x->shape() == Shape{25, 20});
  CHECK(cs2.unlabeled_nonquery_x->shape() == Shape{50, 20});
  CHECK(cs2.unlabeled_pool().shape() == Shape{75, 20});

  // distractor draws come from a different task: all of them land nearer to
  // some foreign mean than any task mean with overwhelming probability at
  // sigma = 0
  ClusterTaskParams clean;
  clean.sigma = 0.0;
  Task d = sample_cluster_task(13, 2, 2, clean);
  Task ds = make_semi_split(d, 0, 0, 3);
  REQUIRE(ds.distractor_x->shape() == Shape{15, 20});
  for (std::size_t i = 0; i < 15; ++i) {
    double best = 1e300;
    for (std::size_t c2 = 0; c2 < 5; ++c2) {
      double d2 = 0;
      for (std::size_t j = 0; j < 20; ++j) {
        double dd = ds.distractor_x->at(i, j) - d.descriptor.cluster_means.at(c2, j);
        d2 += dd * dd;
      }
      best = std::min(best, d2);
    }
    CHECK(best > 1e-12);  // never exactly on a task mean
  }

  CHECK_THROWS_AS(make_semi_split(t, 16, 0, 0), ContractError);
}

TEST_CASE("episode round trip") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "metal_episode_test";
  fs::create_directories(dir);

  Task t = make_semi_split(sample_sinusoid_task(77, 5, 15), 15, 0, 0);
  std::string p1 = (dir / "sin.episode").string();
  save_task(t, p1);
  Task r = load_task(p1);
  CHECK(vals(r.support_x) == vals(t.support_x));
  CHECK(vals(r.support_y) == vals(t.support_y));
  CHECK(vals(r.query_x) == vals(t.query_x));
  CHECK(vals(*r.unlabeled_query_x) == vals(*t.unlabeled_query_x));
  CHECK(r.descriptor.sinusoid.amplitude == t.descriptor.sinusoid.amplitude);

  Task c = sample_cluster_task(78, 3, 4);
  std::string p2 = (dir / "cluster.episode").string();
  save_task(c, p2);
  Task rc = load_task(p2);
  CHECK(vals(rc.support_x) == vals(c.support_x));
  CHECK(rc.support_labels == c.support_labels);
  CHECK(vals(rc.descriptor.cluster_means) == vals(c.descriptor.cluster_means));

  fs::remove_all(dir);
}
