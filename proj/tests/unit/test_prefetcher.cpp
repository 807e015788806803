/*
 *    Copyright 2026 The ndpmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <climits>
#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "ndpmoe/cost_model.hpp"
#include "ndpmoe/prefetcher.hpp"

namespace ndpmoe
{
namespace
{
RoutingTrace small_trace(const MoEModelConfig& m, std::uint64_t seed = 0, double rho = 0.8)
{
  WorkloadConfig wl;
  wl.prompt_len = 64;
  wl.output_len = 16;
  return generate(m, wl, {seed, 1.2, rho});
}

// Values frozen from tests/oracles/reference_values.py.
TEST(Prefetcher, BundledBudgetsAndX)
{
  struct Row {
    const char* model;
    std::uint64_t budget;
    int x_uncapped;
    int x_capped;
  };
  const Row rows[] = {
      {"deepseek-moe", 13203126272ull, 28, 6},
      {"qwen3-30b-a3b", 13088185856ull, 28, 8},
      {"phi-3.5-moe", 12836764160ull, 2, 2},
      {"mixtral-8x7b", 12900440576ull, 1, 1},
  };
  for (const auto& r : rows) {
    auto m = bundled_model(r.model);
    auto budget = prefetch_budget(bundled_hardware(), m);
    EXPECT_EQ(budget, r.budget) << r.model;
    auto t = small_trace(m);
    EXPECT_EQ(build_plan(t, m, budget).x, r.x_uncapped) << r.model;
    EXPECT_EQ(build_plan(t, m, budget, m.topk).x, r.x_capped) << r.model;
  }
}

TEST(Prefetcher, BudgetSafety)
{
  for (const auto& name : bundled_model_names()) {
    auto m = bundled_model(name);
    auto t = small_trace(m, 4);
    for (std::uint64_t budget : {std::uint64_t{0}, expert_weight_bytes(m), 3 * GiB, 13 * GiB, 40 * GiB}) {
      auto plan = build_plan(t, m, budget);
      EXPECT_LE(plan.bytes_used, budget) << name;
      EXPECT_EQ(plan.bytes_used, plan.expert_count() * expert_weight_bytes(m));
      EXPECT_NO_THROW(GpuResidency::from_plan(plan, m));
      for (const auto& set : plan.per_layer_sets)
        EXPECT_LE(static_cast<int>(set.size()), plan.x);
    }
  }
}

TEST(Prefetcher, TinyBudgetGivesEmptyPlan)
{
  auto m = bundled_model("mixtral-8x7b");
  auto t = small_trace(m);
  auto plan = build_plan(t, m, 32 * expert_weight_bytes(m) - 1);
  EXPECT_EQ(plan.x, 0);
  EXPECT_EQ(plan.expert_count(), 0u);
  EXPECT_EQ(plan.per_layer_sets.size(), 32u);
}

TEST(Prefetcher, PicksMostFrequentPerLayer)
{
  auto m = bundled_model("qwen3-30b-a3b");
  auto t = small_trace(m, 8);
  auto plan = build_plan(t, m, prefetch_budget(bundled_hardware(), m), 4);
  ASSERT_EQ(plan.x, 4);
  for (int l = 0; l < m.num_moe_layers; ++l) {
    auto hist = prefill_histogram(t, l, m.num_experts);
    const auto& set = plan.per_layer_sets[l];
    ASSERT_EQ(set.size(), 4u);
    EXPECT_TRUE(std::is_sorted(set.begin(), set.end()));
    std::int64_t min_in = INT64_MAX;
    for (int id : set)
      min_in = std::min(min_in, hist[id]);
    for (int id = 0; id < m.num_experts; ++id)
      if (std::find(set.begin(), set.end(), id) == set.end()) {
        EXPECT_LE(hist[id], min_in);
        // Ties go to the lower id.
        if (hist[id] == min_in)
          EXPECT_GT(id, *std::min_element(set.begin(), set.end(), [&](int a, int b) {
            return hist[a] != hist[b] ? hist[a] < hist[b] : a > b;
          }));
      }
  }
}

TEST(Prefetcher, ZeroFrequencyExpertsNotPrefetched)
{
  auto m = bundled_model("mixtral-8x7b");
  m.num_layers = m.num_moe_layers = 1;
  RoutingTrace t;
  t.model_name = m.name;
  t.num_layers = 1;
  t.topk = 2;
  t.prefill_len = 1;
  t.decode_len = 0;
  t.entries.push_back({Stage::Prefill, 0, 0, {2, 5}});
  auto plan = build_plan(t, m, 8 * expert_weight_bytes(m));
  EXPECT_EQ(plan.x, 8);
  EXPECT_EQ(plan.per_layer_sets[0], (std::vector<int>{2, 5}));
}

TEST(Residency, InsertAndLookup)
{
  GpuResidency res(3 * 100, 100);
  res.insert(0, 4);
  res.insert(0, 4);
  res.insert(1, 4);
  res.insert(0, 7);
  EXPECT_EQ(res.used_bytes(), 300u);
  EXPECT_THROW(res.insert(2, 0), std::length_error);
  EXPECT_TRUE(res.contains(1, 4));
  EXPECT_FALSE(res.contains(1, 7));
  const int act[] = {1, 4, 7};
  auto r = decode_lookup(res, 0, act);
  EXPECT_EQ(r.hits, (std::vector<int>{4, 7}));
  EXPECT_EQ(r.misses, (std::vector<int>{1}));
}

TEST(Residency, CapHitsPrefersFrequentThenLowId)
{
  const std::int64_t freq[] = {5, 9, 9, 1, 7};
  const int hits[] = {0, 2, 1, 4};
  auto s = cap_gpu_hits(hits, 2.7, freq);
  EXPECT_EQ(s.gpu, (std::vector<int>{1, 2}));
  EXPECT_EQ(s.overflow, (std::vector<int>{0, 4}));
  auto all = cap_gpu_hits(hits, 8, freq);
  EXPECT_EQ(all.gpu, (std::vector<int>{0, 1, 2, 4}));
  EXPECT_TRUE(all.overflow.empty());
  auto none = cap_gpu_hits(hits, 0.9, freq);
  EXPECT_TRUE(none.gpu.empty());
}

TEST(Prefetcher, WritePlanFormat)
{
  PrefetchPlan plan;
  plan.x = 2;
  plan.per_layer_sets = {{1, 3}, {0}};
  std::ostringstream os;
  write_plan(os, plan);
  EXPECT_EQ(os.str(), "#prefetch v1 x=2\n0,1;3\n1,0\n");
}
} // namespace
} // namespace ndpmoe
