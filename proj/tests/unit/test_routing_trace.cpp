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
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "ndpmoe/routing_trace.hpp"

namespace ndpmoe
{
namespace
{
WorkloadConfig small_workload(std::int64_t prompt = 32, std::int64_t output = 16)
{
  WorkloadConfig wl;
  wl.prompt_len = prompt;
  wl.output_len = output;
  return wl;
}

std::string serialize(const RoutingTrace& t)
{
  std::ostringstream os;
  write_trace(os, t);
  return os.str();
}

TEST(RoutingTrace, ShapeAndOrder)
{
  auto m = bundled_model("deepseek-moe");
  auto t = generate(m, small_workload(), {1, 1.2, 0.8});
  EXPECT_EQ(t.num_layers, 27);
  EXPECT_EQ(t.topk, 6);
  ASSERT_EQ(t.entries.size(), static_cast<std::size_t>((32 + 16) * 27));
  // Entries follow (stage, token, layer) order.
  EXPECT_EQ(t.entries.front().stage, Stage::Prefill);
  EXPECT_EQ(t.entries[1].layer_idx, 1);
  EXPECT_EQ(t.entries[27].token_idx, 1);
  EXPECT_EQ(t.entries.back().stage, Stage::Decode);
  EXPECT_EQ(t.at(Stage::Decode, 3, 5).token_idx, 3);
  EXPECT_EQ(t.at(Stage::Decode, 3, 5).layer_idx, 5);
  for (const auto& e : t.entries) {
    ASSERT_EQ(e.expert_ids.size(), 6u);
    EXPECT_TRUE(std::is_sorted(e.expert_ids.begin(), e.expert_ids.end()));
    EXPECT_EQ(std::adjacent_find(e.expert_ids.begin(), e.expert_ids.end()), e.expert_ids.end());
    EXPECT_GE(e.expert_ids.front(), 0);
    EXPECT_LT(e.expert_ids.back(), 64);
  }
}

TEST(RoutingTrace, Deterministic)
{
  auto m = bundled_model("qwen3-30b-a3b");
  auto a = generate(m, small_workload(), {42, 1.2, 0.8});
  auto b = generate(m, small_workload(), {42, 1.2, 0.8});
  EXPECT_EQ(a, b);
  EXPECT_EQ(serialize(a), serialize(b));
  auto c = generate(m, small_workload(), {43, 1.2, 0.8});
  EXPECT_NE(a, c);
}

TEST(RoutingTrace, PrefixStableUnderLongerOutput)
{
  // Every (stage, layer, token) has its own substream.
  auto m = bundled_model("phi-3.5-moe");
  auto a = generate(m, small_workload(32, 8), {5, 1.0, 0.5});
  auto b = generate(m, small_workload(32, 16), {5, 1.0, 0.5});
  for (int l = 0; l < m.num_moe_layers; ++l)
    for (int t = 0; t < 8; ++t)
      EXPECT_EQ(a.at(Stage::Decode, t, l), b.at(Stage::Decode, t, l));
}

TEST(RoutingTrace, HistogramConservation)
{
  auto m = bundled_model("mixtral-8x7b");
  auto t = generate(m, small_workload(40, 24), {3, 1.2, 0.8});
  for (int l = 0; l < m.num_moe_layers; ++l) {
    auto p = stage_histogram(t, Stage::Prefill, l, m.num_experts);
    auto d = stage_histogram(t, Stage::Decode, l, m.num_experts);
    EXPECT_EQ(std::accumulate(p.begin(), p.end(), std::int64_t{0}), 40 * m.topk);
    EXPECT_EQ(std::accumulate(d.begin(), d.end(), std::int64_t{0}), 24 * m.topk);
    EXPECT_EQ(p, prefill_histogram(t, l, m.num_experts));
  }
}

double top_share(const RoutingTrace& t, const MoEModelConfig& m)
{
  double top = 0, total = 0;
  for (int l = 0; l < m.num_moe_layers; ++l) {
    auto h = prefill_histogram(t, l, m.num_experts);
    std::sort(h.begin(), h.end(), std::greater<>());
    top += static_cast<double>(std::accumulate(h.begin(), h.begin() + m.topk, std::int64_t{0}));
    total += static_cast<double>(std::accumulate(h.begin(), h.end(), std::int64_t{0}));
  }
  return top / total;
}

TEST(RoutingTrace, SkewConcentratesActivations)
{
  auto m = bundled_model("qwen3-30b-a3b");
  auto wl = small_workload(128, 1);
  double s0 = top_share(generate(m, wl, {9, 0.0, 0.8}), m);
  double s1 = top_share(generate(m, wl, {9, 1.0, 0.8}), m);
  double s2 = top_share(generate(m, wl, {9, 2.0, 0.8}), m);
  EXPECT_LT(s0, s1);
  EXPECT_LT(s1, s2);
}

TEST(RoutingTrace, FullCorrelationStaysInPrefillSupport)
{
  auto m = bundled_model("deepseek-moe");
  auto t = generate(m, small_workload(64, 32), {11, 1.2, 1.0});
  for (int l = 0; l < m.num_moe_layers; ++l) {
    auto p = prefill_histogram(t, l, m.num_experts);
    int support = static_cast<int>(std::count_if(p.begin(), p.end(), [](auto c) { return c > 0; }));
    for (int tok = 0; tok < 32; ++tok) {
      const auto& ids = t.at(Stage::Decode, tok, l).expert_ids;
      int in_support = static_cast<int>(std::count_if(ids.begin(), ids.end(), [&](int e) { return p[e] > 0; }));
      // Falls back to the Zipf draw only once the prefill support is used up.
      EXPECT_EQ(in_support, std::min(support, m.topk));
    }
  }
}

TEST(RoutingTrace, WriteReadRoundTrip)
{
  auto m = bundled_model("phi-3.5-moe");
  auto t = generate(m, small_workload(8, 4), {2, 1.2, 0.8});
  std::istringstream in(serialize(t));
  auto back = read_trace(in, m);
  EXPECT_EQ(back, t);

  auto path = std::filesystem::temp_directory_path() / "ndpmoe_trace_test.txt";
  save_trace(path, t);
  EXPECT_EQ(load_trace(path, m), t);
  WorkloadConfig wl = small_workload(8, 4);
  wl.trace_source = TraceFile{path};
  EXPECT_EQ(trace_for(m, wl), t);
  wl.output_len = 5;
  EXPECT_THROW(trace_for(m, wl), TraceError);
  std::filesystem::remove(path);
}

std::string read_error(const std::string& text, const MoEModelConfig& m)
{
  std::istringstream in(text);
  try {
    read_trace(in, m, "t.txt");
  } catch (const TraceError& e) {
    return e.what();
  }
  return {};
}

TEST(RoutingTrace, MalformedInputsNameTheLine)
{
  auto m = bundled_model("mixtral-8x7b");
  m.num_layers = m.num_moe_layers = 1;
  const std::string head = "#moe-trace v1 model=mixtral-8x7b layers=1 topk=2 prefill=1 decode=1\n";
  EXPECT_EQ(read_error(head + "P,0,0,1;3\nD,0,0,0;7\n", m), "");
  EXPECT_NE(read_error(head + "P,0,0,1;9\nD,0,0,0;7\n", m).find("t.txt:2"), std::string::npos);
  EXPECT_NE(read_error(head + "P,0,0,3;1\nD,0,0,0;7\n", m).find("ascending"), std::string::npos);
  EXPECT_NE(read_error(head + "P,0,0,1\nD,0,0,0;7\n", m).find("expected 2"), std::string::npos);
  EXPECT_NE(read_error(head + "P,0,0,1;3\n", m).find("missing entry"), std::string::npos);
  EXPECT_NE(read_error(head + "P,0,0,1;3\nP,0,0,1;3\nD,0,0,0;7\n", m).find("duplicate"), std::string::npos);
  EXPECT_NE(read_error("garbage\n", m).find("header"), std::string::npos);
  EXPECT_NE(read_error("", m).find("empty"), std::string::npos);
}

TEST(RoutingTrace, RejectsBadParameters)
{
  auto m = bundled_model("mixtral-8x7b");
  EXPECT_THROW(generate(m, small_workload(), {0, -1.0, 0.5}), TraceError);
  EXPECT_THROW(generate(m, small_workload(), {0, 1.0, 1.5}), TraceError);
  m.topk = 9;
  EXPECT_THROW(generate(m, small_workload(), {0, 1.0, 0.5}), TraceError);
}

TEST(RoutingTrace, SubstreamsIndependentOfCallOrder)
{
  auto a = substream(7, 1, 2, 3);
  auto b = substream(7, 1, 2, 3);
  EXPECT_EQ(a(), b());
  auto c = substream(7, 1, 2, 4);
  auto d = substream(7, 1, 2, 3);
  EXPECT_NE(c(), d());
  for (int i = 0; i < 1000; ++i) {
    double u = uniform01(a);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
} // namespace
} // namespace ndpmoe
