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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "ndpmoe/config.hpp"

namespace ndpmoe
{
namespace
{
std::string error_of(const std::string& text)
{
  try {
    parse_config(text, "test.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(Config, MixtralProfile)
{
  auto m = bundled_model("mixtral-8x7b");
  EXPECT_EQ(m.num_experts, 8);
  EXPECT_EQ(m.topk, 2);
  EXPECT_EQ(m.hidden_dim, 4096);
  EXPECT_EQ(m.interm_dim, 14336);
  EXPECT_EQ(m.num_layers, 32);
  EXPECT_EQ(m.num_moe_layers, 32);
  EXPECT_EQ(m.shared_experts, 0);
  EXPECT_EQ(m.dtype_bytes, 2);
}

TEST(Config, DeepSeekProfile)
{
  auto m = bundled_model("deepseek-moe");
  EXPECT_EQ(m.num_experts, 64);
  EXPECT_EQ(m.topk, 6);
  EXPECT_EQ(m.shared_experts, 2);
  EXPECT_EQ(m.num_moe_layers, 27);
  EXPECT_EQ(m.num_layers, 28);
  EXPECT_EQ(m.first_moe_layer(), 1);
}

TEST(Config, AllBundledProfilesValidate)
{
  for (const auto& name : bundled_model_names())
    EXPECT_NO_THROW(validate(bundled_model(name))) << name;
  EXPECT_NO_THROW(validate(bundled_hardware()));
  EXPECT_TRUE(config_warnings(bundled_hardware()).empty());
}

TEST(Config, BatchSizeMustBeOne)
{
  auto msg = error_of("model: {base: mixtral-8x7b}\nworkload: {batch_size: 4}\n");
  EXPECT_NE(msg.find("batch_size must be 1"), std::string::npos) << msg;
}

TEST(Config, InvariantViolationNamesField)
{
  EXPECT_NE(error_of("model: {base: mixtral-8x7b, topk: 9}\n").find("model.topk"), std::string::npos);
  EXPECT_NE(error_of("model: {base: mixtral-8x7b}\nhardware: {ndp_count: 17}\n").find("hardware.ndp_count"),
            std::string::npos);
  EXPECT_NE(error_of("model: {base: mixtral-8x7b}\nworkload: {prompt_len: 0}\n").find("workload.prompt_len"),
            std::string::npos);
}

TEST(Config, ParseErrorsCarryLineAndField)
{
  auto msg = error_of("model:\n  base: mixtral-8x7b\n  topk: two\n");
  EXPECT_NE(msg.find("test.yaml:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("model.topk"), std::string::npos) << msg;

  msg = error_of("model:\n  base: mixtral-8x7b\n  colour: red\n");
  EXPECT_NE(msg.find("colour"), std::string::npos) << msg;

  msg = error_of("model: [unclosed\n");
  EXPECT_NE(msg.find("test.yaml:"), std::string::npos) << msg;
}

TEST(Config, OmittedSectionsUseDefaults)
{
  auto cfg = parse_config("model: {base: qwen3-30b-a3b}\n");
  EXPECT_EQ(cfg.hardware, bundled_hardware());
  EXPECT_EQ(cfg.workload, default_workload());
  EXPECT_EQ(cfg.model, bundled_model("qwen3-30b-a3b"));
}

TEST(Config, FullModelWithoutBase)
{
  auto cfg = parse_config(R"(
model:
  name: tiny
  num_experts: 4
  topk: 1
  hidden_dim: 8
  interm_dim: 16
  num_layers: 2
workload:
  prompt_len: 4
  output_len: 3
  trace: {kind: synthetic, seed: 7, skew: 0.5, rho: 0.25}
)");
  EXPECT_EQ(cfg.model.num_moe_layers, 2);
  EXPECT_EQ(cfg.model.dtype_bytes, 2);
  const auto& p = std::get<SyntheticTraceParams>(cfg.workload.trace_source);
  EXPECT_EQ(p.seed, 7u);
  EXPECT_DOUBLE_EQ(p.zipf_skew, 0.5);
  EXPECT_DOUBLE_EQ(p.correlation, 0.25);
}

TEST(Config, RoundTrip)
{
  SystemConfig cfg;
  cfg.hardware = bundled_hardware().with_ndp(4);
  cfg.hardware.pcie_latency_s = 1.5e-6;
  cfg.model = bundled_model("deepseek-moe");
  cfg.workload.prompt_len = 128;
  cfg.workload.trace_source = SyntheticTraceParams{123, 0.7, 0.3};
  auto again = parse_config(to_yaml(cfg));
  EXPECT_EQ(again, cfg);

  cfg.workload.trace_source = TraceFile{"some/trace.txt"};
  EXPECT_EQ(parse_config(to_yaml(cfg)), cfg);

  for (const auto& name : bundled_model_names()) {
    SystemConfig c{bundled_hardware(), bundled_model(name), default_workload()};
    EXPECT_EQ(parse_config(to_yaml(c)), c) << name;
  }
}

TEST(Config, LoadConfigFromFile)
{
  auto path = std::filesystem::temp_directory_path() / "ndpmoe_config_test.yaml";
  {
    std::ofstream out(path);
    out << "model: {base: phi-3.5-moe}\nhardware: {ndp_count: 4}\n";
  }
  auto cfg = load_config(path);
  EXPECT_EQ(cfg.model.name, "phi-3.5-moe");
  EXPECT_EQ(cfg.hardware.ndp_count, 4);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), ConfigError);
}

TEST(Config, ProfileDirectoryLookup)
{
  auto dir = std::filesystem::temp_directory_path() / "ndpmoe_profiles_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "mini.yaml");
    out << "base: mixtral-8x7b\nname: mini\nnum_layers: 4\nnum_moe_layers: 4\n";
  }
  setenv("MOE_NDP_PROFILE_DIR", dir.c_str(), 1);
  auto m = resolve_model("mini");
  unsetenv("MOE_NDP_PROFILE_DIR");
  EXPECT_EQ(m.name, "mini");
  EXPECT_EQ(m.num_layers, 4);
  EXPECT_THROW(resolve_model("mini"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Capacity, MixtralTwoDimmsNotSupported)
{
  auto v = check_capacity(bundled_hardware().with_ndp(2), bundled_model("mixtral-8x7b"));
  EXPECT_FALSE(v.supported);
  // 32 layers x 8 experts x 352,321,536 B - 2 x 32 GiB
  EXPECT_EQ(v.deficit_bytes, 90194313216ull - 2 * 32 * GiB);
}

TEST(Capacity, DeepSeekTwoDimmsSupported)
{
  auto m = bundled_model("deepseek-moe");
  EXPECT_EQ(total_routed_expert_bytes(m), 27ull * 64 * 3 * 2048 * 1408 * 2);
  EXPECT_TRUE(check_capacity(bundled_hardware().with_ndp(2), m).supported);
}

TEST(Capacity, ZeroExpertModelSupported)
{
  MoEModelConfig m;
  m.name = "dense";
  EXPECT_TRUE(check_capacity(bundled_hardware().with_ndp(1), m).supported);
}

// Frozen from tests/oracles/reference_values.py.
TEST(Capacity, VerdictTable)
{
  const std::vector<std::pair<std::string, std::vector<bool>>> expect{
      {"deepseek-moe", {true, true, true, true}},
      {"qwen3-30b-a3b", {false, true, true, true}},
      {"phi-3.5-moe", {false, false, true, true}},
      {"mixtral-8x7b", {false, false, true, true}},
  };
  const int ns[] = {1, 2, 4, 6};
  for (const auto& [name, verdicts] : expect)
    for (int i = 0; i < 4; ++i)
      EXPECT_EQ(check_capacity(bundled_hardware().with_ndp(ns[i]), bundled_model(name)).supported, verdicts[i])
          << name << " N=" << ns[i];
}

TEST(Capacity, MonotoneInN)
{
  for (const auto& name : bundled_model_names()) {
    bool prev = false;
    for (int n = 1; n <= 16; ++n) {
      bool now = check_capacity(bundled_hardware().with_ndp(n), bundled_model(name)).supported;
      EXPECT_TRUE(!prev || now) << name << " N=" << n;
      prev = now;
    }
  }
}
} // namespace
} // namespace ndpmoe
