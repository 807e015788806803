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

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <optional>

#include <fmt/core.h>

#include "ndpmoe/config.hpp"

namespace ndpmoe
{
namespace
{
// Non-expert parameters = published total size minus what the expert
// dimensions account for (routed + shared experts).
MoEModelConfig make_model(std::string name, double headline_expert_params, int experts, int topk, int shared,
                          std::int64_t hidden, std::int64_t interm, int layers, int moe_layers, double total_params)
{
  MoEModelConfig m;
  m.name = std::move(name);
  m.expert_params_total = headline_expert_params;
  m.num_experts = experts;
  m.topk = topk;
  m.shared_experts = shared;
  m.hidden_dim = hidden;
  m.interm_dim = interm;
  m.num_layers = layers;
  m.num_moe_layers = moe_layers;
  m.dtype_bytes = 2;
  const double per_expert = 3.0 * static_cast<double>(hidden) * static_cast<double>(interm);
  const double rest = total_params - per_expert * (experts + shared) * moe_layers;
  m.nonexpert_params = rest > 0 ? static_cast<std::uint64_t>(std::llround(rest)) : 0;
  return m;
}

std::string slurp(const std::filesystem::path& p)
{
  std::ifstream in(p);
  if (!in)
    throw ConfigError(fmt::format("{}: cannot open profile", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<std::filesystem::path> find_profile_file(std::string_view name)
{
  if (const char* dir = std::getenv("MOE_NDP_PROFILE_DIR"); dir && *dir) {
    for (const char* ext : {".yaml", ".yml"}) {
      std::filesystem::path p = std::filesystem::path(dir) / (std::string(name) + ext);
      if (std::filesystem::exists(p))
        return p;
    }
  }
  std::filesystem::path p{std::string(name)};
  if (std::filesystem::is_regular_file(p))
    return p;
  return std::nullopt;
}
} // namespace

std::vector<std::string> bundled_model_names() { return {"deepseek-moe", "qwen3-30b-a3b", "phi-3.5-moe", "mixtral-8x7b"}; }

MoEModelConfig bundled_model(std::string_view name)
{
  if (name == "deepseek-moe")
    return make_model("deepseek-moe", 15.4e9, 64, 6, 2, 2048, 1408, 28, 27, 16.4e9);
  if (name == "qwen3-30b-a3b")
    return make_model("qwen3-30b-a3b", 29.0e9, 128, 8, 0, 2048, 768, 48, 48, 30.5e9);
  if (name == "phi-3.5-moe")
    return make_model("phi-3.5-moe", 40.3e9, 16, 2, 0, 6400, 4096, 32, 32, 41.9e9);
  if (name == "mixtral-8x7b")
    return make_model("mixtral-8x7b", 42.0e9, 8, 2, 0, 4096, 14336, 32, 32, 46.7e9);
  throw ConfigError(fmt::format("unknown model profile '{}'", name));
}

HardwareConfig bundled_hardware(std::string_view name)
{
  if (name == "default" || name == "rtx5080-ndp")
    return HardwareConfig{};
  throw ConfigError(fmt::format("unknown hardware profile '{}'", name));
}

WorkloadConfig default_workload() { return WorkloadConfig{}; }

MoEModelConfig resolve_model(std::string_view name_or_path)
{
  for (const auto& n : bundled_model_names())
    if (n == name_or_path)
      return bundled_model(n);
  if (auto p = find_profile_file(name_or_path))
    return parse_model(slurp(*p), p->string());
  throw ConfigError(fmt::format("unknown model profile '{}'", name_or_path));
}

HardwareConfig resolve_hardware(std::string_view name_or_path)
{
  if (name_or_path == "default" || name_or_path == "rtx5080-ndp")
    return bundled_hardware(name_or_path);
  if (auto p = find_profile_file(name_or_path))
    return parse_hardware(slurp(*p), p->string());
  throw ConfigError(fmt::format("unknown hardware profile '{}'", name_or_path));
}

WorkloadConfig resolve_workload(std::string_view name_or_path)
{
  if (name_or_path == "default")
    return default_workload();
  if (auto p = find_profile_file(name_or_path))
    return parse_workload(slurp(*p), p->string());
  throw ConfigError(fmt::format("unknown workload profile '{}'", name_or_path));
}

} // namespace ndpmoe
