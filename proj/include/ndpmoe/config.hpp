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

#ifndef NDPMOE_CONFIG_HPP
#define NDPMOE_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ndpmoe
{
inline constexpr std::uint64_t GiB = std::uint64_t{1} << 30;

/// Raised for malformed config text and for invariant violations. The
/// message names the offending field (and line, when parsing a file).
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// One consumer GPU, a host CPU, and up to 16 NDP-DIMMs on the memory bus.
struct HardwareConfig {
  std::string name = "default";

  double gpu_freq_ghz = 2.30;
  std::uint64_t gpu_mem_capacity_bytes = 16 * GiB;
  double gpu_mem_bw_Bps = 960e9;
  double gpu_flops = 100e12;

  double pcie_bw_Bps = 64e9;
  double pcie_latency_s = 2e-6;

  int ndp_count = 6;
  std::uint64_t ndp_capacity_bytes = 32 * GiB;
  double ndp_internal_bw_Bps = 102.4e9;
  double ndp_flops = 204.8e9; // 64 multipliers x 2 FLOP x 1.6 GHz

  double cpu_mem_bw_Bps = 89.6e9;
  double cpu_flops = 2e12;
  std::uint64_t cpu_mem_capacity_bytes = 192 * GiB;

  // GPU memory held back for activations / KV when sizing the prefetch budget.
  std::uint64_t activation_workspace_bytes = 1 * GiB;

  HardwareConfig with_ndp(int n) const
  {
    HardwareConfig copy = *this;
    copy.ndp_count = n;
    return copy;
  }

  bool operator==(const HardwareConfig&) const = default;
};

struct MoEModelConfig {
  std::string name;
  double expert_params_total = 0; // headline figure, informational only
  int num_experts = 0;            // routed experts per MoE layer
  int topk = 1;
  int shared_experts = 0;
  std::int64_t hidden_dim = 0;
  std::int64_t interm_dim = 0;
  int num_layers = 0;
  int num_moe_layers = 0;
  int dtype_bytes = 2;
  std::uint64_t nonexpert_params = 0;

  /// Index of the first MoE layer; dense layers come first.
  int first_moe_layer() const { return num_layers - num_moe_layers; }

  bool operator==(const MoEModelConfig&) const = default;
};

struct SyntheticTraceParams {
  std::uint64_t seed = 0;
  double zipf_skew = 1.2;
  double correlation = 0.8; // rho
  bool operator==(const SyntheticTraceParams&) const = default;
};

struct TraceFile {
  std::filesystem::path path;
  bool operator==(const TraceFile&) const = default;
};

using TraceSource = std::variant<SyntheticTraceParams, TraceFile>;

struct WorkloadConfig {
  int batch_size = 1;
  std::int64_t prompt_len = 512;
  std::int64_t output_len = 512;
  TraceSource trace_source = SyntheticTraceParams{};
  bool operator==(const WorkloadConfig&) const = default;
};

struct SystemConfig {
  HardwareConfig hardware;
  MoEModelConfig model;
  WorkloadConfig workload;
  bool operator==(const SystemConfig&) const = default;
};

void validate(const HardwareConfig& hw);
void validate(const MoEModelConfig& model);
void validate(const WorkloadConfig& wl);

/// Non-fatal observations, e.g. a GPU large enough to hold every bundled model.
std::vector<std::string> config_warnings(const HardwareConfig& hw);

/// Parse a YAML document with optional `hardware`, `model` and `workload`
/// sections. A section may name a bundled profile with `base:` and override
/// individual fields. Omitted sections fall back to the default profiles.
SystemConfig load_config(const std::filesystem::path& path);
SystemConfig parse_config(std::string_view text, std::string_view origin = "<string>");

std::string to_yaml(const SystemConfig& cfg);

HardwareConfig parse_hardware(std::string_view text, std::string_view origin = "<string>");
MoEModelConfig parse_model(std::string_view text, std::string_view origin = "<string>");
WorkloadConfig parse_workload(std::string_view text, std::string_view origin = "<string>");

// Bundled profiles.
std::vector<std::string> bundled_model_names();
MoEModelConfig bundled_model(std::string_view name);
HardwareConfig bundled_hardware(std::string_view name = "default");
WorkloadConfig default_workload();

/// Resolve a `--model`/`--hw`/`--workload` argument: a bundled profile name,
/// a `<name>.yaml` under $MOE_NDP_PROFILE_DIR, or a path to a YAML file.
MoEModelConfig resolve_model(std::string_view name_or_path);
HardwareConfig resolve_hardware(std::string_view name_or_path);
WorkloadConfig resolve_workload(std::string_view name_or_path);

struct SchedulabilityVerdict {
  bool supported = true;
  std::uint64_t deficit_bytes = 0;
  bool operator==(const SchedulabilityVerdict&) const = default;
};

/// Supported iff every routed expert fits in the aggregate NDP capacity.
SchedulabilityVerdict check_capacity(const HardwareConfig& hw, const MoEModelConfig& model);

std::uint64_t total_routed_expert_bytes(const MoEModelConfig& model);

} // namespace ndpmoe

#endif
