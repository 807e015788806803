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

#include "ndpmoe/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <fmt/core.h>
#include <yaml-cpp/yaml.h>

#include "ndpmoe/cost_model.hpp"

namespace ndpmoe
{
namespace
{
struct Context {
  std::string_view origin;
  std::string_view section;
};

[[noreturn]] void fail_at(const Context& ctx, const YAML::Node& node, std::string_view key, std::string_view what)
{
  throw ConfigError(fmt::format("{}:{}: field '{}.{}': {}", ctx.origin, node.Mark().line + 1, ctx.section, key, what));
}

double read_double(const Context& ctx, const YAML::Node& node, std::string_view key)
{
  try {
    return node.as<double>();
  } catch (const YAML::Exception&) {
    fail_at(ctx, node, key, "expected a number");
  }
}

std::int64_t read_int(const Context& ctx, const YAML::Node& node, std::string_view key)
{
  double v = read_double(ctx, node, key);
  if (!std::isfinite(v) || v != std::floor(v) || std::fabs(v) > 9.0e15)
    fail_at(ctx, node, key, "expected an integer");
  return static_cast<std::int64_t>(v);
}

std::uint64_t read_bytes(const Context& ctx, const YAML::Node& node, std::string_view key)
{
  std::int64_t v = read_int(ctx, node, key);
  if (v < 0)
    fail_at(ctx, node, key, "must be non-negative");
  return static_cast<std::uint64_t>(v);
}

std::string read_string(const Context& ctx, const YAML::Node& node, std::string_view key)
{
  if (!node.IsScalar())
    fail_at(ctx, node, key, "expected a string");
  return node.Scalar();
}

using FieldSetter = std::function<void(const Context&, const YAML::Node&, std::string_view)>;

// Applies every key of `map` through `fields`; unknown keys are errors.
void apply_fields(const Context& ctx, const YAML::Node& map, const std::map<std::string, FieldSetter, std::less<>>& fields,
                  std::initializer_list<std::string_view> skip = {})
{
  if (!map.IsMap())
    throw ConfigError(fmt::format("{}:{}: section '{}' must be a mapping", ctx.origin, map.Mark().line + 1, ctx.section));
  for (const auto& kv : map) {
    auto key = kv.first.as<std::string>();
    bool skipped = false;
    for (auto s : skip)
      skipped = skipped || key == s;
    if (skipped)
      continue;
    auto it = fields.find(key);
    if (it == fields.end())
      fail_at(ctx, kv.first, key, "unknown field");
    it->second(ctx, kv.second, key);
  }
}

HardwareConfig hardware_from_node(const YAML::Node& node, const Context& ctx)
{
  HardwareConfig hw;
  if (node["base"])
    hw = resolve_hardware(read_string(ctx, node["base"], "base"));

  // clang-format off
  const std::map<std::string, FieldSetter, std::less<>> fields{
    {"name", [&](auto& c, auto& n, auto k) { hw.name = read_string(c, n, k); }},
    {"gpu_freq_ghz", [&](auto& c, auto& n, auto k) { hw.gpu_freq_ghz = read_double(c, n, k); }},
    {"gpu_mem_capacity_bytes", [&](auto& c, auto& n, auto k) { hw.gpu_mem_capacity_bytes = read_bytes(c, n, k); }},
    {"gpu_mem_bw_Bps", [&](auto& c, auto& n, auto k) { hw.gpu_mem_bw_Bps = read_double(c, n, k); }},
    {"gpu_flops", [&](auto& c, auto& n, auto k) { hw.gpu_flops = read_double(c, n, k); }},
    {"pcie_bw_Bps", [&](auto& c, auto& n, auto k) { hw.pcie_bw_Bps = read_double(c, n, k); }},
    {"pcie_latency_s", [&](auto& c, auto& n, auto k) { hw.pcie_latency_s = read_double(c, n, k); }},
    {"ndp_count", [&](auto& c, auto& n, auto k) { hw.ndp_count = static_cast<int>(read_int(c, n, k)); }},
    {"ndp_capacity_bytes", [&](auto& c, auto& n, auto k) { hw.ndp_capacity_bytes = read_bytes(c, n, k); }},
    {"ndp_internal_bw_Bps", [&](auto& c, auto& n, auto k) { hw.ndp_internal_bw_Bps = read_double(c, n, k); }},
    {"ndp_flops", [&](auto& c, auto& n, auto k) { hw.ndp_flops = read_double(c, n, k); }},
    {"cpu_mem_bw_Bps", [&](auto& c, auto& n, auto k) { hw.cpu_mem_bw_Bps = read_double(c, n, k); }},
    {"cpu_flops", [&](auto& c, auto& n, auto k) { hw.cpu_flops = read_double(c, n, k); }},
    {"cpu_mem_capacity_bytes", [&](auto& c, auto& n, auto k) { hw.cpu_mem_capacity_bytes = read_bytes(c, n, k); }},
    {"activation_workspace_bytes", [&](auto& c, auto& n, auto k) { hw.activation_workspace_bytes = read_bytes(c, n, k); }},
  };
  // clang-format on
  apply_fields(ctx, node, fields, {"base"});
  return hw;
}

MoEModelConfig model_from_node(const YAML::Node& node, const Context& ctx)
{
  MoEModelConfig m;
  bool has_base = false;
  if (node["base"]) {
    m = resolve_model(read_string(ctx, node["base"], "base"));
    has_base = true;
  }

  std::optional<double> total_params;
  bool seen_nonexpert = false;
  bool seen_moe_layers = false;
  bool seen_expert_total = false;
  // clang-format off
  const std::map<std::string, FieldSetter, std::less<>> fields{
    {"name", [&](auto& c, auto& n, auto k) { m.name = read_string(c, n, k); }},
    {"expert_params_total", [&](auto& c, auto& n, auto k) { m.expert_params_total = read_double(c, n, k); seen_expert_total = true; }},
    {"num_experts", [&](auto& c, auto& n, auto k) { m.num_experts = static_cast<int>(read_int(c, n, k)); }},
    {"topk", [&](auto& c, auto& n, auto k) { m.topk = static_cast<int>(read_int(c, n, k)); }},
    {"shared_experts", [&](auto& c, auto& n, auto k) { m.shared_experts = static_cast<int>(read_int(c, n, k)); }},
    {"hidden_dim", [&](auto& c, auto& n, auto k) { m.hidden_dim = read_int(c, n, k); }},
    {"interm_dim", [&](auto& c, auto& n, auto k) { m.interm_dim = read_int(c, n, k); }},
    {"num_layers", [&](auto& c, auto& n, auto k) { m.num_layers = static_cast<int>(read_int(c, n, k)); }},
    {"num_moe_layers", [&](auto& c, auto& n, auto k) { m.num_moe_layers = static_cast<int>(read_int(c, n, k)); seen_moe_layers = true; }},
    {"dtype_bytes", [&](auto& c, auto& n, auto k) { m.dtype_bytes = static_cast<int>(read_int(c, n, k)); }},
    {"nonexpert_params", [&](auto& c, auto& n, auto k) { m.nonexpert_params = read_bytes(c, n, k); seen_nonexpert = true; }},
    {"total_params", [&](auto& c, auto& n, auto k) { total_params = read_double(c, n, k); }},
  };
  // clang-format on
  apply_fields(ctx, node, fields, {"base"});

  if (!has_base) {
    for (std::string_view required : {"num_experts", "topk", "hidden_dim", "interm_dim", "num_layers"}) {
      if (!node[std::string(required)])
        throw ConfigError(fmt::format("{}:{}: field '{}.{}': required", ctx.origin, node.Mark().line + 1, ctx.section, required));
    }
    if (!seen_moe_layers)
      m.num_moe_layers = m.num_layers;
  }
  const double per_expert = 3.0 * static_cast<double>(m.hidden_dim) * static_cast<double>(m.interm_dim);
  if (!seen_expert_total && !has_base)
    m.expert_params_total = per_expert * m.num_experts * m.num_moe_layers;
  if (total_params && !seen_nonexpert) {
    double rest = *total_params - per_expert * (m.num_experts + m.shared_experts) * m.num_moe_layers;
    m.nonexpert_params = rest > 0 ? static_cast<std::uint64_t>(std::llround(rest)) : 0;
  }
  return m;
}

WorkloadConfig workload_from_node(const YAML::Node& node, const Context& ctx)
{
  WorkloadConfig wl = default_workload();
  if (node["base"])
    wl = resolve_workload(read_string(ctx, node["base"], "base"));

  // clang-format off
  const std::map<std::string, FieldSetter, std::less<>> fields{
    {"batch_size", [&](auto& c, auto& n, auto k) { wl.batch_size = static_cast<int>(read_int(c, n, k)); }},
    {"prompt_len", [&](auto& c, auto& n, auto k) { wl.prompt_len = read_int(c, n, k); }},
    {"output_len", [&](auto& c, auto& n, auto k) { wl.output_len = read_int(c, n, k); }},
    {"trace", [&](auto& c, auto& n, auto) {
      Context tctx{c.origin, "workload.trace"};
      std::string kind = n["kind"] ? read_string(tctx, n["kind"], "kind") : std::string("synthetic");
      if (kind == "synthetic") {
        SyntheticTraceParams p;
        const std::map<std::string, FieldSetter, std::less<>> tf{
          {"seed", [&](auto& c2, auto& n2, auto k2) {
             std::int64_t s = read_int(c2, n2, k2);
             if (s < 0) fail_at(c2, n2, k2, "must be non-negative");
             p.seed = static_cast<std::uint64_t>(s); }},
          {"skew", [&](auto& c2, auto& n2, auto k2) { p.zipf_skew = read_double(c2, n2, k2); }},
          {"rho", [&](auto& c2, auto& n2, auto k2) { p.correlation = read_double(c2, n2, k2); }},
        };
        apply_fields(tctx, n, tf, {"kind"});
        wl.trace_source = p;
      } else if (kind == "file") {
        TraceFile f;
        const std::map<std::string, FieldSetter, std::less<>> tf{
          {"path", [&](auto& c2, auto& n2, auto k2) { f.path = read_string(c2, n2, k2); }},
        };
        apply_fields(tctx, n, tf, {"kind"});
        if (f.path.empty())
          fail_at(tctx, n, "path", "required for kind=file");
        wl.trace_source = f;
      } else {
        fail_at(tctx, n["kind"], "kind", "expected 'synthetic' or 'file'");
      }
    }},
  };
  // clang-format on
  apply_fields(ctx, node, fields, {"base"});
  return wl;
}

YAML::Node parse_yaml(std::string_view text, std::string_view origin)
{
  try {
    return YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw ConfigError(fmt::format("{}:{}: parse error: {}", origin, e.mark.line + 1, e.msg));
  }
}

std::string read_file(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw ConfigError(fmt::format("{}: cannot open config file", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check(bool ok, std::string_view field, std::string_view bound)
{
  if (!ok)
    throw ConfigError(fmt::format("{} must be {}", field, bound));
}

// A standalone profile file may hold just one section's fields or the full
// sectioned document.
YAML::Node section_or_root(const YAML::Node& root, const char* section)
{
  if (root.IsMap() && root[section])
    return root[section];
  return root;
}
} // namespace

void validate(const HardwareConfig& hw)
{
  check(hw.gpu_freq_ghz > 0, "hardware.gpu_freq_ghz", "> 0");
  check(hw.gpu_mem_capacity_bytes > 0, "hardware.gpu_mem_capacity_bytes", "> 0");
  check(hw.gpu_mem_bw_Bps > 0, "hardware.gpu_mem_bw_Bps", "> 0");
  check(hw.gpu_flops > 0, "hardware.gpu_flops", "> 0");
  check(hw.pcie_bw_Bps > 0, "hardware.pcie_bw_Bps", "> 0");
  check(hw.pcie_latency_s >= 0, "hardware.pcie_latency_s", ">= 0");
  check(hw.ndp_count >= 1 && hw.ndp_count <= 16, "hardware.ndp_count", "in [1, 16]");
  check(hw.ndp_capacity_bytes > 0, "hardware.ndp_capacity_bytes", "> 0");
  check(hw.ndp_internal_bw_Bps > 0, "hardware.ndp_internal_bw_Bps", "> 0");
  check(hw.ndp_flops > 0, "hardware.ndp_flops", "> 0");
  check(hw.cpu_mem_bw_Bps > 0, "hardware.cpu_mem_bw_Bps", "> 0");
  check(hw.cpu_flops > 0, "hardware.cpu_flops", "> 0");
  check(hw.cpu_mem_capacity_bytes > 0, "hardware.cpu_mem_capacity_bytes", "> 0");
}

void validate(const MoEModelConfig& m)
{
  check(!m.name.empty(), "model.name", "non-empty");
  check(m.num_experts >= 1, "model.num_experts", ">= 1");
  check(m.topk >= 1, "model.topk", ">= 1");
  check(m.topk <= m.num_experts, "model.topk", fmt::format("<= num_experts ({})", m.num_experts));
  check(m.shared_experts >= 0, "model.shared_experts", ">= 0");
  check(m.hidden_dim >= 1, "model.hidden_dim", ">= 1");
  check(m.interm_dim >= 1, "model.interm_dim", ">= 1");
  check(m.num_layers >= 0, "model.num_layers", ">= 0");
  check(m.num_moe_layers >= 0, "model.num_moe_layers", ">= 0");
  check(m.num_moe_layers <= m.num_layers, "model.num_moe_layers", fmt::format("<= num_layers ({})", m.num_layers));
  check(m.dtype_bytes >= 1, "model.dtype_bytes", ">= 1");
}

void validate(const WorkloadConfig& wl)
{
  check(wl.batch_size == 1, "batch_size", "1");
  check(wl.prompt_len >= 1, "workload.prompt_len", ">= 1");
  check(wl.output_len >= 1, "workload.output_len", ">= 1");
  if (const auto* p = std::get_if<SyntheticTraceParams>(&wl.trace_source)) {
    check(p->zipf_skew >= 0 && std::isfinite(p->zipf_skew), "workload.trace.skew", ">= 0");
    check(p->correlation >= 0 && p->correlation <= 1, "workload.trace.rho", "in [0, 1]");
  }
}

std::vector<std::string> config_warnings(const HardwareConfig& hw)
{
  std::vector<std::string> out;
  bool any_offload = false;
  for (const auto& name : bundled_model_names())
    any_offload = any_offload || hw.gpu_mem_capacity_bytes < total_routed_expert_bytes(bundled_model(name));
  if (!any_offload)
    out.push_back(fmt::format("hardware '{}': GPU memory ({} B) holds every bundled model's experts; offloading is moot",
                              hw.name, hw.gpu_mem_capacity_bytes));
  return out;
}

SystemConfig parse_config(std::string_view text, std::string_view origin)
{
  YAML::Node root = parse_yaml(text, origin);
  SystemConfig cfg;
  cfg.hardware = bundled_hardware();
  cfg.workload = default_workload();
  if (root.IsNull())
    throw ConfigError(fmt::format("{}: empty config; a 'model' section is required", origin));
  if (!root.IsMap())
    throw ConfigError(fmt::format("{}:{}: top level must be a mapping", origin, root.Mark().line + 1));

  bool have_model = false;
  for (const auto& kv : root) {
    auto key = kv.first.as<std::string>();
    if (key == "hardware") {
      cfg.hardware = hardware_from_node(kv.second, {origin, "hardware"});
    } else if (key == "model") {
      cfg.model = model_from_node(kv.second, {origin, "model"});
      have_model = true;
    } else if (key == "workload") {
      cfg.workload = workload_from_node(kv.second, {origin, "workload"});
    } else {
      throw ConfigError(fmt::format("{}:{}: unknown section '{}'", origin, kv.first.Mark().line + 1, key));
    }
  }
  if (!have_model)
    throw ConfigError(fmt::format("{}: a 'model' section is required", origin));

  validate(cfg.hardware);
  validate(cfg.model);
  validate(cfg.workload);
  return cfg;
}

SystemConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path), path.string()); }

HardwareConfig parse_hardware(std::string_view text, std::string_view origin)
{
  auto hw = hardware_from_node(section_or_root(parse_yaml(text, origin), "hardware"), {origin, "hardware"});
  validate(hw);
  return hw;
}

MoEModelConfig parse_model(std::string_view text, std::string_view origin)
{
  auto m = model_from_node(section_or_root(parse_yaml(text, origin), "model"), {origin, "model"});
  validate(m);
  return m;
}

WorkloadConfig parse_workload(std::string_view text, std::string_view origin)
{
  auto wl = workload_from_node(section_or_root(parse_yaml(text, origin), "workload"), {origin, "workload"});
  validate(wl);
  return wl;
}

std::string to_yaml(const SystemConfig& cfg)
{
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;

  const auto& hw = cfg.hardware;
  out << YAML::Key << "hardware" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << hw.name;
  out << YAML::Key << "gpu_freq_ghz" << YAML::Value << hw.gpu_freq_ghz;
  out << YAML::Key << "gpu_mem_capacity_bytes" << YAML::Value << hw.gpu_mem_capacity_bytes;
  out << YAML::Key << "gpu_mem_bw_Bps" << YAML::Value << hw.gpu_mem_bw_Bps;
  out << YAML::Key << "gpu_flops" << YAML::Value << hw.gpu_flops;
  out << YAML::Key << "pcie_bw_Bps" << YAML::Value << hw.pcie_bw_Bps;
  out << YAML::Key << "pcie_latency_s" << YAML::Value << hw.pcie_latency_s;
  out << YAML::Key << "ndp_count" << YAML::Value << hw.ndp_count;
  out << YAML::Key << "ndp_capacity_bytes" << YAML::Value << hw.ndp_capacity_bytes;
  out << YAML::Key << "ndp_internal_bw_Bps" << YAML::Value << hw.ndp_internal_bw_Bps;
  out << YAML::Key << "ndp_flops" << YAML::Value << hw.ndp_flops;
  out << YAML::Key << "cpu_mem_bw_Bps" << YAML::Value << hw.cpu_mem_bw_Bps;
  out << YAML::Key << "cpu_flops" << YAML::Value << hw.cpu_flops;
  out << YAML::Key << "cpu_mem_capacity_bytes" << YAML::Value << hw.cpu_mem_capacity_bytes;
  out << YAML::Key << "activation_workspace_bytes" << YAML::Value << hw.activation_workspace_bytes;
  out << YAML::EndMap;

  const auto& m = cfg.model;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << m.name;
  out << YAML::Key << "expert_params_total" << YAML::Value << m.expert_params_total;
  out << YAML::Key << "num_experts" << YAML::Value << m.num_experts;
  out << YAML::Key << "topk" << YAML::Value << m.topk;
  out << YAML::Key << "shared_experts" << YAML::Value << m.shared_experts;
  out << YAML::Key << "hidden_dim" << YAML::Value << m.hidden_dim;
  out << YAML::Key << "interm_dim" << YAML::Value << m.interm_dim;
  out << YAML::Key << "num_layers" << YAML::Value << m.num_layers;
  out << YAML::Key << "num_moe_layers" << YAML::Value << m.num_moe_layers;
  out << YAML::Key << "dtype_bytes" << YAML::Value << m.dtype_bytes;
  out << YAML::Key << "nonexpert_params" << YAML::Value << m.nonexpert_params;
  out << YAML::EndMap;

  const auto& wl = cfg.workload;
  out << YAML::Key << "workload" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch_size" << YAML::Value << wl.batch_size;
  out << YAML::Key << "prompt_len" << YAML::Value << wl.prompt_len;
  out << YAML::Key << "output_len" << YAML::Value << wl.output_len;
  out << YAML::Key << "trace" << YAML::Value << YAML::BeginMap;
  if (const auto* p = std::get_if<SyntheticTraceParams>(&wl.trace_source)) {
    out << YAML::Key << "kind" << YAML::Value << "synthetic";
    out << YAML::Key << "seed" << YAML::Value << p->seed;
    out << YAML::Key << "skew" << YAML::Value << p->zipf_skew;
    out << YAML::Key << "rho" << YAML::Value << p->correlation;
  } else {
    out << YAML::Key << "kind" << YAML::Value << "file";
    out << YAML::Key << "path" << YAML::Value << std::get<TraceFile>(wl.trace_source).path.string();
  }
  out << YAML::EndMap;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::uint64_t total_routed_expert_bytes(const MoEModelConfig& model)
{
  return expert_weight_bytes(model) * static_cast<std::uint64_t>(model.num_experts) *
         static_cast<std::uint64_t>(model.num_moe_layers);
}

SchedulabilityVerdict check_capacity(const HardwareConfig& hw, const MoEModelConfig& model)
{
  const std::uint64_t need = total_routed_expert_bytes(model);
  const std::uint64_t have = static_cast<std::uint64_t>(hw.ndp_count) * hw.ndp_capacity_bytes;
  if (need <= have)
    return {true, 0};
  return {false, need - have};
}

} // namespace ndpmoe
