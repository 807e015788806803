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

#include "ndpmoe/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "ndpmoe/balance_solver.hpp"
#include "ndpmoe/config.hpp"
#include "ndpmoe/cost_model.hpp"
#include "ndpmoe/metrics_report.hpp"
#include "ndpmoe/prefetcher.hpp"
#include "ndpmoe/routing_trace.hpp"
#include "ndpmoe/schedulers.hpp"
#include "ndpmoe/sim_engine.hpp"

namespace ndpmoe
{
namespace
{
// Flags shared by every subcommand that needs a model run.
struct RunFlags {
  std::string hw = "default";
  std::string workload;
  std::int64_t prompt_len = 0;
  std::int64_t output_len = 0;
  std::uint64_t seed = 0;
  double skew = 1.2;
  double rho = 0.8;
  std::string trace;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* skew_opt = nullptr;
  CLI::Option* rho_opt = nullptr;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_trace)
{
  cmd->add_option("--hw", f.hw, "hardware profile name or YAML path")->capture_default_str();
  cmd->add_option("--workload", f.workload, "workload profile name or YAML path");
  cmd->add_option("--prompt-len", f.prompt_len, "override prompt length")->check(CLI::PositiveNumber);
  cmd->add_option("--output-len", f.output_len, "override generated length")->check(CLI::PositiveNumber);
  f.seed_opt = cmd->add_option("--seed", f.seed, "synthetic trace seed");
  f.skew_opt = cmd->add_option("--skew", f.skew, "Zipf skew (0 = uniform)")->check(CLI::NonNegativeNumber);
  f.rho_opt = cmd->add_option("--rho", f.rho, "prefill/decode correlation")->check(CLI::Range(0.0, 1.0));
  if (with_trace) {
    auto* t = cmd->add_option("--trace", f.trace, "replay a trace file instead of generating one");
    t->excludes(f.seed_opt)->excludes(f.skew_opt)->excludes(f.rho_opt);
  }
}

WorkloadConfig workload_from(const RunFlags& f)
{
  WorkloadConfig wl = f.workload.empty() ? default_workload() : resolve_workload(f.workload);
  if (f.prompt_len > 0)
    wl.prompt_len = f.prompt_len;
  if (f.output_len > 0)
    wl.output_len = f.output_len;
  SyntheticTraceParams p;
  if (const auto* base = std::get_if<SyntheticTraceParams>(&wl.trace_source))
    p = *base;
  if (f.seed_opt && f.seed_opt->count())
    p.seed = f.seed;
  if (f.skew_opt && f.skew_opt->count())
    p.zipf_skew = f.skew;
  if (f.rho_opt && f.rho_opt->count())
    p.correlation = f.rho;
  if (!f.trace.empty())
    wl.trace_source = TraceFile{f.trace};
  else if (std::holds_alternative<SyntheticTraceParams>(wl.trace_source) || f.seed_opt->count() ||
           f.skew_opt->count() || f.rho_opt->count())
    wl.trace_source = p;
  validate(wl);
  return wl;
}

// File traces define their own lengths.
RoutingTrace trace_and_lengths(const MoEModelConfig& model, WorkloadConfig& wl)
{
  if (const auto* file = std::get_if<TraceFile>(&wl.trace_source)) {
    auto trace = load_trace(file->path, model);
    wl.prompt_len = trace.prefill_len;
    wl.output_len = trace.decode_len;
    return trace;
  }
  return trace_for(model, wl);
}

HardwareConfig hardware_with(const std::string& name, std::optional<int> ndp)
{
  HardwareConfig hw = resolve_hardware(name);
  if (ndp)
    hw.ndp_count = *ndp;
  validate(hw);
  return hw;
}

void write_text(const std::string& path, const std::string& text, std::ostream& out)
{
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw ReportError(fmt::format("cannot write {}", path));
  f << text;
  if (!f)
    throw ReportError(fmt::format("write failed: {}", path));
}

std::vector<RunReport> seed_averaged(const HardwareConfig& hw, const MoEModelConfig& model, WorkloadConfig wl,
                                     const std::vector<PolicyId>& policies, const std::vector<int>& ndps,
                                     int seeds, const RunOptions& opts)
{
  std::vector<std::vector<RunReport>> per_seed;
  const bool synthetic = std::holds_alternative<SyntheticTraceParams>(wl.trace_source);
  const int rounds = synthetic ? std::max(1, seeds) : 1;
  for (int s = 0; s < rounds; ++s) {
    WorkloadConfig w = wl;
    if (synthetic)
      std::get<SyntheticTraceParams>(w.trace_source).seed += static_cast<std::uint64_t>(s);
    const auto trace = trace_and_lengths(model, w);
    per_seed.push_back(sweep(hw, model, w, trace, policies, ndps, opts));
  }
  std::vector<RunReport> out;
  for (std::size_t i = 0; i < per_seed.front().size(); ++i) {
    std::vector<RunReport> runs;
    for (const auto& v : per_seed)
      runs.push_back(v[i]);
    out.push_back(average_reports(runs));
  }
  return out;
}

std::vector<PolicyId> parse_policy_list(const std::vector<std::string>& names)
{
  std::vector<PolicyId> out;
  for (const auto& n : names)
    out.push_back(parse_policy(n));
  return out;
}

std::string fmt_value(double v) { return fmt::format("{:.12g}", v); }

std::string_view bound_name(BalanceBound b)
{
  switch (b) {
  case BalanceBound::Interior:
    return "interior";
  case BalanceBound::ClampLow:
    return "clamp-low";
  case BalanceBound::ClampHigh:
    return "clamp-high";
  }
  return "?";
}

const std::vector<std::string> kPolicyNames{"ondemand", "cpu", "ep", "tp", "tp-lb", "tp-lb-pre"};
} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Scheduling simulator for MoE inference on a GPU with NDP-DIMMs", "ndpmoe"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run one policy and print a JSON report");
  RunFlags sim_f;
  std::string sim_model, sim_policy, sim_out, sim_dump;
  std::optional<int> sim_ndp;
  bool sim_no_offload = false;
  int sim_max_x = 0;
  sim->add_option("--model", sim_model, "model profile name or YAML path")->required();
  sim->add_option("--policy", sim_policy, "scheduling policy")->required()->check(CLI::IsMember(kPolicyNames));
  sim->add_option("--ndp", sim_ndp, "number of NDP-DIMMs")->check(CLI::Range(1, 16));
  sim->add_option("--out", sim_out, "write the report here instead of stdout");
  sim->add_option("--dump-prefetch", sim_dump, "write the prefetch plan here");
  sim->add_option("--prefetch-max-x", sim_max_x, "cap experts prefetched per layer (0 = topk)")
      ->check(CLI::NonNegativeNumber);
  sim->add_flag("--no-ep-offload", sim_no_offload, "disable the expert-parallel GPU offload");
  add_run_flags(sim, sim_f, true);

  // sweep
  auto* swp = app.add_subcommand("sweep", "run policies across DIMM counts and tabulate speedups");
  RunFlags swp_f;
  std::string swp_model, swp_out, swp_format = "csv", swp_baseline = "ondemand";
  std::vector<std::string> swp_policies = kPolicyNames;
  std::vector<int> swp_ndps{1, 2, 3, 4, 5, 6};
  int swp_seeds = 1;
  swp->add_option("--model", swp_model, "model profile name or YAML path")->required();
  swp->add_option("--policies", swp_policies, "policies to run")->delimiter(',')->check(CLI::IsMember(kPolicyNames));
  swp->add_option("--ndp-list", swp_ndps, "DIMM counts")->delimiter(',')->check(CLI::Range(1, 16));
  swp->add_option("--baseline", swp_baseline, "speedup baseline")->check(CLI::IsMember(kPolicyNames));
  swp->add_option("--format", swp_format, "csv, json or svg")->check(CLI::IsMember({"csv", "json", "svg"}));
  swp->add_option("--out", swp_out, "output file (stdout if omitted)");
  swp->add_option("--seeds", swp_seeds, "average over this many consecutive seeds")->check(CLI::PositiveNumber);
  add_run_flags(swp, swp_f, true);

  // ablate
  auto* abl = app.add_subcommand("ablate", "ep / tp / tp-lb / tp-lb-pre ladder per model");
  RunFlags abl_f;
  std::vector<std::string> abl_models;
  std::vector<int> abl_ndps{2, 4, 6};
  std::string abl_dir;
  int abl_seeds = 1;
  abl->add_option("--model", abl_models, "model profiles (default: all bundled)");
  abl->add_option("--ndp-list", abl_ndps, "DIMM counts")->delimiter(',')->check(CLI::Range(1, 16));
  abl->add_option("--seeds", abl_seeds, "average over this many consecutive seeds")->check(CLI::PositiveNumber);
  abl->add_option("--out-dir", abl_dir, "directory for csv and svg files")->required();
  add_run_flags(abl, abl_f, false);

  // trace-gen
  auto* tg = app.add_subcommand("trace-gen", "write a synthetic routing trace");
  RunFlags tg_f;
  std::string tg_model, tg_out;
  tg->add_option("--model", tg_model, "model profile name or YAML path")->required();
  tg->add_option("-o,--out", tg_out, "trace file")->required();
  add_run_flags(tg, tg_f, false);

  // solve-balance
  auto* sb = app.add_subcommand("solve-balance", "solve the GPU/NDP balance for one layer");
  std::string sb_stage, sb_model, sb_hw = "default";
  int sb_ndp = 6;
  std::int64_t sb_seq = 0;
  bool sb_prims = false;
  sb->add_option("--stage", sb_stage, "prefill or decode")->required()->check(CLI::IsMember({"prefill", "decode"}));
  sb->add_option("--model", sb_model, "model profile name or YAML path")->required();
  sb->add_option("--ndp", sb_ndp, "number of NDP-DIMMs")->check(CLI::Range(1, 16));
  sb->add_option("--seq", sb_seq, "prefill sequence length (default: workload prompt length)")
      ->check(CLI::PositiveNumber);
  sb->add_option("--hw", sb_hw, "hardware profile name or YAML path");
  sb->add_flag("--print-primitives", sb_prims, "also print the latency primitives");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) {
      const auto model = resolve_model(sim_model);
      const auto hw = hardware_with(sim_f.hw, sim_ndp);
      auto wl = workload_from(sim_f);
      const auto policy = parse_policy(sim_policy);
      const auto trace = trace_and_lengths(model, wl);
      RunOptions opts;
      opts.ep.gpu_offload = !sim_no_offload;
      opts.prefetch_max_x = sim_max_x;
      const auto report = run(hw, model, wl, trace, policy, opts);
      if (!sim_dump.empty()) {
        const auto plan =
            build_plan(trace, model, prefetch_budget(hw, model), sim_max_x > 0 ? sim_max_x : model.topk);
        save_plan(sim_dump, plan);
      }
      write_text(sim_out, report_json(report) + "\n", out);
      if (!report.supported) {
        err << fmt::format("not supported: {} needs {} more bytes of NDP capacity at N={}\n", model.name,
                           report.deficit_bytes, hw.ndp_count);
        return kExitNotSupported;
      }
      return kExitOk;
    }

    if (*swp) {
      const auto model = resolve_model(swp_model);
      const auto hw = hardware_with(swp_f.hw, std::nullopt);
      const auto wl = workload_from(swp_f);
      const auto policies = parse_policy_list(swp_policies);
      const auto baseline = parse_policy(swp_baseline);
      auto run_list = policies;
      if (std::find(run_list.begin(), run_list.end(), baseline) == run_list.end())
        run_list.push_back(baseline);
      const auto reports = seed_averaged(hw, model, wl, run_list, swp_ndps, swp_seeds, {});
      const auto table = build_table(reports, baseline);
      std::ostringstream text;
      switch (parse_format(swp_format)) {
      case OutputFormat::Csv:
        write_csv(text, table);
        break;
      case OutputFormat::Json:
        write_json(text, table);
        break;
      case OutputFormat::Svg:
        write_svg(text, table, fmt::format("{}: speedup vs {}", model.name, swp_baseline));
        break;
      }
      write_text(swp_out, text.str(), out);
      return kExitOk;
    }

    if (*abl) {
      if (abl_models.empty())
        abl_models = bundled_model_names();
      const auto hw = hardware_with(abl_f.hw, std::nullopt);
      const auto wl = workload_from(abl_f);
      std::filesystem::create_directories(abl_dir);
      const std::vector<PolicyId> decode_policies{PolicyId::ExpertParallelNdp, PolicyId::TensorParallel,
                                                  PolicyId::TpLoadBalance, PolicyId::TpLoadBalancePrefetch};
      const std::vector<PolicyId> prefill_policies{PolicyId::ExpertParallelNdp, PolicyId::TensorParallel,
                                                   PolicyId::TpLoadBalance};

      struct Output {
        std::filesystem::path path;
        ComparisonTable table;
        OutputFormat format;
        std::string title;
      };
      std::vector<Output> outputs;
      std::ostringstream summary;
      summary << "# speedup over ep, geometric mean across supported N (arithmetic in parentheses)\n";
      for (const auto& name : abl_models) {
        const auto model = resolve_model(name);
        const auto reports = seed_averaged(hw, model, wl, decode_policies, abl_ndps, abl_seeds, {});
        std::vector<RunReport> prefill_reports;
        for (const auto& r : reports)
          if (r.policy != PolicyId::TpLoadBalancePrefetch)
            prefill_reports.push_back(r);
        const auto prefill = build_table(prefill_reports, PolicyId::ExpertParallelNdp, {ReportStage::PrefillMoe});
        const auto decode = build_table(reports, PolicyId::ExpertParallelNdp, {ReportStage::DecodeMoe});
        const std::filesystem::path dir(abl_dir);
        outputs.push_back({dir / (model.name + "_prefill.csv"), prefill, OutputFormat::Csv, ""});
        outputs.push_back({dir / (model.name + "_prefill.svg"), prefill, OutputFormat::Svg,
                           model.name + " prefill MoE speedup vs ep"});
        outputs.push_back({dir / (model.name + "_decode.csv"), decode, OutputFormat::Csv, ""});
        outputs.push_back({dir / (model.name + "_decode.svg"), decode, OutputFormat::Svg,
                           model.name + " decode MoE speedup vs ep"});
        for (auto [table, stage, list] :
             {std::tuple{&prefill, ReportStage::PrefillMoe, &prefill_policies},
              std::tuple{&decode, ReportStage::DecodeMoe, &decode_policies}}) {
          for (PolicyId p : *list) {
            const auto s = summarize(*table, to_string(p), stage);
            if (s.count == 0)
              summary << fmt::format("{} {} {}: N.S.\n", model.name, to_string(stage), to_string(p));
            else
              summary << fmt::format("{} {} {}: {:.4f}x ({:.4f}x)\n", model.name, to_string(stage), to_string(p),
                                     s.geometric_mean, s.arithmetic_mean);
          }
        }
      }
      for (const auto& o : outputs)
        emit(o.table, o.format, o.path, o.title);
      out << summary.str();
      return kExitOk;
    }

    if (*tg) {
      const auto model = resolve_model(tg_model);
      auto wl = workload_from(tg_f);
      const auto trace = trace_and_lengths(model, wl);
      save_trace(tg_out, trace);
      return kExitOk;
    }

    if (*sb) {
      const auto model = resolve_model(sb_model);
      const auto hw = hardware_with(sb_hw, sb_ndp);
      const Stage stage = sb_stage == "prefill" ? Stage::Prefill : Stage::Decode;
      const std::int64_t seq = stage == Stage::Decode ? 1 : (sb_seq > 0 ? sb_seq : default_workload().prompt_len);
      const auto prims = CostModel(hw, model).primitives({stage, seq, hw.ndp_count});
      const auto sol = solve_balance(BalanceInputs::from(prims, hw.ndp_count, model.topk, stage, seq));
      std::ostringstream text;
      text << "model = " << model.name << '\n'
           << "stage = " << to_string(stage) << '\n'
           << "ndp = " << hw.ndp_count << '\n'
           << "seq_len = " << seq << '\n'
           << "topk = " << model.topk << '\n';
      if (sb_prims) {
        text << "t_w = " << fmt_value(prims.t_w) << '\n'
             << "t_a = " << fmt_value(prims.t_a) << '\n'
             << "t_g = " << fmt_value(prims.t_g) << '\n'
             << "t_n = " << fmt_value(prims.t_n) << '\n'
             << "t_cpu = " << fmt_value(prims.t_cpu) << '\n'
             << "t_nonmoe = " << fmt_value(prims.t_nonmoe) << '\n';
      }
      text << "e_g = " << fmt_value(sol.e_g) << '\n'
           << "e_n = " << fmt_value(sol.e_n) << '\n'
           << "e_g_prime = " << fmt_value(sol.e_g_prime) << '\n'
           << "residual = " << fmt_value(sol.residual) << '\n'
           << "lhs_time = " << fmt_value(sol.lhs_time) << '\n'
           << "rhs_time = " << fmt_value(sol.rhs_time) << '\n'
           << "bound = " << bound_name(sol.bound) << '\n'
           << "e_max = " << fmt_value(solve_e_max(prims.t_g, prims.t_n, prims.t_a, model.topk, hw.ndp_count))
           << '\n';
      out << text.str();
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TraceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

} // namespace ndpmoe
