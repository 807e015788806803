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

#include "ndpmoe/sim_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <queue>
#include <unordered_map>

#include <fmt/core.h>

#include "ndpmoe/prefetcher.hpp"

namespace ndpmoe
{
namespace
{
struct Task {
  Resource res;
  double seconds = 0;
  int preds = 0;
  std::vector<int> succs;
};

Resource resource_of(const WorkItem& w)
{
  switch (w.device.kind) {
  case DeviceKind::Gpu:
    return {Resource::Gpu, 0};
  case DeviceKind::Cpu:
    return {Resource::Cpu, 0};
  case DeviceKind::Ndp:
    if (w.device.index < 0)
      throw EngineError("work item on an unnamed DIMM");
    return {Resource::Ndp, w.device.index};
  case DeviceKind::Host:
    break;
  }
  throw EngineError("work item on host memory");
}

int slot_of(Resource r) { return r.kind == Resource::Ndp ? 3 + r.index : static_cast<int>(r.kind); }

std::string label_of(const ExecutionPlan& plan, int task)
{
  const int nt = static_cast<int>(plan.transfers.size());
  if (task < nt) {
    const auto& t = plan.transfers[static_cast<std::size_t>(task)];
    if (t.kind == TransferKind::Weights)
      return fmt::format("L{} weights e{} {}B", plan.layer_idx, t.expert_id, t.bytes);
    return fmt::format("L{} {} {}->{}", plan.layer_idx, to_string(t.kind), to_string(t.src), to_string(t.dst));
  }
  const auto& w = plan.shards[static_cast<std::size_t>(task - nt)];
  return fmt::format("L{} {}e{} x{:.6g}", plan.layer_idx, w.shared ? "shared " : "", w.expert_id, w.fraction);
}

template <class T>
void append_raw(std::string& key, const T& v)
{
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  key.append(buf, sizeof(T));
}

// Everything that influences the schedule: per-task resource and duration,
// plus the edge list. Expert ids do not matter.
std::string timing_key(const ExecutionPlan& plan)
{
  std::string key;
  key.reserve(16 * (plan.transfers.size() + plan.shards.size()) + 8 * plan.edges.size() + 8);
  append_raw(key, static_cast<std::uint32_t>(plan.transfers.size()));
  append_raw(key, static_cast<std::uint32_t>(plan.shards.size()));
  for (const auto& t : plan.transfers)
    append_raw(key, t.seconds);
  for (const auto& w : plan.shards) {
    append_raw(key, static_cast<std::int32_t>(slot_of(resource_of(w))));
    append_raw(key, w.seconds);
  }
  for (const auto& e : plan.edges) {
    append_raw(key, static_cast<std::int32_t>(e.from.kind == NodeRef::Transfer ? e.from.index : -1 - e.from.index));
    append_raw(key, static_cast<std::int32_t>(e.to.kind == NodeRef::Transfer ? e.to.index : -1 - e.to.index));
  }
  return key;
}

constexpr Resource kGpu{Resource::Gpu, 0};
constexpr Resource kPcie{Resource::Pcie, 0};
} // namespace

std::string to_string(Resource r)
{
  switch (r.kind) {
  case Resource::Gpu:
    return "gpu";
  case Resource::Cpu:
    return "cpu";
  case Resource::Pcie:
    return "pcie";
  case Resource::Ndp:
    return fmt::format("ndp{}", r.index);
  }
  return "?";
}

std::map<Resource, std::vector<std::pair<double, double>>> Timeline::busy() const
{
  std::map<Resource, std::vector<std::pair<double, double>>> out;
  for (const auto& e : events)
    out[e.resource].emplace_back(e.start_s, e.end_s);
  for (auto& [r, v] : out)
    std::sort(v.begin(), v.end());
  return out;
}

PlanTiming simulate_plan(const ExecutionPlan& plan, Timeline* timeline, double offset_s)
{
  const int nt = static_cast<int>(plan.transfers.size());
  const int n = nt + static_cast<int>(plan.shards.size());
  std::vector<Task> tasks(static_cast<std::size_t>(n));
  int slots = 3;
  for (int i = 0; i < nt; ++i) {
    tasks[static_cast<std::size_t>(i)].res = kPcie;
    tasks[static_cast<std::size_t>(i)].seconds = plan.transfers[static_cast<std::size_t>(i)].seconds;
  }
  for (std::size_t i = 0; i < plan.shards.size(); ++i) {
    auto& t = tasks[static_cast<std::size_t>(nt) + i];
    t.res = resource_of(plan.shards[i]);
    t.seconds = plan.shards[i].seconds;
    slots = std::max(slots, slot_of(t.res) + 1);
  }
  auto node = [&](NodeRef r) {
    const int idx = r.kind == NodeRef::Transfer ? r.index : nt + r.index;
    if (idx < 0 || idx >= n || (r.kind == NodeRef::Transfer && r.index >= nt))
      throw EngineError(fmt::format("dependency refers to missing node {}", r.index));
    return idx;
  };
  for (const auto& e : plan.edges) {
    const int a = node(e.from);
    const int b = node(e.to);
    tasks[static_cast<std::size_t>(a)].succs.push_back(b);
    ++tasks[static_cast<std::size_t>(b)].preds;
  }

  PlanTiming timing;
  for (const auto& t : tasks)
    timing.busy_s[t.res] += t.seconds;

  using MinQueue = std::priority_queue<int, std::vector<int>, std::greater<>>;
  std::vector<MinQueue> ready(static_cast<std::size_t>(slots));
  std::vector<char> idle(static_cast<std::size_t>(slots), 1);
  for (int i = 0; i < n; ++i)
    if (tasks[static_cast<std::size_t>(i)].preds == 0)
      ready[static_cast<std::size_t>(slot_of(tasks[static_cast<std::size_t>(i)].res))].push(i);

  using Event = std::pair<double, int>;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> running;
  double now = 0;
  int done = 0;
  for (;;) {
    for (int s = 0; s < slots; ++s) {
      auto& q = ready[static_cast<std::size_t>(s)];
      if (!idle[static_cast<std::size_t>(s)] || q.empty())
        continue;
      const int id = q.top();
      q.pop();
      idle[static_cast<std::size_t>(s)] = 0;
      const auto& t = tasks[static_cast<std::size_t>(id)];
      running.emplace(now + t.seconds, id);
      if (timeline)
        timeline->events.push_back({t.res, offset_s + now, offset_s + now + t.seconds, label_of(plan, id)});
    }
    if (running.empty())
      break;
    now = running.top().first;
    while (!running.empty() && running.top().first == now) {
      const int id = running.top().second;
      running.pop();
      ++done;
      const auto& t = tasks[static_cast<std::size_t>(id)];
      idle[static_cast<std::size_t>(slot_of(t.res))] = 1;
      for (int s : t.succs) {
        auto& succ = tasks[static_cast<std::size_t>(s)];
        if (--succ.preds == 0)
          ready[static_cast<std::size_t>(slot_of(succ.res))].push(s);
      }
    }
  }
  if (done != n)
    throw EngineError(fmt::format("dependency cycle in plan for layer {} ({} of {} tasks ran)", plan.layer_idx,
                                  done, n));
  timing.makespan_s = now;
  return timing;
}

RunReport not_supported_report(const HardwareConfig& hw, const MoEModelConfig& model, PolicyId policy,
                               const SchedulabilityVerdict& verdict)
{
  RunReport r;
  r.model_name = model.name;
  r.policy = policy;
  r.ndp = hw.ndp_count;
  r.supported = false;
  r.deficit_bytes = verdict.deficit_bytes;
  return r;
}

RunReport run(const HardwareConfig& hw, const MoEModelConfig& model, const WorkloadConfig& wl,
              const RoutingTrace& trace, PolicyId policy, const RunOptions& opts)
{
  const auto verdict = check_capacity(hw, model);
  if (!verdict.supported)
    return not_supported_report(hw, model, policy, verdict);
  if (trace.num_layers != model.num_moe_layers || trace.prefill_len != wl.prompt_len ||
      trace.decode_len != wl.output_len)
    throw std::invalid_argument(fmt::format(
        "trace shape (layers={} prefill={} decode={}) does not match model/workload (layers={} prefill={} decode={})",
        trace.num_layers, trace.prefill_len, trace.decode_len, model.num_moe_layers, wl.prompt_len,
        wl.output_len));

  RunReport r;
  r.model_name = model.name;
  r.policy = policy;
  r.ndp = hw.ndp_count;

  const CostModel cost(hw, model);
  const int N = hw.ndp_count;
  const SchedContext ctx{cost, N, model.topk, model.shared_experts};
  const auto prims_p = cost.primitives({Stage::Prefill, wl.prompt_len, N});
  const auto prims_d = cost.primitives({Stage::Decode, 1, N});
  const ExpertPlacement placement(N);
  const int first_moe = model.first_moe_layer();

  std::vector<std::vector<std::int64_t>> hist(static_cast<std::size_t>(model.num_moe_layers));
  for (int m = 0; m < model.num_moe_layers; ++m)
    hist[static_cast<std::size_t>(m)] = prefill_histogram(trace, m, model.num_experts);

  Timeline timeline;
  Timeline* tl = opts.record_timeline ? &timeline : nullptr;
  std::unordered_map<std::string, PlanTiming> memo;
  std::map<Resource, double> busy;
  double clock = 0;
  double disc_sum = 0;

  auto nonmoe = [&](double seconds, int layer) {
    busy[kGpu] += seconds;
    if (tl)
      tl->events.push_back({kGpu, clock, clock + seconds, fmt::format("layer {} non-moe", layer)});
    clock += seconds;
  };

  auto execute = [&](const ExecutionPlan& plan) {
    PlanTiming timing;
    if (tl) {
      timing = simulate_plan(plan, tl, clock);
    } else {
      auto key = timing_key(plan);
      auto it = memo.find(key);
      if (it == memo.end())
        it = memo.emplace(std::move(key), simulate_plan(plan)).first;
      timing = it->second;
    }
    for (const auto& [res, s] : timing.busy_s)
      busy[res] += s;
    clock += timing.makespan_s;
    if (plan.predicted_s >= 0) {
      disc_sum += std::fabs(timing.makespan_s - plan.predicted_s);
      ++r.balanced_layers;
    }
    return timing.makespan_s;
  };

  auto plan_for = [&](const LayerInvocation& inv, const LatencyPrimitives& prims, const GpuResidency* res) {
    switch (policy) {
    case PolicyId::OnDemandGpu:
      return plan_on_demand(inv, ctx);
    case PolicyId::CpuCompute:
      return plan_cpu(inv, ctx);
    case PolicyId::ExpertParallelNdp:
      return plan_expert_parallel(inv, placement, ctx, opts.ep);
    case PolicyId::TensorParallel:
      return plan_tensor_parallel(inv, ctx);
    case PolicyId::TpLoadBalance:
      return plan_tp_load_balance(inv, prims, ctx);
    case PolicyId::TpLoadBalancePrefetch:
      if (inv.stage == Stage::Prefill || res == nullptr)
        return plan_tp_load_balance(inv, prims, ctx);
      return plan_tp_lb_prefetch(inv, *res, hist[static_cast<std::size_t>(inv.layer_idx)], prims, ctx);
    }
    throw std::logic_error("unhandled policy");
  };

  // Prefill: all prompt tokens as one batch per layer.
  for (int l = 0; l < model.num_layers; ++l) {
    nonmoe(prims_p.t_nonmoe, l);
    double moe = 0;
    if (l >= first_moe) {
      const int m = l - first_moe;
      moe = execute(plan_for(prefill_invocation(m, wl.prompt_len, hist[static_cast<std::size_t>(m)]), prims_p,
                             nullptr));
    }
    r.prefill_moe_s += moe;
    r.prefill_total_s += prims_p.t_nonmoe + moe;
  }

  // Intermediate step: one serial PCIe block copying the selected experts.
  std::optional<GpuResidency> residency;
  if (policy == PolicyId::TpLoadBalancePrefetch) {
    const int cap = opts.prefetch_max_x > 0 ? opts.prefetch_max_x : model.topk;
    const auto plan = build_plan(trace, model, prefetch_budget(hw, model), cap);
    residency = GpuResidency::from_plan(plan, model);
    r.prefetch_x = plan.x;
    r.prefetch_s = static_cast<double>(plan.expert_count()) * prims_d.t_w;
    busy[kPcie] += r.prefetch_s;
    if (tl && r.prefetch_s > 0)
      tl->events.push_back({kPcie, clock, clock + r.prefetch_s, fmt::format("prefetch x={}", plan.x)});
    clock += r.prefetch_s;
  }

  std::int64_t hits = 0;
  std::int64_t activated = 0;
  r.decode_total_s = r.prefetch_s;
  for (std::int64_t t = 0; t < trace.decode_len; ++t) {
    for (int l = 0; l < model.num_layers; ++l) {
      nonmoe(prims_d.t_nonmoe, l);
      double moe = 0;
      if (l >= first_moe) {
        const int m = l - first_moe;
        const auto& ids = trace.at(Stage::Decode, t, m).expert_ids;
        if (residency) {
          for (auto id : ids)
            hits += residency->contains(m, id) ? 1 : 0;
          activated += static_cast<std::int64_t>(ids.size());
        }
        moe = execute(plan_for(decode_invocation(m, ids), prims_d, residency ? &*residency : nullptr));
      }
      r.decode_moe_s += moe;
      r.decode_total_s += prims_d.t_nonmoe + moe;
    }
  }

  r.end_to_end_s = r.prefill_total_s + r.decode_total_s;
  r.prefetch_hit_rate = activated > 0 ? static_cast<double>(hits) / static_cast<double>(activated) : 0.0;
  r.balance_discrepancy_s = r.balanced_layers > 0 ? disc_sum / static_cast<double>(r.balanced_layers) : 0.0;

  std::vector<Resource> resources{kGpu, {Resource::Cpu, 0}, kPcie};
  for (int d = 0; d < N; ++d)
    resources.push_back({Resource::Ndp, d});
  for (const auto& res : resources) {
    const double b = busy.count(res) ? busy[res] : 0.0;
    r.utilization[to_string(res)] = r.end_to_end_s > 0 ? std::min(1.0, b / r.end_to_end_s) : 0.0;
  }
  if (tl)
    r.timeline = std::move(timeline);
  return r;
}

std::vector<RunReport> sweep(const HardwareConfig& hw, const MoEModelConfig& model, const WorkloadConfig& wl,
                             const RoutingTrace& trace, const std::vector<PolicyId>& policies,
                             const std::vector<int>& ndp_counts, const RunOptions& opts)
{
  std::vector<RunReport> out;
  for (PolicyId p : policies)
    for (int n : ndp_counts) {
      HardwareConfig h = hw.with_ndp(n);
      validate(h);
      out.push_back(run(h, model, wl, trace, p, opts));
    }
  std::stable_sort(out.begin(), out.end(), [](const RunReport& a, const RunReport& b) {
    if (a.model_name != b.model_name)
      return a.model_name < b.model_name;
    if (a.policy != b.policy)
      return a.policy < b.policy;
    return a.ndp < b.ndp;
  });
  return out;
}

} // namespace ndpmoe
