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

#include "ndpmoe/schedulers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <fmt/core.h>

namespace ndpmoe
{
namespace
{
constexpr std::array<std::pair<PolicyId, std::string_view>, 6> kPolicyNames{{
    {PolicyId::OnDemandGpu, "ondemand"},
    {PolicyId::CpuCompute, "cpu"},
    {PolicyId::ExpertParallelNdp, "ep"},
    {PolicyId::TensorParallel, "tp"},
    {PolicyId::TpLoadBalance, "tp-lb"},
    {PolicyId::TpLoadBalancePrefetch, "tp-lb-pre"},
}};

class Builder
{
public:
  Builder(const LayerInvocation& inv)
  {
    plan_.layer_idx = inv.layer_idx;
    plan_.stage = inv.stage;
  }

  NodeRef transfer(TransferItem t)
  {
    plan_.transfers.push_back(t);
    return {NodeRef::Transfer, static_cast<int>(plan_.transfers.size()) - 1};
  }

  NodeRef shard(WorkItem w)
  {
    plan_.shards.push_back(w);
    return {NodeRef::Shard, static_cast<int>(plan_.shards.size()) - 1};
  }

  void edge(NodeRef from, NodeRef to) { plan_.edges.push_back({from, to}); }

  ExecutionPlan& plan() { return plan_; }

private:
  ExecutionPlan plan_;
};

WorkItem work(const SchedContext& ctx, Device dev, int expert, double fraction, std::int64_t tokens)
{
  const CostModel& c = ctx.cost;
  WorkItem w;
  w.device = dev;
  w.expert_id = expert;
  w.fraction = fraction;
  w.tokens = tokens;
  w.flops = fraction * c.expert_flops(tokens);
  w.bytes_read = fraction * static_cast<double>(c.expert_bytes());
  switch (dev.kind) {
  case DeviceKind::Gpu:
    w.seconds = c.gpu_compute_s(tokens, fraction);
    break;
  case DeviceKind::Cpu:
    w.seconds = c.cpu_compute_s(tokens, fraction);
    break;
  case DeviceKind::Ndp:
    w.seconds = c.ndp_compute_s(tokens, fraction);
    break;
  case DeviceKind::Host:
    throw std::logic_error("host memory does not compute");
  }
  return w;
}

TransferItem weights(const SchedContext& ctx, int expert, double fraction)
{
  const double bytes = fraction * static_cast<double>(ctx.cost.expert_bytes());
  return {TransferKind::Weights, Device::host(), Device::gpu(),
          std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(bytes))),
          ctx.cost.weight_transfer_s(fraction), expert};
}

void add_shared(Builder& b, const LayerInvocation& inv, const SchedContext& ctx)
{
  for (int s = 0; s < ctx.shared_experts; ++s) {
    WorkItem w = work(ctx, Device::gpu(), s, 1.0, inv.seq_len);
    w.shared = true;
    b.shard(w);
  }
}

// Activation traffic around DIMM work: one broadcast in, in prefill the
// remaining S-1 tokens streamed to each participating DIMM, then one
// partial-result return per participating DIMM.
void add_ndp_section(Builder& b, const LayerInvocation& inv, const SchedContext& ctx,
                     const std::vector<std::vector<WorkItem>>& per_dimm)
{
  int participating = 0;
  for (const auto& q : per_dimm)
    participating += q.empty() ? 0 : 1;
  if (participating == 0)
    return;

  const CostModel& c = ctx.cost;
  const std::uint64_t act = activation_bytes(c.model(), 1);
  const double t_a = c.activation_transfer_s(1);

  NodeRef in = b.transfer({TransferKind::ActivationIn, Device::gpu(), Device::ndp(-1), act, t_a, -1});
  bool streamed = inv.stage == Stage::Prefill && inv.seq_len > 1;
  NodeRef stream{};
  if (streamed) {
    const auto extra = static_cast<std::uint64_t>(inv.seq_len - 1) * static_cast<std::uint64_t>(participating);
    stream = b.transfer({TransferKind::ActivationIn, Device::gpu(), Device::ndp(-1), extra * act,
                         static_cast<double>(inv.seq_len - 1) * participating * t_a, -1});
    b.edge(in, stream);
  }

  std::vector<NodeRef> outs(per_dimm.size());
  for (std::size_t d = 0; d < per_dimm.size(); ++d) {
    if (per_dimm[d].empty())
      continue;
    outs[d] = b.transfer(
        {TransferKind::ActivationOut, Device::ndp(static_cast<int>(d)), Device::gpu(), act, t_a, -1});
    if (streamed)
      b.edge(stream, outs[d]);
  }

  for (std::size_t d = 0; d < per_dimm.size(); ++d)
    for (const WorkItem& w : per_dimm[d]) {
      NodeRef s = b.shard(w);
      b.edge(in, s);
      b.edge(s, outs[d]);
    }
}

// Every expert in `split` (with the share still left for the DIMMs) cut into
// N equal shards, one per DIMM.
std::vector<std::vector<WorkItem>> tensor_split(const std::vector<std::pair<ExpertLoad, double>>& split,
                                                const SchedContext& ctx)
{
  std::vector<std::vector<WorkItem>> per_dimm(static_cast<std::size_t>(ctx.ndp));
  for (int d = 0; d < ctx.ndp; ++d)
    for (const auto& [e, share] : split)
      per_dimm[static_cast<std::size_t>(d)].push_back(
          work(ctx, Device::ndp(d), e.expert_id, share / ctx.ndp, e.tokens));
  return per_dimm;
}

// Weights of a GPU piece arrive in N chunks; each chunk's compute starts as
// soon as it lands, so only the last chunk's compute is exposed.
void add_gpu_piece(Builder& b, const ExpertLoad& e, double share, const SchedContext& ctx)
{
  const double chunk = share / ctx.ndp;
  for (int c = 0; c < ctx.ndp; ++c) {
    NodeRef w = b.transfer(weights(ctx, e.expert_id, chunk));
    NodeRef g = b.shard(work(ctx, Device::gpu(), e.expert_id, chunk, e.tokens));
    b.edge(w, g);
  }
}

void check_context(const SchedContext& ctx)
{
  if (ctx.ndp < 1)
    throw std::invalid_argument("scheduler needs at least one DIMM");
}
} // namespace

std::string_view to_string(PolicyId p)
{
  for (const auto& [id, name] : kPolicyNames)
    if (id == p)
      return name;
  return "?";
}

PolicyId parse_policy(std::string_view s)
{
  for (const auto& [id, name] : kPolicyNames)
    if (name == s)
      return id;
  throw std::invalid_argument(fmt::format("unknown policy '{}' (expected ondemand|cpu|ep|tp|tp-lb|tp-lb-pre)", s));
}

std::vector<PolicyId> all_policies()
{
  std::vector<PolicyId> out;
  for (const auto& [id, name] : kPolicyNames)
    out.push_back(id);
  return out;
}

std::string to_string(Device d)
{
  switch (d.kind) {
  case DeviceKind::Host:
    return "host";
  case DeviceKind::Gpu:
    return "gpu";
  case DeviceKind::Cpu:
    return "cpu";
  case DeviceKind::Ndp:
    return d.index < 0 ? "ndp*" : fmt::format("ndp{}", d.index);
  }
  return "?";
}

std::string_view to_string(TransferKind k)
{
  switch (k) {
  case TransferKind::Weights:
    return "weights";
  case TransferKind::ActivationIn:
    return "act-in";
  case TransferKind::ActivationOut:
    return "act-out";
  }
  return "?";
}

std::map<int, double> routed_fractions(const ExecutionPlan& plan)
{
  std::map<int, double> out;
  for (const auto& w : plan.shards)
    if (!w.shared)
      out[w.expert_id] += w.fraction;
  return out;
}

ExpertPlacement::ExpertPlacement(int ndp) : ndp_(ndp)
{
  if (ndp < 1)
    throw std::invalid_argument("placement needs at least one DIMM");
}

int ExpertPlacement::home(int /*layer*/, int expert_id) const { return expert_id % ndp_; }

std::vector<std::uint64_t> ExpertPlacement::per_dimm_bytes(const MoEModelConfig& model) const
{
  std::vector<std::uint64_t> bytes(static_cast<std::size_t>(ndp_), 0);
  const std::uint64_t eb = expert_weight_bytes(model);
  for (int l = 0; l < model.num_moe_layers; ++l)
    for (int e = 0; e < model.num_experts; ++e)
      bytes[static_cast<std::size_t>(home(l, e))] += eb;
  return bytes;
}

bool ExpertPlacement::fits(const HardwareConfig& hw, const MoEModelConfig& model) const
{
  auto bytes = per_dimm_bytes(model);
  return std::all_of(bytes.begin(), bytes.end(), [&](std::uint64_t b) { return b <= hw.ndp_capacity_bytes; });
}

LayerInvocation decode_invocation(int layer, std::span<const std::int32_t> expert_ids)
{
  LayerInvocation inv;
  inv.layer_idx = layer;
  inv.stage = Stage::Decode;
  inv.seq_len = 1;
  for (auto id : expert_ids)
    inv.experts.push_back({id, 1});
  return inv;
}

LayerInvocation prefill_invocation(int layer, std::int64_t seq_len, std::span<const std::int64_t> histogram)
{
  LayerInvocation inv;
  inv.layer_idx = layer;
  inv.stage = Stage::Prefill;
  inv.seq_len = seq_len;
  for (std::size_t e = 0; e < histogram.size(); ++e)
    if (histogram[e] > 0)
      inv.experts.push_back({static_cast<int>(e), histogram[e]});
  return inv;
}

double quantize_share(double e_g, int ndp)
{
  const double grid = 64.0 * ndp;
  return std::round(e_g * grid) / grid;
}

ExecutionPlan plan_on_demand(const LayerInvocation& inv, const SchedContext& ctx)
{
  Builder b(inv);
  add_shared(b, inv, ctx);
  for (const auto& e : inv.experts) {
    NodeRef w = b.transfer(weights(ctx, e.expert_id, 1.0));
    NodeRef g = b.shard(work(ctx, Device::gpu(), e.expert_id, 1.0, e.tokens));
    b.edge(w, g);
  }
  return b.plan();
}

ExecutionPlan plan_cpu(const LayerInvocation& inv, const SchedContext& ctx)
{
  Builder b(inv);
  add_shared(b, inv, ctx);
  if (inv.experts.empty())
    return b.plan();
  const CostModel& c = ctx.cost;
  const std::uint64_t act = activation_bytes(c.model(), inv.seq_len);
  const double t = c.activation_transfer_s(inv.seq_len);
  NodeRef in = b.transfer({TransferKind::ActivationIn, Device::gpu(), Device::cpu(), act, t, -1});
  NodeRef out = b.transfer({TransferKind::ActivationOut, Device::cpu(), Device::gpu(), act, t, -1});
  for (const auto& e : inv.experts) {
    NodeRef s = b.shard(work(ctx, Device::cpu(), e.expert_id, 1.0, e.tokens));
    b.edge(in, s);
    b.edge(s, out);
  }
  return b.plan();
}

ExecutionPlan plan_expert_parallel(const LayerInvocation& inv, const ExpertPlacement& placement,
                                   const SchedContext& ctx, EpOptions opts)
{
  check_context(ctx);
  if (placement.ndp() != ctx.ndp)
    throw std::invalid_argument("placement and context disagree on the DIMM count");

  std::vector<std::vector<ExpertLoad>> queues(static_cast<std::size_t>(ctx.ndp));
  for (const auto& e : inv.experts)
    queues[static_cast<std::size_t>(placement.home(inv.layer_idx, e.expert_id))].push_back(e);

  std::vector<ExpertLoad> offloaded;
  if (opts.gpu_offload) {
    int worst = -1;
    double worst_time = 0;
    for (int d = 0; d < ctx.ndp; ++d) {
      double t = 0;
      for (const auto& e : queues[static_cast<std::size_t>(d)])
        t += ctx.cost.ndp_compute_s(e.tokens, 1.0);
      if (t > worst_time) {
        worst = d;
        worst_time = t;
      }
    }
    if (worst >= 0) {
      auto& q = queues[static_cast<std::size_t>(worst)];
      const ExpertLoad tail = q.back();
      if (ctx.cost.weight_transfer_s(1.0) + ctx.cost.gpu_compute_s(tail.tokens, 1.0) < worst_time) {
        offloaded.push_back(tail);
        q.pop_back();
      }
    }
  }

  std::vector<std::vector<WorkItem>> per_dimm(queues.size());
  for (std::size_t d = 0; d < queues.size(); ++d)
    for (const auto& e : queues[d])
      per_dimm[d].push_back(work(ctx, Device::ndp(static_cast<int>(d)), e.expert_id, 1.0, e.tokens));

  Builder b(inv);
  add_shared(b, inv, ctx);
  add_ndp_section(b, inv, ctx, per_dimm);
  for (const auto& e : offloaded) {
    NodeRef w = b.transfer(weights(ctx, e.expert_id, 1.0));
    NodeRef g = b.shard(work(ctx, Device::gpu(), e.expert_id, 1.0, e.tokens));
    b.edge(w, g);
  }
  return b.plan();
}

ExecutionPlan plan_tensor_parallel(const LayerInvocation& inv, const SchedContext& ctx)
{
  check_context(ctx);
  std::vector<std::pair<ExpertLoad, double>> split;
  for (const auto& e : inv.experts)
    split.emplace_back(e, 1.0);
  Builder b(inv);
  add_shared(b, inv, ctx);
  add_ndp_section(b, inv, ctx, tensor_split(split, ctx));
  return b.plan();
}

ExecutionPlan plan_tp_load_balance(const LayerInvocation& inv, const LatencyPrimitives& prims,
                                   const SchedContext& ctx)
{
  check_context(ctx);
  if (inv.experts.empty())
    return plan_tensor_parallel(inv, ctx);

  const int topk = inv.stage == Stage::Prefill ? ctx.topk : static_cast<int>(inv.experts.size());
  const auto sol = solve_balance(BalanceInputs::from(prims, ctx.ndp, topk, inv.stage, inv.seq_len));

  // Whole experts first, then one partial expert, in ascending id order.
  const double share = std::min(quantize_share(sol.e_g, ctx.ndp), static_cast<double>(inv.experts.size()));
  const auto whole = static_cast<std::size_t>(std::floor(share));
  const double partial = share - static_cast<double>(whole);

  std::vector<std::pair<ExpertLoad, double>> gpu;
  std::vector<std::pair<ExpertLoad, double>> ndp;
  for (std::size_t i = 0; i < inv.experts.size(); ++i) {
    const auto& e = inv.experts[i];
    double on_gpu = i < whole ? 1.0 : (i == whole ? partial : 0.0);
    if (on_gpu > 0)
      gpu.emplace_back(e, on_gpu);
    if (on_gpu < 1.0)
      ndp.emplace_back(e, 1.0 - on_gpu);
  }

  Builder b(inv);
  add_shared(b, inv, ctx);
  add_ndp_section(b, inv, ctx, tensor_split(ndp, ctx));
  for (const auto& [e, s] : gpu)
    add_gpu_piece(b, e, s, ctx);
  b.plan().predicted_s = std::max(sol.lhs_time, sol.rhs_time);
  return b.plan();
}

ExecutionPlan plan_tp_lb_prefetch(const LayerInvocation& inv, const GpuResidency& residency,
                                  std::span<const std::int64_t> prefill_freq, const LatencyPrimitives& prims,
                                  const SchedContext& ctx)
{
  check_context(ctx);
  if (inv.stage != Stage::Decode)
    throw std::invalid_argument("prefetch scheduling applies to decode only");

  std::vector<int> ids;
  for (const auto& e : inv.experts)
    ids.push_back(e.expert_id);
  const auto lookup = decode_lookup(residency, inv.layer_idx, ids);
  if (lookup.hits.empty())
    return plan_tp_load_balance(inv, prims, ctx);

  const double e_max = solve_e_max(prims.t_g, prims.t_n, prims.t_a, static_cast<int>(ids.size()), ctx.ndp);
  const auto split = cap_gpu_hits(lookup.hits, e_max, prefill_freq);

  std::vector<int> to_ndp = lookup.misses;
  to_ndp.insert(to_ndp.end(), split.overflow.begin(), split.overflow.end());
  std::sort(to_ndp.begin(), to_ndp.end());

  auto load_of = [&](int id) {
    for (const auto& e : inv.experts)
      if (e.expert_id == id)
        return e;
    return ExpertLoad{id, 1};
  };

  std::vector<std::pair<ExpertLoad, double>> ndp;
  for (int id : to_ndp)
    ndp.emplace_back(load_of(id), 1.0);

  Builder b(inv);
  add_shared(b, inv, ctx);
  add_ndp_section(b, inv, ctx, tensor_split(ndp, ctx));
  for (int id : split.gpu) {
    const auto e = load_of(id);
    b.shard(work(ctx, Device::gpu(), id, 1.0, e.tokens));
  }
  return b.plan();
}

} // namespace ndpmoe
