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

#ifndef NDPMOE_SCHEDULERS_HPP
#define NDPMOE_SCHEDULERS_HPP

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndpmoe/balance_solver.hpp"
#include "ndpmoe/cost_model.hpp"
#include "ndpmoe/prefetcher.hpp"

namespace ndpmoe
{
enum class PolicyId { OnDemandGpu, CpuCompute, ExpertParallelNdp, TensorParallel, TpLoadBalance, TpLoadBalancePrefetch };

/// CLI spelling: ondemand, cpu, ep, tp, tp-lb, tp-lb-pre.
std::string_view to_string(PolicyId p);
PolicyId parse_policy(std::string_view s); // throws std::invalid_argument
std::vector<PolicyId> all_policies();

enum class DeviceKind { Host, Gpu, Cpu, Ndp };

struct Device {
  DeviceKind kind = DeviceKind::Gpu;
  int index = 0; // DIMM number for Ndp; -1 means "all DIMMs" (broadcast)

  static Device host() { return {DeviceKind::Host, 0}; }
  static Device gpu() { return {DeviceKind::Gpu, 0}; }
  static Device cpu() { return {DeviceKind::Cpu, 0}; }
  static Device ndp(int i) { return {DeviceKind::Ndp, i}; }

  auto operator<=>(const Device&) const = default;
};

std::string to_string(Device d);

struct WorkItem {
  Device device;
  int expert_id = 0;
  double fraction = 1.0;
  std::int64_t tokens = 1;
  double flops = 0;
  double bytes_read = 0;
  double seconds = 0;
  bool shared = false; // always-active expert pinned on the GPU
  bool operator==(const WorkItem&) const = default;
};

enum class TransferKind { Weights, ActivationIn, ActivationOut };
std::string_view to_string(TransferKind k);

struct TransferItem {
  TransferKind kind = TransferKind::Weights;
  Device src;
  Device dst;
  std::uint64_t bytes = 0;
  double seconds = 0;
  int expert_id = -1; // weights only
  bool operator==(const TransferItem&) const = default;
};

struct NodeRef {
  enum Kind { Transfer, Shard };
  Kind kind = Shard;
  int index = 0;
  bool operator==(const NodeRef&) const = default;
};

struct Dependency {
  NodeRef from;
  NodeRef to;
  bool operator==(const Dependency&) const = default;
};

/// Work of one MoE layer invocation. Transfers all run on the PCIe link in
/// list order when ready; shards run on their device in list order.
struct ExecutionPlan {
  int layer_idx = 0;
  Stage stage = Stage::Decode;
  std::vector<WorkItem> shards;
  std::vector<TransferItem> transfers;
  std::vector<Dependency> edges;
  // Makespan implied by the balance equations, or negative when the policy
  // does not use them. Informational; not part of structural equality.
  double predicted_s = -1;

  bool empty() const { return shards.empty() && transfers.empty(); }
  bool operator==(const ExecutionPlan& o) const
  {
    return layer_idx == o.layer_idx && stage == o.stage && shards == o.shards && transfers == o.transfers &&
           edges == o.edges;
  }
};

/// Sum of routed WorkItem fractions per expert id. Shared experts excluded.
std::map<int, double> routed_fractions(const ExecutionPlan& plan);

/// Expert `e` of every layer lives on DIMM e mod N.
class ExpertPlacement
{
public:
  explicit ExpertPlacement(int ndp);
  int home(int layer, int expert_id) const;
  int ndp() const { return ndp_; }
  std::vector<std::uint64_t> per_dimm_bytes(const MoEModelConfig& model) const;
  bool fits(const HardwareConfig& hw, const MoEModelConfig& model) const;

private:
  int ndp_;
};

struct ExpertLoad {
  int expert_id = 0;
  std::int64_t tokens = 1;
  bool operator==(const ExpertLoad&) const = default;
};

struct LayerInvocation {
  int layer_idx = 0;
  Stage stage = Stage::Decode;
  std::int64_t seq_len = 1;       // tokens in this invocation
  std::vector<ExpertLoad> experts; // activated routed experts, ascending id
};

/// Decode invocation: each activated expert sees the single token.
LayerInvocation decode_invocation(int layer, std::span<const std::int32_t> expert_ids);
/// Prefill invocation from one layer's histogram; experts with no tokens are skipped.
LayerInvocation prefill_invocation(int layer, std::int64_t seq_len, std::span<const std::int64_t> histogram);

struct SchedContext {
  const CostModel& cost;
  int ndp = 1;
  int topk = 1;
  int shared_experts = 0;
};

struct EpOptions {
  bool gpu_offload = true;
};

ExecutionPlan plan_on_demand(const LayerInvocation& inv, const SchedContext& ctx);
ExecutionPlan plan_cpu(const LayerInvocation& inv, const SchedContext& ctx);
ExecutionPlan plan_expert_parallel(const LayerInvocation& inv, const ExpertPlacement& placement,
                                   const SchedContext& ctx, EpOptions opts = {});
ExecutionPlan plan_tensor_parallel(const LayerInvocation& inv, const SchedContext& ctx);

/// `prims` must describe the invocation's stage (tokens = S for prefill).
ExecutionPlan plan_tp_load_balance(const LayerInvocation& inv, const LatencyPrimitives& prims,
                                   const SchedContext& ctx);

/// Decode only. `prefill_freq` is the layer's prefill histogram, used to
/// rank hits when more of them are resident than E_max allows.
ExecutionPlan plan_tp_lb_prefetch(const LayerInvocation& inv, const GpuResidency& residency,
                                  std::span<const std::int64_t> prefill_freq, const LatencyPrimitives& prims,
                                  const SchedContext& ctx);

/// GPU share e_g rounded to the shard grid of 1/(64 N) experts.
double quantize_share(double e_g, int ndp);

} // namespace ndpmoe

#endif
