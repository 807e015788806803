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

#ifndef NDPMOE_SIM_ENGINE_HPP
#define NDPMOE_SIM_ENGINE_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ndpmoe/config.hpp"
#include "ndpmoe/routing_trace.hpp"
#include "ndpmoe/schedulers.hpp"

namespace ndpmoe
{
class EngineError : public std::logic_error
{
public:
  using std::logic_error::logic_error;
};

/// Serial resources: GPU, CPU, the PCIe link and one per DIMM.
struct Resource {
  enum Kind { Gpu, Cpu, Pcie, Ndp };
  Kind kind = Gpu;
  int index = 0;
  auto operator<=>(const Resource&) const = default;
};

std::string to_string(Resource r);

struct TimelineEvent {
  Resource resource;
  double start_s = 0;
  double end_s = 0;
  std::string label;
};

struct Timeline {
  std::vector<TimelineEvent> events;
  std::map<Resource, std::vector<std::pair<double, double>>> busy() const;
};

struct PlanTiming {
  double makespan_s = 0;
  std::map<Resource, double> busy_s;
};

/// List-schedule one plan from t=0: whenever a resource is idle it starts the
/// lowest-numbered ready task (transfers before shards). Non-preemptive.
/// Throws EngineError on a dependency cycle. Appends events shifted by
/// `offset_s` when `timeline` is given.
PlanTiming simulate_plan(const ExecutionPlan& plan, Timeline* timeline = nullptr, double offset_s = 0);

struct RunOptions {
  bool record_timeline = false;
  EpOptions ep;
  // Prefetch at most this many experts per layer; 0 means topk.
  int prefetch_max_x = 0;
};

struct RunReport {
  std::string model_name;
  PolicyId policy = PolicyId::OnDemandGpu;
  int ndp = 0;
  bool supported = true;
  std::uint64_t deficit_bytes = 0;

  double prefill_moe_s = 0;
  double prefill_total_s = 0;
  double prefetch_s = 0; // intermediate transfer block, included in decode_total_s
  double decode_moe_s = 0;
  double decode_total_s = 0;
  double end_to_end_s = 0;

  std::map<std::string, double> utilization; // resource name -> busy fraction
  double prefetch_hit_rate = 0;
  int prefetch_x = 0;
  // Mean |simulated - equation-predicted| layer makespan over balanced layers.
  double balance_discrepancy_s = 0;
  std::int64_t balanced_layers = 0;

  std::optional<Timeline> timeline;
};

RunReport not_supported_report(const HardwareConfig& hw, const MoEModelConfig& model, PolicyId policy,
                               const SchedulabilityVerdict& verdict);

RunReport run(const HardwareConfig& hw, const MoEModelConfig& model, const WorkloadConfig& wl,
              const RoutingTrace& trace, PolicyId policy, const RunOptions& opts = {});

/// Every (policy, N) pair; sorted by (model, policy, N).
std::vector<RunReport> sweep(const HardwareConfig& hw, const MoEModelConfig& model, const WorkloadConfig& wl,
                             const RoutingTrace& trace, const std::vector<PolicyId>& policies,
                             const std::vector<int>& ndp_counts, const RunOptions& opts = {});

} // namespace ndpmoe

#endif
