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

#ifndef NDPMOE_PREFETCHER_HPP
#define NDPMOE_PREFETCHER_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "ndpmoe/config.hpp"
#include "ndpmoe/routing_trace.hpp"

namespace ndpmoe
{
/// Experts copied to the GPU between prefill and decode.
struct PrefetchPlan {
  int x = 0;                                     // experts per layer
  std::vector<std::vector<int>> per_layer_sets;  // ascending ids, one entry per MoE layer
  std::uint64_t bytes_used = 0;
  std::uint64_t budget_bytes = 0;

  std::size_t expert_count() const;
  bool operator==(const PrefetchPlan&) const = default;
};

/// GPU memory left for experts: capacity minus non-expert weights, pinned
/// shared experts and the activation workspace. Never negative.
std::uint64_t prefetch_budget(const HardwareConfig& hw, const MoEModelConfig& model);

/// Grow x from 1 while (x+1) experts per layer still fit in the budget, then
/// pick each layer's x most frequent prefill experts (ties to lower id).
/// `max_x` optionally caps x; a budget below one expert per layer gives x=0.
PrefetchPlan build_plan(const RoutingTrace& trace, const MoEModelConfig& model, std::uint64_t budget_bytes,
                        std::optional<int> max_x = std::nullopt);

class GpuResidency
{
public:
  GpuResidency(std::uint64_t capacity_bytes, std::uint64_t expert_bytes);
  static GpuResidency from_plan(const PrefetchPlan& plan, const MoEModelConfig& model);

  /// Throws std::length_error when the expert does not fit.
  void insert(int layer, int expert_id);
  bool contains(int layer, int expert_id) const;

  const std::set<std::pair<int, int>>& resident() const { return resident_; }
  std::uint64_t capacity_bytes() const { return capacity_; }
  std::uint64_t used_bytes() const { return used_; }

private:
  std::set<std::pair<int, int>> resident_;
  std::uint64_t capacity_;
  std::uint64_t expert_bytes_;
  std::uint64_t used_ = 0;
};

struct LookupResult {
  std::vector<int> hits;
  std::vector<int> misses;
  bool operator==(const LookupResult&) const = default;
};

LookupResult decode_lookup(const GpuResidency& res, int layer, std::span<const int> activated);

struct HitSplit {
  std::vector<int> gpu;
  std::vector<int> overflow;
  bool operator==(const HitSplit&) const = default;
};

/// Keep floor(e_max) hits on the GPU, preferring higher prefill frequency,
/// ties to lower id. Both outputs are returned in ascending id order.
HitSplit cap_gpu_hits(std::span<const int> hits, double e_max, std::span<const std::int64_t> prefill_freq);

void write_plan(std::ostream& out, const PrefetchPlan& plan);
void save_plan(const std::filesystem::path& path, const PrefetchPlan& plan);

} // namespace ndpmoe

#endif
