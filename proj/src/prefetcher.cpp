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

#include "ndpmoe/prefetcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/core.h>

#include "ndpmoe/cost_model.hpp"

namespace ndpmoe
{
namespace
{
// Ids ordered by descending frequency, ascending id on ties.
std::vector<int> by_frequency(std::span<const std::int64_t> freq)
{
  std::vector<int> ids(freq.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return freq[a] > freq[b]; });
  return ids;
}
} // namespace

std::size_t PrefetchPlan::expert_count() const
{
  std::size_t n = 0;
  for (const auto& s : per_layer_sets)
    n += s.size();
  return n;
}

std::uint64_t prefetch_budget(const HardwareConfig& hw, const MoEModelConfig& model)
{
  const std::uint64_t expert = expert_weight_bytes(model);
  const std::uint64_t reserved = model.nonexpert_params * static_cast<std::uint64_t>(model.dtype_bytes) +
                                 static_cast<std::uint64_t>(model.shared_experts) *
                                     static_cast<std::uint64_t>(model.num_moe_layers) * expert +
                                 hw.activation_workspace_bytes;
  return hw.gpu_mem_capacity_bytes > reserved ? hw.gpu_mem_capacity_bytes - reserved : 0;
}

PrefetchPlan build_plan(const RoutingTrace& trace, const MoEModelConfig& model, std::uint64_t budget_bytes,
                        std::optional<int> max_x)
{
  PrefetchPlan plan;
  plan.budget_bytes = budget_bytes;
  const int layers = trace.num_layers;
  plan.per_layer_sets.assign(static_cast<std::size_t>(layers), {});

  const std::uint64_t per_step = static_cast<std::uint64_t>(layers) * expert_weight_bytes(model);
  const int limit = std::min(model.num_experts, max_x.value_or(model.num_experts));
  if (layers == 0 || limit <= 0 || per_step > budget_bytes)
    return plan;

  int x = 1;
  while (x < limit && static_cast<std::uint64_t>(x + 1) * per_step <= budget_bytes)
    ++x;
  plan.x = x;

  for (int l = 0; l < layers; ++l) {
    auto hist = prefill_histogram(trace, l, model.num_experts);
    auto order = by_frequency(hist);
    auto& set = plan.per_layer_sets[static_cast<std::size_t>(l)];
    for (int id : order) {
      if (static_cast<int>(set.size()) == x || hist[id] == 0)
        break;
      set.push_back(id);
    }
    std::sort(set.begin(), set.end());
  }
  plan.bytes_used = plan.expert_count() * expert_weight_bytes(model);
  return plan;
}

GpuResidency::GpuResidency(std::uint64_t capacity_bytes, std::uint64_t expert_bytes)
    : capacity_(capacity_bytes), expert_bytes_(expert_bytes)
{
}

GpuResidency GpuResidency::from_plan(const PrefetchPlan& plan, const MoEModelConfig& model)
{
  GpuResidency res(plan.budget_bytes, expert_weight_bytes(model));
  for (std::size_t l = 0; l < plan.per_layer_sets.size(); ++l)
    for (int id : plan.per_layer_sets[l])
      res.insert(static_cast<int>(l), id);
  return res;
}

void GpuResidency::insert(int layer, int expert_id)
{
  if (contains(layer, expert_id))
    return;
  if (used_ + expert_bytes_ > capacity_)
    throw std::length_error(fmt::format("expert {}/{} does not fit in the GPU residency budget", layer, expert_id));
  resident_.emplace(layer, expert_id);
  used_ += expert_bytes_;
}

bool GpuResidency::contains(int layer, int expert_id) const { return resident_.count({layer, expert_id}) != 0; }

LookupResult decode_lookup(const GpuResidency& res, int layer, std::span<const int> activated)
{
  LookupResult r;
  for (int id : activated)
    (res.contains(layer, id) ? r.hits : r.misses).push_back(id);
  return r;
}

HitSplit cap_gpu_hits(std::span<const int> hits, double e_max, std::span<const std::int64_t> prefill_freq)
{
  HitSplit split;
  const auto keep = static_cast<std::size_t>(std::max(0.0, std::floor(e_max)));
  std::vector<int> order(hits.begin(), hits.end());
  auto freq = [&](int id) {
    return id >= 0 && static_cast<std::size_t>(id) < prefill_freq.size() ? prefill_freq[id] : std::int64_t{0};
  };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (freq(a) != freq(b))
      return freq(a) > freq(b);
    return a < b;
  });
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < keep ? split.gpu : split.overflow).push_back(order[i]);
  std::sort(split.gpu.begin(), split.gpu.end());
  std::sort(split.overflow.begin(), split.overflow.end());
  return split;
}

void write_plan(std::ostream& out, const PrefetchPlan& plan)
{
  out << "#prefetch v1 x=" << plan.x << '\n';
  for (std::size_t l = 0; l < plan.per_layer_sets.size(); ++l) {
    out << l << ',';
    const auto& set = plan.per_layer_sets[l];
    for (std::size_t i = 0; i < set.size(); ++i)
      out << (i ? ";" : "") << set[i];
    out << '\n';
  }
}

void save_plan(const std::filesystem::path& path, const PrefetchPlan& plan)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  write_plan(out, plan);
  if (!out)
    throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

} // namespace ndpmoe
