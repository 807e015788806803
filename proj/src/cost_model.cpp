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

#include "ndpmoe/cost_model.hpp"

#include <algorithm>

namespace ndpmoe
{
std::string_view to_string(Stage s) { return s == Stage::Prefill ? "prefill" : "decode"; }

std::uint64_t expert_weight_bytes(const MoEModelConfig& model)
{
  return 3 * static_cast<std::uint64_t>(model.hidden_dim) * static_cast<std::uint64_t>(model.interm_dim) *
         static_cast<std::uint64_t>(model.dtype_bytes);
}

std::uint64_t activation_bytes(const MoEModelConfig& model, std::int64_t tokens)
{
  return static_cast<std::uint64_t>(model.hidden_dim) * static_cast<std::uint64_t>(model.dtype_bytes) *
         static_cast<std::uint64_t>(tokens);
}

CostModel::CostModel(const HardwareConfig& hw, const MoEModelConfig& model)
    : hw_(hw), model_(model), expert_bytes_(expert_weight_bytes(model))
{
  const double layers = model.num_layers > 0 ? model.num_layers : 1;
  nonexpert_params_per_layer_ = static_cast<double>(model.nonexpert_params) / layers;
  nonexpert_bytes_per_layer_ = nonexpert_params_per_layer_ * model.dtype_bytes;
}

// 2 FLOP per multiply-accumulate over the three projections.
double CostModel::expert_flops(std::int64_t tokens) const
{
  return 2.0 * 3.0 * static_cast<double>(model_.hidden_dim) * static_cast<double>(model_.interm_dim) *
         static_cast<double>(tokens);
}

double CostModel::weight_transfer_s(double fraction) const
{
  return fraction * (hw_.pcie_latency_s + static_cast<double>(expert_bytes_) / hw_.pcie_bw_Bps);
}

double CostModel::activation_transfer_s(std::int64_t tokens) const
{
  return hw_.pcie_latency_s + static_cast<double>(activation_bytes(model_, tokens)) / hw_.pcie_bw_Bps;
}

double CostModel::gpu_compute_s(std::int64_t tokens, double fraction) const
{
  return std::max(fraction * static_cast<double>(expert_bytes_) / hw_.gpu_mem_bw_Bps,
                  fraction * expert_flops(tokens) / hw_.gpu_flops);
}

double CostModel::ndp_compute_s(std::int64_t tokens, double fraction) const
{
  return std::max(fraction * static_cast<double>(expert_bytes_) / hw_.ndp_internal_bw_Bps,
                  fraction * expert_flops(tokens) / hw_.ndp_flops);
}

double CostModel::cpu_compute_s(std::int64_t tokens, double fraction) const
{
  return std::max(fraction * static_cast<double>(expert_bytes_) / hw_.cpu_mem_bw_Bps,
                  fraction * expert_flops(tokens) / hw_.cpu_flops);
}

double CostModel::nonmoe_s(std::int64_t tokens) const
{
  return std::max(nonexpert_bytes_per_layer_ / hw_.gpu_mem_bw_Bps,
                  2.0 * nonexpert_params_per_layer_ * static_cast<double>(tokens) / hw_.gpu_flops);
}

LatencyPrimitives CostModel::primitives(const StageContext& ctx) const
{
  LatencyPrimitives p;
  p.t_w = weight_transfer_s(1.0);
  p.t_a = activation_transfer_s(1);
  p.t_g = gpu_compute_s(ctx.tokens);
  p.t_n = ndp_compute_s(ctx.tokens, 1.0 / std::max(ctx.ndp, 1));
  p.t_cpu = cpu_compute_s(ctx.tokens);
  p.t_nonmoe = nonmoe_s(ctx.tokens);
  return p;
}

} // namespace ndpmoe
