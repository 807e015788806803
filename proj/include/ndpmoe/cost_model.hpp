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

#ifndef NDPMOE_COST_MODEL_HPP
#define NDPMOE_COST_MODEL_HPP

#include <cstdint>
#include <string_view>

#include "ndpmoe/config.hpp"

namespace ndpmoe
{
enum class Stage { Prefill, Decode };

std::string_view to_string(Stage s);

struct StageContext {
  Stage stage = Stage::Decode;
  std::int64_t tokens = 1; // prompt length for prefill, 1 for decode
  int ndp = 1;
};

/// Per-model, per-stage latency terms. All in seconds.
///
/// t_w     full-expert weight transfer over PCIe
/// t_a     one token's activation vector over PCIe
/// t_g     one expert on the GPU for `tokens` tokens
/// t_n     one expert split N ways, time on a single DIMM
/// t_cpu   one expert on the host CPU
/// t_nonmoe  attention and other non-expert work for one layer
struct LatencyPrimitives {
  double t_w = 0;
  double t_a = 0;
  double t_g = 0;
  double t_n = 0;
  double t_cpu = 0;
  double t_nonmoe = 0;
  bool operator==(const LatencyPrimitives&) const = default;
};

/// Gate, up and down projections: three hidden x interm matrices.
std::uint64_t expert_weight_bytes(const MoEModelConfig& model);
std::uint64_t activation_bytes(const MoEModelConfig& model, std::int64_t tokens);

/// Roofline costs for fractions of one expert on each device. A `fraction`
/// of an expert is a column/row shard holding that share of its weights.
class CostModel
{
public:
  CostModel(const HardwareConfig& hw, const MoEModelConfig& model);

  const HardwareConfig& hardware() const { return hw_; }
  const MoEModelConfig& model() const { return model_; }

  std::uint64_t expert_bytes() const { return expert_bytes_; }
  double expert_flops(std::int64_t tokens) const;

  // Scales linearly with the fraction, latency included.
  double weight_transfer_s(double fraction = 1.0) const;
  double activation_transfer_s(std::int64_t tokens = 1) const;

  double gpu_compute_s(std::int64_t tokens, double fraction = 1.0) const;
  double ndp_compute_s(std::int64_t tokens, double fraction = 1.0) const;
  double cpu_compute_s(std::int64_t tokens, double fraction = 1.0) const;
  double nonmoe_s(std::int64_t tokens) const;

  LatencyPrimitives primitives(const StageContext& ctx) const;

private:
  HardwareConfig hw_;
  MoEModelConfig model_;
  std::uint64_t expert_bytes_;
  double nonexpert_bytes_per_layer_;
  double nonexpert_params_per_layer_;
};

inline LatencyPrimitives primitives(const HardwareConfig& hw, const MoEModelConfig& model, const StageContext& ctx)
{
  return CostModel(hw, model).primitives(ctx);
}

} // namespace ndpmoe

#endif
