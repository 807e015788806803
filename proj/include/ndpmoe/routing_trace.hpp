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

#ifndef NDPMOE_ROUTING_TRACE_HPP
#define NDPMOE_ROUTING_TRACE_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ndpmoe/config.hpp"
#include "ndpmoe/cost_model.hpp"

namespace ndpmoe
{
class TraceError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Routed experts of one token at one MoE layer. Shared experts are implicit.
struct TraceEntry {
  Stage stage = Stage::Prefill;
  std::int32_t token_idx = 0;
  std::int32_t layer_idx = 0;
  std::vector<std::int32_t> expert_ids; // ascending, distinct, size topk
  bool operator==(const TraceEntry&) const = default;
};

/// Entries ordered by (stage, token, layer): all prefill tokens, then decode.
struct RoutingTrace {
  std::string model_name;
  int num_layers = 0; // MoE layers
  int topk = 0;
  std::int64_t prefill_len = 0;
  std::int64_t decode_len = 0;
  std::vector<TraceEntry> entries;

  const TraceEntry& at(Stage stage, std::int64_t token, int layer) const;
  bool operator==(const RoutingTrace&) const = default;
};

/// std::mt19937_64 keyed by (seed, stream tags) through a SplitMix64 mix, so
/// every (stage, layer, token) draws from its own reproducible substream.
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(std::mt19937_64& rng);

RoutingTrace generate(const MoEModelConfig& model, const WorkloadConfig& wl, const SyntheticTraceParams& params);

RoutingTrace load_trace(const std::filesystem::path& path, const MoEModelConfig& model);
RoutingTrace read_trace(std::istream& in, const MoEModelConfig& model, std::string_view origin = "<stream>");
void write_trace(std::ostream& out, const RoutingTrace& trace);
void save_trace(const std::filesystem::path& path, const RoutingTrace& trace);

/// Activation count per expert id over one stage of one layer.
std::vector<std::int64_t> stage_histogram(const RoutingTrace& trace, Stage stage, int layer, int num_experts);

inline std::vector<std::int64_t> prefill_histogram(const RoutingTrace& trace, int layer, int num_experts)
{
  return stage_histogram(trace, Stage::Prefill, layer, num_experts);
}

/// Trace for the workload: synthetic or replayed from file.
RoutingTrace trace_for(const MoEModelConfig& model, const WorkloadConfig& wl);

} // namespace ndpmoe

#endif
