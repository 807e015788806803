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

#include "ndpmoe/routing_trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/core.h>

namespace ndpmoe
{
namespace
{
constexpr std::uint64_t kTagRank = 0x52414e4bULL;    // "RANK"
constexpr std::uint64_t kTagPrefill = 0x50524546ULL; // "PREF"
constexpr std::uint64_t kTagDecode = 0x44454344ULL;  // "DECD"

std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t bound)
{
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * bound) >> 64);
}

// One draw without replacement: scan ids ascending, pick the first whose
// cumulative weight exceeds u * remaining mass. Returns -1 if no mass left.
int draw_one(std::span<const double> weights, std::span<const char> taken, double u)
{
  double total = 0;
  for (std::size_t e = 0; e < weights.size(); ++e)
    if (!taken[e])
      total += weights[e];
  if (!(total > 0))
    return -1;
  const double target = u * total;
  double cum = 0;
  int last = -1;
  for (std::size_t e = 0; e < weights.size(); ++e) {
    if (taken[e] || weights[e] <= 0)
      continue;
    cum += weights[e];
    last = static_cast<int>(e);
    if (cum > target)
      return last;
  }
  return last;
}

std::size_t entry_index(const RoutingTrace& t, Stage stage, std::int64_t token, int layer)
{
  std::int64_t base = stage == Stage::Prefill ? 0 : t.prefill_len * t.num_layers;
  return static_cast<std::size_t>(base + token * t.num_layers + layer);
}

template <class Int>
bool parse_int(std::string_view s, Int& out)
{
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return parts;
}
} // namespace

const TraceEntry& RoutingTrace::at(Stage stage, std::int64_t token, int layer) const
{
  return entries[entry_index(*this, stage, token, layer)];
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c)
{
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ a);
  k = splitmix64(k ^ b);
  k = splitmix64(k ^ c);
  return std::mt19937_64(k);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

RoutingTrace generate(const MoEModelConfig& model, const WorkloadConfig& wl, const SyntheticTraceParams& p)
{
  if (model.topk > model.num_experts)
    throw TraceError(fmt::format("topk ({}) exceeds experts per layer ({})", model.topk, model.num_experts));
  if (p.zipf_skew < 0 || p.correlation < 0 || p.correlation > 1)
    throw TraceError("synthetic trace parameters out of range (skew >= 0, rho in [0, 1])");

  const int num_e = model.num_experts;
  const int layers = model.num_moe_layers;
  RoutingTrace trace;
  trace.model_name = model.name;
  trace.num_layers = layers;
  trace.topk = model.topk;
  trace.prefill_len = wl.prompt_len;
  trace.decode_len = wl.output_len;
  trace.entries.resize(static_cast<std::size_t>((wl.prompt_len + wl.output_len) * layers));

  std::vector<double> zipf(num_e);
  std::vector<double> prefill_freq(num_e);
  std::vector<char> taken(num_e);
  std::vector<int> order(num_e);

  auto fill = [&](Stage stage, std::int64_t token, int layer, std::vector<std::int32_t> ids) {
    std::sort(ids.begin(), ids.end());
    auto& e = trace.entries[entry_index(trace, stage, token, layer)];
    e.stage = stage;
    e.token_idx = static_cast<std::int32_t>(token);
    e.layer_idx = layer;
    e.expert_ids = std::move(ids);
  };

  for (int layer = 0; layer < layers; ++layer) {
    // Popularity ranks for this layer: a seeded permutation of expert ids.
    auto rank_rng = substream(p.seed, kTagRank, static_cast<std::uint64_t>(layer));
    std::iota(order.begin(), order.end(), 0);
    for (int i = num_e - 1; i > 0; --i)
      std::swap(order[i], order[uniform_index(rank_rng, static_cast<std::uint64_t>(i) + 1)]);
    for (int r = 0; r < num_e; ++r)
      zipf[order[r]] = std::pow(static_cast<double>(r + 1), -p.zipf_skew);

    std::fill(prefill_freq.begin(), prefill_freq.end(), 0.0);
    for (std::int64_t t = 0; t < wl.prompt_len; ++t) {
      auto rng = substream(p.seed, kTagPrefill, static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(t));
      std::fill(taken.begin(), taken.end(), 0);
      std::vector<std::int32_t> ids;
      ids.reserve(model.topk);
      for (int k = 0; k < model.topk; ++k) {
        int e = draw_one(zipf, taken, uniform01(rng));
        taken[e] = 1;
        ids.push_back(e);
        prefill_freq[e] += 1.0;
      }
      fill(Stage::Prefill, t, layer, std::move(ids));
    }

    for (std::int64_t t = 0; t < wl.output_len; ++t) {
      auto rng = substream(p.seed, kTagDecode, static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(t));
      std::fill(taken.begin(), taken.end(), 0);
      std::vector<std::int32_t> ids;
      ids.reserve(model.topk);
      for (int k = 0; k < model.topk; ++k) {
        const double u_source = uniform01(rng);
        const double u_pick = uniform01(rng);
        int e = -1;
        if (u_source < p.correlation)
          e = draw_one(prefill_freq, taken, u_pick);
        if (e < 0)
          e = draw_one(zipf, taken, u_pick);
        taken[e] = 1;
        ids.push_back(e);
      }
      fill(Stage::Decode, t, layer, std::move(ids));
    }
  }
  return trace;
}

void write_trace(std::ostream& out, const RoutingTrace& trace)
{
  out << fmt::format("#moe-trace v1 model={} layers={} topk={} prefill={} decode={}\n", trace.model_name,
                     trace.num_layers, trace.topk, trace.prefill_len, trace.decode_len);
  std::string line;
  for (const auto& e : trace.entries) {
    line.clear();
    line += e.stage == Stage::Prefill ? 'P' : 'D';
    line += fmt::format(",{},{},", e.token_idx, e.layer_idx);
    for (std::size_t i = 0; i < e.expert_ids.size(); ++i) {
      if (i)
        line += ';';
      line += fmt::format("{}", e.expert_ids[i]);
    }
    line += '\n';
    out << line;
  }
}

void save_trace(const std::filesystem::path& path, const RoutingTrace& trace)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw TraceError(fmt::format("{}: cannot open for writing", path.string()));
  write_trace(out, trace);
  if (!out)
    throw TraceError(fmt::format("{}: write failed", path.string()));
}

RoutingTrace read_trace(std::istream& in, const MoEModelConfig& model, std::string_view origin)
{
  auto err = [&](std::size_t line, std::string_view what) {
    return TraceError(fmt::format("{}:{}: {}", origin, line, what));
  };

  std::string line;
  if (!std::getline(in, line))
    throw err(1, "empty trace file");
  if (!line.starts_with("#moe-trace v1"))
    throw err(1, "missing '#moe-trace v1' header");

  RoutingTrace trace;
  std::map<std::string, std::string, std::less<>> kv;
  for (auto tok : split(std::string_view(line).substr(13), ' ')) {
    if (tok.empty())
      continue;
    auto eq = tok.find('=');
    if (eq == std::string_view::npos)
      throw err(1, fmt::format("malformed header field '{}'", tok));
    kv.emplace(std::string(tok.substr(0, eq)), std::string(tok.substr(eq + 1)));
  }
  for (const char* key : {"model", "layers", "topk", "prefill", "decode"})
    if (!kv.count(key))
      throw err(1, fmt::format("header missing '{}='", key));
  trace.model_name = kv["model"];
  if (!parse_int(kv["layers"], trace.num_layers) || !parse_int(kv["topk"], trace.topk) ||
      !parse_int(kv["prefill"], trace.prefill_len) || !parse_int(kv["decode"], trace.decode_len) ||
      trace.num_layers < 0 || trace.topk < 1 || trace.prefill_len < 0 || trace.decode_len < 0)
    throw err(1, "malformed header numbers");
  if (trace.model_name != model.name)
    throw err(1, fmt::format("trace is for model '{}', not '{}'", trace.model_name, model.name));
  if (trace.num_layers != model.num_moe_layers)
    throw err(1, fmt::format("trace has {} MoE layers, model has {}", trace.num_layers, model.num_moe_layers));
  if (trace.topk != model.topk)
    throw err(1, fmt::format("trace topk {} differs from model topk {}", trace.topk, model.topk));

  const std::size_t total = static_cast<std::size_t>((trace.prefill_len + trace.decode_len) * trace.num_layers);
  trace.entries.resize(total);
  std::vector<char> seen(total, 0);

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    auto fields = split(line, ',');
    if (fields.size() != 4 || fields[0].size() != 1 || (fields[0][0] != 'P' && fields[0][0] != 'D'))
      throw err(lineno, "expected '<P|D>,<token>,<layer>,<id;id;...>'");
    TraceEntry e;
    e.stage = fields[0][0] == 'P' ? Stage::Prefill : Stage::Decode;
    if (!parse_int(fields[1], e.token_idx) || !parse_int(fields[2], e.layer_idx))
      throw err(lineno, "malformed token or layer index");
    const std::int64_t stage_len = e.stage == Stage::Prefill ? trace.prefill_len : trace.decode_len;
    if (e.token_idx < 0 || e.token_idx >= stage_len)
      throw err(lineno, fmt::format("token index {} out of range [0, {})", e.token_idx, stage_len));
    if (e.layer_idx < 0 || e.layer_idx >= trace.num_layers)
      throw err(lineno, fmt::format("layer index {} out of range [0, {})", e.layer_idx, trace.num_layers));
    for (auto id_text : split(fields[3], ';')) {
      std::int32_t id = 0;
      if (!parse_int(id_text, id))
        throw err(lineno, fmt::format("malformed expert id '{}'", id_text));
      if (id < 0 || id >= model.num_experts)
        throw err(lineno, fmt::format("expert id {} out of range [0, {})", id, model.num_experts));
      if (!e.expert_ids.empty() && id <= e.expert_ids.back())
        throw err(lineno, "expert ids must be distinct and ascending");
      e.expert_ids.push_back(id);
    }
    if (static_cast<int>(e.expert_ids.size()) != trace.topk)
      throw err(lineno, fmt::format("expected {} expert ids, got {}", trace.topk, e.expert_ids.size()));
    const std::size_t idx = entry_index(trace, e.stage, e.token_idx, e.layer_idx);
    if (seen[idx])
      throw err(lineno, fmt::format("duplicate entry for ({}, token {}, layer {})", to_string(e.stage), e.token_idx,
                                    e.layer_idx));
    seen[idx] = 1;
    trace.entries[idx] = std::move(e);
  }

  for (std::size_t i = 0; i < total; ++i) {
    if (!seen[i]) {
      const std::int64_t plen = trace.prefill_len * trace.num_layers;
      const bool prefill = static_cast<std::int64_t>(i) < plen;
      const std::int64_t rel = prefill ? static_cast<std::int64_t>(i) : static_cast<std::int64_t>(i) - plen;
      throw err(lineno, fmt::format("missing entry for ({}, token {}, layer {})", prefill ? "prefill" : "decode",
                                    rel / trace.num_layers, rel % trace.num_layers));
    }
  }
  return trace;
}

RoutingTrace load_trace(const std::filesystem::path& path, const MoEModelConfig& model)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw TraceError(fmt::format("{}: cannot open trace file", path.string()));
  return read_trace(in, model, path.string());
}

std::vector<std::int64_t> stage_histogram(const RoutingTrace& trace, Stage stage, int layer, int num_experts)
{
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_experts), 0);
  const std::int64_t len = stage == Stage::Prefill ? trace.prefill_len : trace.decode_len;
  for (std::int64_t t = 0; t < len; ++t)
    for (auto id : trace.at(stage, t, layer).expert_ids)
      ++counts[static_cast<std::size_t>(id)];
  return counts;
}

RoutingTrace trace_for(const MoEModelConfig& model, const WorkloadConfig& wl)
{
  if (const auto* p = std::get_if<SyntheticTraceParams>(&wl.trace_source))
    return generate(model, wl, *p);
  auto trace = load_trace(std::get<TraceFile>(wl.trace_source).path, model);
  if (trace.prefill_len != wl.prompt_len || trace.decode_len != wl.output_len)
    throw TraceError(fmt::format("trace covers {} prefill / {} decode tokens, workload expects {} / {}",
                                 trace.prefill_len, trace.decode_len, wl.prompt_len, wl.output_len));
  return trace;
}

} // namespace ndpmoe
