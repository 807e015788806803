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

#include "ndpmoe/metrics_report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/core.h>
#include <json.hpp>

namespace ndpmoe
{
namespace
{
constexpr std::string_view kCsvHeader = "model,policy,ndp,stage,latency_s,speedup";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string number(double v) { return std::isnan(v) ? std::string(kNotSupported) : fmt::format("{:.17g}", v); }

double parse_number(const std::string& s, int line)
{
  if (s == kNotSupported)
    return kNaN;
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty())
    throw ReportError(fmt::format("csv line {}: bad number '{}'", line, s));
  return v;
}

std::vector<std::string> split_csv(const std::string& line)
{
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ','))
    out.push_back(cell);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

std::string escape_xml(std::string_view s)
{
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&':
      out += "&amp;";
      break;
    case '<':
      out += "&lt;";
      break;
    case '>':
      out += "&gt;";
      break;
    case '"':
      out += "&quot;";
      break;
    default:
      out += c;
    }
  }
  return out;
}

constexpr std::array<std::string_view, 6> kPalette{"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#b07aa1"};
} // namespace

std::string_view to_string(ReportStage s)
{
  switch (s) {
  case ReportStage::PrefillMoe:
    return "prefill_moe";
  case ReportStage::DecodeMoe:
    return "decode_moe";
  case ReportStage::EndToEnd:
    return "end_to_end";
  }
  return "?";
}

ReportStage parse_stage(std::string_view s)
{
  for (auto st : {ReportStage::PrefillMoe, ReportStage::DecodeMoe, ReportStage::EndToEnd})
    if (to_string(st) == s)
      return st;
  throw ReportError(fmt::format("unknown stage '{}'", s));
}

double stage_latency(const RunReport& r, ReportStage s)
{
  switch (s) {
  case ReportStage::PrefillMoe:
    return r.prefill_moe_s;
  case ReportStage::DecodeMoe:
    return r.decode_moe_s;
  case ReportStage::EndToEnd:
    return r.end_to_end_s;
  }
  return kNaN;
}

bool TableRow::supported() const { return !std::isnan(latency_s); }

bool TableRow::operator==(const TableRow& o) const
{
  auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
  return model == o.model && policy == o.policy && ndp == o.ndp && stage == o.stage && same(latency_s, o.latency_s) &&
         same(speedup, o.speedup);
}

ComparisonTable build_table(const std::vector<RunReport>& reports, PolicyId baseline,
                            const std::vector<ReportStage>& stages)
{
  ComparisonTable table;
  table.baseline = std::string(to_string(baseline));

  std::map<std::pair<std::string, int>, const RunReport*> base;
  for (const auto& r : reports)
    if (r.policy == baseline)
      base[{r.model_name, r.ndp}] = &r;

  for (const auto& r : reports) {
    const RunReport* b = nullptr;
    if (r.supported) {
      auto it = base.find({r.model_name, r.ndp});
      if (it == base.end() || !it->second->supported)
        throw ReportError(fmt::format("no supported '{}' baseline for group model={} ndp={}", table.baseline,
                                      r.model_name, r.ndp));
      b = it->second;
    }
    for (auto st : stages) {
      TableRow row{r.model_name, std::string(to_string(r.policy)), r.ndp, std::string(to_string(st)), kNaN, kNaN};
      if (b) {
        row.latency_s = stage_latency(r, st);
        const double bl = stage_latency(*b, st);
        if (r.policy == baseline || (bl == 0 && row.latency_s == 0))
          row.speedup = 1.0;
        else
          row.speedup = bl / row.latency_s;
      }
      table.rows.push_back(row);
    }
  }
  return table;
}

SpeedupSummary summarize(const ComparisonTable& table, std::string_view policy, ReportStage stage)
{
  SpeedupSummary s;
  double log_sum = 0;
  double sum = 0;
  for (const auto& row : table.rows) {
    if (row.policy != policy || row.stage != to_string(stage) || !row.supported())
      continue;
    log_sum += std::log(row.speedup);
    sum += row.speedup;
    s.max = s.count == 0 ? row.speedup : std::max(s.max, row.speedup);
    ++s.count;
  }
  if (s.count > 0) {
    s.geometric_mean = std::exp(log_sum / s.count);
    s.arithmetic_mean = sum / s.count;
  }
  return s;
}

RunReport average_reports(const std::vector<RunReport>& runs)
{
  if (runs.empty())
    throw ReportError("nothing to average");
  RunReport avg = runs.front();
  if (!avg.supported)
    return avg;
  const double n = static_cast<double>(runs.size());
  auto mean = [&](double RunReport::*field) {
    double s = 0;
    for (const auto& r : runs)
      s += r.*field;
    avg.*field = s / n;
  };
  mean(&RunReport::prefill_moe_s);
  mean(&RunReport::prefill_total_s);
  mean(&RunReport::prefetch_s);
  mean(&RunReport::decode_moe_s);
  mean(&RunReport::decode_total_s);
  mean(&RunReport::end_to_end_s);
  mean(&RunReport::prefetch_hit_rate);
  mean(&RunReport::balance_discrepancy_s);
  for (auto& [name, u] : avg.utilization) {
    double s = 0;
    for (const auto& r : runs)
      s += r.utilization.at(name);
    u = s / n;
  }
  avg.timeline.reset();
  return avg;
}

OutputFormat parse_format(std::string_view s)
{
  if (s == "csv")
    return OutputFormat::Csv;
  if (s == "json")
    return OutputFormat::Json;
  if (s == "svg")
    return OutputFormat::Svg;
  throw ReportError(fmt::format("unknown format '{}' (expected csv|json|svg)", s));
}

void write_csv(std::ostream& out, const ComparisonTable& table)
{
  out << kCsvHeader << '\n';
  for (const auto& r : table.rows)
    out << r.model << ',' << r.policy << ',' << r.ndp << ',' << r.stage << ',' << number(r.latency_s) << ','
        << number(r.speedup) << '\n';
}

ComparisonTable parse_csv(std::istream& in)
{
  ComparisonTable table;
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw ReportError(fmt::format("csv header must be '{}'", kCsvHeader));
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    auto cells = split_csv(line);
    if (cells.size() != 6)
      throw ReportError(fmt::format("csv line {}: expected 6 fields, got {}", lineno, cells.size()));
    TableRow row;
    row.model = cells[0];
    row.policy = cells[1];
    try {
      row.ndp = std::stoi(cells[2]);
    } catch (const std::exception&) {
      throw ReportError(fmt::format("csv line {}: bad ndp '{}'", lineno, cells[2]));
    }
    row.stage = cells[3];
    row.latency_s = parse_number(cells[4], lineno);
    row.speedup = parse_number(cells[5], lineno);
    table.rows.push_back(row);
  }
  return table;
}

void write_json(std::ostream& out, const ComparisonTable& table)
{
  nlohmann::ordered_json j;
  j["baseline"] = table.baseline;
  j["average"] = "geometric";
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : table.rows) {
    nlohmann::ordered_json row;
    row["model"] = r.model;
    row["policy"] = r.policy;
    row["ndp"] = r.ndp;
    row["stage"] = r.stage;
    row["supported"] = r.supported();
    row["latency_s"] = r.supported() ? nlohmann::ordered_json(r.latency_s) : nlohmann::ordered_json(nullptr);
    row["speedup"] = r.supported() ? nlohmann::ordered_json(r.speedup) : nlohmann::ordered_json(nullptr);
    j["rows"].push_back(row);
  }
  out << j.dump(2) << '\n';
}

// One panel per (model, stage); inside a panel one bar group per N and one
// bar per policy, height proportional to speedup.
void write_svg(std::ostream& out, const ComparisonTable& table, std::string_view title)
{
  struct Panel {
    std::string model, stage;
    std::vector<int> ndps;
    std::vector<std::string> policies;
    std::map<std::pair<int, std::string>, double> speedup;
  };
  std::vector<Panel> panels;
  for (const auto& r : table.rows) {
    auto it = std::find_if(panels.begin(), panels.end(),
                           [&](const Panel& p) { return p.model == r.model && p.stage == r.stage; });
    if (it == panels.end()) {
      panels.push_back({r.model, r.stage, {}, {}, {}});
      it = std::prev(panels.end());
    }
    if (std::find(it->ndps.begin(), it->ndps.end(), r.ndp) == it->ndps.end())
      it->ndps.push_back(r.ndp);
    if (std::find(it->policies.begin(), it->policies.end(), r.policy) == it->policies.end())
      it->policies.push_back(r.policy);
    it->speedup[{r.ndp, r.policy}] = r.speedup;
  }
  for (auto& p : panels)
    std::sort(p.ndps.begin(), p.ndps.end());

  const double width = 720, panel_h = 260, top = 40, left = 60, plot_w = 600, plot_h = 180;
  const double height = top + panel_h * static_cast<double>(std::max<std::size_t>(1, panels.size())) + 20;
  out << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{:.0f}" height="{:.0f}" )"
                     R"(viewBox="0 0 {:.0f} {:.0f}" font-family="sans-serif" font-size="11">)",
                     width, height, width, height)
      << '\n';
  out << fmt::format(R"(<rect width="{:.0f}" height="{:.0f}" fill="white"/>)", width, height) << '\n';
  std::string heading = title.empty() ? fmt::format("speedup vs {}", table.baseline) : std::string(title);
  out << fmt::format(R"(<text x="{:.0f}" y="22" font-size="14">{}</text>)", left, escape_xml(heading)) << '\n';

  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const Panel& p = panels[pi];
    const double y0 = top + panel_h * static_cast<double>(pi);
    const double base_y = y0 + 20 + plot_h;
    double peak = 1.0;
    for (const auto& [k, v] : p.speedup)
      if (!std::isnan(v))
        peak = std::max(peak, v);
    out << fmt::format(R"(<text x="{:.0f}" y="{:.2f}">{} / {}</text>)", left, y0 + 12, escape_xml(p.model),
                       escape_xml(p.stage))
        << '\n';
    out << fmt::format(R"(<line x1="{:.0f}" y1="{:.2f}" x2="{:.0f}" y2="{:.2f}" stroke="black"/>)", left, base_y,
                       left + plot_w, base_y)
        << '\n';
    const double unit_y = base_y - plot_h / peak;
    out << fmt::format(R"(<line x1="{:.0f}" y1="{:.2f}" x2="{:.0f}" y2="{:.2f}" stroke="#999" )"
                       R"(stroke-dasharray="4 3"/>)",
                       left, unit_y, left + plot_w, unit_y)
        << '\n';
    out << fmt::format(R"(<text x="{:.0f}" y="{:.2f}" text-anchor="end">1.0x</text>)", left - 4, unit_y + 4)
        << '\n';

    const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(1, p.ndps.size()));
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, p.policies.size()));
    for (std::size_t gi = 0; gi < p.ndps.size(); ++gi) {
      const double gx = left + group_w * static_cast<double>(gi) + group_w * 0.1;
      for (std::size_t bi = 0; bi < p.policies.size(); ++bi) {
        const double x = gx + bar_w * static_cast<double>(bi);
        auto it = p.speedup.find({p.ndps[gi], p.policies[bi]});
        if (it == p.speedup.end())
          continue;
        if (std::isnan(it->second)) {
          out << fmt::format(R"(<text x="{:.2f}" y="{:.2f}" text-anchor="middle" font-size="9">{}</text>)",
                             x + bar_w / 2, base_y - 4, kNotSupported)
              << '\n';
          continue;
        }
        const double h = plot_h * it->second / peak;
        out << fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="{}"/>)", x,
                           base_y - h, bar_w * 0.9, h, kPalette[bi % kPalette.size()])
            << '\n';
      }
      out << fmt::format(R"(<text x="{:.2f}" y="{:.2f}" text-anchor="middle">N={}</text>)", gx + group_w * 0.4,
                         base_y + 14, p.ndps[gi])
          << '\n';
    }
    for (std::size_t bi = 0; bi < p.policies.size(); ++bi) {
      const double lx = left + 110 * static_cast<double>(bi);
      out << fmt::format(R"(<rect x="{:.0f}" y="{:.2f}" width="10" height="10" fill="{}"/>)", lx, base_y + 22,
                         kPalette[bi % kPalette.size()])
          << '\n';
      out << fmt::format(R"(<text x="{:.0f}" y="{:.2f}">{}</text>)", lx + 14, base_y + 31,
                         escape_xml(p.policies[bi]))
          << '\n';
    }
  }
  out << "</svg>\n";
}

void emit(const ComparisonTable& table, OutputFormat format, const std::filesystem::path& path,
          std::string_view title)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ReportError(fmt::format("cannot write {}", path.string()));
  switch (format) {
  case OutputFormat::Csv:
    write_csv(out, table);
    break;
  case OutputFormat::Json:
    write_json(out, table);
    break;
  case OutputFormat::Svg:
    write_svg(out, table, title);
    break;
  }
  out.flush();
  if (!out)
    throw ReportError(fmt::format("write failed: {}", path.string()));
}

std::string report_json(const RunReport& r)
{
  nlohmann::ordered_json j;
  j["model"] = r.model_name;
  j["policy"] = std::string(to_string(r.policy));
  j["ndp"] = r.ndp;
  j["supported"] = r.supported;
  if (!r.supported) {
    j["deficit_bytes"] = r.deficit_bytes;
    return j.dump(2);
  }
  j["prefill_moe_s"] = r.prefill_moe_s;
  j["prefill_total_s"] = r.prefill_total_s;
  j["prefetch_s"] = r.prefetch_s;
  j["decode_moe_s"] = r.decode_moe_s;
  j["decode_total_s"] = r.decode_total_s;
  j["end_to_end_s"] = r.end_to_end_s;
  j["prefetch_x"] = r.prefetch_x;
  j["prefetch_hit_rate"] = r.prefetch_hit_rate;
  j["balance_discrepancy_s"] = r.balance_discrepancy_s;
  j["balanced_layers"] = r.balanced_layers;
  nlohmann::ordered_json util;
  for (const auto& [name, u] : r.utilization)
    util[name] = u;
  j["utilization"] = util;
  return j.dump(2);
}

} // namespace ndpmoe
