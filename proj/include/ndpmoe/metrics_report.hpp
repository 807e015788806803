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

#ifndef NDPMOE_METRICS_REPORT_HPP
#define NDPMOE_METRICS_REPORT_HPP

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ndpmoe/sim_engine.hpp"

namespace ndpmoe
{
class ReportError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

enum class ReportStage { PrefillMoe, DecodeMoe, EndToEnd };

std::string_view to_string(ReportStage s); // prefill_moe, decode_moe, end_to_end
ReportStage parse_stage(std::string_view s);
double stage_latency(const RunReport& r, ReportStage s);

/// One (model, policy, N, stage) cell. Unsupported cells carry NaN latency
/// and speedup and print as "N.S.".
struct TableRow {
  std::string model;
  std::string policy;
  int ndp = 0;
  std::string stage;
  double latency_s = 0;
  double speedup = 0;

  bool supported() const;
  bool operator==(const TableRow& o) const;
};

struct ComparisonTable {
  std::string baseline;
  std::vector<TableRow> rows;
};

inline constexpr std::string_view kNotSupported = "N.S.";

/// speedup = baseline latency / policy latency within each (model, N) group.
/// Throws ReportError naming the group when a supported group lacks the
/// baseline policy.
ComparisonTable build_table(const std::vector<RunReport>& reports, PolicyId baseline,
                            const std::vector<ReportStage>& stages = {ReportStage::PrefillMoe,
                                                                      ReportStage::DecodeMoe,
                                                                      ReportStage::EndToEnd});

struct SpeedupSummary {
  double geometric_mean = 0;
  double arithmetic_mean = 0;
  double max = 0;
  int count = 0;
};

/// Aggregate one policy's supported speedups for one stage.
SpeedupSummary summarize(const ComparisonTable& table, std::string_view policy, ReportStage stage);

/// Element-wise mean of the latency fields of runs that differ only by seed.
RunReport average_reports(const std::vector<RunReport>& runs);

enum class OutputFormat { Csv, Json, Svg };
OutputFormat parse_format(std::string_view s);

void write_csv(std::ostream& out, const ComparisonTable& table);
ComparisonTable parse_csv(std::istream& in);
void write_json(std::ostream& out, const ComparisonTable& table);
void write_svg(std::ostream& out, const ComparisonTable& table, std::string_view title = {});
void emit(const ComparisonTable& table, OutputFormat format, const std::filesystem::path& path,
          std::string_view title = {});

/// Pretty JSON for a single run.
std::string report_json(const RunReport& r);

} // namespace ndpmoe

#endif
