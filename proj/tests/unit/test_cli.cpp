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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "ndpmoe/cli.hpp"

namespace ndpmoe
{
namespace
{
struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args)
{
  args.insert(args.begin(), "ndpmoe");
  std::vector<const char*> argv;
  for (const auto& a : args)
    argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

TEST(Cli, SimulatePrintsJson)
{
  auto r = cli({"simulate", "--model", "mixtral-8x7b", "--policy", "tp-lb", "--ndp", "6", "--prompt-len", "16",
                "--output-len", "4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["policy"], "tp-lb");
  EXPECT_GT(j["end_to_end_s"].get<double>(), 0);
}

TEST(Cli, NotSupportedExitCode)
{
  auto r = cli({"simulate", "--model", "mixtral-8x7b", "--policy", "tp", "--ndp", "2", "--prompt-len", "4",
                "--output-len", "2"});
  EXPECT_EQ(r.code, kExitNotSupported);
}

TEST(Cli, UsageErrors)
{
  EXPECT_EQ(cli({"simulate", "--model", "mixtral-8x7b", "--policy", "fast"}).code, kExitUsage);
  EXPECT_EQ(cli({"simulate", "--model", "no-such-model", "--policy", "tp"}).code, kExitUsage);
  EXPECT_EQ(cli({"simulate", "--model", "mixtral-8x7b", "--policy", "tp", "--ndp", "17"}).code, kExitUsage);
  EXPECT_EQ(cli({"bogus"}).code, kExitUsage);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST(Cli, SolveBalance)
{
  auto r = cli({"solve-balance", "--stage", "decode", "--model", "mixtral-8x7b", "--ndp", "6"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("e_g"), std::string::npos);
  EXPECT_NE(r.out.find("0.1891640"), std::string::npos) << r.out;
}

TEST(Cli, SweepCsvToFile)
{
  auto path = std::filesystem::temp_directory_path() / "ndpmoe_cli_sweep.csv";
  auto r = cli({"sweep", "--model", "phi-3.5-moe", "--policies", "ep,tp", "--ndp-list", "2,4", "--baseline", "ep",
                "--prompt-len", "8", "--output-len", "2", "--out", path.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "model,policy,ndp,stage,latency_s,speedup");
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(body.find("N.S."), std::string::npos);
  std::filesystem::remove(path);
}

TEST(Cli, TraceGenThenReplay)
{
  auto path = std::filesystem::temp_directory_path() / "ndpmoe_cli_trace.txt";
  auto g = cli({"trace-gen", "--model", "qwen3-30b-a3b", "--prompt-len", "8", "--output-len", "3", "--seed", "5",
                "-o", path.string()});
  ASSERT_EQ(g.code, kExitOk) << g.err;
  auto a = cli({"simulate", "--model", "qwen3-30b-a3b", "--policy", "ep", "--ndp", "4", "--trace", path.string()});
  auto b = cli({"simulate", "--model", "qwen3-30b-a3b", "--policy", "ep", "--ndp", "4", "--prompt-len", "8",
                "--output-len", "3", "--seed", "5"});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(cli({"simulate", "--model", "qwen3-30b-a3b", "--policy", "ep", "--trace", path.string(), "--seed", "1"})
                .code,
            kExitUsage);
  std::filesystem::remove(path);
}
} // namespace
} // namespace ndpmoe
