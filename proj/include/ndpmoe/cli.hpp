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

#ifndef NDPMOE_CLI_HPP
#define NDPMOE_CLI_HPP

#include <iosfwd>

namespace ndpmoe
{
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;        // bad flag or config
inline constexpr int kExitNotSupported = 3; // experts do not fit in the DIMMs

/// Entry point for the `ndpmoe` tool. Subcommands: simulate, sweep, ablate,
/// trace-gen, solve-balance.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace ndpmoe

#endif
