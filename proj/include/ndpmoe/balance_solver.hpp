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

#ifndef NDPMOE_BALANCE_SOLVER_HPP
#define NDPMOE_BALANCE_SOLVER_HPP

#include <cstdint>
#include <stdexcept>

#include "ndpmoe/cost_model.hpp"

namespace ndpmoe
{
class SolverError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Balance between the GPU path (partial weight transfer + unhidden GPU
/// compute) and the NDP path (tensor-split compute + activation traffic):
///
///   t_w*e_g + t_g*e_g' [+ (S-1)*t_a*N]  =  (N+1)*t_a + t_n*(topk - e_g)
///
/// The bracketed term only applies to prefill.
struct BalanceInputs {
  double t_w = 0;
  double t_g = 0;
  double t_n = 0;
  double t_a = 0;
  int ndp = 1;
  int topk = 1;             // routed experts this token/layer
  std::int64_t seq_len = 1; // prefill sequence length S
  Stage stage = Stage::Decode;

  static BalanceInputs from(const LatencyPrimitives& p, int ndp, int topk, Stage stage, std::int64_t seq_len = 1)
  {
    return {p.t_w, p.t_g, p.t_n, p.t_a, ndp, topk, seq_len, stage};
  }
};

enum class BalanceBound { Interior, ClampLow, ClampHigh };

struct BalanceSolution {
  double e_g = 0;
  double e_n = 0;
  double e_g_prime = 0;
  double residual = 0; // |lhs - rhs| at e_g
  double lhs_time = 0;
  double rhs_time = 0;
  BalanceBound bound = BalanceBound::Interior;

  bool clamped() const { return bound != BalanceBound::Interior; }
  bool operator==(const BalanceSolution&) const = default;
};

/// Unhidden GPU compute factor: frac(e_g)/N, or 1/N when e_g is an integer
/// multiple of N (0 included). Integers that are not multiples give 0.
double e_g_prime(double e_g, int ndp);

double balance_lhs(const BalanceInputs& in, double e_g);
double balance_rhs(const BalanceInputs& in, double e_g);

/// Smallest e_g in [0, topk] where both sides meet. Clamps to 0 when the GPU
/// side is slower everywhere and to topk when the NDP side still dominates.
BalanceSolution solve_decode(const BalanceInputs& in);
BalanceSolution solve_prefill(const BalanceInputs& in);
BalanceSolution solve_balance(const BalanceInputs& in);

/// Largest number of resident experts worth running on the GPU:
/// E_max = (topk*t_n + (1+N)*t_a) / (t_g + t_n), clamped to [0, topk].
double solve_e_max(double t_g, double t_n, double t_a, int topk, int ndp);

/// Residual tolerance for interior solutions, seconds.
inline constexpr double kBalanceTolerance = 1e-9;

} // namespace ndpmoe

#endif
