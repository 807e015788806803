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

#include "ndpmoe/balance_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <fmt/core.h>

namespace ndpmoe
{
namespace
{
void check_inputs(const BalanceInputs& in)
{
  for (double v : {in.t_w, in.t_g, in.t_n, in.t_a})
    if (!std::isfinite(v) || v < 0)
      throw SolverError(fmt::format("balance inputs must be finite and non-negative (got {})", v));
  if (in.ndp < 1)
    throw SolverError("balance inputs need at least one DIMM");
  if (in.topk < 1)
    throw SolverError("balance inputs need topk >= 1");
  if (in.seq_len < 1)
    throw SolverError("balance inputs need seq_len >= 1");
}

double streaming_term(const BalanceInputs& in)
{
  if (in.stage != Stage::Prefill)
    return 0.0;
  return static_cast<double>(in.seq_len - 1) * in.t_a * in.ndp;
}

double imbalance(const BalanceInputs& in, double e_g) { return balance_lhs(in, e_g) - balance_rhs(in, e_g); }

// f restricted to the open segment (k, k+1), extended continuously to its ends.
double segment_imbalance(const BalanceInputs& in, int k, double e_g)
{
  const double prime = (e_g - k) / in.ndp;
  return in.t_w * e_g + in.t_g * prime + streaming_term(in) - balance_rhs(in, e_g);
}

struct Candidate {
  double e_g;
  double f;
};

BalanceSolution finish(const BalanceInputs& in, double e_g, BalanceBound bound)
{
  BalanceSolution s;
  s.e_g = e_g;
  s.e_n = in.topk - e_g;
  s.e_g_prime = e_g_prime(e_g, in.ndp);
  s.lhs_time = balance_lhs(in, e_g);
  s.rhs_time = balance_rhs(in, e_g);
  s.residual = std::fabs(s.lhs_time - s.rhs_time);
  s.bound = bound;
  return s;
}

BalanceSolution solve(const BalanceInputs& in)
{
  check_inputs(in);

  // f is piecewise linear and increasing inside each (k, k+1); e_g' jumps at
  // the integers. Collect integer points plus one bisected root per segment.
  std::vector<Candidate> cands;
  cands.reserve(2 * static_cast<std::size_t>(in.topk) + 1);
  for (int k = 0; k <= in.topk; ++k)
    cands.push_back({static_cast<double>(k), imbalance(in, k)});

  for (int k = 0; k < in.topk; ++k) {
    double lo = k;
    double hi = k + 1;
    const double f_lo = segment_imbalance(in, k, lo);
    const double f_hi = segment_imbalance(in, k, hi);
    if (f_lo > 0 || f_hi < 0 || f_lo == f_hi)
      continue;
    if (f_lo == 0) {
      double just_after = std::nextafter(lo, hi);
      cands.push_back({just_after, imbalance(in, just_after)});
      continue;
    }
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi)
        break;
      if (segment_imbalance(in, k, mid) < 0)
        lo = mid;
      else
        hi = mid;
    }
    for (double e : {lo, hi})
      if (e > k && e < k + 1)
        cands.push_back({e, imbalance(in, e)});
  }

  const double scale = in.t_w * in.topk + in.t_g + streaming_term(in) + (in.ndp + 1) * in.t_a + in.t_n * in.topk;
  const double tie = 64.0 * std::numeric_limits<double>::epsilon() * scale;

  double best_abs = std::numeric_limits<double>::infinity();
  for (const auto& c : cands)
    best_abs = std::min(best_abs, std::fabs(c.f));

  if (best_abs <= tie) {
    double chosen = std::numeric_limits<double>::infinity();
    for (const auto& c : cands)
      if (std::fabs(c.f) <= tie)
        chosen = std::min(chosen, c.e_g);
    return finish(in, chosen, BalanceBound::Interior);
  }

  bool all_positive = std::all_of(cands.begin(), cands.end(), [](const Candidate& c) { return c.f > 0; });
  if (all_positive)
    return finish(in, 0.0, BalanceBound::ClampLow);
  if (imbalance(in, in.topk) < 0)
    return finish(in, static_cast<double>(in.topk), BalanceBound::ClampHigh);

  // Only reachable through degenerate slopes; fall back to the closest point.
  double chosen = 0;
  for (const auto& c : cands)
    if (std::fabs(c.f) == best_abs) {
      chosen = c.e_g;
      break;
    }
  return finish(in, chosen, BalanceBound::Interior);
}
} // namespace

double e_g_prime(double e_g, int ndp)
{
  const double whole = std::floor(e_g);
  const double frac = e_g - whole;
  if (frac == 0.0) {
    const double rem = std::fmod(whole, static_cast<double>(ndp));
    return rem == 0.0 ? 1.0 / ndp : 0.0;
  }
  return frac / ndp;
}

double balance_lhs(const BalanceInputs& in, double e_g)
{
  return in.t_w * e_g + in.t_g * e_g_prime(e_g, in.ndp) + streaming_term(in);
}

double balance_rhs(const BalanceInputs& in, double e_g)
{
  return (in.ndp + 1) * in.t_a + in.t_n * (in.topk - e_g);
}

BalanceSolution solve_decode(const BalanceInputs& in)
{
  if (in.stage != Stage::Decode)
    throw SolverError("solve_decode needs decode-stage inputs");
  return solve(in);
}

BalanceSolution solve_prefill(const BalanceInputs& in)
{
  if (in.stage != Stage::Prefill)
    throw SolverError("solve_prefill needs prefill-stage inputs");
  return solve(in);
}

BalanceSolution solve_balance(const BalanceInputs& in) { return solve(in); }

double solve_e_max(double t_g, double t_n, double t_a, int topk, int ndp)
{
  for (double v : {t_g, t_n, t_a})
    if (!std::isfinite(v) || v < 0)
      throw SolverError("E_max inputs must be finite and non-negative");
  if (!(t_g + t_n > 0))
    throw SolverError("degenerate primitives");
  const double e = (topk * t_n + (1 + ndp) * t_a) / (t_g + t_n);
  return std::clamp(e, 0.0, static_cast<double>(topk));
}

} // namespace ndpmoe
