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

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "ndpmoe/balance_solver.hpp"

namespace ndpmoe
{
namespace
{
BalanceInputs mixtral_decode(int ndp = 6)
{
  auto p = primitives(bundled_hardware(), bundled_model("mixtral-8x7b"), {Stage::Decode, 1, ndp});
  return BalanceInputs::from(p, ndp, 2, Stage::Decode);
}

TEST(EgPrime, Examples)
{
  EXPECT_DOUBLE_EQ(e_g_prime(1.5, 2), 0.25);
  EXPECT_DOUBLE_EQ(e_g_prime(4.0, 2), 0.5);
  EXPECT_DOUBLE_EQ(e_g_prime(0.0, 6), 1.0 / 6);
  EXPECT_DOUBLE_EQ(e_g_prime(3.0, 2), 0.0);
  EXPECT_DOUBLE_EQ(e_g_prime(0.3, 3), 0.1);
}

TEST(BalanceSolver, MixtralDecode)
{
  auto s = solve_decode(mixtral_decode());
  EXPECT_EQ(s.bound, BalanceBound::Interior);
  EXPECT_NEAR(s.e_g, 0.18916, 1e-5);
  EXPECT_LE(s.residual, kBalanceTolerance);
  EXPECT_DOUBLE_EQ(s.e_n, 2 - s.e_g);
  EXPECT_DOUBLE_EQ(s.e_g_prime, s.e_g / 6);
}

TEST(BalanceSolver, MixtralPrefill)
{
  auto p = primitives(bundled_hardware(), bundled_model("mixtral-8x7b"), {Stage::Prefill, 512, 6});
  auto s = solve_prefill(BalanceInputs::from(p, 6, 2, Stage::Prefill, 512));
  EXPECT_EQ(s.bound, BalanceBound::Interior);
  EXPECT_NEAR(s.e_g, 1.88320, 1e-5);
  EXPECT_LE(s.residual, kBalanceTolerance);
}

TEST(BalanceSolver, SingleTokenPrefillMatchesDecode)
{
  for (const auto& name : bundled_model_names()) {
    auto m = bundled_model(name);
    for (int n = 1; n <= 6; ++n) {
      auto d = primitives(bundled_hardware(), m, {Stage::Decode, 1, n});
      auto a = solve_decode(BalanceInputs::from(d, n, m.topk, Stage::Decode));
      auto b = solve_prefill(BalanceInputs::from(d, n, m.topk, Stage::Prefill, 1));
      EXPECT_EQ(a.e_g, b.e_g) << name << " N=" << n;
    }
  }
}

TEST(BalanceSolver, DecodeAlwaysHasRootNearZero)
{
  // Just above 0 the GPU side costs nothing, so even free DIMMs meet it there.
  BalanceInputs in{1e-3, 1e-4, 0, 0, 4, 2, 1, Stage::Decode};
  auto s = solve_decode(in);
  EXPECT_EQ(s.bound, BalanceBound::Interior);
  EXPECT_LT(s.e_g, 1e-300);
}

TEST(BalanceSolver, StreamingDominatedPrefillGivesZero)
{
  // (S-1)*t_a*N alone outweighs the whole DIMM side.
  BalanceInputs in{1e-3, 1e-4, 1e-6, 1e-6, 4, 2, 512, Stage::Prefill};
  auto s = solve_prefill(in);
  EXPECT_EQ(s.e_g, 0.0);
  EXPECT_EQ(s.bound, BalanceBound::ClampLow);
}

TEST(BalanceSolver, FreeGpuSideGivesTopk)
{
  BalanceInputs in{0, 0, 1e-3, 1e-6, 4, 3, 1, Stage::Decode};
  auto s = solve_decode(in);
  EXPECT_EQ(s.e_g, 3.0);
  EXPECT_EQ(s.bound, BalanceBound::ClampHigh);
}

TEST(BalanceSolver, SolutionStaysInRange)
{
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(1e-7, 1e-2);
  for (int i = 0; i < 500; ++i) {
    BalanceInputs in{u(rng), u(rng), u(rng), u(rng) * 1e-2, 1 + static_cast<int>(rng() % 16),
                     1 + static_cast<int>(rng() % 8), 1, Stage::Decode};
    auto s = solve_decode(in);
    EXPECT_GE(s.e_g, 0.0);
    EXPECT_LE(s.e_g, in.topk);
    if (!s.clamped())
      EXPECT_LE(s.residual, kBalanceTolerance);
  }
}

TEST(BalanceSolver, RootAtSegmentEnd)
{
  // N=1: e_g' is continuous at integers; t_w + t_g = 2*t_a + t_n*(2-1) at e_g = 1.
  BalanceInputs in{1.0, 1.0, 1.0, 0.5, 1, 2, 1, Stage::Decode};
  auto s = solve_decode(in);
  EXPECT_EQ(s.bound, BalanceBound::Interior);
  EXPECT_NEAR(s.e_g, 1.0, 1e-12);
  EXPECT_LE(s.residual, 1e-12);
}

TEST(BalanceSolver, RejectsBadInputs)
{
  auto in = mixtral_decode();
  in.t_w = -1;
  EXPECT_THROW(solve_decode(in), SolverError);
  in = mixtral_decode();
  in.t_n = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(solve_decode(in), SolverError);
  in = mixtral_decode();
  in.ndp = 0;
  EXPECT_THROW(solve_decode(in), SolverError);
  in = mixtral_decode();
  EXPECT_THROW(solve_prefill(in), SolverError);
}

TEST(EMax, Mixtral)
{
  auto p = primitives(bundled_hardware(), bundled_model("mixtral-8x7b"), {Stage::Decode, 1, 6});
  double e = solve_e_max(p.t_g, p.t_n, p.t_a, 2, 6);
  EXPECT_NEAR(e, 1.235351562, 1e-9);
  // Substituted back, both sides of the resident-expert balance agree.
  double lhs = e * p.t_g;
  double rhs = 7 * p.t_a + p.t_n * (2 - e);
  EXPECT_NEAR(lhs, rhs, 1e-12 * rhs);
}

TEST(EMax, ClampsAndRejects)
{
  EXPECT_EQ(solve_e_max(0, 1e-3, 0, 2, 6), 2.0);
  EXPECT_EQ(solve_e_max(1.0, 0, 0, 2, 6), 0.0);
  EXPECT_THROW(solve_e_max(0, 0, 1e-6, 2, 6), SolverError);
  EXPECT_THROW(solve_e_max(-1, 1, 0, 2, 6), SolverError);
}
} // namespace
} // namespace ndpmoe
