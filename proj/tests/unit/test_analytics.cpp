// Copyright 2026 The specqd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "specqd/analytics.hpp"
#include "specqd/error.hpp"

namespace specqd {
namespace {

TEST(SpeedupSd, MatchesNEqualsFourSpecialization) {
  for (int i = 0; i <= 100; ++i) {
    const double a = i / 100.0;
    for (double s : {1.0, 2.0, 4.0, 10.0, 20.0, 100.0, 1000.0}) {
      const double want = (a + 0.25) / (1.0 / s + 0.25);
      EXPECT_NEAR(speedup_sd({a, 4, s}), want, 1e-12);
    }
  }
}

TEST(SpeedupSd, LimitingCases) {
  const double inf = std::numeric_limits<double>::infinity();
  // Free draft that is always right: N + 1 tokens per target pass.
  EXPECT_DOUBLE_EQ(speedup_sd({1.0, 4, inf}), 5.0);
  // Nothing accepted, free draft: still one token per pass.
  EXPECT_DOUBLE_EQ(speedup_sd({0.0, 4, inf}), 1.0);
  // A draft as slow as the target with zero acceptance costs N + 1 passes per token.
  EXPECT_DOUBLE_EQ(speedup_sd({0.0, 4, 1.0}), 0.2);
  EXPECT_THROW(speedup_sd({1.2, 4, 4}), Error);
  EXPECT_THROW(speedup_sd({0.5, 0, 4}), Error);
  EXPECT_THROW(speedup_sd({0.5, 4, -1}), Error);
}

TEST(SpeedupSd, MonotoneInAlphaAndSpeed) {
  for (double s : {2.0, 4.0, 20.0}) {
    double prev = 0;
    for (int i = 0; i <= 20; ++i) {
      const double v = speedup_sd({i / 20.0, 8, s});
      EXPECT_GT(v, prev);
      prev = v;
    }
  }
  EXPECT_LT(speedup_sd({0.5, 4, 4}), speedup_sd({0.5, 4, 20}));
}

TEST(Simulation, ExactModeEqualsClosedFormAtIntegralAcceptance) {
  for (int n = 1; n <= 8; ++n) {
    for (int g = 0; g <= n; ++g) {
      for (double s : {2.0, 4.0, 20.0, 100.0}) {
        const SpeedupParams p{static_cast<double>(g) / n, static_cast<double>(n), s};
        EXPECT_NEAR(simulate_rounds(p, 1000, SimulationMode::kExact), speedup_sd(p), 1e-12 * speedup_sd(p));
      }
    }
  }
  EXPECT_THROW(simulate_rounds(SpeedupParams{0.3, 4, 4}, 10, SimulationMode::kExact), Error);
  EXPECT_THROW(simulate_rounds(SpeedupParams{0.25, 4, 4}, 0, SimulationMode::kExact), Error);
}

TEST(Simulation, StochasticModeConcentratesOnExpectation) {
  // Independent acceptances with probability alpha: E[accepted] = alpha N.
  const SpeedupParams p{0.6, 5, 10};
  EXPECT_NEAR(simulate_rounds(p, 200000, SimulationMode::kStochastic, 7), speedup_sd(p), 0.01 * speedup_sd(p));
}

TEST(Multilevel, ComposesThroughEffectiveDraftSpeed) {
  const MultiLevelParams p = MultiLevelParams::from_absolute(0.8, 0.4, 4, 4, 100);
  EXPECT_DOUBLE_EQ(p.inner.s, 25.0);
  const double inner = (0.4 + 0.25) / (1.0 / 25.0 + 0.25);
  const double s_eff = 4.0 * inner;
  EXPECT_NEAR(effective_draft_speed(p.inner, 4.0), s_eff, 1e-12);
  EXPECT_NEAR(speedup_multilevel(p), (0.8 + 0.25) / (1.0 / s_eff + 0.25), 1e-12);
}

TEST(Multilevel, ExactSimulationMatchesCompositionWhenRoundsAlign) {
  // alpha_inner = 3/4 with N = 4 yields 4 level-1 tokens per inner round, so
  // every outer round consumes exactly one inner round.
  const MultiLevelParams p = MultiLevelParams::from_absolute(0.5, 0.75, 4, 4, 100);
  EXPECT_NEAR(simulate_rounds(p, 1000, SimulationMode::kExact), speedup_multilevel(p), 1e-12);
}

TEST(Surface, RowCountsAndHeaders) {
  SurfaceGrid g;
  const std::string single = surface_csv(SurfaceMode::kSingle, g);
  EXPECT_EQ(single.rfind("S,alpha,speedup\n", 0), 0u);
  EXPECT_EQ(std::count(single.begin(), single.end(), '\n'), 1 + 3 * 21);
  const std::string multi = surface_csv(SurfaceMode::kMulti, g);
  EXPECT_EQ(multi.rfind("alpha_inner,alpha_outer,speedup\n", 0), 0u);
  EXPECT_EQ(std::count(multi.begin(), multi.end(), '\n'), 1 + 21 * 21);
  g.alpha_steps = 0;
  EXPECT_THROW(surface_csv(SurfaceMode::kSingle, g), Error);
}

TEST(Roofline, IsMinimumOfRoofs) {
  EXPECT_DOUBLE_EQ(roofline({1.0, 100.0, 1000.0}), 100.0);
  EXPECT_DOUBLE_EQ(roofline({100.0, 100.0, 1000.0}), 1000.0);
  EXPECT_THROW(roofline({0.0, 1.0, 1.0}), Error);
}

TEST(Roofline, IntensityFromByteCounts) {
  const GemmShape s{4096, 1, 4096};
  const double mx = 4096.0 * 128 * 17 + 4.0 * 4096 + 4.0 * 4096;
  EXPECT_DOUBLE_EQ(intensity_of_gemm(s, WeightFormat::kMxfp4), 2.0 * 4096 * 4096 / mx);
  const double bf = 2.0 * 4096 * 4096 + 8.0 * 4096;
  EXPECT_DOUBLE_EQ(intensity_of_gemm(s, WeightFormat::kBf16), 2.0 * 4096 * 4096 / bf);
  // MXFP4 weights move 4.25 / 16 of the BF16 weight bytes.
  EXPECT_NEAR(intensity_of_gemm(s, WeightFormat::kMxfp4) / intensity_of_gemm(s, WeightFormat::kBf16), 16 / 4.25,
              0.02);
  EXPECT_THROW(intensity_of_gemm({0, 1, 1}, WeightFormat::kF32), Error);
}

TEST(Roofline, TableFromBenchCsv) {
  std::stringstream csv;
  csv << gemm_bench_csv_header() << '\n';
  GemmBenchResult r{GemmPath::kInt8, {256, 8, 512}, 1000.0, 1e-4, 0.01};
  csv << gemm_bench_csv_row(r) << '\n';
  const auto parsed = parse_gemm_bench_csv(csv);
  ASSERT_EQ(parsed.size(), 1u);
  EXPECT_EQ(parsed[0].path, GemmPath::kInt8);
  EXPECT_EQ(parsed[0].shape.k, 512u);
  const auto rows = roofline_table(parsed, 50e9, 100e9);
  EXPECT_DOUBLE_EQ(rows[0].intensity, intensity_of_gemm({256, 8, 512}, WeightFormat::kMxfp4, true));
  EXPECT_LE(rows[0].attainable_fp32, rows[0].attainable_int8);
  const std::string out = roofline_csv(rows);
  EXPECT_EQ(out.rfind("path,M,N,K,intensity,", 0), 0u);
  std::stringstream bad("nope\n");
  EXPECT_THROW(parse_gemm_bench_csv(bad), Error);
}

}  // namespace
}  // namespace specqd
