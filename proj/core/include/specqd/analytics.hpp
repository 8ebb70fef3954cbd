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

// Closed-form performance models for speculative decoding and GEMM rooflines.

#ifndef SPECQD_ANALYTICS_HPP_
#define SPECQD_ANALYTICS_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "specqd/qgemm.hpp"

namespace specqd {

// One speculation level: acceptance ratio alpha, speculation length N, and
// the draft's speed relative to the model it drafts for (S, may be +inf).
struct SpeedupParams {
  double alpha = 0;
  double n = 4;
  double s = 4;
};

// Two-level hierarchy. outer.s is S1 (level-1 draft vs target); inner.s is
// S2 / S1 (level-2 draft vs level-1 draft).
struct MultiLevelParams {
  SpeedupParams outer;
  SpeedupParams inner;

  static MultiLevelParams from_absolute(double alpha_outer, double alpha_inner, double n, double s1,
                                        double s2);
};

// Expected tokens per unit of target time relative to greedy decoding:
// (G + 1) / (1 + N / S) = (alpha + 1/N) / (1/N + 1/S).
// Throws kInvalidArgument for N <= 0, S <= 0 or alpha outside [0, 1].
double speedup_sd(const SpeedupParams& p);

// Speed of a level-1 draft that itself runs speculative decoding: S1 times
// its own speculative gain. Modeling assumption: the gain composes
// multiplicatively.
double effective_draft_speed(const SpeedupParams& inner, double s1);

double speedup_multilevel(const MultiLevelParams& p);

enum class SurfaceMode { kSingle, kMulti };

struct SurfaceGrid {
  std::size_t alpha_steps = 21;  // points over [0, 1], inclusive
  std::vector<double> speeds = {4.0, 20.0, 100.0};  // single mode: one surface per S
  double n = 4;
  double s1 = 4;    // multi mode
  double s2 = 100;  // multi mode
};

// Single mode rows: S,alpha,speedup. Multi mode rows:
// alpha_inner,alpha_outer,speedup.
std::string surface_csv(SurfaceMode mode, const SurfaceGrid& grid);

struct RooflinePoint {
  double intensity = 0;      // flops per byte
  double bandwidth = 0;      // bytes per second
  double compute_peak = 0;   // flops per second
};

double roofline(const RooflinePoint& p);

// Weight storage formats for intensity computations.
enum class WeightFormat { kF32, kBf16, kMxfp4 };

// Compulsory bytes for an M x K weight times K x N activations: weights once
// in the given format, f32 activations (int8 + one f32 scale per 32 when
// int8_activations) and f32 output.
double gemm_bytes(const GemmShape& shape, WeightFormat format, bool int8_activations = false);
// 2 M N K / gemm_bytes.
double intensity_of_gemm(const GemmShape& shape, WeightFormat format, bool int8_activations = false);

WeightFormat weight_format_of(GemmPath path);

struct RooflineRow {
  GemmBenchResult bench;
  double intensity = 0;
  double achieved_flops = 0;
  double attainable_fp32 = 0;
  // Compute roof raised 4x for int8 dot-product FMAs.
  double attainable_int8 = 0;
};

// Places each measured GEMM on a roofline with the given peaks.
std::vector<RooflineRow> roofline_table(std::span<const GemmBenchResult> bench, double peak_bandwidth,
                                        double peak_fp32_flops);
std::string roofline_csv(std::span<const RooflineRow> rows);
// Parses CSV produced by gemm_bench_csv_header/row.
std::vector<GemmBenchResult> parse_gemm_bench_csv(std::istream& in);

enum class SimulationMode {
  // Every round accepts exactly G = alpha * N tokens; requires integral G.
  kExact,
  // Each proposal accepted independently with probability alpha.
  kStochastic,
};

// Unit cost model: one target pass costs 1, one draft pass costs 1/S.
// Returns tokens produced / time spent, i.e. speedup over greedy decoding.
double simulate_rounds(const SpeedupParams& p, std::int64_t rounds, SimulationMode mode,
                       std::uint64_t seed = 1);

// Two-level version: the level-1 draft produces its N proposals per outer
// round by running its own rounds against the level-2 draft; surplus level-1
// tokens carry over to the next outer round.
double simulate_rounds(const MultiLevelParams& p, std::int64_t rounds, SimulationMode mode,
                       std::uint64_t seed = 1);

}  // namespace specqd

#endif  // SPECQD_ANALYTICS_HPP_
