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

#include "specqd/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <random>
#include <sstream>

#include "specqd/error.hpp"

namespace specqd {
namespace {

double inverse_speed(double s) { return std::isinf(s) ? 0.0 : 1.0 / s; }

void check_params(const SpeedupParams& p) {
  if (!(p.n > 0) || !std::isfinite(p.n)) throw Error(ErrorCode::kInvalidArgument, "speculation length must be > 0");
  if (!(p.s > 0) || std::isnan(p.s)) throw Error(ErrorCode::kInvalidArgument, "draft speed must be > 0");
  if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "acceptance ratio must lie in [0, 1]");
  }
}

std::int64_t integral_accepted(const SpeedupParams& p) {
  const double g = p.alpha * p.n;
  const double rounded = std::round(g);
  if (std::fabs(g - rounded) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "exact simulation needs integral alpha * N");
  }
  if (std::fabs(p.n - std::round(p.n)) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "simulation needs integral N");
  }
  return static_cast<std::int64_t>(rounded);
}

// Accepted count for one round.
class AcceptanceSource {
 public:
  AcceptanceSource(const SpeedupParams& p, SimulationMode mode, std::uint64_t seed)
      : mode_(mode), n_(static_cast<std::int64_t>(std::llround(p.n))), alpha_(p.alpha), rng_(seed) {
    if (mode_ == SimulationMode::kExact) {
      fixed_ = integral_accepted(p);
    } else if (std::fabs(p.n - std::round(p.n)) > 1e-9) {
      throw Error(ErrorCode::kInvalidArgument, "simulation needs integral N");
    }
  }

  std::int64_t n() const { return n_; }

  std::int64_t next() {
    if (mode_ == SimulationMode::kExact) return fixed_;
    std::int64_t g = 0;
    for (std::int64_t i = 0; i < n_; ++i) {
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      if (u < alpha_) ++g;
    }
    return g;
  }

 private:
  SimulationMode mode_;
  std::int64_t n_;
  double alpha_;
  std::int64_t fixed_ = 0;
  std::mt19937_64 rng_;
};

std::string format_row(std::initializer_list<double> values) {
  std::string row;
  char buf[64];
  bool first = true;
  for (double v : values) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    if (!first) row += ',';
    row += buf;
    first = false;
  }
  row += '\n';
  return row;
}

double grid_alpha(std::size_t i, std::size_t steps) {
  return steps <= 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
}

}  // namespace

MultiLevelParams MultiLevelParams::from_absolute(double alpha_outer, double alpha_inner, double n, double s1,
                                                 double s2) {
  return MultiLevelParams{SpeedupParams{alpha_outer, n, s1}, SpeedupParams{alpha_inner, n, s2 / s1}};
}

double speedup_sd(const SpeedupParams& p) {
  check_params(p);
  const double inv_n = 1.0 / p.n;
  return (p.alpha + inv_n) / (inv_n + inverse_speed(p.s));
}

double effective_draft_speed(const SpeedupParams& inner, double s1) {
  if (!(s1 > 0)) throw Error(ErrorCode::kInvalidArgument, "S1 must be > 0");
  return s1 * speedup_sd(inner);
}

double speedup_multilevel(const MultiLevelParams& p) {
  SpeedupParams outer = p.outer;
  outer.s = effective_draft_speed(p.inner, p.outer.s);
  return speedup_sd(outer);
}

std::string surface_csv(SurfaceMode mode, const SurfaceGrid& grid) {
  if (grid.alpha_steps == 0) throw Error(ErrorCode::kInvalidArgument, "surface needs at least one alpha step");
  std::string csv;
  if (mode == SurfaceMode::kSingle) {
    csv = "S,alpha,speedup\n";
    for (double s : grid.speeds) {
      for (std::size_t i = 0; i < grid.alpha_steps; ++i) {
        const double a = grid_alpha(i, grid.alpha_steps);
        csv += format_row({s, a, speedup_sd({a, grid.n, s})});
      }
    }
  } else {
    csv = "alpha_inner,alpha_outer,speedup\n";
    for (std::size_t i = 0; i < grid.alpha_steps; ++i) {
      for (std::size_t o = 0; o < grid.alpha_steps; ++o) {
        const double ai = grid_alpha(i, grid.alpha_steps);
        const double ao = grid_alpha(o, grid.alpha_steps);
        csv += format_row(
            {ai, ao, speedup_multilevel(MultiLevelParams::from_absolute(ao, ai, grid.n, grid.s1, grid.s2))});
      }
    }
  }
  return csv;
}

double roofline(const RooflinePoint& p) {
  if (!(p.intensity > 0) || !(p.bandwidth > 0) || !(p.compute_peak > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "roofline fields must be positive");
  }
  return std::min(p.compute_peak, p.bandwidth * p.intensity);
}

double gemm_bytes(const GemmShape& s, WeightFormat format, bool int8_activations) {
  const double m = static_cast<double>(s.m);
  const double n = static_cast<double>(s.n);
  const double k = static_cast<double>(s.k);
  const double blocks = std::ceil(k / 32.0);
  double weights = 0;
  switch (format) {
    case WeightFormat::kF32: weights = 4.0 * m * k; break;
    case WeightFormat::kBf16: weights = 2.0 * m * k; break;
    case WeightFormat::kMxfp4: weights = m * blocks * (16.0 + 1.0); break;
  }
  const double acts = int8_activations ? k * n + 4.0 * n * blocks : 4.0 * k * n;
  return weights + acts + 4.0 * m * n;
}

double intensity_of_gemm(const GemmShape& s, WeightFormat format, bool int8_activations) {
  if (s.m == 0 || s.n == 0 || s.k == 0) throw Error(ErrorCode::kInvalidArgument, "empty GEMM shape");
  const double flops = 2.0 * static_cast<double>(s.m) * static_cast<double>(s.n) * static_cast<double>(s.k);
  return flops / gemm_bytes(s, format, int8_activations);
}

WeightFormat weight_format_of(GemmPath path) {
  return path == GemmPath::kReference ? WeightFormat::kF32 : WeightFormat::kMxfp4;
}

std::vector<RooflineRow> roofline_table(std::span<const GemmBenchResult> bench, double peak_bandwidth,
                                        double peak_fp32_flops) {
  std::vector<RooflineRow> rows;
  for (const auto& b : bench) {
    RooflineRow r;
    r.bench = b;
    r.intensity = intensity_of_gemm(b.shape, weight_format_of(b.path), b.path == GemmPath::kInt8);
    const double flops = 2.0 * static_cast<double>(b.shape.m) * static_cast<double>(b.shape.n) *
                         static_cast<double>(b.shape.k);
    r.achieved_flops = b.seconds > 0 ? flops / b.seconds : 0.0;
    r.attainable_fp32 = roofline({r.intensity, peak_bandwidth, peak_fp32_flops});
    r.attainable_int8 = roofline({r.intensity, peak_bandwidth, 4.0 * peak_fp32_flops});
    rows.push_back(r);
  }
  return rows;
}

std::string roofline_csv(std::span<const RooflineRow> rows) {
  std::string csv = "path,M,N,K,intensity,achieved_gflops,attainable_fp32_gflops,attainable_int8_gflops\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%zu,%.9g,%.6g,%.6g,%.6g\n",
                  std::string(to_string(r.bench.path)).c_str(), r.bench.shape.m, r.bench.shape.n,
                  r.bench.shape.k, r.intensity, r.achieved_flops / 1e9, r.attainable_fp32 / 1e9,
                  r.attainable_int8 / 1e9);
    csv += buf;
  }
  return csv;
}

std::vector<GemmBenchResult> parse_gemm_bench_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != gemm_bench_csv_header()) {
    throw Error(ErrorCode::kInvalidArgument, "gemm bench CSV header mismatch");
  }
  std::vector<GemmBenchResult> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 7) throw Error(ErrorCode::kInvalidArgument, "bad gemm bench CSV row: " + line);
    GemmBenchResult r;
    r.path = parse_gemm_path(f[0]);
    r.shape = GemmShape{std::stoull(f[1]), std::stoull(f[2]), std::stoull(f[3])};
    r.bytes = std::stod(f[4]);
    r.seconds = std::stod(f[5]);
    r.gbps = std::stod(f[6]);
    rows.push_back(r);
  }
  return rows;
}

double simulate_rounds(const SpeedupParams& p, std::int64_t rounds, SimulationMode mode, std::uint64_t seed) {
  check_params(p);
  if (rounds <= 0) throw Error(ErrorCode::kInvalidArgument, "simulate_rounds needs at least one round");
  AcceptanceSource src(p, mode, seed);
  std::int64_t tokens = 0;
  std::int64_t target_passes = 0;
  std::int64_t draft_passes = 0;
  for (std::int64_t r = 0; r < rounds; ++r) {
    draft_passes += src.n();
    target_passes += 1;
    tokens += src.next() + 1;
  }
  const double time = static_cast<double>(target_passes) + static_cast<double>(draft_passes) * inverse_speed(p.s);
  return static_cast<double>(tokens) / time;
}

double simulate_rounds(const MultiLevelParams& p, std::int64_t rounds, SimulationMode mode, std::uint64_t seed) {
  check_params(p.outer);
  check_params(p.inner);
  if (rounds <= 0) throw Error(ErrorCode::kInvalidArgument, "simulate_rounds needs at least one round");
  AcceptanceSource outer(p.outer, mode, seed);
  AcceptanceSource inner(p.inner, mode, seed ^ 0x9E3779B97F4A7C15ull);
  const double s1 = p.outer.s;
  const double s2 = p.outer.s * p.inner.s;
  std::int64_t tokens = 0;
  std::int64_t target_passes = 0;
  std::int64_t level1_passes = 0;
  std::int64_t level2_passes = 0;
  std::int64_t buffered = 0;  // level-1 tokens produced but not yet proposed
  for (std::int64_t r = 0; r < rounds; ++r) {
    while (buffered < outer.n()) {
      level2_passes += inner.n();
      level1_passes += 1;
      buffered += inner.next() + 1;
    }
    buffered -= outer.n();
    target_passes += 1;
    tokens += outer.next() + 1;
  }
  const double time = static_cast<double>(target_passes) + static_cast<double>(level1_passes) * inverse_speed(s1) +
                      static_cast<double>(level2_passes) * inverse_speed(s2);
  return static_cast<double>(tokens) / time;
}

}  // namespace specqd
