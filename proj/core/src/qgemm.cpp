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

#include "specqd/qgemm.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <thread>

#include "kernels.hpp"
#include "specqd/error.hpp"

namespace specqd {
namespace {

// Below this many weight elements a default-threaded call stays serial.
constexpr std::size_t kParallelMinWork = std::size_t{1} << 20;

int resolve_threads(const GemmOptions& opts, std::size_t rows, std::size_t k) {
  int t = opts.threads;
  if (t <= 0) t = rows * k >= kParallelMinWork ? default_thread_count() : 1;
  const auto panels = static_cast<int>((rows + kPanelRows - 1) / kPanelRows);
  return std::max(1, std::min(t, panels));
}

// Splits [0, rows) into contiguous panel-aligned ranges, one per thread.
template <typename Fn>
void parallel_rows(std::size_t rows, int threads, Fn&& fn) {
  if (threads <= 1) {
    fn(std::size_t{0}, rows);
    return;
  }
  const std::size_t panels = (rows + kPanelRows - 1) / kPanelRows;
  const auto t = static_cast<std::size_t>(threads);
  std::vector<std::thread> workers;
  workers.reserve(t);
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t p0 = panels * i / t;
    const std::size_t p1 = panels * (i + 1) / t;
    const std::size_t r0 = std::min(rows, p0 * kPanelRows);
    const std::size_t r1 = std::min(rows, p1 * kPanelRows);
    if (r0 < r1) workers.emplace_back([&fn, r0, r1] { fn(r0, r1); });
  }
  for (auto& w : workers) w.join();
}

constexpr std::array<std::uint8_t, kBlockCodeBytes> kZeroBlock{};

// Halved scale per biased exponent; weights are held doubled.
const std::array<float, 256> kHalfScale = [] {
  std::array<float, 256> t{};
  for (int b = 0; b < 256; ++b) t[b] = E8m0Scale{static_cast<std::uint8_t>(b)}.value() * 0.5f;
  return t;
}();

// Walks the K blocks of one eight-row panel. Rows past the end read zero
// codes with a zero scale.
class PanelCursor {
 public:
  PanelCursor(const MxfpTensor& w, std::size_t p0, std::size_t rows) : w_(w), rows_(rows) {
    for (std::size_t r = 0; r < rows; ++r) first_[r] = w.block_index(p0 + r, 0);
    if (rows > 0 && w.blocks_per_row() > 1) step_ = w.block_index(p0, 1) - first_[0];
    for (std::size_t r = rows; r < kPanelRows; ++r) {
      codes_[r] = kZeroBlock.data();
      scales_[r] = 0.0f;
    }
  }

  void load(std::size_t kb) {
    const std::uint8_t* packed = w_.packed_codes().data();
    const E8m0Scale* sc = w_.scales().data();
    for (std::size_t r = 0; r < rows_; ++r) {
      const std::size_t idx = first_[r] + kb * step_;
      codes_[r] = packed + idx * kBlockCodeBytes;
      scales_[r] = kHalfScale[sc[idx].biased_exponent];
    }
  }

  const std::uint8_t* const* codes() const { return codes_; }
  const float* scales() const { return scales_; }

 private:
  const MxfpTensor& w_;
  std::size_t rows_;
  std::size_t step_ = 1;
  std::size_t first_[kPanelRows] = {};
  const std::uint8_t* codes_[kPanelRows] = {};
  float scales_[kPanelRows] = {};
};

Matrix pad_tokens(const Matrix& x, std::size_t padded_k) {
  if (x.cols == padded_k) return x;
  Matrix out(x.rows, padded_k);
  for (std::size_t n = 0; n < x.rows; ++n) std::copy(x.row(n).begin(), x.row(n).end(), out.row(n).begin());
  return out;
}

void check_finite(std::span<const float> v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw Error(ErrorCode::kNonFinite, "non-finite activation at flat index " + std::to_string(i));
    }
  }
}

}  // namespace

std::string_view to_string(GemmPath path) {
  switch (path) {
    case GemmPath::kReference: return "reference";
    case GemmPath::kLateScaleF32: return "latescale_f32";
    case GemmPath::kInt8: return "int8";
  }
  return "unknown";
}

GemmPath parse_gemm_path(std::string_view name) {
  if (name == "reference") return GemmPath::kReference;
  if (name == "latescale_f32") return GemmPath::kLateScaleF32;
  if (name == "int8") return GemmPath::kInt8;
  throw Error(ErrorCode::kInvalidArgument, "unknown gemm path '" + std::string(name) + "'");
}

int default_thread_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("SPECQD_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

QuantizedActivationPanel::QuantizedActivationPanel(std::size_t k, std::size_t n)
    : k_(k),
      n_(n),
      blocks_((k + kBlockSize - 1) / kBlockSize),
      values_(n * blocks_ * kBlockSize, 0),
      scales_(n * blocks_, 1.0f) {}

Matrix gemm_reference(const Matrix& w, const Matrix& a) {
  if (w.cols != a.rows) {
    throw Error(ErrorCode::kShapeMismatch, "gemm_reference: W is " + std::to_string(w.rows) + "x" +
                                               std::to_string(w.cols) + ", A has " +
                                               std::to_string(a.rows) + " rows");
  }
  Matrix out(w.rows, a.cols);
  for (std::size_t m = 0; m < w.rows; ++m) {
    for (std::size_t n = 0; n < a.cols; ++n) {
      float s = 0.0f;
      for (std::size_t k = 0; k < w.cols; ++k) s += w(m, k) * a(k, n);
      out(m, n) = s;
    }
  }
  return out;
}

Matrix gemm_reference_tokens(const Matrix& w, const Matrix& x, GemmOptions opts) {
  if (w.cols != x.cols) throw Error(ErrorCode::kShapeMismatch, "gemm_reference_tokens: K differs");
  Matrix out(x.rows, w.rows);
  parallel_rows(w.rows, resolve_threads(opts, w.rows, w.cols), [&](std::size_t r0, std::size_t r1) {
    for (std::size_t m = r0; m < r1; ++m) {
      const float* wr = w.data.data() + m * w.cols;
      for (std::size_t n = 0; n < x.rows; ++n) out(n, m) = detail::dot_f32(wr, x.data.data() + n * x.cols, w.cols);
    }
  });
  return out;
}

QuantizedActivationPanel quantize_activations_tokens(const Matrix& x) {
  check_finite(x.data);
  QuantizedActivationPanel p(x.cols, x.rows);
  for (std::size_t n = 0; n < x.rows; ++n) {
    const auto row = x.row(n);
    for (std::size_t kb = 0; kb < p.blocks_per_col(); ++kb) {
      const std::size_t k0 = kb * kBlockSize;
      const std::size_t k1 = std::min(x.cols, k0 + kBlockSize);
      float max_abs = 0.0f;
      for (std::size_t k = k0; k < k1; ++k) max_abs = std::max(max_abs, std::fabs(row[k]));
      const float scale = max_abs == 0.0f ? 1.0f : max_abs / 127.0f;
      p.scale(kb, n) = scale;
      for (std::size_t k = k0; k < k1; ++k) {
        // nearbyint under the default rounding mode rounds ties to even.
        const float q = std::clamp(std::nearbyint(row[k] / scale), -127.0f, 127.0f);
        p.value(k, n) = static_cast<std::int8_t>(q);
      }
    }
  }
  return p;
}

QuantizedActivationPanel quantize_activations(const Matrix& a) {
  return quantize_activations_tokens(a.transposed());
}

Matrix dequantize(const QuantizedActivationPanel& a) {
  Matrix out(a.k(), a.n());
  for (std::size_t k = 0; k < a.k(); ++k) {
    for (std::size_t n = 0; n < a.n(); ++n) {
      out(k, n) = static_cast<float>(a.value(k, n)) * a.scale(k / kBlockSize, n);
    }
  }
  return out;
}

Matrix gemm_mxfp4_latescale_f32_tokens(const MxfpTensor& w, const Matrix& x, GemmOptions opts) {
  if (w.cols() != x.cols) {
    throw Error(ErrorCode::kShapeMismatch, "gemm_mxfp4_latescale_f32: K differs (" +
                                               std::to_string(w.cols()) + " vs " +
                                               std::to_string(x.cols) + ")");
  }
  const std::size_t bpr = w.blocks_per_row();
  const std::size_t pk = bpr * kBlockSize;
  const Matrix xp = pad_tokens(x, pk);
  const std::size_t n_tok = x.rows;
  Matrix out(n_tok, w.rows());
  parallel_rows(w.rows(), resolve_threads(opts, w.rows(), pk), [&](std::size_t r0, std::size_t r1) {
    std::vector<float> acc(n_tok * kPanelRows);
    std::vector<float> part(n_tok * kPanelRows);
    for (std::size_t p0 = r0; p0 < r1; p0 += kPanelRows) {
      const std::size_t rows = std::min(kPanelRows, r1 - p0);
      PanelCursor cur(w, p0, rows);
      const float* sc = cur.scales();
      std::fill(acc.begin(), acc.end(), 0.0f);
      for (std::size_t kb = 0; kb < bpr; ++kb) {
        cur.load(kb);
        detail::panel_block_f32(cur.codes(), xp.data.data() + kb * kBlockSize, pk, n_tok, part.data());
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += part[i] * sc[i % kPanelRows];
      }
      for (std::size_t n = 0; n < n_tok; ++n)
        for (std::size_t r = 0; r < rows; ++r) out(n, p0 + r) = acc[n * kPanelRows + r];
    }
  });
  return out;
}

Matrix gemm_mxfp4_latescale_f32(const MxfpTensor& w, const Matrix& a, GemmOptions opts) {
  if (w.cols() != a.rows) throw Error(ErrorCode::kShapeMismatch, "gemm_mxfp4_latescale_f32: K differs");
  return gemm_mxfp4_latescale_f32_tokens(w, a.transposed(), opts).transposed();
}

std::int32_t int8_block_dot(std::span<const std::uint8_t> packed_codes,
                            std::span<const std::int8_t> acts) {
  if (packed_codes.size() != kBlockCodeBytes || acts.size() != kBlockSize) {
    throw Error(ErrorCode::kShapeMismatch, "int8_block_dot expects 16 code bytes and 32 activations");
  }
  const std::uint8_t* codes[kPanelRows];
  std::fill(std::begin(codes), std::end(codes), kZeroBlock.data());
  codes[0] = packed_codes.data();
  std::int32_t part[kPanelRows];
  detail::panel_block_i8_scalar(codes, acts.data(), kBlockSize, 1, part);
  return part[0];
}

Matrix gemm_mxfp4_int8_tokens(const MxfpTensor& w, const QuantizedActivationPanel& a,
                              GemmOptions opts) {
  if (w.cols() != a.k()) {
    throw Error(ErrorCode::kShapeMismatch, "gemm_mxfp4_int8: K differs (" + std::to_string(w.cols()) +
                                               " vs " + std::to_string(a.k()) + ")");
  }
  const std::size_t bpr = w.blocks_per_row();
  const std::size_t n_tok = a.n();
  Matrix out(n_tok, w.rows());
  parallel_rows(w.rows(), resolve_threads(opts, w.rows(), bpr * kBlockSize),
                [&](std::size_t r0, std::size_t r1) {
    std::vector<float> acc(n_tok * kPanelRows);
    std::vector<std::int32_t> part(n_tok * kPanelRows);
    for (std::size_t p0 = r0; p0 < r1; p0 += kPanelRows) {
      const std::size_t rows = std::min(kPanelRows, r1 - p0);
      PanelCursor cur(w, p0, rows);
      const float* sc = cur.scales();
      std::fill(acc.begin(), acc.end(), 0.0f);
      for (std::size_t kb = 0; kb < bpr; ++kb) {
        cur.load(kb);
        detail::panel_block_i8(cur.codes(), a.column(0).data() + kb * kBlockSize, a.padded_k(), n_tok, part.data());
        for (std::size_t n = 0; n < n_tok; ++n) {
          const float as = a.scale(kb, n);
          float* an = acc.data() + n * kPanelRows;
          const std::int32_t* pn = part.data() + n * kPanelRows;
          for (std::size_t r = 0; r < kPanelRows; ++r) an[r] += static_cast<float>(pn[r]) * (sc[r] * as);
        }
      }
      for (std::size_t n = 0; n < n_tok; ++n)
        for (std::size_t r = 0; r < rows; ++r) out(n, p0 + r) = acc[n * kPanelRows + r];
    }
  });
  return out;
}

Matrix gemm_mxfp4_int8(const MxfpTensor& w, const QuantizedActivationPanel& a, GemmOptions opts) {
  return gemm_mxfp4_int8_tokens(w, a, opts).transposed();
}

float stream_weights(std::span<const float> weights, int passes) {
  float lane[8] = {};
  for (int p = 0; p < passes; ++p) {
    std::size_t i = 0;
    for (; i + 8 <= weights.size(); i += 8) {
      for (std::size_t j = 0; j < 8; ++j) lane[j] += weights[i + j];
    }
    for (; i < weights.size(); ++i) lane[0] += weights[i];
  }
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

double gemm_compulsory_bytes(const GemmShape& s, GemmPath path) {
  const double m = static_cast<double>(s.m);
  const double n = static_cast<double>(s.n);
  const double k = static_cast<double>(s.k);
  const double blocks = static_cast<double>((s.k + kBlockSize - 1) / kBlockSize);
  const double out = 4.0 * m * n;
  switch (path) {
    case GemmPath::kReference: return 4.0 * m * k + 4.0 * k * n + out;
    case GemmPath::kLateScaleF32: return 17.0 * m * blocks + 4.0 * k * n + out;
    case GemmPath::kInt8: return 17.0 * m * blocks + k * n + 4.0 * n * blocks + out;
  }
  return 0.0;
}

GemmBenchResult gemm_bench(const GemmShape& shape, GemmPath path, int repetitions, GemmOptions opts,
                           std::uint64_t seed) {
  if (shape.m == 0 || shape.n == 0 || shape.k == 0) {
    throw Error(ErrorCode::kInvalidArgument, "gemm_bench: empty shape");
  }
  repetitions = std::max(repetitions, 9);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Matrix w(shape.m, shape.k);
  for (auto& v : w.data) v = dist(rng);
  Matrix x(shape.n, shape.k);
  for (auto& v : x.data) v = dist(rng);

  MxfpTensor wq;
  if (path != GemmPath::kReference) wq = quantize_direct_cast(w);

  volatile float sink = 0.0f;
  auto run_once = [&] {
    Matrix out;
    switch (path) {
      case GemmPath::kReference: out = gemm_reference_tokens(w, x, opts); break;
      case GemmPath::kLateScaleF32: out = gemm_mxfp4_latescale_f32_tokens(wq, x, opts); break;
      case GemmPath::kInt8: out = gemm_mxfp4_int8_tokens(wq, quantize_activations_tokens(x), opts); break;
    }
    sink = sink + out.data[0];
  };
  for (int i = 0; i < 2; ++i) run_once();
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(repetitions));
  for (int i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_once();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());

  GemmBenchResult r;
  r.path = path;
  r.shape = shape;
  r.bytes = gemm_compulsory_bytes(shape, path);
  r.seconds = times[times.size() / 2];
  r.gbps = r.seconds > 0 ? r.bytes / r.seconds / 1e9 : 0.0;
  return r;
}

std::string gemm_bench_csv_header() { return "path,M,N,K,bytes,seconds,gbps"; }

std::string gemm_bench_csv_row(const GemmBenchResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%zu,%.0f,%.9g,%.6g", std::string(to_string(r.path)).c_str(),
                r.shape.m, r.shape.n, r.shape.k, r.bytes, r.seconds, r.gbps);
  return buf;
}

}  // namespace specqd
