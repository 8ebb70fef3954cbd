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

// Weight-quantized GEMM for skinny activations (N = 1 while drafting, N <= 8
// while verifying).
//
// All kernels compute out = W * A with W stored M x K and A stored K x N.
// Three paths share one contract:
//
//   reference      plain float triple loop, used as the oracle
//   latescale_f32  MXFP4 weights; each 32-wide partial dot product is
//                  accumulated unscaled and multiplied by the block scale once
//   int8           MXFP4 codes mapped through a doubled FP4->int8 table,
//                  activations quantized to int8 per (32-row block, column),
//                  integer partials in groups of four products, then one
//                  float multiply by w_scale * a_scale / 2 per block
//
// The *_tokens variants take activations token-major (N x K, one token per
// row) and return N x M; transformer layers hold activations that way.
// Reduction order per output element never depends on N or on the thread
// count, so results are bit-identical across batch sizes and threads.

#ifndef SPECQD_QGEMM_HPP_
#define SPECQD_QGEMM_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "specqd/matrix.hpp"
#include "specqd/mxfp4.hpp"

namespace specqd {

enum class GemmPath { kReference, kLateScaleF32, kInt8 };

std::string_view to_string(GemmPath path);
// Accepts "reference", "latescale_f32" and "int8".
GemmPath parse_gemm_path(std::string_view name);

struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

struct GemmOptions {
  // 0 picks default_thread_count() for large problems and 1 otherwise.
  int threads = 0;
};

// hardware_concurrency, capped by SPECQD_THREADS when set.
int default_thread_count();

// Symmetric int8 activations, one float scale per 32 consecutive K entries of
// each column. Stored column-major with K zero padded to a multiple of 32.
class QuantizedActivationPanel {
 public:
  QuantizedActivationPanel() = default;
  QuantizedActivationPanel(std::size_t k, std::size_t n);

  std::size_t k() const { return k_; }
  std::size_t n() const { return n_; }
  std::size_t blocks_per_col() const { return blocks_; }

  std::int8_t value(std::size_t row, std::size_t col) const { return values_[col * padded_k() + row]; }
  std::int8_t& value(std::size_t row, std::size_t col) { return values_[col * padded_k() + row]; }
  float scale(std::size_t kb, std::size_t col) const { return scales_[col * blocks_ + kb]; }
  float& scale(std::size_t kb, std::size_t col) { return scales_[col * blocks_ + kb]; }

  std::span<const std::int8_t> column(std::size_t col) const {
    return {values_.data() + col * padded_k(), padded_k()};
  }
  std::span<const float> column_scales(std::size_t col) const {
    return {scales_.data() + col * blocks_, blocks_};
  }

  std::size_t padded_k() const { return blocks_ * kBlockSize; }

  bool operator==(const QuantizedActivationPanel&) const = default;

 private:
  std::size_t k_ = 0;
  std::size_t n_ = 0;
  std::size_t blocks_ = 0;
  std::vector<std::int8_t> values_;
  std::vector<float> scales_;
};

Matrix gemm_reference(const Matrix& w, const Matrix& a);

// a is K x N. scale = max|a| / 127 per (block, column), 1.0 for all-zero
// blocks; values rounded to nearest, ties to even.
QuantizedActivationPanel quantize_activations(const Matrix& a);
// x is N x K (token-major); same panel as quantize_activations(x^T).
QuantizedActivationPanel quantize_activations_tokens(const Matrix& x);

// K x N float matrix of value * scale.
Matrix dequantize(const QuantizedActivationPanel& a);

Matrix gemm_mxfp4_latescale_f32(const MxfpTensor& w, const Matrix& a, GemmOptions opts = {});
Matrix gemm_mxfp4_int8(const MxfpTensor& w, const QuantizedActivationPanel& a,
                       GemmOptions opts = {});

// Token-major forms: x is N x K, result is N x M.
Matrix gemm_reference_tokens(const Matrix& w, const Matrix& x, GemmOptions opts = {});
Matrix gemm_mxfp4_latescale_f32_tokens(const MxfpTensor& w, const Matrix& x,
                                       GemmOptions opts = {});
Matrix gemm_mxfp4_int8_tokens(const MxfpTensor& w, const QuantizedActivationPanel& a,
                              GemmOptions opts = {});

// Integer partial of one block: exact sum of lut[code_i] * act_i. Bounded by 12 * 127 * 32 = 48768 in magnitude.
inline constexpr std::int32_t kMaxBlockPartial = 12 * 127 * 32;
std::int32_t int8_block_dot(std::span<const std::uint8_t> packed_codes,
                            std::span<const std::int8_t> acts);

// Reads every weight `passes` times and returns a checksum. Models use it to
// emulate a bandwidth-bound high-precision target.
float stream_weights(std::span<const float> weights, int passes);

// Compulsory traffic of one GEMM: weights once (4.25 bits/element for MXFP4
// paths, 32 bits for reference) plus activations and output once.
double gemm_compulsory_bytes(const GemmShape& shape, GemmPath path);

struct GemmBenchResult {
  GemmPath path = GemmPath::kReference;
  GemmShape shape;
  double bytes = 0;
  double seconds = 0;  // median over repetitions
  double gbps = 0;
};

// Median of at least 9 timed repetitions after 2 warm-ups.
GemmBenchResult gemm_bench(const GemmShape& shape, GemmPath path, int repetitions = 9,
                           GemmOptions opts = {}, std::uint64_t seed = 1);

std::string gemm_bench_csv_header();
std::string gemm_bench_csv_row(const GemmBenchResult& r);

}  // namespace specqd

#endif  // SPECQD_QGEMM_HPP_
