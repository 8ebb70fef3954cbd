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
#include <cstdint>
#include <random>

#include "oracles.hpp"
#include "specqd/error.hpp"
#include "specqd/qgemm.hpp"

namespace specqd {
namespace {

QuantizedActivationPanel random_panel(std::size_t k, std::size_t n, std::mt19937_64& rng,
                                      const std::vector<float>& scales, int max_abs = 127) {
  QuantizedActivationPanel p(k, n);
  std::uniform_int_distribution<int> v(-max_abs, max_abs);
  std::uniform_int_distribution<std::size_t> pick(0, scales.size() - 1);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t r = 0; r < k; ++r) p.value(r, c) = static_cast<std::int8_t>(v(rng));
    for (std::size_t kb = 0; kb < p.blocks_per_col(); ++kb) p.scale(kb, c) = scales[pick(rng)];
  }
  return p;
}

TEST(GemmPath, ParsesNames) {
  EXPECT_EQ(parse_gemm_path("reference"), GemmPath::kReference);
  EXPECT_EQ(parse_gemm_path("latescale_f32"), GemmPath::kLateScaleF32);
  EXPECT_EQ(parse_gemm_path("int8"), GemmPath::kInt8);
  EXPECT_THROW(parse_gemm_path("fp16"), Error);
  for (GemmPath p : {GemmPath::kReference, GemmPath::kLateScaleF32, GemmPath::kInt8}) {
    EXPECT_EQ(parse_gemm_path(to_string(p)), p);
  }
}

TEST(GemmReference, SmallProduct) {
  Matrix w(2, 3);
  w.data = {1, 2, 3, 4, 5, 6};
  Matrix a(3, 2);
  a.data = {1, 0, 0, 1, 1, 1};
  const Matrix out = gemm_reference(w, a);
  EXPECT_EQ(out.data, (std::vector<float>{4, 5, 10, 11}));
  EXPECT_THROW(gemm_reference(w, Matrix(2, 2)), Error);
}

TEST(LateScale, WithinRelativeToleranceOfDequantizedReference) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> dim(1, 256);
  std::uniform_int_distribution<std::size_t> ndim(1, 8);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = ndim(rng);
    const Matrix wf = oracle::random_matrix(m, k, rng);
    const Matrix a = oracle::random_matrix(k, n, rng);
    const MxfpTensor w = quantize_direct_cast(wf);
    const Matrix wd = dequantize(w);
    const Matrix want = gemm_reference(wd, a);
    const Matrix got = gemm_mxfp4_latescale_f32(w, a);
    ASSERT_EQ(got.rows, m);
    ASSERT_EQ(got.cols, n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double mag = 0;
        for (std::size_t kk = 0; kk < k; ++kk) mag += std::fabs(double{wd(i, kk)} * a(kk, j));
        ASSERT_LE(std::fabs(double{got(i, j)} - want(i, j)), 1e-5 * mag) << m << "x" << k << "x" << n;
      }
    }
  }
}

TEST(LateScale, ExactRationalIdentityOnSmallIntegers) {
  // Codes are multiples of 1/2 and scales 2^e with e in [-2, 2], so every
  // quantity is an integer over the common denominator 8.
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> act(-4, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + trial % 9, k = 32 * (1 + trial % 4) - trial % 3, n = 1 + trial % 5;
    const MxfpTensor w = oracle::random_mxfp(m, k, rng, {-2, -1, 0, 1, 2});
    Matrix a(k, n);
    for (auto& v : a.data) v = static_cast<float>(act(rng));
    const Matrix got = gemm_mxfp4_latescale_f32(w, a);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        std::int64_t late = 0;   // sum_b s_b * sum_i w_i a_i
        std::int64_t early = 0;  // sum_i (s_b w_i) a_i
        for (std::size_t kb = 0; kb < w.blocks_per_row(); ++kb) {
          const std::int64_t s8 = std::int64_t{1} << (w.scale(i, kb).exponent() + 2);
          std::int64_t partial = 0;
          for (std::size_t kk = kb * 32; kk < std::min(k, kb * 32 + 32); ++kk) {
            const auto w2 = static_cast<std::int64_t>(2 * oracle::e2m1_value(w.code(i, kk).bits));
            const auto ai = static_cast<std::int64_t>(a(kk, j));
            partial += w2 * ai;
            early += (w2 * s8) * ai;
          }
          late += s8 * partial;
        }
        ASSERT_EQ(late, early);
        ASSERT_EQ(static_cast<double>(got(i, j)) * 8.0, static_cast<double>(late));
      }
    }
  }
}

TEST(Int8Path, BitExactUnderPowerOfTwoScales) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::size_t> dim(1, 256);
  std::uniform_int_distribution<std::size_t> ndim(1, 8);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = ndim(rng);
    const MxfpTensor w = oracle::random_mxfp(m, k, rng, {-1, 0, 1});
    const QuantizedActivationPanel a = random_panel(k, n, rng, {0.5f, 1.0f, 2.0f});
    const auto want = oracle::exact_product(w, a);
    const Matrix got = gemm_mxfp4_int8(w, a);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        ASSERT_EQ(got(i, j), static_cast<float>(want[i * n + j])) << m << "x" << k << "x" << n;
      }
    }
  }
}

TEST(Int8Path, BlockPartialBound) {
  std::vector<std::uint8_t> codes(16, 0x77);  // every element +6
  std::vector<std::int8_t> acts(32, 127);
  EXPECT_EQ(int8_block_dot(codes, acts), kMaxBlockPartial);
  EXPECT_EQ(kMaxBlockPartial, 48768);
  std::fill(acts.begin(), acts.end(), static_cast<std::int8_t>(-127));
  EXPECT_EQ(int8_block_dot(codes, acts), -kMaxBlockPartial);

  std::mt19937_64 rng(24);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> a8(-127, 127);
  for (int trial = 0; trial < 10000; ++trial) {
    for (auto& c : codes) c = static_cast<std::uint8_t>(byte(rng));
    for (auto& v : acts) v = static_cast<std::int8_t>(a8(rng));
    std::int64_t want = 0;
    for (std::size_t i = 0; i < 32; ++i) {
      const unsigned bits = i % 2 == 0 ? codes[i / 2] & 0xF : codes[i / 2] >> 4;
      want += static_cast<std::int64_t>(2 * oracle::e2m1_value(bits)) * acts[i];
    }
    const std::int32_t got = int8_block_dot(codes, acts);
    ASSERT_EQ(got, want);
    ASSERT_LE(std::abs(got), kMaxBlockPartial);
  }
}

TEST(Int8Path, ActivationQuantizationRoundsTiesToEven) {
  Matrix a(32, 1, 0.0f);
  a(0, 0) = 127.0f;  // scale 1
  a(1, 0) = 2.5f;
  a(2, 0) = 3.5f;
  a(3, 0) = -2.5f;
  a(4, 0) = 0.5f;
  const QuantizedActivationPanel p = quantize_activations(a);
  EXPECT_EQ(p.scale(0, 0), 1.0f);
  EXPECT_EQ(p.value(1, 0), 2);
  EXPECT_EQ(p.value(2, 0), 4);
  EXPECT_EQ(p.value(3, 0), -2);
  EXPECT_EQ(p.value(4, 0), 0);
}

TEST(Int8Path, ActivationScalesArePerBlockAndColumn) {
  Matrix a(40, 2, 0.0f);
  a(0, 0) = -254.0f;
  a(35, 0) = 1.27f;
  a(5, 1) = 0.0f;
  const QuantizedActivationPanel p = quantize_activations(a);
  EXPECT_EQ(p.blocks_per_col(), 2u);
  EXPECT_EQ(p.scale(0, 0), 2.0f);
  EXPECT_EQ(p.value(0, 0), -127);
  EXPECT_EQ(p.scale(1, 0), 1.27f / 127.0f);
  EXPECT_EQ(p.value(35, 0), 127);
  EXPECT_EQ(p.scale(0, 1), 1.0f);  // all-zero block
  EXPECT_EQ(p.value(39 + 1, 0), 0);  // padding
  EXPECT_EQ(quantize_activations_tokens(a.transposed()), p);
}

TEST(Int8Path, CloseToLateScalePath) {
  std::mt19937_64 rng(25);
  const Matrix wf = oracle::random_matrix(64, 160, rng);
  const Matrix a = oracle::random_matrix(160, 4, rng);
  const MxfpTensor w = quantize_direct_cast(wf);
  const Matrix ref = gemm_mxfp4_latescale_f32(w, a);
  const Matrix got = gemm_mxfp4_int8(w, quantize_activations(a));
  const Matrix wd = dequantize(w);
  for (std::size_t i = 0; i < ref.rows; ++i) {
    for (std::size_t j = 0; j < ref.cols; ++j) {
      double mag = 0;
      for (std::size_t kk = 0; kk < 160; ++kk) mag += std::fabs(double{wd(i, kk)} * a(kk, j));
      // int8 activations carry at most half a step of error per element.
      EXPECT_LE(std::fabs(got(i, j) - ref(i, j)), mag / 127.0);
    }
  }
}

TEST(Gemm, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 rng(26);
  const Matrix wf = oracle::random_matrix(203, 520, rng);
  const Matrix a = oracle::random_matrix(520, 8, rng);
  const MxfpTensor w = quantize_direct_cast(wf);
  const QuantizedActivationPanel qa = quantize_activations(a);
  const Matrix late1 = gemm_mxfp4_latescale_f32(w, a, {1});
  const Matrix int1 = gemm_mxfp4_int8(w, qa, {1});
  const Matrix ref1 = gemm_reference_tokens(wf, a.transposed(), {1});
  for (int t : {2, 3, 5, 8, 16}) {
    EXPECT_EQ(gemm_mxfp4_latescale_f32(w, a, {t}), late1) << t;
    EXPECT_EQ(gemm_mxfp4_int8(w, qa, {t}), int1) << t;
    EXPECT_EQ(gemm_reference_tokens(wf, a.transposed(), {t}), ref1) << t;
  }
}

TEST(Gemm, BatchSizeDoesNotChangeColumns) {
  std::mt19937_64 rng(27);
  const Matrix wf = oracle::random_matrix(40, 100, rng);
  const Matrix a = oracle::random_matrix(100, 8, rng);
  const MxfpTensor w = quantize_direct_cast(wf);
  const Matrix late = gemm_mxfp4_latescale_f32(w, a);
  const Matrix i8 = gemm_mxfp4_int8(w, quantize_activations(a));
  for (std::size_t j = 0; j < 8; ++j) {
    Matrix col(100, 1);
    for (std::size_t k = 0; k < 100; ++k) col(k, 0) = a(k, j);
    const Matrix l1 = gemm_mxfp4_latescale_f32(w, col);
    const Matrix q1 = gemm_mxfp4_int8(w, quantize_activations(col));
    for (std::size_t i = 0; i < 40; ++i) {
      ASSERT_EQ(l1(i, 0), late(i, j));
      ASSERT_EQ(q1(i, 0), i8(i, j));
    }
  }
}

TEST(Gemm, TokenMajorFormsAreTransposes) {
  std::mt19937_64 rng(28);
  const Matrix wf = oracle::random_matrix(17, 45, rng);
  const Matrix a = oracle::random_matrix(45, 3, rng);
  const MxfpTensor w = quantize_direct_cast(wf, MxfpLayout::kPlain);
  EXPECT_EQ(gemm_mxfp4_latescale_f32_tokens(w, a.transposed()), gemm_mxfp4_latescale_f32(w, a).transposed());
  EXPECT_EQ(gemm_mxfp4_int8_tokens(w, quantize_activations(a)), gemm_mxfp4_int8(w, quantize_activations(a)).transposed());
  // The token-major reference uses lane-split sums, so it only agrees to rounding.
  const Matrix rt = gemm_reference_tokens(wf, a.transposed());
  const Matrix rr = gemm_reference(wf, a);
  for (std::size_t m = 0; m < wf.rows; ++m) {
    for (std::size_t n = 0; n < a.cols; ++n) {
      double mag = 0;
      for (std::size_t k = 0; k < wf.cols; ++k) mag += std::fabs(double(wf(m, k)) * a(k, n));
      EXPECT_LE(std::fabs(double(rt(n, m)) - rr(m, n)), 1e-6 * mag);
    }
  }
  EXPECT_THROW(gemm_mxfp4_latescale_f32(w, Matrix(44, 1)), Error);
}

TEST(Gemm, LayoutDoesNotChangeResults) {
  std::mt19937_64 rng(29);
  const Matrix wf = oracle::random_matrix(21, 70, rng);
  const Matrix a = oracle::random_matrix(70, 2, rng);
  const MxfpTensor p = quantize_direct_cast(wf, MxfpLayout::kPlain);
  const MxfpTensor b = quantize_direct_cast(wf, MxfpLayout::kKBlocked);
  EXPECT_EQ(gemm_mxfp4_latescale_f32(p, a), gemm_mxfp4_latescale_f32(b, a));
  EXPECT_EQ(gemm_mxfp4_int8(p, quantize_activations(a)), gemm_mxfp4_int8(b, quantize_activations(a)));
}

TEST(GemmBytes, CompulsoryTraffic) {
  const GemmShape s{4096, 1, 4096};
  EXPECT_EQ(gemm_compulsory_bytes(s, GemmPath::kReference), 4.0 * 4096 * 4096 + 4.0 * 4096 + 4.0 * 4096);
  EXPECT_EQ(gemm_compulsory_bytes(s, GemmPath::kLateScaleF32), 17.0 * 4096 * 128 + 4.0 * 4096 + 4.0 * 4096);
  EXPECT_EQ(gemm_compulsory_bytes(s, GemmPath::kInt8), 17.0 * 4096 * 128 + 4096.0 + 4.0 * 128 + 4.0 * 4096);
}

TEST(GemmBench, ProducesParsableRow) {
  const GemmBenchResult r = gemm_bench({64, 2, 64}, GemmPath::kInt8, 9);
  EXPECT_GT(r.seconds, 0.0);
  EXPECT_EQ(r.bytes, gemm_compulsory_bytes({64, 2, 64}, GemmPath::kInt8));
  EXPECT_EQ(gemm_bench_csv_header(), "path,M,N,K,bytes,seconds,gbps");
  EXPECT_EQ(gemm_bench_csv_row(r).rfind("int8,64,2,64,", 0), 0u);
}

TEST(StreamWeights, ReadsEveryElement) {
  const std::vector<float> w(100, 1.0f);
  EXPECT_EQ(stream_weights(w, 1), 100.0f);
  EXPECT_EQ(stream_weights(w, 0), 0.0f);
}

}  // namespace
}  // namespace specqd
