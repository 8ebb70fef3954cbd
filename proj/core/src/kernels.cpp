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


#include "kernels.hpp"

#include <algorithm>
#include <array>

#if defined(__AVX2__)
#include <immintrin.h>
#define SPECQD_HAVE_AVX2 1
#endif

#include "specqd/mxfp4.hpp"

namespace specqd::detail {
namespace {

const std::array<std::int8_t, 16> kLut = fp4_to_int8_lut();

// Tokens handled per pass over a decoded panel.
constexpr std::size_t kTokenTile = 8;

inline float lane_tree(const float* l) {
  return ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
}

#if SPECQD_HAVE_AVX2
// out[r] = ((v_r[0]+v_r[1])+(v_r[2]+v_r[3]))+((v_r[4]+v_r[5])+(v_r[6]+v_r[7])).
inline __m256 tree8(const __m256* v) {
  const __m256 h01 = _mm256_hadd_ps(v[0], v[1]);
  const __m256 h23 = _mm256_hadd_ps(v[2], v[3]);
  const __m256 h45 = _mm256_hadd_ps(v[4], v[5]);
  const __m256 h67 = _mm256_hadd_ps(v[6], v[7]);
  // Per 128-bit half: rows 0..3, low half holds (l0+l1)+(l2+l3), high half
  // holds (l4+l5)+(l6+l7).
  const __m256 q0 = _mm256_hadd_ps(h01, h23);
  const __m256 q1 = _mm256_hadd_ps(h45, h67);
  const __m256 lo = _mm256_permute2f128_ps(q0, q1, 0x20);
  const __m256 hi = _mm256_permute2f128_ps(q0, q1, 0x31);
  return _mm256_add_ps(lo, hi);
}

inline __m256i sum8_epi32(const __m256i* v) {
  const __m256i h01 = _mm256_hadd_epi32(v[0], v[1]);
  const __m256i h23 = _mm256_hadd_epi32(v[2], v[3]);
  const __m256i h45 = _mm256_hadd_epi32(v[4], v[5]);
  const __m256i h67 = _mm256_hadd_epi32(v[6], v[7]);
  const __m256i q0 = _mm256_hadd_epi32(h01, h23);
  const __m256i q1 = _mm256_hadd_epi32(h45, h67);
  return _mm256_add_epi32(_mm256_permute2x128_si256(q0, q1, 0x20), _mm256_permute2x128_si256(q0, q1, 0x31));
}

// 32 doubled values of one packed block, element order.
inline __m256i unpack_ymm(const std::uint8_t* packed, __m256i table) {
  const __m128i mask = _mm_set1_epi8(0x0F);
  const __m128i c = _mm_loadu_si128(reinterpret_cast<const __m128i*>(packed));
  const __m128i lo = _mm_and_si128(c, mask);
  const __m128i hi = _mm_and_si128(_mm_srli_epi16(c, 4), mask);
  return _mm256_shuffle_epi8(table, _mm256_set_m128i(_mm_unpackhi_epi8(lo, hi), _mm_unpacklo_epi8(lo, hi)));
}

inline __m256i lut_ymm() {
  return _mm256_broadcastsi128_si256(_mm_loadu_si128(reinterpret_cast<const __m128i*>(kLut.data())));
}

// Sum of |w| * (a * sign(w)) in groups of four; pairs stay within int16
// since |w| <= 12.
inline __m256i dot_u8s8(__m256i uw, __m256i sa) {
#if defined(__AVXVNNI__)
  return _mm256_dpbusd_avx_epi32(_mm256_setzero_si256(), uw, sa);
#elif defined(__AVX512VNNI__) && defined(__AVX512VL__)
  return _mm256_dpbusd_epi32(_mm256_setzero_si256(), uw, sa);
#else
  return _mm256_madd_epi16(_mm256_maddubs_epi16(uw, sa), _mm256_set1_epi16(1));
#endif
}

// Up to T tokens against one decoded panel; T = 1 keeps everything in
// registers.
template <std::size_t T>
inline void f32_tile(const std::uint8_t* const* codes, const float* x, std::size_t stride, float* out,
                     __m256i table, std::size_t tc = T) {
  __m256 v[T][kPanelRows];
  for (std::size_t r = 0; r < kPanelRows; ++r) {
    const __m256i q = unpack_ymm(codes[r], table);
    const __m128i qlo = _mm256_castsi256_si128(q);
    const __m128i qhi = _mm256_extracti128_si256(q, 1);
    const __m256 w0 = _mm256_cvtepi32_ps(_mm256_cvtepi8_epi32(qlo));
    const __m256 w1 = _mm256_cvtepi32_ps(_mm256_cvtepi8_epi32(_mm_srli_si128(qlo, 8)));
    const __m256 w2 = _mm256_cvtepi32_ps(_mm256_cvtepi8_epi32(qhi));
    const __m256 w3 = _mm256_cvtepi32_ps(_mm256_cvtepi8_epi32(_mm_srli_si128(qhi, 8)));
    for (std::size_t t = 0; t < tc; ++t) {
      const float* xt = x + t * stride;
      __m256 acc = _mm256_add_ps(_mm256_setzero_ps(), _mm256_mul_ps(w0, _mm256_loadu_ps(xt)));
      acc = _mm256_add_ps(acc, _mm256_mul_ps(w1, _mm256_loadu_ps(xt + 8)));
      acc = _mm256_add_ps(acc, _mm256_mul_ps(w2, _mm256_loadu_ps(xt + 16)));
      v[t][r] = _mm256_add_ps(acc, _mm256_mul_ps(w3, _mm256_loadu_ps(xt + 24)));
    }
  }
  for (std::size_t t = 0; t < tc; ++t) _mm256_storeu_ps(out + t * kPanelRows, tree8(v[t]));
}

template <std::size_t T>
inline void i8_tile(const std::uint8_t* const* codes, const std::int8_t* a, std::size_t stride, std::int32_t* out,
                    __m256i table, std::size_t tc = T) {
  __m256i v[T][kPanelRows];
  for (std::size_t r = 0; r < kPanelRows; ++r) {
    const __m256i w = unpack_ymm(codes[r], table);
    const __m256i uw = _mm256_abs_epi8(w);
    for (std::size_t t = 0; t < tc; ++t) {
      const __m256i av = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + t * stride));
      v[t][r] = dot_u8s8(uw, _mm256_sign_epi8(av, w));
    }
  }
  for (std::size_t t = 0; t < tc; ++t) {
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out + t * kPanelRows), sum8_epi32(v[t]));
  }
}
#endif

}  // namespace

void unpack_block_i8(const std::uint8_t* packed, std::int8_t* out) {
  for (std::size_t i = 0; i < kBlockCodeBytes; ++i) {
    out[2 * i] = kLut[packed[i] & 0x0F];
    out[2 * i + 1] = kLut[packed[i] >> 4];
  }
}

float dot_f32_scalar(const float* a, const float* b, std::size_t n) {
  float lane[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) lane[j] += a[i + j] * b[i + j];
  }
  float s = lane_tree(lane);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

float dot_f32(const float* a, const float* b, std::size_t n) {
#if SPECQD_HAVE_AVX2
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  alignas(32) float lane[kLanes];
  _mm256_store_ps(lane, acc);
  float s = lane_tree(lane);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
#else
  return dot_f32_scalar(a, b, n);
#endif
}

void panel_block_f32_scalar(const std::uint8_t* const* codes, const float* x, std::size_t stride,
                            std::size_t n_tok, float* out) {
  float w[kBlockSize];
  std::int8_t q[kBlockSize];
  for (std::size_t r = 0; r < kPanelRows; ++r) {
    unpack_block_i8(codes[r], q);
    for (std::size_t i = 0; i < kBlockSize; ++i) w[i] = static_cast<float>(q[i]);
    for (std::size_t t = 0; t < n_tok; ++t) out[t * kPanelRows + r] = dot_f32_scalar(w, x + t * stride, kBlockSize);
  }
}

void panel_block_f32(const std::uint8_t* const* codes, const float* x, std::size_t stride,
                     std::size_t n_tok, float* out) {
#if SPECQD_HAVE_AVX2
  const __m256i table = lut_ymm();
  for (std::size_t t0 = 0; t0 < n_tok; t0 += kTokenTile) {
    const std::size_t tc = std::min(kTokenTile, n_tok - t0);
    if (tc == 1) {
      f32_tile<1>(codes, x + t0 * stride, stride, out + t0 * kPanelRows, table);
    } else {
      f32_tile<kTokenTile>(codes, x + t0 * stride, stride, out + t0 * kPanelRows, table, tc);
    }
  }
#else
  panel_block_f32_scalar(codes, x, stride, n_tok, out);
#endif
}

void panel_block_i8_scalar(const std::uint8_t* const* codes, const std::int8_t* a, std::size_t stride,
                           std::size_t n_tok, std::int32_t* out) {
  std::int8_t w[kBlockSize];
  for (std::size_t r = 0; r < kPanelRows; ++r) {
    unpack_block_i8(codes[r], w);
    for (std::size_t t = 0; t < n_tok; ++t) {
      const std::int8_t* at = a + t * stride;
      std::int32_t acc = 0;
      for (std::size_t i = 0; i < kBlockSize; ++i) acc += w[i] * at[i];
      out[t * kPanelRows + r] = acc;
    }
  }
}

void panel_block_i8(const std::uint8_t* const* codes, const std::int8_t* a, std::size_t stride,
                    std::size_t n_tok, std::int32_t* out) {
#if SPECQD_HAVE_AVX2
  const __m256i table = lut_ymm();
  for (std::size_t t0 = 0; t0 < n_tok; t0 += kTokenTile) {
    const std::size_t tc = std::min(kTokenTile, n_tok - t0);
    if (tc == 1) {
      i8_tile<1>(codes, a + t0 * stride, stride, out + t0 * kPanelRows, table);
    } else {
      i8_tile<kTokenTile>(codes, a + t0 * stride, stride, out + t0 * kPanelRows, table, tc);
    }
  }
#else
  panel_block_i8_scalar(codes, a, stride, n_tok, out);
#endif
}

bool simd_kernels() {
#if SPECQD_HAVE_AVX2
  return true;
#else
  return false;
#endif
}

}  // namespace specqd::detail
