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

// MXFP4 block floating point: E2M1 element codes sharing one E8M0
// power-of-two scale per 32 consecutive elements along the reduction axis.

#ifndef SPECQD_MXFP4_HPP_
#define SPECQD_MXFP4_HPP_

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "specqd/matrix.hpp"

namespace specqd {

inline constexpr std::size_t kBlockSize = 32;
inline constexpr std::size_t kBlockCodeBytes = kBlockSize / 2;
// Rows per panel in the k-blocked layout; matches an 8-row microkernel.
inline constexpr std::size_t kPanelRows = 8;
inline constexpr float kFp4MaxNormal = 6.0f;
inline constexpr int kE8m0Bias = 127;
inline constexpr int kE8m0MaxBiased = 254;

// 4-bit E2M1 code: bit 3 sign, bits 2..1 exponent, bit 0 mantissa.
struct Fp4Code {
  std::uint8_t bits = 0;

  constexpr bool sign() const { return (bits & 0x8) != 0; }
  constexpr unsigned exponent() const { return (bits >> 1) & 0x3; }
  constexpr unsigned mantissa() const { return bits & 0x1; }
  auto operator<=>(const Fp4Code&) const = default;
};

// Unsigned biased exponent; value is 2^(biased_exponent - 127).
struct E8m0Scale {
  std::uint8_t biased_exponent = kE8m0Bias;

  constexpr int exponent() const { return int{biased_exponent} - kE8m0Bias; }
  float value() const;
  auto operator<=>(const E8m0Scale&) const = default;
};

float fp4_decode(Fp4Code code);

// Round to nearest E2M1 value, ties to the even mantissa bit, |v| > 6 clamps
// to +-6. The sign of v is kept even when it rounds to zero. Throws
// ErrorCode::kNonFinite for NaN/Inf.
Fp4Code fp4_encode(float v);

struct BlockScale {
  E8m0Scale scale;
  // Set when the unclamped exponent fell outside [0, 254].
  bool clamped = false;
};

// Two-step shared scale: largest power of two <= max|V|, divided by 4 (the
// largest power of two in E2M1). All-zero blocks get 1.0.
BlockScale block_scale(std::span<const float> values);

// FP4 -> int8 conversion table with every entry doubled so that all eight
// magnitudes are integers. Consumers compensate with a factor of 1/2.
std::array<std::int8_t, 16> fp4_to_int8_lut();

// Rounds a float to bfloat16 precision by dropping the low 16 bits.
float bf16_truncate(float v);

enum class MxfpLayout : std::uint8_t {
  // Blocks ordered (row, k-block).
  kPlain = 0,
  // Blocks ordered (8-row panel, k-block, row within panel) so that one
  // k-step of a panel streams contiguously.
  kKBlocked = 1,
};

// A rows x cols matrix in MXFP4. Each row is split into ceil(cols / 32)
// blocks along cols (the reduction dimension); a trailing partial block is
// zero padded. Codes are packed two per byte, low nibble = even element.
class MxfpTensor {
 public:
  MxfpTensor() = default;
  MxfpTensor(std::size_t rows, std::size_t cols, MxfpLayout layout);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  MxfpLayout layout() const { return layout_; }
  std::size_t blocks_per_row() const { return blocks_per_row_; }
  std::size_t block_count() const { return rows_ * blocks_per_row_; }

  // Storage position of block (row, kb) in the current layout.
  std::size_t block_index(std::size_t row, std::size_t kb) const;

  std::span<std::uint8_t> block_codes(std::size_t index) {
    return {packed_.data() + index * kBlockCodeBytes, kBlockCodeBytes};
  }
  std::span<const std::uint8_t> block_codes(std::size_t index) const {
    return {packed_.data() + index * kBlockCodeBytes, kBlockCodeBytes};
  }
  E8m0Scale& block_scale_at(std::size_t index) { return scales_[index]; }
  E8m0Scale block_scale_at(std::size_t index) const { return scales_[index]; }

  Fp4Code code(std::size_t row, std::size_t col) const;
  void set_code(std::size_t row, std::size_t col, Fp4Code c);
  E8m0Scale scale(std::size_t row, std::size_t kb) const {
    return scales_[block_index(row, kb)];
  }

  std::span<const std::uint8_t> packed_codes() const { return packed_; }
  std::span<std::uint8_t> packed_codes() { return packed_; }
  std::span<const E8m0Scale> scales() const { return scales_; }
  std::span<E8m0Scale> scales() { return scales_; }

  // Total storage, packed codes plus one byte per block.
  std::size_t storage_bytes() const { return packed_.size() + scales_.size(); }

  MxfpTensor with_layout(MxfpLayout layout) const;

  bool operator==(const MxfpTensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t blocks_per_row_ = 0;
  MxfpLayout layout_ = MxfpLayout::kPlain;
  std::vector<std::uint8_t> packed_;
  std::vector<E8m0Scale> scales_;
};

struct QuantizeDiagnostics {
  std::size_t clamped_scale_blocks = 0;
  std::size_t clamped_elements = 0;
};

// Direct cast of a float matrix, blocking along cols. Throws
// ErrorCode::kNonFinite naming the (row, col) of the first bad entry.
MxfpTensor quantize_direct_cast(const Matrix& m,
                                MxfpLayout layout = MxfpLayout::kKBlocked,
                                QuantizeDiagnostics* diagnostics = nullptr);

Matrix dequantize(const MxfpTensor& t);

}  // namespace specqd

#endif  // SPECQD_MXFP4_HPP_
