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

#include "specqd/mxfp4.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "specqd/error.hpp"

namespace specqd {
namespace {

// Magnitudes of codes 0..7.
constexpr std::array<float, 8> kE2m1Magnitudes = {0.0f, 0.5f, 1.0f, 1.5f,
                                                  2.0f, 3.0f, 4.0f, 6.0f};

}  // namespace

float E8m0Scale::value() const { return std::ldexp(1.0f, exponent()); }

float fp4_decode(Fp4Code code) {
  const unsigned e = code.exponent();
  const unsigned m = code.mantissa();
  const float mag = e == 0 ? 0.5f * static_cast<float>(m)
                           : std::ldexp(1.0f + 0.5f * static_cast<float>(m), static_cast<int>(e) - 1);
  return code.sign() ? -mag : mag;
}

Fp4Code fp4_encode(float v) {
  if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "fp4_encode of non-finite value");
  const double mag = std::fabs(static_cast<double>(v));
  std::uint8_t best = 0;
  double best_dist = mag;
  // Saturate first: for huge inputs every distance rounds to the same double.
  if (mag >= static_cast<double>(kFp4MaxNormal)) {
    best = 7;
    best_dist = 0;
  }
  for (std::uint8_t c = 1; c < 8 && best_dist > 0; ++c) {
    const double d = std::fabs(mag - static_cast<double>(kE2m1Magnitudes[c]));
    // Ties go to the even mantissa bit.
    if (d < best_dist || (d == best_dist && (c & 1u) == 0)) {
      best = c;
      best_dist = d;
    }
  }
  if (std::signbit(v)) best |= 0x8;
  return Fp4Code{best};
}

BlockScale block_scale(std::span<const float> values) {
  float max_abs = 0.0f;
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "block_scale of non-finite value");
    max_abs = std::max(max_abs, std::fabs(v));
  }
  BlockScale out;
  if (max_abs == 0.0f) return out;
  int e = 0;
  std::frexp(max_abs, &e);  // max_abs = f * 2^e, f in [0.5, 1)
  const int floor_log2 = e - 1;
  int biased = floor_log2 - 2 + kE8m0Bias;
  if (biased < 0 || biased > kE8m0MaxBiased) {
    out.clamped = true;
    biased = std::clamp(biased, 0, kE8m0MaxBiased);
  }
  out.scale.biased_exponent = static_cast<std::uint8_t>(biased);
  return out;
}

std::array<std::int8_t, 16> fp4_to_int8_lut() {
  std::array<std::int8_t, 16> lut{};
  for (std::uint8_t c = 0; c < 16; ++c) {
    lut[c] = static_cast<std::int8_t>(fp4_decode(Fp4Code{c}) * 2.0f);
  }
  return lut;
}

float bf16_truncate(float v) {
  return std::bit_cast<float>(std::bit_cast<std::uint32_t>(v) & 0xFFFF0000u);
}

MxfpTensor::MxfpTensor(std::size_t rows, std::size_t cols, MxfpLayout layout)
    : rows_(rows),
      cols_(cols),
      blocks_per_row_((cols + kBlockSize - 1) / kBlockSize),
      layout_(layout),
      packed_(rows * blocks_per_row_ * kBlockCodeBytes, 0),
      scales_(rows * blocks_per_row_) {}

std::size_t MxfpTensor::block_index(std::size_t row, std::size_t kb) const {
  if (layout_ == MxfpLayout::kPlain) return row * blocks_per_row_ + kb;
  const std::size_t base = row - row % kPanelRows;
  const std::size_t panel_rows = std::min(kPanelRows, rows_ - base);
  return base * blocks_per_row_ + kb * panel_rows + (row - base);
}

Fp4Code MxfpTensor::code(std::size_t row, std::size_t col) const {
  const std::size_t idx = block_index(row, col / kBlockSize);
  const std::size_t within = col % kBlockSize;
  const std::uint8_t byte = packed_[idx * kBlockCodeBytes + within / 2];
  return Fp4Code{static_cast<std::uint8_t>(within % 2 == 0 ? byte & 0x0F : byte >> 4)};
}

void MxfpTensor::set_code(std::size_t row, std::size_t col, Fp4Code c) {
  const std::size_t idx = block_index(row, col / kBlockSize);
  const std::size_t within = col % kBlockSize;
  std::uint8_t& byte = packed_[idx * kBlockCodeBytes + within / 2];
  if (within % 2 == 0) {
    byte = static_cast<std::uint8_t>((byte & 0xF0) | (c.bits & 0x0F));
  } else {
    byte = static_cast<std::uint8_t>((byte & 0x0F) | (c.bits << 4));
  }
}

MxfpTensor MxfpTensor::with_layout(MxfpLayout layout) const {
  MxfpTensor out(rows_, cols_, layout);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t kb = 0; kb < blocks_per_row_; ++kb) {
      const std::size_t src = block_index(r, kb);
      const std::size_t dst = out.block_index(r, kb);
      std::copy_n(packed_.begin() + static_cast<std::ptrdiff_t>(src * kBlockCodeBytes),
                  kBlockCodeBytes,
                  out.packed_.begin() + static_cast<std::ptrdiff_t>(dst * kBlockCodeBytes));
      out.scales_[dst] = scales_[src];
    }
  }
  return out;
}

MxfpTensor quantize_direct_cast(const Matrix& m, MxfpLayout layout,
                                QuantizeDiagnostics* diagnostics) {
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    if (!std::isfinite(m.data[i])) {
      throw Error(ErrorCode::kNonFinite, "non-finite weight at (" + std::to_string(i / m.cols) +
                                             ", " + std::to_string(i % m.cols) + ")");
    }
  }
  MxfpTensor t(m.rows, m.cols, layout);
  std::array<float, kBlockSize> block{};
  QuantizeDiagnostics diag;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t kb = 0; kb < t.blocks_per_row(); ++kb) {
      const std::size_t c0 = kb * kBlockSize;
      const std::size_t n = std::min(kBlockSize, m.cols - c0);
      block.fill(0.0f);
      std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols + c0), n, block.begin());

      const BlockScale bs = block_scale(block);
      if (bs.clamped) ++diag.clamped_scale_blocks;
      const std::size_t idx = t.block_index(r, kb);
      t.block_scale_at(idx) = bs.scale;
      const int shift = -bs.scale.exponent();
      for (std::size_t i = 0; i < n; ++i) {
        const float scaled = std::ldexp(block[i], shift);
        if (std::fabs(scaled) > kFp4MaxNormal) ++diag.clamped_elements;
        t.set_code(r, c0 + i, fp4_encode(scaled));
      }
    }
  }
  if (diagnostics != nullptr) *diagnostics = diag;
  return t;
}

Matrix dequantize(const MxfpTensor& t) {
  Matrix m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      const int e = t.scale(r, c / kBlockSize).exponent();
      m(r, c) = std::ldexp(fp4_decode(t.code(r, c)), e);
    }
  }
  return m;
}

}  // namespace specqd
