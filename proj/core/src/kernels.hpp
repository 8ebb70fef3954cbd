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


// Inner loops shared by the GEMM paths. Each operation has a portable scalar
// form, which defines the result, and an optional SIMD form that must match
// it bit for bit.

#ifndef SPECQD_SRC_KERNELS_HPP_
#define SPECQD_SRC_KERNELS_HPP_

#include <cstddef>
#include <cstdint>

namespace specqd::detail {

inline constexpr std::size_t kLanes = 8;

// Unpacks one block of 16 code bytes into 32 doubled values (2 * E2M1) in
// element order.
void unpack_block_i8(const std::uint8_t* packed, std::int8_t* out);

// Float dot product over n elements: lane j accumulates elements j, j+8, ...
// of each full group of eight in order, lanes combine as
// ((l0+l1)+(l2+l3))+((l4+l5)+(l6+l7)), and any tail is added sequentially.
float dot_f32_scalar(const float* a, const float* b, std::size_t n);
float dot_f32(const float* a, const float* b, std::size_t n);

// Panel kernels. codes[r] points at the 16 packed bytes of row r's block in
// an eight-row panel; token t's 32 activations start at x + t * stride.
// Writes out[t * 8 + r].
//
// Float form: doubled E2M1 values times activations, reduced in the lane
// order of dot_f32.
void panel_block_f32_scalar(const std::uint8_t* const* codes, const float* x, std::size_t stride,
                            std::size_t n_tok, float* out);
void panel_block_f32(const std::uint8_t* const* codes, const float* x, std::size_t stride,
                     std::size_t n_tok, float* out);
// Integer form: exact sum of doubled E2M1 values times int8 activations.
void panel_block_i8_scalar(const std::uint8_t* const* codes, const std::int8_t* a, std::size_t stride,
                           std::size_t n_tok, std::int32_t* out);
void panel_block_i8(const std::uint8_t* const* codes, const std::int8_t* a, std::size_t stride,
                    std::size_t n_tok, std::int32_t* out);

// True when the SIMD forms above are compiled in.
bool simd_kernels();

}  // namespace specqd::detail

#endif  // SPECQD_SRC_KERNELS_HPP_
