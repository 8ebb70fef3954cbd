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

// Binary tensor and model files.
//
// Tensor record (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "SQDT"
//   4       4     version (1)
//   8       1     dtype: 0 = f32, 1 = mxfp4
//   9       1     layout: 0 = plain, 1 = k-blocked (mxfp4 only)
//   10      2     reserved, zero
//   12      8     rows
//   20      8     cols
//   28      8     payload byte count
//   36      ...   payload
//
// f32 payload: rows * cols IEEE-754 floats, row-major.
// mxfp4 payload: every block's 16 packed code bytes in storage order (two
// codes per byte, low nibble = even element), followed by one E8M0 byte per
// block in the same order. A 32-element block therefore takes 17 bytes.
//
// Model file: magic "SQDM", version (u32), config text length (u32), config
// as "key=value" lines, tensor count (u32), then for each tensor a name
// length (u16), the name and one tensor record.

#ifndef SPECQD_ARTIFACTS_IO_HPP_
#define SPECQD_ARTIFACTS_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "specqd/matrix.hpp"
#include "specqd/mxfp4.hpp"
#include "specqd/tinylm.hpp"

namespace specqd {

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::size_t kTensorHeaderBytes = 36;

using Tensor = std::variant<Matrix, MxfpTensor>;

enum class TensorDtype : std::uint8_t { kF32 = 0, kMxfp4 = 1 };

struct TensorHeader {
  TensorDtype dtype = TensorDtype::kF32;
  MxfpLayout layout = MxfpLayout::kPlain;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::uint64_t payload_bytes = 0;
};

// Payload size implied by dtype and shape.
std::uint64_t expected_payload_bytes(TensorDtype dtype, std::uint64_t rows, std::uint64_t cols);

void save_tensor(std::ostream& out, const Tensor& t);
// Throws kBadMagic, kVersionMismatch, kTruncated or kPayloadMismatch.
Tensor load_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void save_model(std::ostream& out, const TinyLmModel& m);
// Throws kMissingSection / kConfigMismatch on structural problems, plus the
// tensor errors above. Never returns a partially loaded model.
TinyLmModel load_model(std::istream& in);
void save_model(const std::filesystem::path& path, const TinyLmModel& m);
TinyLmModel load_model(const std::filesystem::path& path);

std::string config_to_text(const LmConfig& c);
LmConfig config_from_text(std::string_view text);

enum class PromptMode {
  // Whitespace-separated token ids, one prompt per line.
  kTokenIds,
  // Raw text, one prompt per line, byte-level tokens.
  kText,
};

std::vector<std::vector<TokenId>> load_prompts(const std::filesystem::path& path, PromptMode mode);
std::vector<TokenId> encode_bytes(std::string_view text);
// Bytes for ids < 256; specials render as <bos>/<eos>.
std::string decode_bytes(const std::vector<TokenId>& tokens);

}  // namespace specqd

#endif  // SPECQD_ARTIFACTS_IO_HPP_
