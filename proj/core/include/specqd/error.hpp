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

#ifndef SPECQD_ERROR_HPP_
#define SPECQD_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace specqd {

enum class ErrorCode {
  kInvalidArgument,
  kNonFinite,
  kShapeMismatch,
  kContextOverflow,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kPayloadMismatch,
  kMissingSection,
  kConfigMismatch,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library is an Error carrying a typed code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace specqd

#endif  // SPECQD_ERROR_HPP_
