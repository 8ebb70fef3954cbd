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

// A small decoder-only transformer used as target and draft model.
//
// Pre-norm LayerNorm blocks, GELU MLP, learned absolute positions, untied
// output projection. Every linear layer goes through qgemm, either with float
// weights (reference path) or MXFP4 weights (int8 or late-scaling path), so
// an MXFP4 draft of a target is a single direct_cast_mxfp4() call.

#ifndef SPECQD_TINYLM_HPP_
#define SPECQD_TINYLM_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "specqd/matrix.hpp"
#include "specqd/mxfp4.hpp"
#include "specqd/qgemm.hpp"

namespace specqd {

using TokenId = std::int32_t;

// Byte-level tokenizer: ids 0..255 are bytes, followed by two specials.
inline constexpr TokenId kBosToken = 256;
inline constexpr TokenId kEosToken = 257;
inline constexpr int kByteVocabSize = 258;

struct LmConfig {
  int vocab_size = kByteVocabSize;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 256;
  float norm_epsilon = 1e-5f;

  // Throws ErrorCode::kInvalidArgument.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const LmConfig&) const = default;
};

// y = W x + b with W stored out_features x in_features.
struct Linear {
  std::variant<Matrix, MxfpTensor> weight;
  std::vector<float> bias;

  bool is_mxfp4() const { return std::holds_alternative<MxfpTensor>(weight); }
  std::size_t out_features() const;
  std::size_t in_features() const;
  std::size_t weight_bytes() const;
  bool operator==(const Linear&) const = default;
};

struct LayerNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  bool operator==(const LayerNormParams&) const = default;
};

struct DecoderLayer {
  LayerNormParams attn_norm;
  Linear wq, wk, wv, wo;
  LayerNormParams mlp_norm;
  Linear up, down;
  bool operator==(const DecoderLayer&) const = default;
};

// Execution knobs; not part of the model's identity and not serialized.
struct ExecOptions {
  // Path for MXFP4 linears. kReference dequantizes and runs the float oracle.
  GemmPath mxfp4_path = GemmPath::kInt8;
  // Extra reads of every float weight per linear call; emulates a target whose
  // decode step is bound by weight bandwidth.
  int float_weight_passes = 0;
  int threads = 0;
};

struct TinyLmModel {
  LmConfig config;
  Matrix token_embedding;     // vocab x d_model
  Matrix position_embedding;  // max_seq_len x d_model
  std::vector<DecoderLayer> layers;
  LayerNormParams final_norm;
  Linear lm_head;  // vocab x d_model
  ExecOptions exec;

  // Sum of linear weight storage (biases excluded).
  std::size_t linear_weight_bytes() const;
  // FNV-1a over config and every parameter's bytes, in declaration order.
  std::uint64_t checksum() const;
  // Parameter equality; exec is ignored.
  bool same_weights(const TinyLmModel& other) const;
};

// Per-layer keys and values for the processed prefix.
class KvCache {
 public:
  KvCache() = default;
  explicit KvCache(const LmConfig& config);

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return max_len_; }
  std::size_t layers() const { return keys_.size(); }

  std::span<const float> keys(std::size_t layer) const { return keys_[layer]; }
  std::span<const float> values(std::size_t layer) const { return values_[layer]; }

  // Drops everything past to_length. Throws kInvalidArgument if to_length >
  // length().
  void truncate(std::size_t to_length);

  bool operator==(const KvCache&) const = default;

 private:
  friend Matrix forward(const TinyLmModel& m, KvCache& cache, std::span<const TokenId> new_tokens);
  std::size_t length_ = 0;
  std::size_t max_len_ = 0;
  std::size_t width_ = 0;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
};

// Weights uniform in [-1/sqrt(d_model), 1/sqrt(d_model)] drawn from
// std::mt19937_64(seed); each draw keeps the top 24 bits as the mantissa of
// u in [0, 1) and maps it to (2u - 1) * bound. Norms start at gamma = 1,
// beta = 0.
TinyLmModel init_seeded(const LmConfig& config, std::uint64_t seed);

// Replaces every linear weight with its MXFP4 direct cast (k-blocked).
// Embeddings, norms and biases stay float. Already-cast linears are kept.
TinyLmModel direct_cast_mxfp4(const TinyLmModel& m);

// Runs new_tokens through the model in one pass, extending cache. Row i of
// the result holds the logits for the position after new_tokens[i].
// Throws kContextOverflow if the cache would exceed max_seq_len and
// kInvalidArgument for out-of-vocabulary ids.
Matrix forward(const TinyLmModel& m, KvCache& cache, std::span<const TokenId> new_tokens);

KvCache& rollback(KvCache& cache, std::size_t to_length);

// Argmax, ties to the lowest id.
TokenId greedy_next(std::span<const float> logits);

// Softmax probability of `token` under the row.
double token_probability(std::span<const float> logits, TokenId token);

// Numerically stable in-place softmax.
void softmax_inplace(std::span<float> row);

}  // namespace specqd

#endif  // SPECQD_TINYLM_HPP_
