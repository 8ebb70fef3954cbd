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

#include "specqd/tinylm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "specqd/error.hpp"

namespace specqd {
namespace {

class UniformInit {
 public:
  UniformInit(std::uint64_t seed, float bound) : rng_(seed), bound_(bound) {}

  float next() {
    const auto top = static_cast<std::uint32_t>(rng_() >> 40);  // 24 bits
    const float u = std::ldexp(static_cast<float>(top), -24);
    return (2.0f * u - 1.0f) * bound_;
  }

  Matrix matrix(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = next();
    return m;
  }

  std::vector<float> vector(std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = next();
    return v;
  }

  Linear linear(std::size_t out, std::size_t in) {
    Linear l;
    l.weight = matrix(out, in);
    l.bias = vector(out);
    return l;
  }

 private:
  std::mt19937_64 rng_;
  float bound_;
};

LayerNormParams unit_norm(std::size_t d) {
  return LayerNormParams{std::vector<float>(d, 1.0f), std::vector<float>(d, 0.0f)};
}

Matrix layer_norm(const Matrix& x, const LayerNormParams& p, float eps) {
  Matrix out(x.rows, x.cols);
  const auto d = static_cast<float>(x.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const auto row = x.row(t);
    float mean = 0.0f;
    for (float v : row) mean += v;
    mean /= d;
    float var = 0.0f;
    for (float v : row) var += (v - mean) * (v - mean);
    var /= d;
    const float inv = 1.0f / std::sqrt(var + eps);
    auto o = out.row(t);
    for (std::size_t i = 0; i < x.cols; ++i) o[i] = (row[i] - mean) * inv * p.gamma[i] + p.beta[i];
  }
  return out;
}

Matrix apply_linear(const Linear& l, const Matrix& x, const ExecOptions& exec) {
  const GemmOptions opts{exec.threads};
  Matrix y;
  if (const auto* w = std::get_if<Matrix>(&l.weight)) {
    if (exec.float_weight_passes > 0) {
      volatile float sink = stream_weights(w->data, exec.float_weight_passes);
      (void)sink;
    }
    y = gemm_reference_tokens(*w, x, opts);
  } else {
    const auto& wq = std::get<MxfpTensor>(l.weight);
    switch (exec.mxfp4_path) {
      case GemmPath::kInt8:
        y = gemm_mxfp4_int8_tokens(wq, quantize_activations_tokens(x), opts);
        break;
      case GemmPath::kLateScaleF32:
        y = gemm_mxfp4_latescale_f32_tokens(wq, x, opts);
        break;
      case GemmPath::kReference:
        y = gemm_reference_tokens(dequantize(wq), x, opts);
        break;
    }
  }
  for (std::size_t t = 0; t < y.rows; ++t) {
    auto row = y.row(t);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] += l.bias[i];
  }
  return y;
}

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f)); }

class Fnv1a {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 1099511628211ull;
    }
  }
  template <typename T>
  void value(const T& v) {
    bytes(&v, sizeof(v));
  }
  void floats(std::span<const float> v) { bytes(v.data(), v.size() * sizeof(float)); }
  void linear(const Linear& l) {
    if (const auto* w = std::get_if<Matrix>(&l.weight)) {
      value(std::uint8_t{0});
      floats(w->data);
    } else {
      const auto& q = std::get<MxfpTensor>(l.weight);
      value(std::uint8_t{1});
      value(static_cast<std::uint8_t>(q.layout()));
      bytes(q.packed_codes().data(), q.packed_codes().size());
      bytes(q.scales().data(), q.scales().size());
    }
    floats(l.bias);
  }
  void norm(const LayerNormParams& p) {
    floats(p.gamma);
    floats(p.beta);
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 14695981039346656037ull;
};

}  // namespace

void LmConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kInvalidArgument, "LmConfig: " + why); };
  if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq_len <= 0) {
    fail("all sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    fail("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
         std::to_string(n_heads) + ")");
  }
  if (!(norm_epsilon > 0.0f) || !std::isfinite(norm_epsilon)) fail("norm_epsilon must be positive");
}

std::size_t Linear::out_features() const {
  return std::visit([](const auto& w) -> std::size_t {
    if constexpr (std::is_same_v<std::decay_t<decltype(w)>, Matrix>) return w.rows;
    else return w.rows();
  }, weight);
}

std::size_t Linear::in_features() const {
  return std::visit([](const auto& w) -> std::size_t {
    if constexpr (std::is_same_v<std::decay_t<decltype(w)>, Matrix>) return w.cols;
    else return w.cols();
  }, weight);
}

std::size_t Linear::weight_bytes() const {
  if (const auto* w = std::get_if<Matrix>(&weight)) return w->size() * sizeof(float);
  return std::get<MxfpTensor>(weight).storage_bytes();
}

std::size_t TinyLmModel::linear_weight_bytes() const {
  std::size_t total = lm_head.weight_bytes();
  for (const auto& l : layers) {
    total += l.wq.weight_bytes() + l.wk.weight_bytes() + l.wv.weight_bytes() + l.wo.weight_bytes() +
             l.up.weight_bytes() + l.down.weight_bytes();
  }
  return total;
}

std::uint64_t TinyLmModel::checksum() const {
  Fnv1a h;
  h.value(config.vocab_size);
  h.value(config.d_model);
  h.value(config.n_layers);
  h.value(config.n_heads);
  h.value(config.d_ff);
  h.value(config.max_seq_len);
  h.value(config.norm_epsilon);
  h.floats(token_embedding.data);
  h.floats(position_embedding.data);
  for (const auto& l : layers) {
    h.norm(l.attn_norm);
    h.linear(l.wq);
    h.linear(l.wk);
    h.linear(l.wv);
    h.linear(l.wo);
    h.norm(l.mlp_norm);
    h.linear(l.up);
    h.linear(l.down);
  }
  h.norm(final_norm);
  h.linear(lm_head);
  return h.digest();
}

bool TinyLmModel::same_weights(const TinyLmModel& o) const {
  return config == o.config && token_embedding == o.token_embedding &&
         position_embedding == o.position_embedding && layers == o.layers && final_norm == o.final_norm &&
         lm_head == o.lm_head && checksum() == o.checksum();
}

KvCache::KvCache(const LmConfig& config)
    : max_len_(static_cast<std::size_t>(config.max_seq_len)),
      width_(static_cast<std::size_t>(config.d_model)),
      keys_(static_cast<std::size_t>(config.n_layers)),
      values_(static_cast<std::size_t>(config.n_layers)) {}

void KvCache::truncate(std::size_t to_length) {
  if (to_length > length_) {
    throw Error(ErrorCode::kInvalidArgument, "rollback to " + std::to_string(to_length) +
                                                 " beyond cache length " + std::to_string(length_));
  }
  length_ = to_length;
  for (auto& k : keys_) k.resize(length_ * width_);
  for (auto& v : values_) v.resize(length_ * width_);
}

KvCache& rollback(KvCache& cache, std::size_t to_length) {
  cache.truncate(to_length);
  return cache;
}

TinyLmModel init_seeded(const LmConfig& config, std::uint64_t seed) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  const auto vocab = static_cast<std::size_t>(config.vocab_size);
  UniformInit init(seed, 1.0f / std::sqrt(static_cast<float>(config.d_model)));

  TinyLmModel m;
  m.config = config;
  m.token_embedding = init.matrix(vocab, d);
  m.position_embedding = init.matrix(static_cast<std::size_t>(config.max_seq_len), d);
  m.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& l : m.layers) {
    l.attn_norm = unit_norm(d);
    l.wq = init.linear(d, d);
    l.wk = init.linear(d, d);
    l.wv = init.linear(d, d);
    l.wo = init.linear(d, d);
    l.mlp_norm = unit_norm(d);
    l.up = init.linear(ff, d);
    l.down = init.linear(d, ff);
  }
  m.final_norm = unit_norm(d);
  m.lm_head = init.linear(vocab, d);
  return m;
}

TinyLmModel direct_cast_mxfp4(const TinyLmModel& m) {
  TinyLmModel out = m;
  auto cast = [](Linear& l) {
    if (const auto* w = std::get_if<Matrix>(&l.weight)) {
      l.weight = quantize_direct_cast(*w, MxfpLayout::kKBlocked);
    }
  };
  for (auto& l : out.layers) {
    for (Linear* lin : {&l.wq, &l.wk, &l.wv, &l.wo, &l.up, &l.down}) cast(*lin);
  }
  cast(out.lm_head);
  return out;
}

Matrix forward(const TinyLmModel& m, KvCache& cache, std::span<const TokenId> new_tokens) {
  const LmConfig& cfg = m.config;
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t n_new = new_tokens.size();
  const std::size_t start = cache.length_;
  if (cache.keys_.size() != static_cast<std::size_t>(cfg.n_layers) || cache.width_ != d) {
    throw Error(ErrorCode::kShapeMismatch, "KvCache was built for a different model config");
  }
  if (start + n_new > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw Error(ErrorCode::kContextOverflow, "cache length " + std::to_string(start) + " + " +
                                                 std::to_string(n_new) + " new tokens exceeds max_seq_len " +
                                                 std::to_string(cfg.max_seq_len));
  }
  for (TokenId t : new_tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(t) + " out of vocabulary");
    }
  }
  if (n_new == 0) return Matrix(0, static_cast<std::size_t>(cfg.vocab_size));

  Matrix x(n_new, d);
  for (std::size_t t = 0; t < n_new; ++t) {
    const auto tok = m.token_embedding.row(static_cast<std::size_t>(new_tokens[t]));
    const auto pos = m.position_embedding.row(start + t);
    auto row = x.row(t);
    for (std::size_t i = 0; i < d; ++i) row[i] = tok[i] + pos[i];
  }

  const auto n_heads = static_cast<std::size_t>(cfg.n_heads);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
  std::vector<float> scores;

  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const DecoderLayer& layer = m.layers[li];
    const Matrix h = layer_norm(x, layer.attn_norm, cfg.norm_epsilon);
    const Matrix q = apply_linear(layer.wq, h, m.exec);
    const Matrix k = apply_linear(layer.wk, h, m.exec);
    const Matrix v = apply_linear(layer.wv, h, m.exec);

    auto& kc = cache.keys_[li];
    auto& vc = cache.values_[li];
    kc.resize(start * d);
    vc.resize(start * d);
    kc.insert(kc.end(), k.data.begin(), k.data.end());
    vc.insert(vc.end(), v.data.begin(), v.data.end());

    Matrix attn(n_new, d);
    for (std::size_t t = 0; t < n_new; ++t) {
      const std::size_t visible = start + t + 1;
      scores.resize(visible);
      for (std::size_t hh = 0; hh < n_heads; ++hh) {
        const float* qv = q.data.data() + t * d + hh * hd;
        for (std::size_t j = 0; j < visible; ++j) {
          const float* kv = kc.data() + j * d + hh * hd;
          float s = 0.0f;
          for (std::size_t i = 0; i < hd; ++i) s += qv[i] * kv[i];
          scores[j] = s * inv_sqrt;
        }
        softmax_inplace(scores);
        float* out = attn.data.data() + t * d + hh * hd;
        for (std::size_t j = 0; j < visible; ++j) {
          const float* vv = vc.data() + j * d + hh * hd;
          const float p = scores[j];
          for (std::size_t i = 0; i < hd; ++i) out[i] += p * vv[i];
        }
      }
    }
    const Matrix o = apply_linear(layer.wo, attn, m.exec);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += o.data[i];

    const Matrix h2 = layer_norm(x, layer.mlp_norm, cfg.norm_epsilon);
    Matrix u = apply_linear(layer.up, h2, m.exec);
    for (auto& val : u.data) val = gelu(val);
    const Matrix dn = apply_linear(layer.down, u, m.exec);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += dn.data[i];
  }
  cache.length_ = start + n_new;

  const Matrix xn = layer_norm(x, m.final_norm, cfg.norm_epsilon);
  return apply_linear(m.lm_head, xn, m.exec);
}

TokenId greedy_next(std::span<const float> logits) {
  if (logits.empty()) throw Error(ErrorCode::kInvalidArgument, "greedy_next of empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

double token_probability(std::span<const float> logits, TokenId token) {
  if (token < 0 || static_cast<std::size_t>(token) >= logits.size()) {
    throw Error(ErrorCode::kInvalidArgument, "token outside logits row");
  }
  const float mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (float l : logits) denom += std::exp(static_cast<double>(l) - mx);
  return std::exp(static_cast<double>(logits[static_cast<std::size_t>(token)]) - mx) / denom;
}

void softmax_inplace(std::span<float> row) {
  if (row.empty()) return;
  const float mx = *std::max_element(row.begin(), row.end());
  float sum = 0.0f;
  for (auto& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const float inv = 1.0f / sum;
  for (auto& v : row) v *= inv;
}

}  // namespace specqd
