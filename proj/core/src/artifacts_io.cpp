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

#include "specqd/artifacts_io.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "specqd/error.hpp"

namespace specqd {
namespace {

constexpr std::array<char, 4> kTensorMagic = {'S', 'Q', 'D', 'T'};
constexpr std::array<char, 4> kModelMagic = {'S', 'Q', 'D', 'M'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw Error(ErrorCode::kIo, "write failed");
  }
  template <typename T>
  void le(T v) {
    std::array<unsigned char, sizeof(T)> b{};
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    raw(b.data(), b.size());
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void raw(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw Error(ErrorCode::kTruncated, std::string("stream ended inside ") + what);
    }
  }
  template <typename T>
  T le(const char* what) {
    std::array<unsigned char, sizeof(T)> b{};
    raw(b.data(), b.size(), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>(v | (static_cast<T>(b[i]) << (8 * i)));
    return v;
  }

 private:
  std::istream& in_;
};

void write_matrix_payload(Writer& w, const Matrix& m) {
  if constexpr (std::endian::native == std::endian::little) {
    w.raw(m.data.data(), m.data.size() * sizeof(float));
  } else {
    for (float v : m.data) w.f32(v);
  }
}

Matrix vector_tensor(const std::vector<float>& v) {
  Matrix m(1, v.size());
  m.data = v;
  return m;
}

struct Section {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  bool weight;  // may be stored as mxfp4
};

std::vector<Section> expected_sections(const LmConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const auto vocab = static_cast<std::size_t>(c.vocab_size);
  std::vector<Section> s;
  s.push_back({"token_embedding", vocab, d, false});
  s.push_back({"position_embedding", static_cast<std::size_t>(c.max_seq_len), d, false});
  auto linear = [&](const std::string& name, std::size_t out, std::size_t in) {
    s.push_back({name + ".weight", out, in, true});
    s.push_back({name + ".bias", 1, out, false});
  };
  auto norm = [&](const std::string& name) {
    s.push_back({name + ".gamma", 1, d, false});
    s.push_back({name + ".beta", 1, d, false});
  };
  for (int i = 0; i < c.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    norm(p + "attn_norm");
    linear(p + "wq", d, d);
    linear(p + "wk", d, d);
    linear(p + "wv", d, d);
    linear(p + "wo", d, d);
    norm(p + "mlp_norm");
    linear(p + "up", ff, d);
    linear(p + "down", d, ff);
  }
  norm("final_norm");
  linear("lm_head", vocab, d);
  return s;
}

std::vector<std::pair<std::string, Tensor>> model_tensors(const TinyLmModel& m) {
  std::vector<std::pair<std::string, Tensor>> t;
  t.emplace_back("token_embedding", m.token_embedding);
  t.emplace_back("position_embedding", m.position_embedding);
  auto linear = [&](const std::string& name, const Linear& l) {
    std::visit([&](const auto& w) { t.emplace_back(name + ".weight", w); }, l.weight);
    t.emplace_back(name + ".bias", vector_tensor(l.bias));
  };
  auto norm = [&](const std::string& name, const LayerNormParams& p) {
    t.emplace_back(name + ".gamma", vector_tensor(p.gamma));
    t.emplace_back(name + ".beta", vector_tensor(p.beta));
  };
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    const DecoderLayer& l = m.layers[i];
    norm(p + "attn_norm", l.attn_norm);
    linear(p + "wq", l.wq);
    linear(p + "wk", l.wk);
    linear(p + "wv", l.wv);
    linear(p + "wo", l.wo);
    norm(p + "mlp_norm", l.mlp_norm);
    linear(p + "up", l.up);
    linear(p + "down", l.down);
  }
  norm("final_norm", m.final_norm);
  linear("lm_head", m.lm_head);
  return t;
}

std::pair<std::size_t, std::size_t> shape_of(const Tensor& t) {
  if (const auto* m = std::get_if<Matrix>(&t)) return {m->rows, m->cols};
  const auto& q = std::get<MxfpTensor>(t);
  return {q.rows(), q.cols()};
}

}  // namespace

std::uint64_t expected_payload_bytes(TensorDtype dtype, std::uint64_t rows, std::uint64_t cols) {
  if (dtype == TensorDtype::kF32) return rows * cols * 4;
  const std::uint64_t blocks = rows * ((cols + kBlockSize - 1) / kBlockSize);
  return blocks * (kBlockCodeBytes + 1);
}

void save_tensor(std::ostream& out, const Tensor& t) {
  Writer w(out);
  w.raw(kTensorMagic.data(), kTensorMagic.size());
  w.le<std::uint32_t>(kTensorFormatVersion);
  if (const auto* m = std::get_if<Matrix>(&t)) {
    w.le<std::uint8_t>(static_cast<std::uint8_t>(TensorDtype::kF32));
    w.le<std::uint8_t>(static_cast<std::uint8_t>(MxfpLayout::kPlain));
    w.le<std::uint16_t>(0);
    w.le<std::uint64_t>(m->rows);
    w.le<std::uint64_t>(m->cols);
    w.le<std::uint64_t>(expected_payload_bytes(TensorDtype::kF32, m->rows, m->cols));
    write_matrix_payload(w, *m);
  } else {
    const auto& q = std::get<MxfpTensor>(t);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(TensorDtype::kMxfp4));
    w.le<std::uint8_t>(static_cast<std::uint8_t>(q.layout()));
    w.le<std::uint16_t>(0);
    w.le<std::uint64_t>(q.rows());
    w.le<std::uint64_t>(q.cols());
    w.le<std::uint64_t>(expected_payload_bytes(TensorDtype::kMxfp4, q.rows(), q.cols()));
    w.raw(q.packed_codes().data(), q.packed_codes().size());
    w.raw(q.scales().data(), q.scales().size());
  }
}

Tensor load_tensor(std::istream& in) {
  Reader r(in);
  std::array<char, 4> magic{};
  r.raw(magic.data(), magic.size(), "tensor magic");
  if (magic != kTensorMagic) throw Error(ErrorCode::kBadMagic, "not a tensor record");
  const auto version = r.le<std::uint32_t>("tensor header");
  if (version != kTensorFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch, "tensor version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kTensorFormatVersion));
  }
  TensorHeader h;
  const auto dtype = r.le<std::uint8_t>("tensor header");
  const auto layout = r.le<std::uint8_t>("tensor header");
  r.le<std::uint16_t>("tensor header");
  h.rows = r.le<std::uint64_t>("tensor header");
  h.cols = r.le<std::uint64_t>("tensor header");
  h.payload_bytes = r.le<std::uint64_t>("tensor header");
  if (dtype > 1) throw Error(ErrorCode::kPayloadMismatch, "unknown dtype " + std::to_string(dtype));
  if (layout > 1) throw Error(ErrorCode::kPayloadMismatch, "unknown layout " + std::to_string(layout));
  h.dtype = static_cast<TensorDtype>(dtype);
  h.layout = static_cast<MxfpLayout>(layout);
  // Guards the size arithmetic below against absurd headers.
  constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 31;
  if (h.rows > kMaxDim || h.cols > kMaxDim) throw Error(ErrorCode::kPayloadMismatch, "tensor dimensions too large");
  const std::uint64_t expected = expected_payload_bytes(h.dtype, h.rows, h.cols);
  if (h.payload_bytes != expected) {
    throw Error(ErrorCode::kPayloadMismatch, "payload of " + std::to_string(h.payload_bytes) + " bytes for a " +
                                                 std::to_string(h.rows) + "x" + std::to_string(h.cols) +
                                                 " tensor, expected " + std::to_string(expected));
  }

  if (h.dtype == TensorDtype::kF32) {
    Matrix m(h.rows, h.cols);
    if constexpr (std::endian::native == std::endian::little) {
      r.raw(m.data.data(), m.data.size() * sizeof(float), "f32 payload");
    } else {
      for (auto& v : m.data) v = std::bit_cast<float>(r.le<std::uint32_t>("f32 payload"));
    }
    return m;
  }
  MxfpTensor q(h.rows, h.cols, h.layout);
  r.raw(q.packed_codes().data(), q.packed_codes().size(), "mxfp4 codes");
  r.raw(q.scales().data(), q.scales().size(), "mxfp4 scales");
  return q;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  save_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return load_tensor(in);
}

std::string config_to_text(const LmConfig& c) {
  char eps[64];
  std::snprintf(eps, sizeof(eps), "%.9g", static_cast<double>(c.norm_epsilon));
  std::ostringstream s;
  s << "vocab_size=" << c.vocab_size << '\n'
    << "d_model=" << c.d_model << '\n'
    << "n_layers=" << c.n_layers << '\n'
    << "n_heads=" << c.n_heads << '\n'
    << "d_ff=" << c.d_ff << '\n'
    << "max_seq_len=" << c.max_seq_len << '\n'
    << "norm_epsilon=" << eps << '\n';
  return s.str();
}

LmConfig config_from_text(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfigMismatch, "config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::kConfigMismatch, std::string("config missing ") + key);
    return it->second;
  };
  LmConfig c;
  try {
    c.vocab_size = std::stoi(get("vocab_size"));
    c.d_model = std::stoi(get("d_model"));
    c.n_layers = std::stoi(get("n_layers"));
    c.n_heads = std::stoi(get("n_heads"));
    c.d_ff = std::stoi(get("d_ff"));
    c.max_seq_len = std::stoi(get("max_seq_len"));
    c.norm_epsilon = std::stof(get("norm_epsilon"));
  } catch (const std::logic_error& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) throw *err;
    throw Error(ErrorCode::kConfigMismatch, std::string("unparsable config value: ") + e.what());
  }
  if (kv.size() != 7) throw Error(ErrorCode::kConfigMismatch, "config has unknown keys");
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigMismatch, e.what());
  }
  return c;
}

void save_model(std::ostream& out, const TinyLmModel& m) {
  Writer w(out);
  w.raw(kModelMagic.data(), kModelMagic.size());
  w.le<std::uint32_t>(kModelFormatVersion);
  const std::string cfg = config_to_text(m.config);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.raw(cfg.data(), cfg.size());
  const auto tensors = model_tensors(m);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    save_tensor(out, t);
  }
}

TinyLmModel load_model(std::istream& in) {
  Reader r(in);
  std::array<char, 4> magic{};
  r.raw(magic.data(), magic.size(), "model magic");
  if (magic != kModelMagic) throw Error(ErrorCode::kBadMagic, "not a model file");
  const auto version = r.le<std::uint32_t>("model header");
  if (version != kModelFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch, "model version " + std::to_string(version));
  }
  const auto cfg_len = r.le<std::uint32_t>("model header");
  if (cfg_len > (1u << 16)) throw Error(ErrorCode::kConfigMismatch, "config section too large");
  std::string cfg(cfg_len, '\0');
  r.raw(cfg.data(), cfg.size(), "config");
  const LmConfig config = config_from_text(cfg);

  const auto count = r.le<std::uint32_t>("model header");
  std::map<std::string, Tensor> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint16_t>("section name");
    std::string name(len, '\0');
    r.raw(name.data(), name.size(), "section name");
    Tensor t = load_tensor(in);
    if (!loaded.emplace(name, std::move(t)).second) {
      throw Error(ErrorCode::kConfigMismatch, "duplicate section " + name);
    }
  }

  const auto sections = expected_sections(config);
  for (const auto& s : sections) {
    const auto it = loaded.find(s.name);
    if (it == loaded.end()) throw Error(ErrorCode::kMissingSection, "missing tensor " + s.name);
    if (shape_of(it->second) != std::make_pair(s.rows, s.cols)) {
      throw Error(ErrorCode::kConfigMismatch, "tensor " + s.name + " has the wrong shape");
    }
    if (!s.weight && !std::holds_alternative<Matrix>(it->second)) {
      throw Error(ErrorCode::kConfigMismatch, "tensor " + s.name + " must be f32");
    }
  }
  if (loaded.size() != sections.size()) throw Error(ErrorCode::kConfigMismatch, "model file has unknown sections");

  auto take_matrix = [&](const std::string& name) { return std::get<Matrix>(std::move(loaded.at(name))); };
  auto take_vector = [&](const std::string& name) { return take_matrix(name).data; };
  auto take_linear = [&](const std::string& name) {
    Linear l;
    l.weight = std::move(loaded.at(name + ".weight"));
    l.bias = take_vector(name + ".bias");
    return l;
  };
  auto take_norm = [&](const std::string& name) {
    return LayerNormParams{take_vector(name + ".gamma"), take_vector(name + ".beta")};
  };

  TinyLmModel m;
  m.config = config;
  m.token_embedding = take_matrix("token_embedding");
  m.position_embedding = take_matrix("position_embedding");
  m.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    DecoderLayer& l = m.layers[i];
    l.attn_norm = take_norm(p + "attn_norm");
    l.wq = take_linear(p + "wq");
    l.wk = take_linear(p + "wk");
    l.wv = take_linear(p + "wv");
    l.wo = take_linear(p + "wo");
    l.mlp_norm = take_norm(p + "mlp_norm");
    l.up = take_linear(p + "up");
    l.down = take_linear(p + "down");
  }
  m.final_norm = take_norm("final_norm");
  m.lm_head = take_linear("lm_head");
  return m;
}

void save_model(const std::filesystem::path& path, const TinyLmModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  save_model(out, m);
}

TinyLmModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return load_model(in);
}

std::vector<TokenId> encode_bytes(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
  return out;
}

std::string decode_bytes(const std::vector<TokenId>& tokens) {
  std::string out;
  for (TokenId t : tokens) {
    if (t >= 0 && t < 256) {
      out.push_back(static_cast<char>(t));
    } else if (t == kBosToken) {
      out += "<bos>";
    } else if (t == kEosToken) {
      out += "<eos>";
    } else {
      out += "<" + std::to_string(t) + ">";
    }
  }
  return out;
}

std::vector<std::vector<TokenId>> load_prompts(const std::filesystem::path& path, PromptMode mode) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<std::vector<TokenId>> prompts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (mode == PromptMode::kText) {
      if (!line.empty()) prompts.push_back(encode_bytes(line));
      continue;
    }
    std::istringstream ss(line);
    std::vector<TokenId> p;
    std::string tok;
    while (ss >> tok) {
      std::size_t used = 0;
      long v = 0;
      try {
        v = std::stol(tok, &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (used != tok.size() || v < 0 || v > INT32_MAX) {
        throw Error(ErrorCode::kInvalidArgument,
                    path.string() + ":" + std::to_string(line_no) + ": bad token id '" + tok + "'");
      }
      p.push_back(static_cast<TokenId>(v));
    }
    if (!p.empty()) prompts.push_back(std::move(p));
  }
  return prompts;
}

}  // namespace specqd
