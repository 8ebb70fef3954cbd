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

#include <benchmark/benchmark.h>

#include <random>

#include "specqd/mxfp4.hpp"
#include "specqd/qgemm.hpp"
#include "specqd/specdec.hpp"
#include "specqd/tinylm.hpp"

namespace specqd {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  Matrix m(r, c);
  for (auto& v : m.data) v = d(rng);
  return m;
}

// Args: M = K, N, threads.
void BM_GemmReference(benchmark::State& state) {
  const auto mk = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const Matrix w = random_matrix(mk, mk, 1);
  const Matrix x = random_matrix(n, mk, 2);
  const GemmOptions opts{static_cast<int>(state.range(2))};
  for (auto _ : state) benchmark::DoNotOptimize(gemm_reference_tokens(w, x, opts));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() *
                                                    gemm_compulsory_bytes({mk, n, mk}, GemmPath::kReference)));
}

void BM_GemmLateScale(benchmark::State& state) {
  const auto mk = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const MxfpTensor w = quantize_direct_cast(random_matrix(mk, mk, 1));
  const Matrix x = random_matrix(n, mk, 2);
  const GemmOptions opts{static_cast<int>(state.range(2))};
  for (auto _ : state) benchmark::DoNotOptimize(gemm_mxfp4_latescale_f32_tokens(w, x, opts));
  state.SetBytesProcessed(static_cast<std::int64_t>(
      state.iterations() * gemm_compulsory_bytes({mk, n, mk}, GemmPath::kLateScaleF32)));
}

void BM_GemmInt8(benchmark::State& state) {
  const auto mk = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const MxfpTensor w = quantize_direct_cast(random_matrix(mk, mk, 1));
  const Matrix x = random_matrix(n, mk, 2);
  const GemmOptions opts{static_cast<int>(state.range(2))};
  for (auto _ : state) {
    // Activation quantization is part of every int8 call in a model.
    const QuantizedActivationPanel a = quantize_activations_tokens(x);
    benchmark::DoNotOptimize(gemm_mxfp4_int8_tokens(w, a, opts));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() *
                                                    gemm_compulsory_bytes({mk, n, mk}, GemmPath::kInt8)));
}

void gemm_args(benchmark::internal::Benchmark* b) {
  for (int mk : {256, 1024, 4096})
    for (int n : {1, 8})
      for (int t : {1, 0}) b->Args({mk, n, t});
}

BENCHMARK(BM_GemmReference)->Apply(gemm_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemmLateScale)->Apply(gemm_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemmInt8)->Apply(gemm_args)->Unit(benchmark::kMicrosecond);

void BM_QuantizeDirectCast(benchmark::State& state) {
  const Matrix w = random_matrix(1024, 1024, 3);
  for (auto _ : state) benchmark::DoNotOptimize(quantize_direct_cast(w));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * w.size()));
}
BENCHMARK(BM_QuantizeDirectCast)->Unit(benchmark::kMillisecond);

LmConfig bench_config() {
  LmConfig c;
  c.d_model = 128;
  c.n_layers = 4;
  c.d_ff = 512;
  return c;
}

// Args: tokens per call, 0 = float weights / 1 = MXFP4 int8 / 2 = MXFP4 late-scale.
void BM_Forward(benchmark::State& state) {
  TinyLmModel m = init_seeded(bench_config(), 1);
  if (state.range(1) > 0) {
    m = direct_cast_mxfp4(m);
    m.exec.mxfp4_path = state.range(1) == 1 ? GemmPath::kInt8 : GemmPath::kLateScaleF32;
  }
  const std::vector<TokenId> prefix(32, 65);
  const std::vector<TokenId> step(static_cast<std::size_t>(state.range(0)), 66);
  KvCache cache(m.config);
  forward(m, cache, prefix);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(m, cache, step));
    cache.truncate(prefix.size());
  }
}
BENCHMARK(BM_Forward)->ArgsProduct({{1, 2, 9}, {0, 1, 2}})->Unit(benchmark::kMicrosecond);

void BM_SpeculativeGenerate(benchmark::State& state) {
  const TinyLmModel target = init_seeded(bench_config(), 1);
  const TinyLmModel draft = direct_cast_mxfp4(target);
  const SpecTree tree{{{&target}, {&draft, static_cast<int>(state.range(0)), 0.0}}};
  const std::vector<TokenId> prompt = {1, 2, 3, 4, 5, 6, 7, 8};
  for (auto _ : state) benchmark::DoNotOptimize(speculative_generate(tree, prompt, {32, std::nullopt}));
}
BENCHMARK(BM_SpeculativeGenerate)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_GreedyGenerate(benchmark::State& state) {
  const TinyLmModel target = init_seeded(bench_config(), 1);
  const std::vector<TokenId> prompt = {1, 2, 3, 4, 5, 6, 7, 8};
  for (auto _ : state) benchmark::DoNotOptimize(greedy_generate(target, prompt, {32, std::nullopt}));
}
BENCHMARK(BM_GreedyGenerate)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace specqd

BENCHMARK_MAIN();
