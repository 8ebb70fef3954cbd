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

#include "cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <random>

#include <CLI11.hpp>

#include "specqd/analytics.hpp"
#include "specqd/artifacts_io.hpp"
#include "specqd/error.hpp"
#include "specqd/specdec.hpp"

namespace specqd::cli {
namespace {

namespace fs = std::filesystem;

struct InitArgs {
  LmConfig config;
  std::uint64_t seed = 1;
  std::string out;
};

struct QuantizeArgs {
  std::string in;
  std::string out;
};

struct GenerateArgs {
  std::string target;
  std::vector<std::string> drafts;
  std::vector<int> spec_lengths;
  std::vector<double> thresholds;
  std::size_t max_new = 32;
  std::string prompts;
  bool text = false;
  std::size_t num_prompts = 8;
  std::size_t prompt_len = 8;
  std::uint64_t seed = 1;
  std::string out = ".";
  std::string gemm_path = "int8";
  bool check_lossless = false;
  int target_slowdown = 0;
  int eos = kEosToken;
};

struct BenchArgs {
  std::vector<std::size_t> m = {4096};
  std::vector<std::size_t> n = {1, 8};
  std::vector<std::size_t> k = {4096};
  std::vector<std::string> paths = {"reference", "latescale_f32", "int8"};
  int reps = 9;
  int threads = 0;
  std::uint64_t seed = 1;
  std::string out;
};

struct SurfaceArgs {
  std::string mode = "single";
  std::size_t steps = 21;
  std::vector<double> speeds = {4.0, 20.0, 100.0};
  double spec_len = 4;
  double s1 = 4;
  double s2 = 100;
  std::string out;
};

struct RooflineArgs {
  std::string bench;
  double peak_bw_gbps = 0;
  double peak_gflops = 0;
  std::string out;
};

// Writes text to path, or to out when path is empty.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path);
  f << text;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%016" PRIx64, v);
  return buf;
}

int cmd_model_init(const InitArgs& a, std::ostream& out) {
  const TinyLmModel m = init_seeded(a.config, a.seed);
  save_model(a.out, m);
  out << "wrote " << a.out << " checksum " << hex64(m.checksum()) << '\n';
  return kExitOk;
}

int cmd_quantize(const QuantizeArgs& a, std::ostream& out) {
  const TinyLmModel in = load_model(a.in);
  const TinyLmModel q = direct_cast_mxfp4(in);
  save_model(a.out, q);
  const auto f32_bytes = [&] {
    std::size_t total = 0;
    auto add = [&](const Linear& l) { total += l.out_features() * l.in_features() * sizeof(float); };
    for (const auto& layer : in.layers) {
      for (const Linear* l : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.up, &layer.down}) add(*l);
    }
    add(in.lm_head);
    return total;
  }();
  const std::size_t mx_bytes = q.linear_weight_bytes();
  char ratio[32];
  std::snprintf(ratio, sizeof(ratio), "%.2f", static_cast<double>(f32_bytes) / static_cast<double>(mx_bytes));
  out << "wrote " << a.out << " checksum " << hex64(q.checksum()) << '\n'
      << "linear weights: " << f32_bytes << " bytes as f32, " << mx_bytes << " bytes as mxfp4, " << ratio
      << "x smaller\n";
  return kExitOk;
}

template <typename T>
std::vector<T> per_level(const std::vector<T>& given, std::size_t drafts, T fallback, const char* flag) {
  if (given.empty()) return std::vector<T>(drafts, fallback);
  if (given.size() == 1) return std::vector<T>(drafts, given[0]);
  if (given.size() != drafts) {
    throw Error(ErrorCode::kInvalidArgument, std::string(flag) + " given " + std::to_string(given.size()) +
                                                 " times for " + std::to_string(drafts) + " drafts");
  }
  return given;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out, std::ostream& err) {
  const GemmPath path = parse_gemm_path(a.gemm_path);
  std::vector<std::unique_ptr<TinyLmModel>> models;
  models.push_back(std::make_unique<TinyLmModel>(load_model(a.target)));
  for (const auto& d : a.drafts) models.push_back(std::make_unique<TinyLmModel>(load_model(d)));
  for (auto& m : models) m->exec.mxfp4_path = path;
  models[0]->exec.float_weight_passes = a.target_slowdown;

  const auto spec = per_level(a.spec_lengths, a.drafts.size(), kDefaultSpecLength, "--spec-len");
  const auto thr = per_level(a.thresholds, a.drafts.size(), kDefaultConfidenceThreshold, "--threshold");
  SpecTree tree;
  tree.levels.push_back({models[0].get()});
  for (std::size_t i = 0; i < a.drafts.size(); ++i) tree.levels.push_back({models[i + 1].get(), spec[i], thr[i]});
  tree.validate();

  std::vector<std::vector<TokenId>> prompts;
  if (!a.prompts.empty()) {
    prompts = load_prompts(a.prompts, a.text ? PromptMode::kText : PromptMode::kTokenIds);
  } else {
    std::mt19937_64 rng(a.seed);
    std::uniform_int_distribution<TokenId> byte(0, 255);
    for (std::size_t i = 0; i < a.num_prompts; ++i) {
      std::vector<TokenId> p(a.prompt_len);
      for (auto& t : p) t = byte(rng);
      prompts.push_back(std::move(p));
    }
  }
  if (prompts.empty()) throw Error(ErrorCode::kInvalidArgument, "no prompts");

  GenerateOptions opts;
  opts.max_new = a.max_new;
  if (a.eos >= 0) {
    opts.eos = a.eos;
  } else {
    opts.eos.reset();
  }

  const BenchmarkReport report = run_benchmark(tree, prompts, opts);
  // run_benchmark already decoded every prompt greedily; print that output.
  for (const auto& p : prompts) {
    const GenerationResult g = greedy_generate(*models[0], p, opts);
    if (a.text) {
      out << decode_bytes(g.tokens) << '\n';
    } else {
      for (std::size_t i = 0; i < g.tokens.size(); ++i) out << (i ? " " : "") << g.tokens[i];
      out << '\n';
    }
  }

  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_summary_json(dir / "summary.json", report);
  write_rounds_csv(dir / "rounds.csv", report.rounds);
  write_acceptance_csv(dir / "acceptance.csv", report);

  const char* mode = tree.depth() == 0 ? "greedy" : tree.depth() == 1 ? "speculative" : "multi-level speculative";
  char line[160];
  std::snprintf(line, sizeof(line), "%s decoding, %zu prompts, %zu tokens, geomean speedup %.3f", mode,
                prompts.size(), report.total_tokens, report.geomean_speedup);
  err << line;
  for (std::size_t l = 1; l < report.stats.per_level.size(); ++l) {
    std::snprintf(line, sizeof(line), ", alpha[%zu] %.3f", l, report.stats.per_level[l].alpha());
    err << line;
  }
  err << '\n';
  if (a.check_lossless && !report.lossless) {
    err << "error: speculative output differs from greedy decoding\n";
    return kExitNotLossless;
  }
  return kExitOk;
}

int cmd_gemm_bench(const BenchArgs& a, std::ostream& out) {
  std::string csv = gemm_bench_csv_header() + "\n";
  for (const auto& p : a.paths) {
    const GemmPath path = parse_gemm_path(p);
    for (std::size_t m : a.m)
      for (std::size_t k : a.k)
        for (std::size_t n : a.n) {
          const GemmBenchResult r = gemm_bench({m, n, k}, path, a.reps, {a.threads}, a.seed);
          csv += gemm_bench_csv_row(r) + "\n";
        }
  }
  emit(a.out, csv, out);
  return kExitOk;
}

int cmd_speedup_surface(const SurfaceArgs& a, std::ostream& out) {
  SurfaceGrid g;
  g.alpha_steps = a.steps;
  g.speeds = a.speeds;
  g.n = a.spec_len;
  g.s1 = a.s1;
  g.s2 = a.s2;
  SurfaceMode mode;
  if (a.mode == "single") {
    mode = SurfaceMode::kSingle;
  } else if (a.mode == "multi") {
    mode = SurfaceMode::kMulti;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "--mode must be single or multi");
  }
  emit(a.out, surface_csv(mode, g), out);
  return kExitOk;
}

int cmd_roofline(const RooflineArgs& a, std::ostream& out) {
  std::ifstream in(a.bench);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + a.bench);
  const auto bench = parse_gemm_bench_csv(in);
  const auto rows = roofline_table(bench, a.peak_bw_gbps * 1e9, a.peak_gflops * 1e9);
  emit(a.out, roofline_csv(rows), out);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"specqd: MXFP4 drafts for speculative decoding on CPUs"};
  app.require_subcommand(1);

  InitArgs init;
  auto* c_init = app.add_subcommand("model-init", "Write a seeded random model");
  c_init->add_option("--vocab", init.config.vocab_size, "Vocabulary size")->capture_default_str();
  c_init->add_option("--d-model", init.config.d_model, "Model width")->capture_default_str();
  c_init->add_option("--layers", init.config.n_layers, "Decoder layers")->capture_default_str();
  c_init->add_option("--heads", init.config.n_heads, "Attention heads")->capture_default_str();
  c_init->add_option("--d-ff", init.config.d_ff, "MLP hidden width")->capture_default_str();
  c_init->add_option("--max-seq", init.config.max_seq_len, "Context length")->capture_default_str();
  c_init->add_option("--seed", init.seed, "Initialization seed")->capture_default_str();
  c_init->add_option("--out", init.out, "Output model file")->required();

  QuantizeArgs quant;
  auto* c_quant = app.add_subcommand("quantize", "Direct-cast every linear weight of a model to MXFP4");
  c_quant->add_option("--in", quant.in, "Input model file")->required();
  c_quant->add_option("--out", quant.out, "Output model file")->required();

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand(
      "generate", "Greedy (1 model), speculative (2) or multi-level speculative (3+) generation");
  c_gen->add_option("--target", gen.target, "Target model file")->required();
  c_gen->add_option("--draft", gen.drafts, "Draft model file, repeat for deeper levels (level 1 first)")
      ->take_all()
      ->allow_extra_args(false);
  c_gen->add_option("--spec-len", gen.spec_lengths, "Speculation length per draft level (one value = all)")
      ->allow_extra_args(false);
  c_gen->add_option("--threshold", gen.thresholds, "Draft confidence threshold per level (one value = all)")
      ->allow_extra_args(false);
  c_gen->add_option("--max-new", gen.max_new, "Tokens to generate per prompt")->capture_default_str();
  c_gen->add_option("--prompts", gen.prompts, "Prompt file, one prompt per line (token ids unless --text)");
  c_gen->add_flag("--text", gen.text, "Treat prompt lines as raw text and print decoded text");
  c_gen->add_option("--num-prompts", gen.num_prompts, "Random prompts when --prompts is absent")
      ->capture_default_str();
  c_gen->add_option("--prompt-len", gen.prompt_len, "Length of random prompts")->capture_default_str();
  c_gen->add_option("--seed", gen.seed, "Seed for random prompts")->capture_default_str();
  c_gen->add_option("--out", gen.out, "Directory for summary.json, rounds.csv, acceptance.csv")
      ->capture_default_str();
  c_gen->add_option("--gemm-path", gen.gemm_path, "Kernel for MXFP4 weights: reference, latescale_f32, int8")
      ->capture_default_str();
  c_gen->add_flag("--check-lossless", gen.check_lossless, "Fail unless output equals greedy decoding");
  c_gen->add_option("--target-slowdown", gen.target_slowdown,
                    "Extra passes over the target's float weights per linear call")
      ->capture_default_str();
  c_gen->add_option("--eos", gen.eos, "End-of-sequence token id, negative to disable")->capture_default_str();

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("gemm-bench", "Time GEMM kernels and write CSV");
  c_bench->add_option("--m", bench.m, "Output rows (repeatable)")->capture_default_str();
  c_bench->add_option("--n", bench.n, "Activation columns (repeatable)")->capture_default_str();
  c_bench->add_option("--k", bench.k, "Reduction length (repeatable)")->capture_default_str();
  c_bench->add_option("--gemm-path", bench.paths, "Kernels to time (repeatable)")->capture_default_str();
  c_bench->add_option("--reps", bench.reps, "Timed repetitions, at least 9")->capture_default_str();
  c_bench->add_option("--threads", bench.threads, "Kernel threads, 0 = automatic")->capture_default_str();
  c_bench->add_option("--seed", bench.seed, "Data seed")->capture_default_str();
  c_bench->add_option("--out", bench.out, "CSV file, stdout when omitted");

  SurfaceArgs surf;
  auto* c_surf = app.add_subcommand("speedup-surface", "Write the analytic speedup surface as CSV");
  c_surf->add_option("--mode", surf.mode, "single or multi")->capture_default_str();
  c_surf->add_option("--steps", surf.steps, "Alpha grid points over [0, 1]")->capture_default_str();
  c_surf->add_option("--speed", surf.speeds, "Draft speed S for single mode (repeatable)")->capture_default_str();
  c_surf->add_option("--spec-len", surf.spec_len, "Speculation length N")->capture_default_str();
  c_surf->add_option("--s1", surf.s1, "Level-1 draft speed for multi mode")->capture_default_str();
  c_surf->add_option("--s2", surf.s2, "Level-2 draft speed for multi mode")->capture_default_str();
  c_surf->add_option("--out", surf.out, "CSV file, stdout when omitted");

  RooflineArgs roof;
  auto* c_roof = app.add_subcommand("roofline", "Place gemm-bench results on a roofline");
  c_roof->add_option("--bench", roof.bench, "CSV written by gemm-bench")->required();
  c_roof->add_option("--peak-bw", roof.peak_bw_gbps, "Peak memory bandwidth, GB/s")->required();
  c_roof->add_option("--peak-gflops", roof.peak_gflops, "Peak fp32 throughput, GFLOP/s")->required();
  c_roof->add_option("--out", roof.out, "CSV file, stdout when omitted");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    } else {
      err << app.help();
    }
    return kExitUsage;
  }

  try {
    if (c_init->parsed()) return cmd_model_init(init, out);
    if (c_quant->parsed()) return cmd_quantize(quant, out);
    if (c_gen->parsed()) return cmd_generate(gen, out, err);
    if (c_bench->parsed()) return cmd_gemm_bench(bench, out);
    if (c_surf->parsed()) return cmd_speedup_surface(surf, out);
    if (c_roof->parsed()) return cmd_roofline(roof, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace specqd::cli
