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

#include "specqd/specdec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "specqd/error.hpp"

namespace specqd {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

}  // namespace

void SpecTree::validate() const {
  if (levels.empty()) throw Error(ErrorCode::kInvalidArgument, "SpecTree has no target");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const LevelSpec& l = levels[i];
    if (l.model == nullptr) {
      throw Error(ErrorCode::kInvalidArgument, "level " + std::to_string(i) + " has no model");
    }
    if (i > 0 && l.spec_length < 1) {
      throw Error(ErrorCode::kInvalidArgument, "level " + std::to_string(i) + " spec_length < 1");
    }
    if (!(l.confidence_threshold >= 0.0 && l.confidence_threshold <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "level " + std::to_string(i) + " threshold outside [0, 1]");
    }
    if (l.model->config.vocab_size != levels[0].model->config.vocab_size) {
      throw Error(ErrorCode::kInvalidArgument, "level " + std::to_string(i) + " vocabulary differs from target");
    }
  }
}

double LevelStats::alpha() const {
  return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
}

void AcceptanceStats::merge(const AcceptanceStats& other) {
  if (per_level.size() < other.per_level.size()) per_level.resize(other.per_level.size());
  if (model_ms.size() < other.model_ms.size()) model_ms.resize(other.model_ms.size());
  if (forward_calls.size() < other.forward_calls.size()) forward_calls.resize(other.forward_calls.size());
  for (std::size_t i = 0; i < other.per_level.size(); ++i) {
    per_level[i].proposed += other.per_level[i].proposed;
    per_level[i].accepted += other.per_level[i].accepted;
    per_level[i].rounds += other.per_level[i].rounds;
    per_level[i].draft_ms += other.per_level[i].draft_ms;
    per_level[i].verify_ms += other.per_level[i].verify_ms;
  }
  for (std::size_t i = 0; i < other.model_ms.size(); ++i) model_ms[i] += other.model_ms[i];
  for (std::size_t i = 0; i < other.forward_calls.size(); ++i) forward_calls[i] += other.forward_calls[i];
}

GenerationResult greedy_generate(const TinyLmModel& model, std::span<const TokenId> prompt,
                                 const GenerateOptions& opts) {
  if (prompt.empty()) throw Error(ErrorCode::kInvalidArgument, "greedy_generate: empty prompt");
  const auto t0 = Clock::now();
  GenerationResult res;
  const auto max_seq = static_cast<std::size_t>(model.config.max_seq_len);
  if (prompt.size() > max_seq) {
    throw Error(ErrorCode::kContextOverflow, "prompt of " + std::to_string(prompt.size()) +
                                                 " tokens exceeds max_seq_len " + std::to_string(max_seq));
  }
  if (opts.max_new == 0) return res;
  if (prompt.size() == max_seq) {
    res.truncated = true;
    return res;
  }
  KvCache cache(model.config);
  Matrix logits = forward(model, cache, prompt);
  while (true) {
    const TokenId t = greedy_next(logits.row(logits.rows - 1));
    res.tokens.push_back(t);
    ++res.target_rounds;
    if (opts.eos && t == *opts.eos) break;
    if (res.tokens.size() == opts.max_new) break;
    if (prompt.size() + res.tokens.size() >= max_seq) {
      res.truncated = true;
      break;
    }
    const TokenId next[1] = {t};
    logits = forward(model, cache, next);
  }
  res.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return res;
}

Verification verify(const TinyLmModel& model, KvCache& cache, std::span<const TokenId> context,
                    std::span<const TokenId> proposed) {
  if (context.empty()) throw Error(ErrorCode::kInvalidArgument, "verify: empty context");
  if (cache.length() >= context.size()) cache.truncate(context.size() - 1);
  const std::size_t cached = cache.length();

  std::vector<TokenId> feed(context.begin() + static_cast<std::ptrdiff_t>(cached), context.end());
  feed.insert(feed.end(), proposed.begin(), proposed.end());
  const Matrix logits = forward(model, cache, feed);

  // Row `base + j` predicts the token following context + proposed[0..j).
  const std::size_t base = context.size() - 1 - cached;
  Verification v;
  std::size_t j = 0;
  for (; j < proposed.size(); ++j) {
    const auto row = logits.row(base + j);
    if (greedy_next(row) != proposed[j]) break;
    v.probabilities.push_back(token_probability(row, proposed[j]));
  }
  v.accepted = static_cast<int>(j);
  const auto row = logits.row(base + j);
  v.bonus = greedy_next(row);
  v.probabilities.push_back(token_probability(row, v.bonus));
  cache.truncate(context.size() + j);
  return v;
}

SpeculativeSession::SpeculativeSession(const SpecTree& tree) : tree_(tree) {
  tree_.validate();
  for (const auto& l : tree_.levels) state_.push_back(LevelState{KvCache(l.model->config), {}});
}

std::size_t SpeculativeSession::room(std::size_t level, std::size_t context_len) const {
  const auto max_seq = static_cast<std::size_t>(tree_.levels[level].model->config.max_seq_len);
  return context_len >= max_seq ? 0 : max_seq - context_len;
}

Verification SpeculativeSession::timed_verify(std::size_t level, std::span<const TokenId> context,
                                              std::span<const TokenId> proposed) {
  LevelState& st = state_[level];
  // Keep only the part of the cache that still matches the context.
  const auto mismatch = std::mismatch(st.cached_tokens.begin(), st.cached_tokens.end(), context.begin(),
                                      context.end());
  const auto common = static_cast<std::size_t>(mismatch.first - st.cached_tokens.begin());
  const std::size_t keep = std::min(common, context.size() - 1);
  st.cache.truncate(keep);
  st.cached_tokens.resize(keep);

  const auto t0 = Clock::now();
  Verification v = verify(*tree_.levels[level].model, st.cache, context, proposed);
  stats_.model_ms[level] += ms_since(t0);
  stats_.forward_calls[level] += 1;

  st.cached_tokens.assign(context.begin(), context.end());
  st.cached_tokens.insert(st.cached_tokens.end(), proposed.begin(), proposed.begin() + v.accepted);
  return v;
}

SpeculativeSession::Emitted SpeculativeSession::run_level(std::size_t level,
                                                          std::span<const TokenId> context,
                                                          std::size_t limit, bool is_top,
                                                          std::optional<TokenId> eos) {
  Emitted out;
  const bool has_sub = level + 1 < tree_.levels.size();
  const double threshold = tree_.levels[level].confidence_threshold;
  std::vector<TokenId> ctx(context.begin(), context.end());

  while (out.tokens.size() < limit) {
    const std::size_t r = std::min(limit - out.tokens.size(), room(level, ctx.size()));
    if (r == 0) break;

    std::vector<TokenId> proposals;
    double draft_ms = 0;
    if (has_sub) {
      const auto n_req = std::min(static_cast<std::size_t>(tree_.levels[level + 1].spec_length), r);
      const auto t0 = Clock::now();
      proposals = run_level(level + 1, ctx, n_req, false, std::nullopt).tokens;
      draft_ms = ms_since(t0);
    }
    const auto t0 = Clock::now();
    const Verification v = timed_verify(level, ctx, proposals);
    const double verify_ms = ms_since(t0);
    if (is_top) ++target_rounds_;

    bool stop = false;
    int emitted = 0;
    for (int i = 0; i <= v.accepted; ++i) {
      if (static_cast<std::size_t>(emitted) == r) {
        stop = true;
        break;
      }
      const TokenId tok = i < v.accepted ? proposals[static_cast<std::size_t>(i)] : v.bonus;
      const double p = v.probabilities[static_cast<std::size_t>(i)];
      out.tokens.push_back(tok);
      out.probabilities.push_back(p);
      ctx.push_back(tok);
      ++emitted;
      if (is_top && eos && tok == *eos) stop = true;
      if (!is_top && p < threshold) stop = true;
      if (stop) break;
    }

    if (has_sub) {
      RoundRecord rec;
      rec.level = static_cast<int>(level + 1);
      rec.proposed = static_cast<int>(proposals.size());
      rec.accepted = v.accepted;
      rec.bonus = true;
      rec.emitted = emitted;
      rec.draft_ms = draft_ms;
      rec.verify_ms = verify_ms;
      rounds_.push_back(rec);
      LevelStats& ls = stats_.per_level[level + 1];
      ls.proposed += rec.proposed;
      ls.accepted += rec.accepted;
      ls.rounds += 1;
      ls.draft_ms += draft_ms;
      ls.verify_ms += verify_ms;
    }
    if (stop) break;
  }
  return out;
}

std::vector<TokenId> SpeculativeSession::draft_tokens(std::size_t level, std::span<const TokenId> context,
                                                      std::size_t count) {
  if (level == 0 || level >= tree_.levels.size()) {
    throw Error(ErrorCode::kInvalidArgument, "draft_tokens: no draft level " + std::to_string(level));
  }
  if (context.empty()) throw Error(ErrorCode::kInvalidArgument, "draft_tokens: empty context");
  if (stats_.per_level.empty()) {
    stats_.per_level.resize(tree_.levels.size());
    stats_.model_ms.resize(tree_.levels.size());
    stats_.forward_calls.resize(tree_.levels.size());
  }
  return run_level(level, context, count, false, std::nullopt).tokens;
}

GenerationResult SpeculativeSession::generate(std::span<const TokenId> prompt, const GenerateOptions& opts) {
  if (prompt.empty()) throw Error(ErrorCode::kInvalidArgument, "speculative_generate: empty prompt");
  const auto max_seq = static_cast<std::size_t>(tree_.levels[0].model->config.max_seq_len);
  if (prompt.size() > max_seq) {
    throw Error(ErrorCode::kContextOverflow, "prompt of " + std::to_string(prompt.size()) +
                                                 " tokens exceeds max_seq_len " + std::to_string(max_seq));
  }
  rounds_.clear();
  stats_ = AcceptanceStats{};
  stats_.per_level.resize(tree_.levels.size());
  stats_.model_ms.resize(tree_.levels.size());
  stats_.forward_calls.resize(tree_.levels.size());
  target_rounds_ = 0;

  const auto t0 = Clock::now();
  Emitted e = run_level(0, prompt, opts.max_new, true, opts.eos);
  GenerationResult res;
  res.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool hit_eos = !e.tokens.empty() && opts.eos && e.tokens.back() == *opts.eos;
  res.truncated = e.tokens.size() < opts.max_new && !hit_eos;
  res.tokens = std::move(e.tokens);
  res.rounds = rounds_;
  res.stats = stats_;
  res.target_rounds = target_rounds_;
  return res;
}

GenerationResult speculative_generate(const SpecTree& tree, std::span<const TokenId> prompt,
                                      const GenerateOptions& opts) {
  SpeculativeSession session(tree);
  return session.generate(prompt, opts);
}

double geomean(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "geomean of empty set");
  double log_sum = 0.0;
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "geomean needs positive values");
    log_sum += std::log(v);
  }
  return std::exp(log_sum / static_cast<double>(values.size()));
}

BenchmarkReport run_benchmark(const SpecTree& tree, const std::vector<std::vector<TokenId>>& prompts,
                              const GenerateOptions& opts) {
  tree.validate();
  if (prompts.empty()) throw Error(ErrorCode::kInvalidArgument, "run_benchmark: no prompts");
  BenchmarkReport report;
  report.depth = tree.depth();
  report.stats.per_level.resize(tree.levels.size());
  std::vector<double> speedups;
  for (const auto& prompt : prompts) {
    const GenerationResult greedy = greedy_generate(*tree.levels[0].model, prompt, opts);
    PromptRun run;
    run.greedy_seconds = greedy.seconds;
    run.tokens = greedy.tokens.size();
    run.alpha.assign(tree.levels.size(), 0.0);
    if (tree.depth() == 0) {
      run.speculative_seconds = greedy.seconds;
      run.speedup = 1.0;
    } else {
      const GenerationResult spec = speculative_generate(tree, prompt, opts);
      run.speculative_seconds = spec.seconds;
      run.speedup = spec.seconds > 0 ? greedy.seconds / spec.seconds : 1.0;
      run.lossless = spec.tokens == greedy.tokens;
      for (std::size_t l = 1; l < spec.stats.per_level.size(); ++l) run.alpha[l] = spec.stats.per_level[l].alpha();
      report.stats.merge(spec.stats);
      report.rounds.insert(report.rounds.end(), spec.rounds.begin(), spec.rounds.end());
    }
    report.lossless = report.lossless && run.lossless;
    report.total_tokens += run.tokens;
    speedups.push_back(run.speedup > 0 ? run.speedup : 1.0);
    report.prompts.push_back(std::move(run));
  }
  report.geomean_speedup = tree.depth() == 0 ? 1.0 : geomean(speedups);
  return report;
}

void write_rounds_csv(const std::filesystem::path& path, std::span<const RoundRecord> rounds) {
  auto out = open_output(path);
  out << "level,proposed,accepted,draft_ms,verify_ms\n";
  for (const auto& r : rounds) {
    out << r.level << ',' << r.proposed << ',' << r.accepted << ',' << r.draft_ms << ',' << r.verify_ms << '\n';
  }
}

void write_acceptance_csv(const std::filesystem::path& path, const BenchmarkReport& report) {
  auto out = open_output(path);
  out << "prompt,level,alpha\n";
  for (std::size_t p = 0; p < report.prompts.size(); ++p) {
    for (std::size_t l = 1; l < report.prompts[p].alpha.size(); ++l) {
      out << p << ',' << l << ',' << report.prompts[p].alpha[l] << '\n';
    }
  }
}

void write_summary_json(const std::filesystem::path& path, const BenchmarkReport& report) {
  nlohmann::json j;
  j["geomean_speedup"] = report.geomean_speedup;
  j["depth"] = report.depth;
  j["prompts"] = report.prompts.size();
  j["lossless"] = report.lossless;
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t l = 1; l < report.stats.per_level.size(); ++l) {
    const LevelStats& s = report.stats.per_level[l];
    levels.push_back({{"level", l},
                      {"alpha", s.alpha()},
                      {"proposed", s.proposed},
                      {"accepted", s.accepted},
                      {"rounds", s.rounds}});
  }
  j["levels"] = levels;
  nlohmann::json per_prompt = nlohmann::json::array();
  for (const auto& p : report.prompts) {
    per_prompt.push_back({{"tokens", p.tokens},
                          {"greedy_seconds", p.greedy_seconds},
                          {"speculative_seconds", p.speculative_seconds},
                          {"speedup", p.speedup}});
  }
  j["per_prompt"] = per_prompt;
  j["tokens"] = {{"total", report.total_tokens}};
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

}  // namespace specqd
