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

// Greedy speculative decoding, single- and multi-level.
//
// A SpecTree lists models target-first. Level i+1 proposes tokens for level
// i; when level i+1 has its own sub-draft it produces those proposals by
// running speculative decoding itself. Verification compares argmax ids with
// lowest-id tie breaking, the same rule greedy decoding uses, so the emitted
// sequence always equals greedy decoding of the target.

#ifndef SPECQD_SPECDEC_HPP_
#define SPECQD_SPECDEC_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specqd/tinylm.hpp"

namespace specqd {

inline constexpr int kDefaultSpecLength = 8;
inline constexpr double kDefaultConfidenceThreshold = 0.4;
inline constexpr double kStringentConfidenceThreshold = 0.65;

struct LevelSpec {
  const TinyLmModel* model = nullptr;
  // Tokens this level proposes to the level above per round. Unused for the
  // target.
  int spec_length = kDefaultSpecLength;
  // Drafting stops after a token whose softmax probability falls below this.
  double confidence_threshold = kDefaultConfidenceThreshold;
};

struct SpecTree {
  // levels[0] is the target; an empty draft list is plain greedy decoding.
  std::vector<LevelSpec> levels;

  std::size_t depth() const { return levels.empty() ? 0 : levels.size() - 1; }
  // Throws kInvalidArgument for null models, spec_length < 1, thresholds
  // outside [0, 1] or vocabularies that differ.
  void validate() const;
};

struct RoundRecord {
  // Draft level whose proposals were verified (1 = first draft).
  int level = 0;
  int proposed = 0;
  int accepted = 0;
  bool bonus = true;
  // Tokens the verifying level actually kept from this round; less than
  // accepted + 1 only when the round hit a limit, EOS or the threshold.
  int emitted = 0;
  double draft_ms = 0;
  double verify_ms = 0;
};

struct LevelStats {
  std::int64_t proposed = 0;
  std::int64_t accepted = 0;
  std::int64_t rounds = 0;
  double draft_ms = 0;
  double verify_ms = 0;

  // accepted / proposed, 0 when nothing was proposed.
  double alpha() const;
};

struct AcceptanceStats {
  // Index = draft level; entry 0 is unused so that per_level[1] is the first
  // draft.
  std::vector<LevelStats> per_level;
  // Forward-pass wall time per model level, target first.
  std::vector<double> model_ms;
  std::vector<std::int64_t> forward_calls;

  void merge(const AcceptanceStats& other);
};

struct GenerationResult {
  std::vector<TokenId> tokens;
  std::vector<RoundRecord> rounds;
  AcceptanceStats stats;
  double seconds = 0;
  // Set when generation stopped because the context was full.
  bool truncated = false;
  // Number of target verification passes (= top-level rounds).
  std::int64_t target_rounds = 0;
};

struct GenerateOptions {
  std::size_t max_new = 32;
  std::optional<TokenId> eos = kEosToken;
};

// Auto-regressive argmax decoding of one model; the losslessness oracle.
GenerationResult greedy_generate(const TinyLmModel& model, std::span<const TokenId> prompt,
                                 const GenerateOptions& opts);

// Result of verifying one batch of proposals.
struct Verification {
  int accepted = 0;
  TokenId bonus = 0;
  // Verifier probability for each accepted token followed by the bonus.
  std::vector<double> probabilities;
};

// Verifies `proposed` against `model` continuing `context`. The cache must
// hold a prefix of context (anything else is rolled back). One forward pass
// covers the unprocessed tail of context plus every proposal; afterwards the
// cache holds context + the accepted proposals.
Verification verify(const TinyLmModel& model, KvCache& cache, std::span<const TokenId> context,
                    std::span<const TokenId> proposed);

// One decoding session over a SpecTree. Each level keeps its own KV cache
// for the lifetime of the session.
class SpeculativeSession {
 public:
  explicit SpeculativeSession(const SpecTree& tree);

  // Proposes up to `count` tokens from `level` continuing `context`,
  // stopping early on the level's confidence threshold. Levels with a
  // sub-draft generate speculatively.
  std::vector<TokenId> draft_tokens(std::size_t level, std::span<const TokenId> context,
                                    std::size_t count);

  GenerationResult generate(std::span<const TokenId> prompt, const GenerateOptions& opts);

 private:
  struct Emitted {
    std::vector<TokenId> tokens;
    std::vector<double> probabilities;
  };
  struct LevelState {
    KvCache cache;
    std::vector<TokenId> cached_tokens;
  };

  // Produces up to `limit` tokens of `level`'s greedy continuation.
  // Drafting levels stop after the first token below their threshold; the
  // top level stops after EOS.
  Emitted run_level(std::size_t level, std::span<const TokenId> context, std::size_t limit,
                    bool is_top, std::optional<TokenId> eos);
  Verification timed_verify(std::size_t level, std::span<const TokenId> context,
                            std::span<const TokenId> proposed);
  std::size_t room(std::size_t level, std::size_t context_len) const;

  SpecTree tree_;
  std::vector<LevelState> state_;
  std::vector<RoundRecord> rounds_;
  AcceptanceStats stats_;
  std::int64_t target_rounds_ = 0;
};

// Runs a session over a fresh set of caches.
GenerationResult speculative_generate(const SpecTree& tree, std::span<const TokenId> prompt,
                                      const GenerateOptions& opts);

struct PromptRun {
  double greedy_seconds = 0;
  double speculative_seconds = 0;
  double speedup = 1;
  std::size_t tokens = 0;
  bool lossless = true;
  // alpha per draft level (index 0 unused).
  std::vector<double> alpha;
};

struct BenchmarkReport {
  std::vector<PromptRun> prompts;
  std::vector<RoundRecord> rounds;
  AcceptanceStats stats;
  double geomean_speedup = 1;
  std::size_t depth = 0;
  std::size_t total_tokens = 0;
  bool lossless = true;
};

double geomean(std::span<const double> values);

// Times greedy decoding of the target and the speculative pipeline on every
// prompt. A depth-0 tree reuses the greedy measurement, so its speedup is
// exactly 1.
BenchmarkReport run_benchmark(const SpecTree& tree, const std::vector<std::vector<TokenId>>& prompts,
                              const GenerateOptions& opts);

// rounds.csv: level,proposed,accepted,draft_ms,verify_ms
void write_rounds_csv(const std::filesystem::path& path, std::span<const RoundRecord> rounds);
// acceptance.csv: prompt,level,alpha
void write_acceptance_csv(const std::filesystem::path& path, const BenchmarkReport& report);
// summary.json: geomean speedup, per-level alpha, token counts.
void write_summary_json(const std::filesystem::path& path, const BenchmarkReport& report);

}  // namespace specqd

#endif  // SPECQD_SPECDEC_HPP_
