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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "specqd/error.hpp"
#include "specqd/specdec.hpp"

namespace specqd {
namespace {

LmConfig config(int d, int layers, int max_seq = 64) {
  LmConfig c;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = 4;
  c.d_ff = 2 * d;
  c.max_seq_len = max_seq;
  return c;
}

std::vector<TokenId> random_prompt(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> d(0, 255);
  std::vector<TokenId> p(n);
  for (auto& t : p) t = d(rng);
  return p;
}

class SpecDecTest : public ::testing::Test {
 protected:
  TinyLmModel target = init_seeded(config(32, 2), 1);
  TinyLmModel cast = direct_cast_mxfp4(target);
  TinyLmModel small = init_seeded(config(16, 1), 2);
  std::mt19937_64 rng{3};
};

TEST_F(SpecDecTest, VerifyAcceptsGreedyContinuation) {
  const auto prompt = random_prompt(5, rng);
  const GenerationResult g = greedy_generate(target, prompt, {6, std::nullopt});
  ASSERT_EQ(g.tokens.size(), 6u);
  KvCache cache(target.config);
  const std::vector<TokenId> proposed(g.tokens.begin(), g.tokens.begin() + 5);
  const Verification v = verify(target, cache, prompt, proposed);
  EXPECT_EQ(v.accepted, 5);
  EXPECT_EQ(v.bonus, g.tokens[5]);
  EXPECT_EQ(v.probabilities.size(), 6u);
  EXPECT_EQ(cache.length(), prompt.size() + 5);
}

TEST_F(SpecDecTest, VerifyStopsAtFirstMismatch) {
  const auto prompt = random_prompt(4, rng);
  const GenerationResult g = greedy_generate(target, prompt, {3, std::nullopt});
  std::vector<TokenId> proposed = g.tokens;
  proposed[1] = (proposed[1] + 1) % 256;
  KvCache cache(target.config);
  const Verification v = verify(target, cache, prompt, proposed);
  EXPECT_EQ(v.accepted, 1);
  EXPECT_EQ(v.bonus, g.tokens[1]);
  EXPECT_EQ(cache.length(), prompt.size() + 1);
}

TEST_F(SpecDecTest, VerifyRollsBackStaleCache) {
  const auto prompt = random_prompt(6, rng);
  KvCache cache(target.config);
  forward(target, cache, prompt);  // cache already covers the whole context
  const Verification v = verify(target, cache, prompt, {});
  const GenerationResult g = greedy_generate(target, prompt, {1, std::nullopt});
  EXPECT_EQ(v.accepted, 0);
  EXPECT_EQ(v.bonus, g.tokens[0]);
  EXPECT_EQ(cache.length(), prompt.size());
}

TEST_F(SpecDecTest, SelfDraftAcceptsEverything) {
  const SpecTree tree{{{&target}, {&target, 4, 0.0}}};
  const auto prompt = random_prompt(3, rng);
  const GenerationResult r = speculative_generate(tree, prompt, {20, std::nullopt});
  EXPECT_EQ(r.tokens, greedy_generate(target, prompt, {20, std::nullopt}).tokens);
  EXPECT_EQ(r.stats.per_level[1].alpha(), 1.0);
  // Each round yields N accepted plus one bonus, so 20 tokens need 4 rounds.
  EXPECT_EQ(r.target_rounds, 4);
}

TEST_F(SpecDecTest, DepthZeroIsGreedy) {
  const SpecTree tree{{{&target}}};
  const auto prompt = random_prompt(4, rng);
  const GenerationResult r = speculative_generate(tree, prompt, {10, std::nullopt});
  EXPECT_EQ(r.tokens, greedy_generate(target, prompt, {10, std::nullopt}).tokens);
  EXPECT_EQ(r.target_rounds, 10);
  EXPECT_TRUE(r.rounds.empty());
}

TEST_F(SpecDecTest, LosslessAcrossTreesAndSettings) {
  for (int trial = 0; trial < 24; ++trial) {
    const auto prompt = random_prompt(1 + rng() % 8, rng);
    const int n1 = 1 + static_cast<int>(rng() % 8), n2 = 1 + static_cast<int>(rng() % 8);
    const double thresholds[] = {0.0, 0.4, 0.65, 1.0};
    const double t1 = thresholds[rng() % 4], t2 = thresholds[rng() % 4];
    SpecTree tree{{{&target}, {&cast, n1, t1}}};
    if (trial % 2 == 1) tree.levels.push_back({&small, n2, t2});
    const GenerateOptions opts{16, std::nullopt};
    const GenerationResult r = speculative_generate(tree, prompt, opts);
    ASSERT_EQ(r.tokens, greedy_generate(target, prompt, opts).tokens) << "trial " << trial;
    for (const auto& rec : r.rounds) {
      ASSERT_LE(rec.accepted, rec.proposed);
      ASSERT_LE(rec.emitted, rec.accepted + 1);
    }
  }
}

TEST_F(SpecDecTest, ThresholdOneProposesSingleTokens) {
  const SpecTree tree{{{&target}, {&cast, 8, 1.0}}};
  const auto prompt = random_prompt(4, rng);
  const GenerationResult r = speculative_generate(tree, prompt, {12, std::nullopt});
  for (const auto& rec : r.rounds) EXPECT_LE(rec.proposed, 1);
}

TEST_F(SpecDecTest, StatsAgreeWithRoundRecords) {
  const SpecTree tree{{{&target}, {&cast, 3, 0.0}, {&small, 2, 0.0}}};
  const auto prompt = random_prompt(5, rng);
  const GenerationResult r = speculative_generate(tree, prompt, {24, std::nullopt});
  std::int64_t proposed[3] = {}, accepted[3] = {}, rounds[3] = {};
  for (const auto& rec : r.rounds) {
    proposed[rec.level] += rec.proposed;
    accepted[rec.level] += rec.accepted;
    rounds[rec.level] += 1;
  }
  for (int l = 1; l <= 2; ++l) {
    EXPECT_EQ(r.stats.per_level[l].proposed, proposed[l]);
    EXPECT_EQ(r.stats.per_level[l].accepted, accepted[l]);
    EXPECT_EQ(r.stats.per_level[l].rounds, rounds[l]);
    EXPECT_GT(rounds[l], 0);
  }
  EXPECT_EQ(r.target_rounds, rounds[1]);
  EXPECT_LE(proposed[1], 3 * rounds[1]);
}

TEST_F(SpecDecTest, EosIsEmittedAndEndsGeneration) {
  const auto prompt = random_prompt(4, rng);
  const GenerationResult free_run = greedy_generate(target, prompt, {12, std::nullopt});
  const TokenId eos = free_run.tokens[4];
  const auto first = std::find(free_run.tokens.begin(), free_run.tokens.end(), eos);
  const std::vector<TokenId> want(free_run.tokens.begin(), first + 1);
  const GenerateOptions opts{12, eos};
  EXPECT_EQ(greedy_generate(target, prompt, opts).tokens, want);
  const SpecTree tree{{{&target}, {&cast, 8, 0.0}}};
  const GenerationResult r = speculative_generate(tree, prompt, opts);
  EXPECT_EQ(r.tokens, want);
  EXPECT_FALSE(r.truncated);
}

TEST_F(SpecDecTest, ContextLimits) {
  const auto max_seq = static_cast<std::size_t>(target.config.max_seq_len);
  const SpecTree tree{{{&target}, {&cast, 8, 0.0}}};
  const GenerateOptions opts{32, std::nullopt};

  const auto too_long = random_prompt(max_seq + 1, rng);
  try {
    speculative_generate(tree, too_long, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContextOverflow);
  }
  EXPECT_THROW(greedy_generate(target, too_long, opts), Error);

  const auto full = random_prompt(max_seq, rng);
  const GenerationResult g_full = greedy_generate(target, full, opts);
  EXPECT_TRUE(g_full.tokens.empty());
  EXPECT_TRUE(g_full.truncated);
  EXPECT_TRUE(speculative_generate(tree, full, opts).tokens.empty());

  const auto near = random_prompt(max_seq - 5, rng);
  const GenerationResult g = greedy_generate(target, near, opts);
  const GenerationResult s = speculative_generate(tree, near, opts);
  EXPECT_EQ(g.tokens.size(), 5u);
  EXPECT_TRUE(g.truncated);
  EXPECT_EQ(s.tokens, g.tokens);
  EXPECT_TRUE(s.truncated);
}

TEST_F(SpecDecTest, DraftTokensFollowDraftGreedy) {
  const SpecTree tree{{{&target}, {&cast, 5, 0.0}}};
  SpeculativeSession session(tree);
  const auto prompt = random_prompt(3, rng);
  const auto drafted = session.draft_tokens(1, prompt, 5);
  EXPECT_EQ(drafted, greedy_generate(cast, prompt, {5, std::nullopt}).tokens);
  EXPECT_THROW(session.draft_tokens(0, prompt, 5), Error);
}

TEST_F(SpecDecTest, TreeValidation) {
  LmConfig other = config(16, 1);
  other.vocab_size = 300;
  const TinyLmModel wide = init_seeded(other, 4);
  EXPECT_THROW((SpecTree{{{&target}, {&wide}}}.validate()), Error);
  EXPECT_THROW((SpecTree{{{&target}, {&cast, 0}}}.validate()), Error);
  EXPECT_THROW((SpecTree{{{&target}, {&cast, 4, 1.5}}}.validate()), Error);
  EXPECT_THROW((SpecTree{{{nullptr}}}.validate()), Error);
  EXPECT_THROW(SpecTree{}.validate(), Error);
}

TEST(Geomean, Basics) {
  const std::vector<double> v = {1.0, 4.0, 16.0};
  EXPECT_DOUBLE_EQ(geomean(v), 4.0);
  EXPECT_THROW(geomean(std::span<const double>{}), Error);
  const std::vector<double> bad = {1.0, 0.0};
  EXPECT_THROW(geomean(bad), Error);
}

TEST_F(SpecDecTest, BenchmarkReportAndOutputs) {
  std::vector<std::vector<TokenId>> prompts;
  for (int i = 0; i < 3; ++i) prompts.push_back(random_prompt(4, rng));
  const GenerateOptions opts{8, std::nullopt};

  const BenchmarkReport greedy = run_benchmark(SpecTree{{{&target}}}, prompts, opts);
  EXPECT_EQ(greedy.geomean_speedup, 1.0);
  EXPECT_EQ(greedy.total_tokens, 24u);

  const BenchmarkReport sd = run_benchmark(SpecTree{{{&target}, {&cast, 4, 0.0}}}, prompts, opts);
  EXPECT_TRUE(sd.lossless);
  EXPECT_GT(sd.geomean_speedup, 0.0);

  const auto dir = std::filesystem::temp_directory_path() / "specqd_specdec_test";
  std::filesystem::create_directories(dir);
  write_summary_json(dir / "summary.json", sd);
  write_rounds_csv(dir / "rounds.csv", sd.rounds);
  write_acceptance_csv(dir / "acceptance.csv", sd);
  std::ifstream js(dir / "summary.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j.at("depth"), 1);
  EXPECT_EQ(j.at("prompts"), 3);
  EXPECT_EQ(j.at("lossless"), true);
  EXPECT_EQ(j.at("levels").size(), 1u);
  EXPECT_DOUBLE_EQ(j.at("levels")[0].at("alpha").get<double>(), sd.stats.per_level[1].alpha());
  std::ifstream rc(dir / "rounds.csv");
  std::string header;
  std::getline(rc, header);
  EXPECT_EQ(header, "level,proposed,accepted,draft_ms,verify_ms");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace specqd
