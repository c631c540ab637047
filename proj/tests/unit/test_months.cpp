#include <gtest/gtest.h>

#include <set>

#include "mgeo/months.hpp"
#include "mgeo/vocab.hpp"
#include "oracles.hpp"

using namespace mgeo;

TEST(Months, GroundTruthAgainstCalendarWalk) {
  for (int a = 0; a < 12; ++a)
    for (int b = 1; b <= 12; ++b) EXPECT_EQ(ground_truth_target(a, b), oracle::calendar_walk(a, b));
  EXPECT_EQ(ground_truth_target(0, 2), 2);    // two months from January is March
  EXPECT_EQ(ground_truth_target(11, 1), 0);   // December + 1 wraps to January
  EXPECT_EQ(ground_truth_target(4, 12), 4);   // a full year returns to the start
  EXPECT_THROW(ground_truth_target(-1, 3), Error);
  EXPECT_THROW(ground_truth_target(12, 3), Error);
  EXPECT_THROW(ground_truth_target(3, 0), Error);
  EXPECT_THROW(ground_truth_target(3, 13), Error);
}

TEST(Months, PromptText) {
  EXPECT_EQ(prompt_text(0, 2), "Let's do some calendar math. Two months from January is");
  EXPECT_EQ(prompt_text(11, 12), "Let's do some calendar math. Twelve months from December is");
}

TEST(Months, GeneratesAll144InIntervalMajorOrder) {
  const auto vocab = months_vocab();
  const auto prompts = generate_prompts(vocab);
  ASSERT_EQ(prompts.size(), 144u);
  std::set<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& p = prompts[i];
    EXPECT_EQ(i, static_cast<std::size_t>((p.beta - 1) * 12 + p.alpha));
    EXPECT_EQ(p.gamma, oracle::calendar_walk(p.alpha, p.beta));
    EXPECT_EQ(p.text, prompt_text(p.alpha, p.beta));
    seen.insert({p.alpha, p.beta});
  }
  EXPECT_EQ(seen.size(), 144u);
  const auto& two_jan = prompts[(2 - 1) * 12 + 0];
  EXPECT_EQ(two_jan.gamma, 2);
}

TEST(Months, PositionsAndSharedTemplate) {
  const auto vocab = months_vocab();
  const auto prompts = generate_prompts(vocab);
  for (const auto& p : prompts) {
    ASSERT_EQ(p.tokens.size(), 11u);
    EXPECT_EQ(p.alpha_pos, 9u);
    EXPECT_EQ(p.beta_pos, 6u);
    EXPECT_EQ(p.final_pos, 10u);
    EXPECT_EQ(p.tokens[p.alpha_pos], vocab.id(kMonthNames[p.alpha]));
    EXPECT_EQ(p.tokens[p.beta_pos], vocab.id(kIntervalNames[p.beta - 1]));
    for (std::size_t t = 0; t < p.tokens.size(); ++t)
      if (t != p.alpha_pos && t != p.beta_pos) {
        EXPECT_EQ(p.tokens[t], prompts[0].tokens[t]);
      }
  }
  EXPECT_EQ(vocab.word(prompts[0].tokens[10]), "is");
}

TEST(Months, VocabularyGapIsAnError) {
  WordVocab partial("partial");
  for (const char* w : {"Let's", "do", "some", "calendar", "math", ".", "months", "from", "is"}) partial.add(w);
  EXPECT_THROW(generate_prompts(partial), Error);
  EXPECT_THROW(months_readout(partial), Error);
}

TEST(Readout, RestrictedArgmaxAndTies) {
  const auto vocab = months_vocab();
  const auto r = months_readout(vocab);
  EXPECT_NO_THROW(r.validate(vocab.size()));
  std::vector<float> logits(vocab.size(), 0.0f);
  EXPECT_EQ(readout_prediction(logits, r).month, 0);  // all tied: January
  logits[r.ids[4]] = 2.0f;
  logits[r.ids[9]] = 2.0f;
  logits[vocab.id("is")] = 100.0f;  // non-month tokens never win the restricted readout
  const auto out = readout_prediction(logits, r);
  EXPECT_EQ(out.month, 4);
  EXPECT_EQ(out.logits[9], 2.0f);
}

TEST(Readout, ShiftInvariant) {
  const auto vocab = months_vocab();
  const auto r = months_readout(vocab);
  std::vector<float> logits(vocab.size());
  for (int i = 0; i < vocab.size(); ++i) logits[i] = static_cast<float>((i * 37) % 11) * 0.25f;
  const int m = readout_prediction(logits, r).month;
  for (auto& v : logits) v += 8.0f;
  EXPECT_EQ(readout_prediction(logits, r).month, m);
}

TEST(Readout, Validation) {
  ReadoutSet r;
  for (int i = 0; i < 12; ++i) r.ids[i] = i;
  EXPECT_NO_THROW(r.validate(12));
  EXPECT_THROW(r.validate(11), Error);
  r.ids[3] = 2;
  EXPECT_THROW(r.validate(12), Error);
  std::vector<float> short_logits(5, 0.0f);
  ReadoutSet ok;
  for (int i = 0; i < 12; ++i) ok.ids[i] = i;
  EXPECT_THROW(readout_prediction(short_logits, ok), Error);
}

TEST(Baseline, CapturesEveryLayerAndScores) {
  const auto vocab = months_vocab();
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 8;
  c.vocab_size = vocab.size();
  c.max_seq_len = 16;
  const auto w = random_init(c, 1);
  const auto prompts = generate_prompts(vocab);
  const auto b = run_baseline(w, prompts, months_readout(vocab));
  ASSERT_EQ(b.entries.size(), 144u);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < 144; ++i) {
    const auto& e = b.entries[i];
    EXPECT_EQ(e.captured.size(), 3u);
    EXPECT_EQ(e.captured.at(2).rows, 11u);
    EXPECT_EQ(e.correct, e.readout.month == prompts[i].gamma);
    hits += e.correct;
    EXPECT_EQ(e.state(1, 9).data(), e.captured.at(1).row(9).data());
  }
  EXPECT_DOUBLE_EQ(b.accuracy(), double(hits) / 144.0);
  EXPECT_THROW(b.entries[0].state(3, 0), Error);
  EXPECT_THROW(b.entries[0].state(0, 11), Error);
  EXPECT_THROW(Baseline{}.accuracy(), Error);
}

TEST(Baseline, SparseCapturedPositions) {
  Baseline::Entry e;
  e.captured.emplace(1, Matrix(2, 3, 0.0f));
  e.captured.at(1)(1, 0) = 5.0f;
  e.captured_positions = {9, 10};
  EXPECT_EQ(e.state(1, 10)[0], 5.0f);
  EXPECT_THROW(e.state(1, 6), Error);
}
