#pragma once

// The closed 144-prompt calendar-arithmetic task:
//   "Let's do some calendar math. [INTERVAL] months from [MONTH] is"
// Start month alpha (0 = January), interval beta (1..12), target
// gamma = (alpha + beta) mod 12.

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mgeo/model.hpp"
#include "mgeo/vocab.hpp"

namespace mgeo {

inline constexpr std::array<const char*, 12> kMonthNames = {
    "January", "February", "March",     "April",   "May",      "June",
    "July",    "August",   "September", "October", "November", "December"};

inline constexpr std::array<const char*, 12> kIntervalNames = {
    "One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten", "Eleven", "Twelve"};

inline constexpr int kMonths = 12;

struct MonthsPrompt {
  int alpha = 0;  // start month, 0..11
  int beta = 1;   // interval, 1..12
  int gamma = 0;  // ground-truth target month
  std::string text;
  std::vector<int> tokens;
  std::size_t alpha_pos = 0;
  std::size_t beta_pos = 0;
  std::size_t final_pos = 0;
};

/// Token ids of the twelve months in calendar order.
struct ReadoutSet {
  std::array<int, kMonths> ids{};

  /// Throws Error unless ids are distinct and inside [0, vocab_size).
  void validate(int vocab_size) const;
};

struct Readout {
  int month = 0;
  std::array<float, kMonths> logits{};
};

std::string prompt_text(int alpha, int beta);

/// (alpha + beta) mod 12; throws Error for alpha outside 0..11 or beta outside 1..12.
int ground_truth_target(int alpha, int beta);

/// All 12 x 12 prompts, interval-major: index = (beta - 1) * 12 + alpha.
std::vector<MonthsPrompt> generate_prompts(const WordVocab& vocab);

ReadoutSet months_readout(const WordVocab& vocab);

/// Argmax over the twelve month logits; ties go to the earliest month.
Readout readout_prediction(std::span<const float> logits, const ReadoutSet& readout);

/// Unintervened pass over every prompt, keeping logits and all residual layers.
struct Baseline {
  struct Entry {
    std::vector<float> logits;        // full-vocabulary logits at the final token
    Readout readout;
    bool correct = false;
    bool in_readout = true;           // full-vocabulary argmax is a month token
    std::map<int, Matrix> captured;   // every layer 0..n_layers
    // Rows of each captured matrix: empty means one row per position, otherwise
    // row k holds position captured_positions[k] (baselines rebuilt from traces).
    std::vector<std::size_t> captured_positions;

    /// Residual state at (layer, position); throws Error when it was not captured.
    std::span<const float> state(int layer, std::size_t position) const;
  };
  std::vector<Entry> entries;

  double accuracy() const;
};

Baseline run_baseline(const ModelWeights& weights, std::span<const MonthsPrompt> prompts, const ReadoutSet& readout);

}  // namespace mgeo
