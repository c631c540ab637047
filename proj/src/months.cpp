#include "mgeo/months.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace mgeo {

std::string prompt_text(int alpha, int beta) {
  return std::string("Let's do some calendar math. ") + kIntervalNames.at(static_cast<std::size_t>(beta - 1)) +
         " months from " + kMonthNames.at(static_cast<std::size_t>(alpha)) + " is";
}

int ground_truth_target(int alpha, int beta) {
  if (alpha < 0 || alpha >= kMonths) throw Error("start month index " + std::to_string(alpha) + " is out of range");
  if (beta < 1 || beta > kMonths) throw Error("interval " + std::to_string(beta) + " is out of range");
  return (alpha + beta) % kMonths;
}

std::vector<MonthsPrompt> generate_prompts(const WordVocab& vocab) {
  std::vector<MonthsPrompt> prompts;
  prompts.reserve(kMonths * kMonths);
  for (int beta = 1; beta <= kMonths; ++beta) {
    for (int alpha = 0; alpha < kMonths; ++alpha) {
      MonthsPrompt p;
      p.alpha = alpha;
      p.beta = beta;
      p.gamma = ground_truth_target(alpha, beta);
      p.text = prompt_text(alpha, beta);
      const auto words = split_words(p.text);
      for (const auto& w : words) p.tokens.push_back(vocab.id(w));
      const auto find = [&](const char* w) {
        return static_cast<std::size_t>(std::find(words.begin(), words.end(), std::string(w)) - words.begin());
      };
      p.alpha_pos = find(kMonthNames[static_cast<std::size_t>(alpha)]);
      p.beta_pos = find(kIntervalNames[static_cast<std::size_t>(beta - 1)]);
      p.final_pos = words.size() - 1;
      prompts.push_back(std::move(p));
    }
  }
  return prompts;
}

void ReadoutSet::validate(int vocab_size) const {
  std::set<int> seen;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size) throw Error("readout id " + std::to_string(id) + " is outside the vocabulary");
    if (!seen.insert(id).second) throw Error("readout id " + std::to_string(id) + " appears twice");
  }
}

ReadoutSet months_readout(const WordVocab& vocab) {
  ReadoutSet r;
  for (std::size_t m = 0; m < kMonthNames.size(); ++m) r.ids[m] = vocab.id(kMonthNames[m]);
  return r;
}

Readout readout_prediction(std::span<const float> logits, const ReadoutSet& readout) {
  Readout out;
  for (std::size_t m = 0; m < readout.ids.size(); ++m) {
    const auto id = static_cast<std::size_t>(readout.ids[m]);
    if (id >= logits.size()) throw Error("readout id " + std::to_string(id) + " is outside the logit vector");
    out.logits[m] = logits[id];
  }
  // max_element returns the first maximum, which is the earliest month.
  out.month = static_cast<int>(std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin());
  return out;
}

double Baseline::accuracy() const {
  if (entries.empty()) throw Error("accuracy of an empty prompt set is undefined");
  const auto hits = std::count_if(entries.begin(), entries.end(), [](const Entry& e) { return e.correct; });
  return static_cast<double>(hits) / static_cast<double>(entries.size());
}

std::span<const float> Baseline::Entry::state(int layer, std::size_t position) const {
  auto it = captured.find(layer);
  if (it == captured.end()) throw Error("baseline did not capture layer " + std::to_string(layer));
  std::size_t row = position;
  if (!captured_positions.empty()) {
    auto p = std::find(captured_positions.begin(), captured_positions.end(), position);
    if (p == captured_positions.end()) throw Error("baseline did not capture position " + std::to_string(position));
    row = static_cast<std::size_t>(p - captured_positions.begin());
  }
  if (row >= it->second.rows) throw Error("baseline position " + std::to_string(position) + " out of range");
  return it->second.row(row);
}

Baseline run_baseline(const ModelWeights& weights, std::span<const MonthsPrompt> prompts, const ReadoutSet& readout) {
  readout.validate(weights.config.vocab_size);
  std::vector<int> all_layers(static_cast<std::size_t>(weights.config.n_layers) + 1);
  std::iota(all_layers.begin(), all_layers.end(), 0);

  Baseline b;
  b.entries.reserve(prompts.size());
  for (const auto& p : prompts) {
    auto fwd = forward_with_hooks(weights, p.tokens, {}, all_layers, LogitRows::last);
    Baseline::Entry e;
    e.logits.assign(fwd.logits.row(0).begin(), fwd.logits.row(0).end());
    e.readout = readout_prediction(e.logits, readout);
    e.correct = e.readout.month == p.gamma;
    const int argmax = static_cast<int>(std::max_element(e.logits.begin(), e.logits.end()) - e.logits.begin());
    e.in_readout = std::find(readout.ids.begin(), readout.ids.end(), argmax) != readout.ids.end();
    e.captured = std::move(fwd.captured);
    b.entries.push_back(std::move(e));
  }
  return b;
}

}  // namespace mgeo
