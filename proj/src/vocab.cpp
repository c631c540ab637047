#include "mgeo/vocab.hpp"

#include <array>
#include <cctype>

#include "mgeo/months.hpp"
#include "mgeo/tensor.hpp"

namespace mgeo {

WordVocab::WordVocab() { add(std::string(kUnknown)); }

int WordVocab::add(const std::string& word) {
  auto [it, inserted] = ids_.emplace(word, static_cast<int>(words_.size()));
  if (inserted) words_.push_back(word);
  return it->second;
}

int WordVocab::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw Error("vocabulary '" + name_ + "' has no entry for '" + word + "'");
  return it->second;
}

int WordVocab::id_or_unknown(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? 0 : it->second;
}

const std::string& WordVocab::word(int id) const {
  if (id < 0 || id >= size()) throw Error("token id " + std::to_string(id) + " is outside vocabulary '" + name_ + "'");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> WordVocab::encode(std::span<const std::string> words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id_or_unknown(w));
  return out;
}

std::vector<int> WordVocab::encode(std::string_view text) const {
  const auto words = split_words(text);
  return encode(words);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string_view w = text.substr(i, j - i);
    std::vector<std::string> tail;
    while (w.size() > 1 && std::string_view(".!?,;:").find(w.back()) != std::string_view::npos) {
      tail.emplace_back(1, w.back());
      w.remove_suffix(1);
    }
    out.emplace_back(w);
    out.insert(out.end(), tail.rbegin(), tail.rend());
    i = j;
  }
  return out;
}

std::span<const std::string> distractor_words() {
  static const std::array<std::string, 14> kWords = {"Okay", "so", "now", "here", "we", "go", "the",
                                                    "a",    "quick", "puzzle", "please", "think", "today", "answer"};
  return kWords;
}

WordVocab months_vocab() {
  WordVocab v("months-word");
  for (const char* w : {"Let's", "do", "some", "calendar", "math", ".", "months", "from", "is"}) v.add(w);
  for (const auto* m : kMonthNames) v.add(m);
  for (const auto* n : kIntervalNames) v.add(n);
  for (const auto& w : distractor_words()) v.add(w);
  return v;
}

}  // namespace mgeo
