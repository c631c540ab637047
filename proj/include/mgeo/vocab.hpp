#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mgeo {

/// Word-level tokenizer: one token per whitespace-separated word, unknown
/// words map to "<unk>" (id 0).
class WordVocab {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  WordVocab();
  explicit WordVocab(std::string name) : WordVocab() { name_ = std::move(name); }

  /// Appends the word if absent; returns its id.
  int add(const std::string& word);
  /// Id of a known word; throws Error for a vocabulary gap.
  int id(const std::string& word) const;
  int id_or_unknown(const std::string& word) const;
  bool contains(const std::string& word) const { return ids_.count(word) != 0; }
  const std::string& word(int id) const;

  std::vector<int> encode(std::span<const std::string> words) const;
  std::vector<int> encode(std::string_view text) const;

  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_ = "word";
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

/// Whitespace split; trailing sentence punctuation (. ! ? , ; :) is peeled
/// off into separate words so that words and tokens stay one-to-one.
std::vector<std::string> split_words(std::string_view text);

/// Vocabulary of the calendar-math template: template words, twelve month
/// names, twelve interval words, the "." mark and a few distractor words.
WordVocab months_vocab();

/// Filler words used for distractor prefixes during toy training.
std::span<const std::string> distractor_words();

}  // namespace mgeo
