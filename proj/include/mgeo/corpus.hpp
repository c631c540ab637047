#pragma once

// Short/long x ordered/shuffled sequence sets cut from plain text.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "mgeo/vocab.hpp"

namespace mgeo {

enum class LengthClass { short_context, long_context };
enum class OrderClass { ordered, shuffled };

std::string to_string(LengthClass c);
std::string to_string(OrderClass c);
/// e.g. "short_ordered"
std::string condition_name(LengthClass l, OrderClass o);

inline constexpr std::size_t kShortLength = 15;
inline constexpr std::size_t kLongMin = 500;
inline constexpr std::size_t kLongMax = 600;
inline constexpr const char* kSentenceMark = ".";

/// Pluggable word -> token-id mapping; the token count is what the length classes measure.
struct Tokenizer {
  std::string name;
  std::function<std::vector<int>(std::span<const std::string>)> encode;
};

/// Word-level tokenizer over `vocab`; unknown words become "<unk>".
Tokenizer word_tokenizer(const WordVocab& vocab);

struct SequenceRecord {
  std::string id;
  LengthClass length_class = LengthClass::short_context;
  OrderClass order = OrderClass::ordered;
  std::vector<std::string> words;  // last word is always "."
  std::vector<int> tokens;
};

struct PilotIndices {
  std::size_t last = 0;
  std::size_t fourth_from_end = 0;
};

/// (len - 1, len - 4); throws Error for sequences shorter than 4 tokens.
PilotIndices pilot_indices(std::size_t length);
PilotIndices pilot_indices(const SequenceRecord& r);

/// Splits text into documents at blank lines and each document into words,
/// rewriting sentence-final "!" and "?" to ".".
std::vector<std::vector<std::string>> read_documents(std::istream& in);

/// Builds a word vocabulary covering every word of the documents, in first-seen order.
WordVocab corpus_vocab(std::span<const std::vector<std::string>> documents);

struct FilterResult {
  std::vector<SequenceRecord> records;
  std::size_t requested = 0;
  std::size_t shortfall = 0;  // requested - records.size()
};

/// short: exactly 15 tokens ending at a sentence mark. long: from a sentence
/// start to the first sentence mark at length >= 500, kept when <= 600.
/// Candidates never overlap and are scanned in document order.
FilterResult filter_sequences(std::span<const std::vector<std::string>> documents, const Tokenizer& tok,
                              LengthClass length_class, std::size_t count);

/// Drops the final ".", permutes the words with the seed, re-appends ".".
SequenceRecord shuffle_words(const SequenceRecord& record, std::uint64_t seed, const Tokenizer& tok);

/// True when `tokens` satisfies the class bounds and ends with `mark`.
bool fits_length_class(std::span<const int> tokens, LengthClass c, int mark);

struct ConditionSet {
  LengthClass length_class = LengthClass::short_context;
  std::vector<SequenceRecord> ordered;
  std::vector<SequenceRecord> shuffled;  // paired with `ordered` by index
  std::size_t requested = 0;
  std::size_t shortfall = 0;
  std::size_t dropped = 0;  // pairs removed because no shuffle fit the length class
};

/// Filters, then shuffles each record (re-drawing up to 16 times with an
/// incremented seed when the shuffled tokens leave the length class).
ConditionSet build_condition_set(std::span<const std::vector<std::string>> documents, const Tokenizer& tok,
                                 LengthClass length_class, std::size_t count, std::uint64_t seed);

struct CorpusManifest {
  std::string tokenizer;
  std::vector<std::string> vocab;  // id order; empty for external tokenizers
  std::uint64_t seed = 0;
  std::vector<ConditionSet> conditions;

  /// All records of one condition, in manifest order.
  std::vector<SequenceRecord> records(LengthClass l, OrderClass o) const;
};

void write_manifest(const CorpusManifest& m, const std::filesystem::path& path);
CorpusManifest read_manifest(const std::filesystem::path& path);

}  // namespace mgeo
