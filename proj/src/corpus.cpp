#include "mgeo/corpus.hpp"

#include <cstdio>
#include <fstream>
#include "json.hpp"
#include <random>
#include <sstream>

#include "mgeo/tensor.hpp"

namespace mgeo {

using json = nlohmann::json;

std::string to_string(LengthClass c) { return c == LengthClass::short_context ? "short" : "long"; }
std::string to_string(OrderClass c) { return c == OrderClass::ordered ? "ordered" : "shuffled"; }
std::string condition_name(LengthClass l, OrderClass o) { return to_string(l) + "_" + to_string(o); }

Tokenizer word_tokenizer(const WordVocab& vocab) {
  return {vocab.name(), [&vocab](std::span<const std::string> words) {
            std::vector<int> ids;
            ids.reserve(words.size());
            for (const auto& w : words) ids.push_back(vocab.id_or_unknown(w));
            return ids;
          }};
}

PilotIndices pilot_indices(std::size_t length) {
  if (length < 4) throw Error("pilot tokens need a sequence of at least 4 tokens, got " + std::to_string(length));
  return {length - 1, length - 4};
}

PilotIndices pilot_indices(const SequenceRecord& r) { return pilot_indices(r.tokens.size()); }

std::vector<std::vector<std::string>> read_documents(std::istream& in) {
  std::vector<std::vector<std::string>> docs;
  std::vector<std::string> cur;
  std::string line;
  auto flush = [&] {
    if (!cur.empty()) docs.push_back(std::move(cur));
    cur.clear();
  };
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      flush();
      continue;
    }
    for (auto& w : split_words(line)) {
      if (w == "!" || w == "?") w = kSentenceMark;
      cur.push_back(std::move(w));
    }
  }
  flush();
  return docs;
}

WordVocab corpus_vocab(std::span<const std::vector<std::string>> documents) {
  WordVocab v("corpus-word");
  for (const auto& d : documents)
    for (const auto& w : d) v.add(w);
  return v;
}

bool fits_length_class(std::span<const int> tokens, LengthClass c, int mark) {
  if (tokens.empty() || tokens.back() != mark) return false;
  if (c == LengthClass::short_context) return tokens.size() == kShortLength;
  return tokens.size() >= kLongMin && tokens.size() <= kLongMax;
}

namespace {

int mark_id(const Tokenizer& tok) {
  const std::string m = kSentenceMark;
  const auto ids = tok.encode(std::span(&m, 1));
  if (ids.size() != 1) throw Error("tokenizer must map the sentence mark to a single token");
  return ids.front();
}

std::string record_id(LengthClass c, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06zu", to_string(c).c_str(), i);
  return buf;
}

std::vector<std::string> slice(const std::vector<std::string>& d, std::size_t a, std::size_t b) {
  return {d.begin() + static_cast<std::ptrdiff_t>(a), d.begin() + static_cast<std::ptrdiff_t>(b) + 1};
}

}  // namespace

FilterResult filter_sequences(std::span<const std::vector<std::string>> documents, const Tokenizer& tok,
                              LengthClass length_class, std::size_t count) {
  FilterResult res;
  res.requested = count;
  const int mark = mark_id(tok);
  auto emit = [&](std::vector<std::string> words, std::vector<int> tokens) {
    SequenceRecord r;
    r.id = record_id(length_class, res.records.size());
    r.length_class = length_class;
    r.words = std::move(words);
    r.tokens = std::move(tokens);
    res.records.push_back(std::move(r));
  };

  for (const auto& doc : documents) {
    if (res.records.size() >= count) break;
    std::size_t next_free = 0;  // first word not yet used by an accepted sequence
    if (length_class == LengthClass::short_context) {
      for (std::size_t b = 0; b < doc.size() && res.records.size() < count; ++b) {
        if (doc[b] != kSentenceMark) continue;
        // Grow leftwards from the boundary until the token count reaches 15.
        for (std::size_t s = b + 1; s-- > next_free;) {
          auto words = slice(doc, s, b);
          auto tokens = tok.encode(words);
          if (tokens.size() < kShortLength) continue;
          if (fits_length_class(tokens, length_class, mark)) {
            emit(std::move(words), std::move(tokens));
            next_free = b + 1;
          }
          break;
        }
      }
    } else {
      std::size_t s = 0;
      while (s < doc.size() && res.records.size() < count) {
        std::size_t end = doc.size();
        for (std::size_t b = s; b < doc.size(); ++b) {
          if (doc[b] != kSentenceMark) continue;
          if (end == doc.size()) end = b;  // first boundary: fallback restart point
          auto words = slice(doc, s, b);
          auto tokens = tok.encode(words);
          if (tokens.size() < kLongMin) continue;
          if (fits_length_class(tokens, length_class, mark)) {
            emit(std::move(words), std::move(tokens));
            end = b;
          }
          break;
        }
        s = end + 1;
      }
    }
  }
  res.shortfall = count - res.records.size();
  return res;
}

SequenceRecord shuffle_words(const SequenceRecord& record, std::uint64_t seed, const Tokenizer& tok) {
  if (record.words.empty() || record.words.back() != kSentenceMark)
    throw Error("record '" + record.id + "' does not end with the sentence mark");
  SequenceRecord out = record;
  out.order = OrderClass::shuffled;
  std::vector<std::string> body(record.words.begin(), record.words.end() - 1);
  // Fisher-Yates on raw engine output; std::shuffle's draw sequence is library-specific.
  std::mt19937_64 rng(seed);
  for (std::size_t i = body.size(); i > 1; --i) std::swap(body[i - 1], body[rng() % i]);
  body.emplace_back(kSentenceMark);
  out.words = std::move(body);
  out.tokens = tok.encode(out.words);
  return out;
}

ConditionSet build_condition_set(std::span<const std::vector<std::string>> documents, const Tokenizer& tok,
                                 LengthClass length_class, std::size_t count, std::uint64_t seed) {
  const int mark = mark_id(tok);
  auto filtered = filter_sequences(documents, tok, length_class, count);
  ConditionSet cs;
  cs.length_class = length_class;
  cs.requested = count;
  for (std::size_t i = 0; i < filtered.records.size(); ++i) {
    const auto& r = filtered.records[i];
    const std::uint64_t base = seed + 0x9E3779B97F4A7C15ULL * (i + 1);
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 16 && !ok; ++attempt) {
      auto s = shuffle_words(r, base + attempt, tok);
      if (fits_length_class(s.tokens, length_class, mark)) {
        s.id = r.id + "-shuffled";
        cs.ordered.push_back(r);
        cs.shuffled.push_back(std::move(s));
        ok = true;
      }
    }
    if (!ok) ++cs.dropped;
  }
  cs.shortfall = count - cs.ordered.size();
  return cs;
}

std::vector<SequenceRecord> CorpusManifest::records(LengthClass l, OrderClass o) const {
  for (const auto& c : conditions)
    if (c.length_class == l) return o == OrderClass::ordered ? c.ordered : c.shuffled;
  throw Error("manifest has no " + to_string(l) + " condition");
}

namespace {

json record_json(const SequenceRecord& r) {
  const auto p = pilot_indices(r);
  return {{"id", r.id},
          {"words", r.words},
          {"tokens", r.tokens},
          {"pilot", {{"last", p.last}, {"fourth_from_end", p.fourth_from_end}}}};
}

SequenceRecord record_from_json(const json& j, LengthClass l, OrderClass o) {
  SequenceRecord r;
  r.id = j.at("id").get<std::string>();
  r.length_class = l;
  r.order = o;
  r.words = j.at("words").get<std::vector<std::string>>();
  r.tokens = j.at("tokens").get<std::vector<int>>();
  const auto p = pilot_indices(r);
  if (j.at("pilot").at("last").get<std::size_t>() != p.last ||
      j.at("pilot").at("fourth_from_end").get<std::size_t>() != p.fourth_from_end)
    throw Error("manifest record '" + r.id + "' has inconsistent pilot indices");
  if (r.words.empty() || r.words.back() != kSentenceMark)
    throw Error("manifest record '" + r.id + "' does not end with the sentence mark");
  return r;
}

}  // namespace

void write_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  json conds = json::array();
  for (const auto& c : m.conditions) {
    json ordered = json::array(), shuffled = json::array();
    for (const auto& r : c.ordered) ordered.push_back(record_json(r));
    for (const auto& r : c.shuffled) shuffled.push_back(record_json(r));
    conds.push_back({{"length_class", to_string(c.length_class)},
                     {"requested", c.requested},
                     {"shortfall", c.shortfall},
                     {"dropped", c.dropped},
                     {"ordered", ordered},
                     {"shuffled", shuffled}});
  }
  const json doc = {{"format", "mgeo-corpus-manifest"}, {"version", 1},      {"tokenizer", m.tokenizer},
                    {"vocab", m.vocab},                 {"seed", m.seed},    {"sentence_mark", kSentenceMark},
                    {"conditions", conds}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest '" + path.string() + "'");
  out << doc.dump(1) << '\n';
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("manifest is not valid JSON: " + std::string(e.what()));
  }
  if (doc.value("format", "") != "mgeo-corpus-manifest") throw Error("'" + path.string() + "' is not a corpus manifest");
  CorpusManifest m;
  try {
    m.tokenizer = doc.at("tokenizer").get<std::string>();
    m.vocab = doc.at("vocab").get<std::vector<std::string>>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& c : doc.at("conditions")) {
      ConditionSet cs;
      const auto lc = c.at("length_class").get<std::string>();
      if (lc != "short" && lc != "long") throw Error("unknown length class '" + lc + "'");
      cs.length_class = lc == "short" ? LengthClass::short_context : LengthClass::long_context;
      cs.requested = c.at("requested").get<std::size_t>();
      cs.shortfall = c.at("shortfall").get<std::size_t>();
      cs.dropped = c.at("dropped").get<std::size_t>();
      for (const auto& r : c.at("ordered")) cs.ordered.push_back(record_from_json(r, cs.length_class, OrderClass::ordered));
      for (const auto& r : c.at("shuffled"))
        cs.shuffled.push_back(record_from_json(r, cs.length_class, OrderClass::shuffled));
      if (cs.ordered.size() != cs.shuffled.size()) throw Error("manifest conditions are not paired");
      m.conditions.push_back(std::move(cs));
    }
  } catch (const json::exception& e) {
    throw Error("manifest is malformed: " + std::string(e.what()));
  }
  return m;
}

}  // namespace mgeo
