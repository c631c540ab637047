#include "mgeo/trace.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include "json.hpp"
#include <numeric>

#include "mgeo/tensor_file.hpp"

namespace mgeo {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "trace I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'G', 'T', 'R'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kFixedHeader = 16;

}  // namespace

std::string TokenSelector::label() const {
  switch (kind) {
    case Kind::last: return "last";
    case Kind::fourth_from_end: return "fourth_from_end";
    case Kind::absolute: return "abs:" + std::to_string(index);
  }
  return "?";
}

TokenSelector TokenSelector::parse(const std::string& s) {
  if (s == "last") return last();
  if (s == "fourth_from_end" || s == "fourth-from-end") return fourth_from_end();
  std::string digits = s.rfind("abs:", 0) == 0 ? s.substr(4) : s;
  if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); }))
    return absolute(std::stoul(digits));
  throw Error("unknown token selector '" + s + "' (expected last, fourth_from_end or abs:<index>)");
}

std::size_t TokenSelector::resolve(std::size_t len) const {
  switch (kind) {
    case Kind::last:
      if (len < 1) throw Error("selector last needs a non-empty sequence");
      return len - 1;
    case Kind::fourth_from_end:
      if (len < 4) throw Error("selector fourth_from_end needs at least 4 tokens, sequence has " + std::to_string(len));
      return len - 4;
    case Kind::absolute:
      if (index >= len)
        throw Error("selector abs:" + std::to_string(index) + " is outside a sequence of " + std::to_string(len));
      return index;
  }
  return 0;
}

std::size_t ActivationTrace::expected_payload() const {
  return sequences.size() * layers.size() * slots.size() * static_cast<std::size_t>(d_model);
}

std::size_t ActivationTrace::layer_slot(int layer) const {
  auto it = std::find(layers.begin(), layers.end(), layer);
  if (it == layers.end()) throw Error("layer " + std::to_string(layer) + " is not captured in this trace");
  return static_cast<std::size_t>(it - layers.begin());
}

std::size_t ActivationTrace::slot_index(const std::string& label) const {
  auto it = std::find(slots.begin(), slots.end(), label);
  if (it == slots.end()) throw Error("position slot '" + label + "' is not captured in this trace");
  return static_cast<std::size_t>(it - slots.begin());
}

std::span<const float> ActivationTrace::vector(std::size_t seq, std::size_t ls, std::size_t slot) const {
  const auto d = static_cast<std::size_t>(d_model);
  const std::size_t offset = ((seq * layers.size() + ls) * slots.size() + slot) * d;
  return {payload.data() + offset, d};
}

namespace {

void validate_header(const ActivationTrace& t) {
  if (t.n_layers < 0) throw Error("trace header: n_layers must be non-negative");
  if (t.d_model < 1) throw Error("trace header: d_model must be positive");
  if (t.layers.empty()) throw Error("trace header: no captured layers");
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    if (t.layers[i] < 0 || t.layers[i] > t.n_layers)
      throw Error("trace header: layer " + std::to_string(t.layers[i]) + " outside 0.." + std::to_string(t.n_layers));
    if (i > 0 && t.layers[i] <= t.layers[i - 1]) throw Error("trace header: layers must be strictly ascending");
  }
  if (t.slots.empty()) throw Error("trace header: no position slots");
  for (const auto& s : t.sequences) {
    if (s.positions.size() != t.slots.size())
      throw Error("trace header: sequence '" + s.id + "' has " + std::to_string(s.positions.size()) +
                  " positions for " + std::to_string(t.slots.size()) + " slots");
    for (auto p : s.positions)
      if (p >= s.tokens.size())
        throw Error("trace header: sequence '" + s.id + "' position " + std::to_string(p) + " beyond its tokens");
  }
}

}  // namespace

void ActivationTrace::validate() const {
  validate_header(*this);
  if (payload.size() != expected_payload())
    throw Error("trace payload holds " + std::to_string(payload.size()) + " floats, header implies " +
                std::to_string(expected_payload()));
}

std::vector<double> TracePredictions::probs(std::size_t seq, std::size_t slot) const {
  const auto lp = row(seq, slot);
  std::vector<double> p(lp.size());
  double s = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) s += p[i] = std::exp(static_cast<double>(lp[i]));
  for (auto& v : p) v /= s;
  return p;
}

std::span<const float> TracePredictions::row(std::size_t seq, std::size_t slot) const {
  if (seq >= n_sequences || slot >= n_slots) throw Error("prediction index out of range");
  return {log_probs.data() + (seq * n_slots + slot) * vocab, vocab};
}

ActivationTrace capture_trace_at(const ModelWeights& weights, std::span<const CaptureInput> sequences,
                                 std::span<const int> layers, std::span<const std::string> slot_names,
                                 std::span<const std::vector<std::size_t>> positions, const std::string& model_name,
                                 TracePredictions* predictions) {
  if (positions.size() != sequences.size()) throw Error("capture needs one position list per sequence");
  ActivationTrace t;
  t.model = model_name;
  t.n_layers = weights.config.n_layers;
  t.d_model = weights.config.d_model;
  if (layers.empty()) {
    t.layers.resize(static_cast<std::size_t>(t.n_layers) + 1);
    std::iota(t.layers.begin(), t.layers.end(), 0);
  } else {
    t.layers.assign(layers.begin(), layers.end());
  }
  t.slots.assign(slot_names.begin(), slot_names.end());
  const auto vocab = static_cast<std::size_t>(weights.config.vocab_size);
  if (predictions) *predictions = TracePredictions{sequences.size(), t.slots.size(), vocab, {}};

  for (std::size_t s = 0; s < sequences.size(); ++s) {
    TraceSequence rec{sequences[s].id, sequences[s].tokens, positions[s]};
    t.sequences.push_back(rec);
    if (rec.positions.size() != t.slots.size())
      throw Error("sequence '" + rec.id + "' has the wrong number of positions");
    for (auto p : rec.positions)
      if (p >= rec.tokens.size()) throw Error("sequence '" + rec.id + "': position out of range");
  }
  validate_header(t);
  t.payload.reserve(t.expected_payload());

  for (const auto& rec : t.sequences) {
    const auto fwd = forward_with_hooks(weights, rec.tokens, {}, t.layers, predictions ? LogitRows::all : LogitRows::none);
    for (int layer : t.layers) {
      const Matrix& states = fwd.captured.at(layer);
      for (auto p : rec.positions) {
        const auto row = states.row(p);
        t.payload.insert(t.payload.end(), row.begin(), row.end());
      }
    }
    if (predictions) {
      for (auto p : rec.positions) {
        const auto logits = fwd.logits.row(p);
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (float l : logits) z += std::exp(l - mx);
        const double lse = mx + std::log(z);
        for (float l : logits) predictions->log_probs.push_back(static_cast<float>(l - lse));
      }
    }
  }
  return t;
}

ActivationTrace capture_trace(const ModelWeights& weights, std::span<const CaptureInput> sequences,
                              std::span<const int> layers, std::span<const TokenSelector> selectors,
                              const std::string& model_name, TracePredictions* predictions) {
  std::vector<std::string> names;
  for (const auto& s : selectors) names.push_back(s.label());
  std::vector<std::vector<std::size_t>> positions;
  for (const auto& seq : sequences) {
    std::vector<std::size_t> pos;
    for (const auto& sel : selectors) {
      try {
        pos.push_back(sel.resolve(seq.tokens.size()));
      } catch (const Error& e) {
        throw Error("sequence '" + seq.id + "': " + e.what());
      }
    }
    positions.push_back(std::move(pos));
  }
  return capture_trace_at(weights, sequences, layers, names, positions, model_name, predictions);
}

std::vector<std::uint8_t> encode_trace(const ActivationTrace& trace) {
  trace.validate();
  json seqs = json::array();
  for (const auto& s : trace.sequences) seqs.push_back({{"id", s.id}, {"tokens", s.tokens}, {"positions", s.positions}});
  const json header = {{"model", trace.model},
                       {"condition", trace.condition},
                       {"n_layers", trace.n_layers},
                       {"d_model", trace.d_model},
                       {"dtype", "f32"},
                       {"layers", trace.layers},
                       {"slots", trace.slots},
                       {"n_sequences", trace.sequences.size()},
                       {"sequences", seqs}};
  const std::string text = header.dump();
  const std::uint64_t n = text.size();

  std::vector<std::uint8_t> out(kFixedHeader + text.size() + trace.payload.size() * sizeof(float));
  std::memcpy(out.data(), kMagic, 4);
  std::memcpy(out.data() + 4, &kVersion, 4);
  std::memcpy(out.data() + 8, &n, 8);
  std::memcpy(out.data() + kFixedHeader, text.data(), text.size());
  if (!trace.payload.empty())
    std::memcpy(out.data() + kFixedHeader + text.size(), trace.payload.data(), trace.payload.size() * sizeof(float));
  return out;
}

ActivationTrace decode_trace(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFixedHeader) throw Error("truncated trace: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error("bad magic: not an MGTR trace file");
  std::uint32_t version;
  std::uint64_t n;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&n, bytes.data() + 8, 8);
  if (version != kVersion) throw Error("unsupported MGTR version " + std::to_string(version));
  if (n > bytes.size() - kFixedHeader) throw Error("truncated trace: header runs past the end of the file");

  json h;
  try {
    h = json::parse(bytes.begin() + kFixedHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kFixedHeader + n));
  } catch (const json::exception& e) {
    throw Error("trace header is not valid JSON: " + std::string(e.what()));
  }

  ActivationTrace t;
  try {
    if (h.at("dtype").get<std::string>() != "f32")
      throw Error("unsupported trace dtype '" + h.at("dtype").get<std::string>() + "'");
    t.model = h.at("model").get<std::string>();
    t.condition = h.value("condition", "");
    t.n_layers = h.at("n_layers").get<int>();
    t.d_model = h.at("d_model").get<int>();
    t.layers = h.at("layers").get<std::vector<int>>();
    t.slots = h.at("slots").get<std::vector<std::string>>();
    for (const auto& s : h.at("sequences"))
      t.sequences.push_back({s.at("id").get<std::string>(), s.at("tokens").get<std::vector<int>>(),
                             s.at("positions").get<std::vector<std::size_t>>()});
    if (h.at("n_sequences").get<std::size_t>() != t.sequences.size())
      throw Error("trace header: n_sequences disagrees with the sequence list");
  } catch (const json::exception& e) {
    throw Error("trace header is malformed: " + std::string(e.what()));
  }
  validate_header(t);

  const std::size_t have = bytes.size() - kFixedHeader - n;
  const std::size_t want = t.expected_payload() * sizeof(float);
  if (have != want) {
    const std::size_t vectors = t.sequences.size() * t.layers.size() * t.slots.size();
    if (have < want && (have % sizeof(float) != 0 || vectors == 0 || have % (vectors * sizeof(float)) != 0 || have == 0))
      throw Error("truncated trace payload: header implies " + std::to_string(want) + " bytes, file holds " +
                  std::to_string(have));
    throw Error("trace header/payload size mismatch: header declares d_model=" + std::to_string(t.d_model) +
                " (" + std::to_string(want) + " bytes), payload holds " + std::to_string(have) + " bytes");
  }
  t.payload.resize(t.expected_payload());
  if (want) std::memcpy(t.payload.data(), bytes.data() + kFixedHeader + n, want);
  return t;
}

void write_trace(const ActivationTrace& trace, const std::filesystem::path& path) {
  const auto bytes = encode_trace(trace);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write trace '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing trace '" + path.string() + "'");
}

ActivationTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open trace '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_trace(bytes);
}

void write_predictions(const TracePredictions& p, const std::filesystem::path& path) {
  if (p.log_probs.size() != p.n_sequences * p.n_slots * p.vocab) throw Error("prediction tensor has the wrong size");
  TensorFile f;
  f.tensors["log_probs"] = NamedTensor{{static_cast<std::int64_t>(p.n_sequences), static_cast<std::int64_t>(p.n_slots),
                                        static_cast<std::int64_t>(p.vocab)},
                                       p.log_probs};
  write_tensor_file(path, f);
}

TracePredictions read_predictions(const std::filesystem::path& path) {
  const auto f = read_tensor_file(path);
  const auto& t = f.at("log_probs");
  if (t.shape.size() != 3) throw Error("log_probs must have shape [sequences, slots, vocab]");
  TracePredictions p;
  p.n_sequences = static_cast<std::size_t>(t.shape[0]);
  p.n_slots = static_cast<std::size_t>(t.shape[1]);
  p.vocab = static_cast<std::size_t>(t.shape[2]);
  p.log_probs = t.values;
  for (float v : p.log_probs)
    if (!std::isfinite(v) || v > 1e-3f) throw Error("log_probs contains a non-finite or positive entry");
  return p;
}

Matrix select_token_matrix(const ActivationTrace& trace, int layer, const std::string& slot) {
  const std::size_t ls = trace.layer_slot(layer);
  const std::size_t si = trace.slot_index(slot);
  Matrix m(trace.sequences.size(), static_cast<std::size_t>(trace.d_model));
  for (std::size_t s = 0; s < trace.sequences.size(); ++s) {
    const auto v = trace.vector(s, ls, si);
    std::copy(v.begin(), v.end(), m.row(s).begin());
  }
  return m;
}

Matrix select_token_matrix(const ActivationTrace& trace, int layer, const TokenSelector& selector) {
  return select_token_matrix(trace, layer, selector.label());
}

}  // namespace mgeo
