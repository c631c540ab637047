#pragma once

// MGTR activation traces.
//
//   bytes 0..3   "MGTR"
//   bytes 4..7   u32 LE format version (1)
//   bytes 8..15  u64 LE header length N
//   N bytes      UTF-8 JSON header (keys sorted, no padding)
//   payload      f32 LE, (sequence, layer, slot, feature) order
//
// The header lists the captured layers and the named position slots; every
// sequence records the absolute position it resolved for each slot.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgeo/model.hpp"

namespace mgeo {

struct TokenSelector {
  enum class Kind { last, fourth_from_end, absolute };
  Kind kind = Kind::last;
  std::size_t index = 0;  // absolute only

  static TokenSelector last() { return {Kind::last, 0}; }
  static TokenSelector fourth_from_end() { return {Kind::fourth_from_end, 0}; }
  static TokenSelector absolute(std::size_t i) { return {Kind::absolute, i}; }

  /// Slot label stored in trace headers: "last", "fourth_from_end", "abs:<i>".
  std::string label() const;
  static TokenSelector parse(const std::string& s);
  /// Throws Error when the sequence is too short.
  std::size_t resolve(std::size_t len) const;

  bool operator==(const TokenSelector&) const = default;
};

struct TraceSequence {
  std::string id;
  std::vector<int> tokens;
  std::vector<std::size_t> positions;  // one per slot
  bool operator==(const TraceSequence&) const = default;
};

struct ActivationTrace {
  std::string model;
  std::string condition;
  int n_layers = 0;  // model depth; layer ids run 0..n_layers
  int d_model = 0;
  std::vector<int> layers;        // captured layer ids, ascending
  std::vector<std::string> slots;  // position slot labels
  std::vector<TraceSequence> sequences;
  std::vector<float> payload;

  std::size_t expected_payload() const;
  std::size_t layer_slot(int layer) const;  // throws when not captured
  std::size_t slot_index(const std::string& label) const;
  std::span<const float> vector(std::size_t seq, std::size_t layer_slot, std::size_t slot) const;
  /// Throws Error unless header fields and payload size agree.
  void validate() const;

  bool operator==(const ActivationTrace&) const = default;
};

struct CaptureInput {
  std::string id;
  std::vector<int> tokens;
};

/// Next-token log-probabilities per (sequence, slot); the predictions sidecar.
struct TracePredictions {
  std::size_t n_sequences = 0;
  std::size_t n_slots = 0;
  std::size_t vocab = 0;
  std::vector<float> log_probs;

  /// exp of the stored log-probabilities, renormalized in double.
  std::vector<double> probs(std::size_t seq, std::size_t slot) const;
  std::span<const float> row(std::size_t seq, std::size_t slot) const;
};

/// Empty `layers` captures 0..n_layers. Positions come from `selectors`.
/// When `predictions` is non-null it receives the softmax at every selected position.
ActivationTrace capture_trace(const ModelWeights& weights, std::span<const CaptureInput> sequences,
                              std::span<const int> layers, std::span<const TokenSelector> selectors,
                              const std::string& model_name, TracePredictions* predictions = nullptr);

/// Variant with explicit per-sequence positions under caller-chosen slot names.
ActivationTrace capture_trace_at(const ModelWeights& weights, std::span<const CaptureInput> sequences,
                                 std::span<const int> layers, std::span<const std::string> slot_names,
                                 std::span<const std::vector<std::size_t>> positions, const std::string& model_name,
                                 TracePredictions* predictions = nullptr);

void write_trace(const ActivationTrace& trace, const std::filesystem::path& path);
ActivationTrace read_trace(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_trace(const ActivationTrace& trace);
ActivationTrace decode_trace(std::span<const std::uint8_t> bytes);

/// Sidecar: one named tensor "log_probs" of shape [n_sequences, n_slots, vocab].
void write_predictions(const TracePredictions& p, const std::filesystem::path& path);
TracePredictions read_predictions(const std::filesystem::path& path);

/// n_sequences x d_model, rows in sequence order.
Matrix select_token_matrix(const ActivationTrace& trace, int layer, const TokenSelector& selector);
Matrix select_token_matrix(const ActivationTrace& trace, int layer, const std::string& slot);

}  // namespace mgeo
