#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "mgeo/tensor.hpp"

namespace mgeo {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int vocab_size = 64;
  double rope_theta = 10000.0;
  double rms_eps = 1e-5;
  int max_seq_len = 64;

  /// Throws Error when a count is < 1, eps is not positive, or heads do not split d_model evenly.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  Matrix attn_q, attn_k, attn_v, attn_o;  // d_model x d_model, (out, in)
  Matrix mlp_gate, mlp_up;                // d_ff x d_model
  Matrix mlp_down;                        // d_model x d_ff
  std::vector<float> norm1, norm2;        // d_model

  bool operator==(const LayerWeights&) const = default;
};

/// Immutable after construction; safe to share across concurrent forward passes.
struct ModelWeights {
  ModelConfig config;
  Matrix embed;  // vocab x d_model
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;
  Matrix unembed;  // vocab x d_model

  bool operator==(const ModelWeights&) const = default;
};

/// Token position inside a sequence: an absolute index or the final token.
struct Position {
  bool from_end = false;
  std::size_t offset = 0;  // absolute index, or distance from the end (0 = last)

  static Position at(std::size_t index) { return {false, index}; }
  static Position last() { return {true, 0}; }

  /// Throws Error when the position falls outside a sequence of length `len`.
  std::size_t resolve(std::size_t len) const;
  bool operator==(const Position&) const = default;
};

using HiddenTransform = std::function<std::vector<float>(std::span<const float>)>;

/// Replaces the residual-stream vector at the output of `layer` (0 = embedding
/// output, L = output of block L) before the next block consumes it.
struct HookAction {
  int layer = 0;
  Position position;
  HiddenTransform transform;
};

enum class LogitRows { all, last, none };

struct ForwardResult {
  Matrix logits;                  // one row per position (or only the last)
  std::map<int, Matrix> captured;  // layer -> seq_len x d_model, post-hook values
};

enum class ReadoutNorm { apply_final_norm, bypass };

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, double eps);

ForwardResult forward_with_hooks(const ModelWeights& weights, std::span<const int> tokens,
                                 std::span<const HookAction> hooks = {},
                                 std::span<const int> capture_layers = {},
                                 LogitRows logit_rows = LogitRows::all);

/// W_out * h, with the final RMS norm applied first unless bypassed. No bias terms.
std::vector<float> unembed_logits(const ModelWeights& weights, std::span<const float> h,
                                  ReadoutNorm norm = ReadoutNorm::apply_final_norm);

/// Scaled Gaussian init (std 1/sqrt(d_model)), unit norm gains. Bit-identical for equal (config, seed).
ModelWeights random_init(const ModelConfig& config, std::uint64_t seed);

/// Loads and shape-checks every tensor named embed, layer.{i}.{attn_q,...,norm2}, final_norm, unembed.
ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& config);
/// Reads the config stored in the container metadata, then loads as above.
ModelWeights load_model(const std::filesystem::path& path);
void save_weights(const std::filesystem::path& path, const ModelWeights& weights);

/// Shared by the loader and the trainer: visits every named parameter in canonical order.
void for_each_parameter(ModelWeights& w, const std::function<void(const std::string&, std::vector<std::int64_t>, std::span<float>)>& fn);
void for_each_parameter(const ModelWeights& w, const std::function<void(const std::string&, std::vector<std::int64_t>, std::span<const float>)>& fn);

std::vector<double> softmax(std::span<const float> logits);

}  // namespace mgeo
