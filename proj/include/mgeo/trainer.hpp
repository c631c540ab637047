#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mgeo/model.hpp"
#include "mgeo/months.hpp"
#include "mgeo/vocab.hpp"

namespace mgeo {

struct TrainConfig {
  double learning_rate = 3e-3;
  int steps = 800;
  int batch_size = 32;
  std::uint64_t seed = 1;
  double eval_fraction = 0.1;  // share of augmented sequences held out for validation loss
  int augment_copies = 2;      // prefixed replicas of each canonical prompt
  int max_prefix = 4;          // distractor words prepended to a replica, 1..max_prefix

  // Adam
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;

  void validate() const;
};

struct LabeledSequence {
  std::vector<int> tokens;
  int target_month = 0;  // label, 0..11
  bool canonical = false;
};

struct MonthsDataset {
  std::vector<LabeledSequence> train;       // canonical prompts + augmented replicas
  std::vector<LabeledSequence> validation;  // held-out augmented replicas
  std::vector<LabeledSequence> eval;        // the 144 canonical prompts, in generate_prompts order
};

MonthsDataset build_months_dataset(const WordVocab& vocab, std::uint64_t augmentation_seed, int augment_copies = 0,
                                   int max_prefix = 4, double eval_fraction = 0.1);

struct TrainResult {
  ModelWeights weights;
  std::vector<double> loss_history;  // mean batch loss per step
  double validation_loss = 0.0;
};

/// Adam on final-token cross-entropy over the full vocabulary. Bit-reproducible
/// for a fixed (config, train_config). Throws Error naming the step on a non-finite loss.
TrainResult train_toy_model(const ModelConfig& config, const TrainConfig& train_config);

/// Fraction of sequences whose twelve-month restricted argmax equals the label.
double evaluate(const ModelWeights& weights, std::span<const LabeledSequence> sequences, const ReadoutSet& readout);

/// Mean cross-entropy over `batch`; `grads` (same shapes as `weights`) is overwritten.
double loss_and_gradients(const ModelWeights& weights, std::span<const LabeledSequence> batch,
                          const ReadoutSet& readout, ModelWeights& grads);

/// Mean cross-entropy through the inference path (no gradients).
double mean_loss(const ModelWeights& weights, std::span<const LabeledSequence> batch, const ReadoutSet& readout);

ModelConfig default_toy_config(int vocab_size);

}  // namespace mgeo
