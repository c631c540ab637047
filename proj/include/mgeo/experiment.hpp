#pragma once

#include <optional>
#include <vector>

#include "mgeo/interventions.hpp"
#include "mgeo/months.hpp"
#include "mgeo/trace.hpp"

namespace mgeo {

/// The three sweep configurations run under one intervention geometry.
struct ExperimentResult {
  SteeringMode mode = SteeringMode::additive;
  double baseline_accuracy = 0.0;
  std::size_t out_of_readout = 0;  // prompts whose full-vocabulary argmax is not a month
  SweepResult input_month;
  SweepResult input_interval;
  SweepResult output_prediction;
  std::optional<int> phase_change;  // input-month curve vs output curve

  const SweepResult& sweep(TargetKind kind) const;
};

ExperimentResult run_intervention_experiment(const ModelWeights& weights, std::span<const MonthsPrompt> prompts,
                                             const ReadoutSet& readout, SteeringMode mode,
                                             const SweepOptions& options = {});

/// Same, reusing a precomputed baseline.
ExperimentResult run_intervention_experiment(const ModelWeights& weights, std::span<const MonthsPrompt> prompts,
                                             const Baseline& baseline, const ReadoutSet& readout, SteeringMode mode,
                                             const SweepOptions& options = {});

/// Months trace: the 144 prompts in generate_prompts order with slots alpha, beta, last.
ActivationTrace capture_months_trace(const ModelWeights& weights, std::span<const MonthsPrompt> prompts,
                                     const std::string& model_name, TracePredictions* predictions = nullptr);

struct TraceBaseline {
  std::vector<MonthsPrompt> prompts;  // positions taken from the trace
  Baseline baseline;                  // log-probabilities stand in for logits
};

/// Rebuilds prompts and baseline from a months trace (e.g. one exported from a
/// pretrained model) so steering vectors can be planned without the model.
TraceBaseline baseline_from_trace(const ActivationTrace& trace, const TracePredictions& predictions,
                                  const ReadoutSet& readout);

/// Reference runner for intervention specs: what an external executor must produce.
std::vector<InterventionResult> execute_spec(const ModelWeights& weights, std::span<const MonthsPrompt> prompts,
                                             const InterventionSpec& spec);

}  // namespace mgeo
