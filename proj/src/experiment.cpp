#include "mgeo/experiment.hpp"

#include <algorithm>

namespace mgeo {

const SweepResult& ExperimentResult::sweep(TargetKind kind) const {
  switch (kind) {
    case TargetKind::input_month: return input_month;
    case TargetKind::input_interval: return input_interval;
    case TargetKind::output_prediction: return output_prediction;
  }
  return input_month;
}

ExperimentResult run_intervention_experiment(const ModelWeights& weights, std::span<const MonthsPrompt> prompts,
                                             const ReadoutSet& readout, SteeringMode mode,
                                             const SweepOptions& options) {
  const auto baseline = run_baseline(weights, prompts, readout);
  return run_intervention_experiment(weights, prompts, baseline, readout, mode, options);
}

ExperimentResult run_intervention_experiment(const ModelWeights& weights, std::span<const MonthsPrompt> prompts,
                                             const Baseline& baseline, const ReadoutSet& readout, SteeringMode mode,
                                             const SweepOptions& options) {
  ExperimentResult r;
  r.mode = mode;
  r.baseline_accuracy = baseline.accuracy();
  for (const auto& e : baseline.entries)
    if (!e.in_readout) ++r.out_of_readout;
  // Output groups are checked first so an empty prediction group fails before the long input sweeps.
  r.output_prediction = layer_sweep(weights, prompts, baseline, readout, TargetKind::output_prediction, mode, options);
  r.input_month = layer_sweep(weights, prompts, baseline, readout, TargetKind::input_month, mode, options);
  r.input_interval = layer_sweep(weights, prompts, baseline, readout, TargetKind::input_interval, mode, options);
  r.phase_change = detect_phase_change(r.input_month.curve, r.output_prediction.curve);
  return r;
}

ActivationTrace capture_months_trace(const ModelWeights& weights, std::span<const MonthsPrompt> prompts,
                                     const std::string& model_name, TracePredictions* predictions) {
  std::vector<CaptureInput> inputs;
  std::vector<std::vector<std::size_t>> positions;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    inputs.push_back({"months-" + std::to_string(i), prompts[i].tokens});
    positions.push_back({prompts[i].alpha_pos, prompts[i].beta_pos, prompts[i].final_pos});
  }
  const std::vector<std::string> slots = {"alpha", "beta", "last"};
  auto t = capture_trace_at(weights, inputs, {}, slots, positions, model_name, predictions);
  t.condition = "months";
  return t;
}

TraceBaseline baseline_from_trace(const ActivationTrace& trace, const TracePredictions& predictions,
                                  const ReadoutSet& readout) {
  const std::size_t n = static_cast<std::size_t>(kMonths) * kMonths;
  if (trace.sequences.size() != n)
    throw Error("months trace must hold 144 sequences, found " + std::to_string(trace.sequences.size()));
  if (predictions.n_sequences != n || predictions.n_slots != trace.slots.size())
    throw Error("predictions do not align with the months trace");
  readout.validate(static_cast<int>(predictions.vocab));
  const std::size_t sa = trace.slot_index("alpha"), sb = trace.slot_index("beta"), sl = trace.slot_index("last");

  TraceBaseline out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& seq = trace.sequences[i];
    MonthsPrompt p;
    p.alpha = static_cast<int>(i % kMonths);
    p.beta = static_cast<int>(i / kMonths) + 1;
    p.gamma = ground_truth_target(p.alpha, p.beta);
    p.tokens = seq.tokens;
    p.alpha_pos = seq.positions[sa];
    p.beta_pos = seq.positions[sb];
    p.final_pos = seq.positions[sl];
    if (p.final_pos + 1 != p.tokens.size()) throw Error("sequence '" + seq.id + "': slot last is not the final token");

    Baseline::Entry e;
    const auto lp = predictions.row(i, sl);
    e.logits.assign(lp.begin(), lp.end());
    e.readout = readout_prediction(e.logits, readout);
    e.correct = e.readout.month == p.gamma;
    const int argmax = static_cast<int>(std::max_element(e.logits.begin(), e.logits.end()) - e.logits.begin());
    e.in_readout = std::find(readout.ids.begin(), readout.ids.end(), argmax) != readout.ids.end();
    e.captured_positions = seq.positions;
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
      Matrix m(trace.slots.size(), static_cast<std::size_t>(trace.d_model));
      for (std::size_t s = 0; s < trace.slots.size(); ++s) {
        const auto v = trace.vector(i, l, s);
        std::copy(v.begin(), v.end(), m.row(s).begin());
      }
      e.captured[trace.layers[l]] = std::move(m);
    }
    out.prompts.push_back(std::move(p));
    out.baseline.entries.push_back(std::move(e));
  }
  return out;
}

std::vector<InterventionResult> execute_spec(const ModelWeights& weights, std::span<const MonthsPrompt> prompts,
                                             const InterventionSpec& spec) {
  ReadoutSet readout{spec.readout_ids};
  readout.validate(weights.config.vocab_size);
  std::vector<InterventionResult> out;
  for (std::size_t id = 0; id < spec.entries.size(); ++id) {
    const auto& e = spec.entries[id];
    if (e.prompt >= prompts.size()) throw Error("spec entry " + std::to_string(id) + " names a missing prompt");
    const auto& tokens = prompts[e.prompt].tokens;
    const auto before = forward_with_hooks(weights, tokens, {}, {}, LogitRows::last);
    const SteeringVector& sv = e.vector;
    const HookAction hook{e.layer, e.position, [&sv](std::span<const float> h) { return apply_intervention(h, sv); }};
    const auto after = forward_with_hooks(weights, tokens, std::span(&hook, 1), {}, LogitRows::last);
    InterventionResult r;
    r.id = id;
    r.before = readout_prediction(before.logits.row(0), readout).logits;
    r.after = readout_prediction(after.logits.row(0), readout).logits;
    out.push_back(r);
  }
  return out;
}

}  // namespace mgeo
