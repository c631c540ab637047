#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgeo/model.hpp"
#include "mgeo/months.hpp"

namespace mgeo {

enum class SteeringMode { additive, angular_snap, norm_rescale };
enum class TargetKind { input_month, input_interval, output_prediction };

/// Which magnitude a norm_rescale vector targets: the mean norm of the target
/// group's members (default) or the norm of the target group's centroid.
enum class NormTarget { member_mean, centroid_norm };

std::string to_string(SteeringMode m);
std::string to_string(TargetKind k);
SteeringMode parse_steering_mode(const std::string& s);
TargetKind parse_target_kind(const std::string& s);

struct SteeringVector {
  int layer = 0;
  SteeringMode mode = SteeringMode::additive;
  std::vector<float> vector;  // additive: centroid difference; angular_snap: unit direction
  double target_norm = 0.0;   // norm_rescale only
  std::string source_group;
  std::string target_group;
  std::size_t source_size = 0;
  std::size_t target_size = 0;
};

/// additive: centroid(b) - centroid(a); angular_snap: unit centroid of the
/// row-normalized b; norm_rescale: mean row norm of b (or the norm of its centroid).
SteeringVector compute_steering_vector(const Matrix& group_a, const Matrix& group_b, int layer, SteeringMode mode,
                                       NormTarget norm_target = NormTarget::member_mean);

/// additive: h + v; angular_snap: |h| * d; norm_rescale: (target / |h|) * h.
std::vector<float> apply_intervention(std::span<const float> h, const SteeringVector& sv);

/// (after[g'] - after[g]) - (before[g'] - before[g]) over readout-restricted logits.
double preference_shift(std::span<const float> before, std::span<const float> after, int gamma, int gamma_prime);

struct SweepOptions {
  std::vector<int> layers;  // empty: block outputs 1..n_layers
  bool leave_one_out = false;
  NormTarget norm_target = NormTarget::member_mean;
  bool correct_only = false;  // aggregate only prompts the baseline answers correctly
};

struct SweepRecord {
  int layer = 0;
  std::size_t prompt = 0;
  int gamma = 0;
  int gamma_prime = 0;
  double shift = 0.0;
  bool baseline_correct = true;
  std::array<float, kMonths> before{};
  std::array<float, kMonths> after{};
};

struct InterventionOutcome {
  int layer = 0;
  std::vector<double> per_prompt_shift;  // mean over swept targets, one entry per aggregated prompt
  double mean_shift = 0.0;
};

struct EffectCurve {
  TargetKind kind = TargetKind::input_month;
  SteeringMode mode = SteeringMode::additive;
  std::vector<int> layers;
  std::vector<double> values;
};

struct SweepResult {
  EffectCurve curve;
  std::vector<InterventionOutcome> outcomes;
  std::vector<SweepRecord> records;  // layer-major, then prompt, then target
};

/// One planned intervention: which prompt, where, what vector, scored against which targets.
struct PlannedIntervention {
  std::size_t prompt = 0;
  int layer = 0;
  Position position;
  SteeringVector vector;
  int gamma = 0;
  int gamma_prime = 0;
};

/// Builds every steering vector a sweep needs from the baseline's captured states.
std::vector<PlannedIntervention> plan_sweep(std::span<const MonthsPrompt> prompts, const Baseline& baseline,
                                            int n_layers, TargetKind kind, SteeringMode mode,
                                            const SweepOptions& options = {});

SweepResult layer_sweep(const ModelWeights& weights, std::span<const MonthsPrompt> prompts, const Baseline& baseline,
                        const ReadoutSet& readout, TargetKind kind, SteeringMode mode,
                        const SweepOptions& options = {});

/// Aggregates scored records into a curve: mean over targets per prompt, then over prompts.
SweepResult aggregate_records(std::vector<SweepRecord> records, std::span<const int> layers, TargetKind kind,
                              SteeringMode mode, bool correct_only);

/// Centered window-3 moving average, truncated at the edges.
std::vector<double> smooth3(std::span<const double> v);

/// Smallest index i where smoothed output > smoothed input at i and every later index.
std::optional<std::size_t> detect_phase_change(std::span<const double> input_curve, std::span<const double> output_curve);
/// Same, returning the layer id of the curves.
std::optional<int> detect_phase_change(const EffectCurve& input_curve, const EffectCurve& output_curve);

// Intervention spec files consumed by external model runners.

struct InterventionSpec {
  TargetKind kind = TargetKind::input_month;
  std::array<int, kMonths> readout_ids{};
  std::vector<PlannedIntervention> entries;
};

/// Writes `<stem>.json` (structured description) and the sidecar tensor file it references.
void write_intervention_spec(const std::filesystem::path& json_path, const std::filesystem::path& tensor_path,
                             const InterventionSpec& spec);
InterventionSpec read_intervention_spec(const std::filesystem::path& json_path);

/// Before/after readout logits produced by running a spec; keyed by entry id.
struct InterventionResult {
  std::size_t id = 0;
  std::array<float, kMonths> before{};
  std::array<float, kMonths> after{};
};

std::vector<InterventionResult> read_intervention_results(const std::filesystem::path& path,
                                                          const std::array<int, kMonths>& expected_readout);
void write_intervention_results(const std::filesystem::path& path, const std::array<int, kMonths>& readout_ids,
                                std::span<const InterventionResult> results);

/// Scores externally produced results against their spec.
std::vector<SweepRecord> score_results(const InterventionSpec& spec, std::span<const InterventionResult> results);

}  // namespace mgeo
