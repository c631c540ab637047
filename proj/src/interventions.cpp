#include "mgeo/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include "json.hpp"
#include <stdexcept>

#include "mgeo/tensor_file.hpp"

namespace mgeo {

using json = nlohmann::json;

std::string to_string(SteeringMode m) {
  switch (m) {
    case SteeringMode::additive: return "additive";
    case SteeringMode::angular_snap: return "angular_snap";
    case SteeringMode::norm_rescale: return "norm_rescale";
  }
  return "?";
}

std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::input_month: return "input_month";
    case TargetKind::input_interval: return "input_interval";
    case TargetKind::output_prediction: return "output_prediction";
  }
  return "?";
}

SteeringMode parse_steering_mode(const std::string& s) {
  if (s == "additive") return SteeringMode::additive;
  if (s == "angular" || s == "angular_snap") return SteeringMode::angular_snap;
  if (s == "norm" || s == "norm_rescale") return SteeringMode::norm_rescale;
  throw Error("unknown intervention mode '" + s + "' (expected additive, angular or norm)");
}

TargetKind parse_target_kind(const std::string& s) {
  if (s == "input-month" || s == "input_month" || s == "month") return TargetKind::input_month;
  if (s == "interval" || s == "input_interval" || s == "input-interval") return TargetKind::input_interval;
  if (s == "output" || s == "output_prediction") return TargetKind::output_prediction;
  throw Error("unknown intervention target '" + s + "' (expected input-month, interval or output)");
}

namespace {

std::vector<double> centroid(const Matrix& m, bool normalize_rows) {
  std::vector<double> c(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    double scale = 1.0;
    if (normalize_rows) {
      const double n = l2_norm(row);
      if (n == 0.0) throw Error("zero-norm row " + std::to_string(r) + " cannot be normalized");
      scale = 1.0 / n;
    }
    for (std::size_t i = 0; i < m.cols; ++i) c[i] += row[i] * scale;
  }
  for (auto& v : c) v /= static_cast<double>(m.rows);
  return c;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

SteeringVector compute_steering_vector(const Matrix& group_a, const Matrix& group_b, int layer, SteeringMode mode,
                                       NormTarget norm_target) {
  if (group_a.rows == 0 || group_b.rows == 0) throw Error("steering vector needs two non-empty groups");
  if (group_a.cols != group_b.cols) throw Error("steering groups have different dimensions");

  SteeringVector sv;
  sv.layer = layer;
  sv.mode = mode;
  sv.source_size = group_a.rows;
  sv.target_size = group_b.rows;
  switch (mode) {
    case SteeringMode::additive: {
      const auto ca = centroid(group_a, false);
      const auto cb = centroid(group_b, false);
      sv.vector.resize(ca.size());
      for (std::size_t i = 0; i < ca.size(); ++i) sv.vector[i] = static_cast<float>(cb[i] - ca[i]);
      break;
    }
    case SteeringMode::angular_snap: {
      const auto cb = centroid(group_b, true);
      const double n = norm(cb);
      if (n == 0.0) throw Error("target group directions cancel; no mean direction exists");
      sv.vector.resize(cb.size());
      for (std::size_t i = 0; i < cb.size(); ++i) sv.vector[i] = static_cast<float>(cb[i] / n);
      break;
    }
    case SteeringMode::norm_rescale: {
      if (norm_target == NormTarget::centroid_norm) {
        sv.target_norm = norm(centroid(group_b, false));
      } else {
        double s = 0.0;
        for (std::size_t r = 0; r < group_b.rows; ++r) s += l2_norm(group_b.row(r));
        sv.target_norm = s / static_cast<double>(group_b.rows);
      }
      if (!(sv.target_norm > 0.0)) throw Error("norm_rescale target norm must be positive");
      break;
    }
  }
  return sv;
}

std::vector<float> apply_intervention(std::span<const float> h, const SteeringVector& sv) {
  std::vector<float> out(h.size());
  switch (sv.mode) {
    case SteeringMode::additive:
      if (sv.vector.size() != h.size()) throw Error("steering vector dimension does not match the hidden state");
      for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] + sv.vector[i];
      break;
    case SteeringMode::angular_snap: {
      if (sv.vector.size() != h.size()) throw Error("steering direction dimension does not match the hidden state");
      const double hn = l2_norm(h);
      if (hn == 0.0) throw Error("angular_snap needs a nonzero hidden state");
      const double scale = hn / l2_norm(sv.vector);
      for (std::size_t i = 0; i < h.size(); ++i) out[i] = static_cast<float>(scale * sv.vector[i]);
      break;
    }
    case SteeringMode::norm_rescale: {
      const double hn = l2_norm(h);
      if (hn == 0.0) throw Error("norm_rescale needs a nonzero hidden state");
      const double scale = sv.target_norm / hn;
      for (std::size_t i = 0; i < h.size(); ++i) out[i] = static_cast<float>(scale * h[i]);
      break;
    }
  }
  return out;
}

double preference_shift(std::span<const float> before, std::span<const float> after, int gamma, int gamma_prime) {
  if (before.size() != after.size()) throw Error("before/after logits differ in length");
  const auto n = static_cast<int>(before.size());
  if (gamma < 0 || gamma >= n || gamma_prime < 0 || gamma_prime >= n)
    throw Error("preference_shift index outside the readout set");
  if (gamma == gamma_prime) throw Error("preference_shift needs distinct gamma and gamma_prime");
  const auto g = static_cast<std::size_t>(gamma), gp = static_cast<std::size_t>(gamma_prime);
  return (static_cast<double>(after[gp]) - after[g]) - (static_cast<double>(before[gp]) - before[g]);
}

namespace {

struct Role {
  TargetKind kind;

  int key(const MonthsPrompt& p, const Baseline::Entry& e) const {
    switch (kind) {
      case TargetKind::input_month: return p.alpha;
      case TargetKind::input_interval: return p.beta;
      case TargetKind::output_prediction: return e.readout.month;
    }
    return 0;
  }
  std::vector<int> keys() const {
    std::vector<int> k(kMonths);
    for (int i = 0; i < kMonths; ++i) k[static_cast<std::size_t>(i)] = kind == TargetKind::input_interval ? i + 1 : i;
    return k;
  }
  std::size_t position(const MonthsPrompt& p) const {
    switch (kind) {
      case TargetKind::input_month: return p.alpha_pos;
      case TargetKind::input_interval: return p.beta_pos;
      case TargetKind::output_prediction: return p.final_pos;
    }
    return 0;
  }
  Position hook_position(const MonthsPrompt& p) const {
    return kind == TargetKind::output_prediction ? Position::last() : Position::at(position(p));
  }
  int gamma(const MonthsPrompt& p, const Baseline::Entry& e) const {
    return kind == TargetKind::output_prediction ? e.readout.month : p.gamma;
  }
  int gamma_prime(const MonthsPrompt& p, int target_key) const {
    switch (kind) {
      case TargetKind::input_month: return ground_truth_target(target_key, p.beta);
      case TargetKind::input_interval: return ground_truth_target(p.alpha, target_key);
      case TargetKind::output_prediction: return target_key;
    }
    return 0;
  }
  bool contributes(const Baseline::Entry& e) const { return kind != TargetKind::output_prediction || e.in_readout; }
  std::string group_name(int key) const {
    switch (kind) {
      case TargetKind::input_month: return std::string("month:") + kMonthNames[static_cast<std::size_t>(key)];
      case TargetKind::input_interval: return std::string("interval:") + kIntervalNames[static_cast<std::size_t>(key - 1)];
      case TargetKind::output_prediction: return std::string("prediction:") + kMonthNames[static_cast<std::size_t>(key)];
    }
    return "?";
  }
};

Matrix gather(std::span<const MonthsPrompt> prompts, const Baseline& baseline, const Role& role, int layer, int key,
              std::optional<std::size_t> exclude) {
  std::vector<std::size_t> members;
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    const auto& e = baseline.entries[j];
    if (exclude && *exclude == j) continue;
    if (role.contributes(e) && role.key(prompts[j], e) == key) members.push_back(j);
  }
  if (members.empty()) return {};
  const auto first = baseline.entries[members.front()].state(layer, role.position(prompts[members.front()]));
  Matrix g(members.size(), first.size());
  for (std::size_t r = 0; r < members.size(); ++r) {
    const auto src = baseline.entries[members[r]].state(layer, role.position(prompts[members[r]]));
    if (src.size() != g.cols) throw Error("baseline states differ in width");
    std::copy(src.begin(), src.end(), g.row(r).begin());
  }
  return g;
}

std::vector<int> resolve_layers(const SweepOptions& o, int n_layers) {
  if (!o.layers.empty()) {
    for (int l : o.layers)
      if (l < 0 || l > n_layers) throw Error("sweep layer " + std::to_string(l) + " is out of range");
    return o.layers;
  }
  std::vector<int> layers;
  for (int l = 1; l <= n_layers; ++l) layers.push_back(l);
  return layers;
}

}  // namespace

std::vector<PlannedIntervention> plan_sweep(std::span<const MonthsPrompt> prompts, const Baseline& baseline,
                                            int n_layers, TargetKind kind, SteeringMode mode,
                                            const SweepOptions& options) {
  if (baseline.entries.size() != prompts.size()) throw Error("baseline does not cover the prompt set");
  const Role role{kind};
  const auto layers = resolve_layers(options, n_layers);
  const auto keys = role.keys();

  std::vector<PlannedIntervention> plan;
  for (int layer : layers) {
    std::map<int, Matrix> groups;
    for (int k : keys) {
      groups[k] = gather(prompts, baseline, role, layer, k, std::nullopt);
      if (groups[k].rows == 0 && kind == TargetKind::output_prediction)
        throw Error("no prompt has baseline prediction " + std::string(kMonthNames[static_cast<std::size_t>(k)]) +
                    "; the output-centric group is empty");
    }
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto& p = prompts[i];
      const auto& e = baseline.entries[i];
      const int source = role.key(p, e);
      Matrix own;
      const Matrix* source_rows = &groups.at(source);
      if (options.leave_one_out) {
        own = gather(prompts, baseline, role, layer, source, i);
        source_rows = &own;
      }
      if (source_rows->rows == 0 && mode == SteeringMode::additive)
        throw Error("source group " + role.group_name(source) + " is empty at layer " + std::to_string(layer));
      for (int target : keys) {
        if (target == source) continue;
        PlannedIntervention pi;
        pi.prompt = i;
        pi.layer = layer;
        pi.position = role.hook_position(p);
        // Only the additive mode reads the source group; the others record it for provenance.
        const Matrix& a = source_rows->rows ? *source_rows : groups.at(target);
        pi.vector = compute_steering_vector(a, groups.at(target), layer, mode, options.norm_target);
        pi.vector.source_group = role.group_name(source);
        pi.vector.target_group = role.group_name(target);
        pi.vector.source_size = source_rows->rows;
        pi.gamma = role.gamma(p, e);
        pi.gamma_prime = role.gamma_prime(p, target);
        plan.push_back(std::move(pi));
      }
    }
  }
  return plan;
}

SweepResult aggregate_records(std::vector<SweepRecord> records, std::span<const int> layers, TargetKind kind,
                              SteeringMode mode, bool correct_only) {
  SweepResult result;
  result.curve.kind = kind;
  result.curve.mode = mode;
  result.curve.layers.assign(layers.begin(), layers.end());
  for (int layer : layers) {
    InterventionOutcome out;
    out.layer = layer;
    std::map<std::size_t, std::pair<double, int>> per_prompt;  // ordered by prompt index
    for (const auto& r : records) {
      if (r.layer != layer || (correct_only && !r.baseline_correct)) continue;
      auto& acc = per_prompt[r.prompt];
      acc.first += r.shift;
      acc.second += 1;
    }
    double total = 0.0;
    for (const auto& [prompt, acc] : per_prompt) {
      out.per_prompt_shift.push_back(acc.first / acc.second);
      total += out.per_prompt_shift.back();
    }
    out.mean_shift = out.per_prompt_shift.empty() ? 0.0 : total / static_cast<double>(out.per_prompt_shift.size());
    result.curve.values.push_back(out.mean_shift);
    result.outcomes.push_back(std::move(out));
  }
  result.records = std::move(records);
  return result;
}

SweepResult layer_sweep(const ModelWeights& weights, std::span<const MonthsPrompt> prompts, const Baseline& baseline,
                        const ReadoutSet& readout, TargetKind kind, SteeringMode mode, const SweepOptions& options) {
  const auto layers = resolve_layers(options, weights.config.n_layers);
  SweepOptions resolved = options;
  resolved.layers = layers;
  const auto plan = plan_sweep(prompts, baseline, weights.config.n_layers, kind, mode, resolved);

  // Hook plumbing must be neutral: an unhooked rerun reproduces the baseline bit for bit.
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto fwd = forward_with_hooks(weights, prompts[i].tokens, {}, {}, LogitRows::last);
    if (!std::equal(baseline.entries[i].logits.begin(), baseline.entries[i].logits.end(), fwd.logits.data.begin()))
      throw std::logic_error("unintervened rerun of prompt " + std::to_string(i) + " differs from the baseline");
  }

  std::vector<SweepRecord> records;
  records.reserve(plan.size());
  for (const auto& pi : plan) {
    const SteeringVector& sv = pi.vector;
    const HookAction hook{pi.layer, pi.position, [&sv](std::span<const float> h) { return apply_intervention(h, sv); }};
    const auto fwd = forward_with_hooks(weights, prompts[pi.prompt].tokens, std::span(&hook, 1), {}, LogitRows::last);
    SweepRecord r;
    r.layer = pi.layer;
    r.prompt = pi.prompt;
    r.gamma = pi.gamma;
    r.gamma_prime = pi.gamma_prime;
    r.baseline_correct = baseline.entries[pi.prompt].correct;
    r.before = baseline.entries[pi.prompt].readout.logits;
    r.after = readout_prediction(fwd.logits.row(0), readout).logits;
    r.shift = preference_shift(r.before, r.after, r.gamma, r.gamma_prime);
    records.push_back(r);
  }
  return aggregate_records(std::move(records), layers, kind, mode, options.correct_only);
}

std::vector<double> smooth3(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(v.size() - 1, i + 1);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += v[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

std::optional<std::size_t> detect_phase_change(std::span<const double> input_curve,
                                               std::span<const double> output_curve) {
  if (input_curve.size() != output_curve.size()) throw Error("phase detection needs equal-length curves");
  const auto in = smooth3(input_curve);
  const auto out = smooth3(output_curve);
  std::optional<std::size_t> found;
  for (std::size_t i = in.size(); i-- > 0;) {
    if (!(out[i] > in[i])) break;
    found = i;
  }
  return found;
}

std::optional<int> detect_phase_change(const EffectCurve& input_curve, const EffectCurve& output_curve) {
  if (input_curve.layers != output_curve.layers) throw Error("phase detection needs curves over the same layers");
  const auto idx = detect_phase_change(input_curve.values, output_curve.values);
  if (!idx) return std::nullopt;
  return input_curve.layers[*idx];
}

// ---------------------------------------------------------------------------
// Spec and results files

namespace {

json position_json(const Position& p) {
  if (p.from_end) return p.offset == 0 ? json("last") : json{{"from_end", p.offset}};
  return json(p.offset);
}

Position position_from_json(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != "last") throw Error("unknown position selector '" + j.get<std::string>() + "'");
    return Position::last();
  }
  if (j.is_object()) return Position{true, j.at("from_end").get<std::size_t>()};
  return Position::at(j.get<std::size_t>());
}

std::array<int, kMonths> readout_from_json(const json& j) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != kMonths) throw Error("readout_ids must list exactly 12 token ids");
  std::array<int, kMonths> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace

void write_intervention_spec(const std::filesystem::path& json_path, const std::filesystem::path& tensor_path,
                             const InterventionSpec& spec) {
  TensorFile tensors;
  json entries = json::array();
  for (std::size_t id = 0; id < spec.entries.size(); ++id) {
    const auto& e = spec.entries[id];
    const std::string name = "iv." + std::to_string(id);
    if (e.vector.mode == SteeringMode::norm_rescale)
      tensors.tensors[name] = NamedTensor{{1}, {static_cast<float>(e.vector.target_norm)}};
    else
      tensors.tensors[name] =
          NamedTensor{{static_cast<std::int64_t>(e.vector.vector.size())}, e.vector.vector};
    entries.push_back({{"id", id},
                       {"prompt", e.prompt},
                       {"layer", e.layer},
                       {"position", position_json(e.position)},
                       {"mode", to_string(e.vector.mode)},
                       {"tensor", name},
                       {"gamma", e.gamma},
                       {"gamma_prime", e.gamma_prime},
                       {"source_group", e.vector.source_group},
                       {"target_group", e.vector.target_group}});
  }
  write_tensor_file(tensor_path, tensors);
  const json doc = {{"format", "mgeo-intervention-spec"},
                    {"version", 1},
                    {"tensor_file", tensor_path.filename().string()},
                    {"target_kind", to_string(spec.kind)},
                    {"readout_ids", spec.readout_ids},
                    {"interventions", entries}};
  std::ofstream out(json_path);
  if (!out) throw Error("cannot write '" + json_path.string() + "'");
  out << doc.dump(1) << '\n';
}

InterventionSpec read_intervention_spec(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw Error("cannot open intervention spec '" + json_path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("intervention spec is not valid JSON: " + std::string(e.what()));
  }
  if (doc.value("format", "") != "mgeo-intervention-spec") throw Error("not an intervention spec file");
  const auto tensors = read_tensor_file(json_path.parent_path() / doc.at("tensor_file").get<std::string>());
  InterventionSpec spec;
  spec.kind = parse_target_kind(doc.at("target_kind").get<std::string>());
  spec.readout_ids = readout_from_json(doc.at("readout_ids"));
  for (const auto& j : doc.at("interventions")) {
    PlannedIntervention e;
    e.prompt = j.at("prompt").get<std::size_t>();
    e.layer = j.at("layer").get<int>();
    e.position = position_from_json(j.at("position"));
    e.vector.layer = e.layer;
    e.vector.mode = parse_steering_mode(j.at("mode").get<std::string>());
    e.vector.source_group = j.value("source_group", "");
    e.vector.target_group = j.value("target_group", "");
    const auto& t = tensors.at(j.at("tensor").get<std::string>());
    if (e.vector.mode == SteeringMode::norm_rescale)
      e.vector.target_norm = t.values.at(0);
    else
      e.vector.vector = t.values;
    e.gamma = j.at("gamma").get<int>();
    e.gamma_prime = j.at("gamma_prime").get<int>();
    spec.entries.push_back(std::move(e));
  }
  return spec;
}

void write_intervention_results(const std::filesystem::path& path, const std::array<int, kMonths>& readout_ids,
                                std::span<const InterventionResult> results) {
  json rows = json::array();
  for (const auto& r : results)
    rows.push_back({{"id", r.id}, {"logits_before", r.before}, {"logits_after", r.after}});
  const json doc = {{"format", "mgeo-intervention-results"}, {"version", 1}, {"readout_ids", readout_ids},
                    {"results", rows}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << doc.dump(1) << '\n';
}

std::vector<InterventionResult> read_intervention_results(const std::filesystem::path& path,
                                                          const std::array<int, kMonths>& expected_readout) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open intervention results '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("intervention results are not valid JSON: " + std::string(e.what()));
  }
  if (doc.value("format", "") != "mgeo-intervention-results") throw Error("not an intervention results file");
  if (readout_from_json(doc.at("readout_ids")) != expected_readout)
    throw Error("results were produced with a different month readout set");
  std::vector<InterventionResult> out;
  for (const auto& j : doc.at("results")) {
    InterventionResult r;
    r.id = j.at("id").get<std::size_t>();
    const auto b = j.at("logits_before").get<std::vector<float>>();
    const auto a = j.at("logits_after").get<std::vector<float>>();
    if (b.size() != kMonths || a.size() != kMonths) throw Error("result " + std::to_string(r.id) + " lacks 12 logits");
    std::copy(b.begin(), b.end(), r.before.begin());
    std::copy(a.begin(), a.end(), r.after.begin());
    out.push_back(r);
  }
  return out;
}

std::vector<SweepRecord> score_results(const InterventionSpec& spec, std::span<const InterventionResult> results) {
  std::vector<SweepRecord> out;
  out.reserve(results.size());
  for (const auto& r : results) {
    if (r.id >= spec.entries.size()) throw Error("result id " + std::to_string(r.id) + " is not in the spec");
    const auto& e = spec.entries[r.id];
    SweepRecord rec;
    rec.layer = e.layer;
    rec.prompt = e.prompt;
    rec.gamma = e.gamma;
    rec.gamma_prime = e.gamma_prime;
    rec.before = r.before;
    rec.after = r.after;
    rec.shift = preference_shift(r.before, r.after, e.gamma, e.gamma_prime);
    // Prompts are indexed as in generate_prompts, so the true answer follows from the index.
    if (e.prompt >= static_cast<std::size_t>(kMonths * kMonths))
      throw Error("spec entry " + std::to_string(r.id) + " names prompt " + std::to_string(e.prompt) +
                  " outside the 144-prompt set");
    const int truth = ground_truth_target(static_cast<int>(e.prompt % kMonths), static_cast<int>(e.prompt / kMonths) + 1);
    const auto pred = static_cast<int>(std::max_element(r.before.begin(), r.before.end()) - r.before.begin());
    rec.baseline_correct = pred == truth;
    out.push_back(rec);
  }
  return out;
}

}  // namespace mgeo
