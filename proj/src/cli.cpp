#include "mgeo/cli.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "mgeo/corpus.hpp"
#include "mgeo/experiment.hpp"
#include "mgeo/geometry.hpp"
#include "mgeo/report.hpp"
#include "mgeo/trainer.hpp"

namespace mgeo {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string out_dir;
  std::string model_name = "toy";
};

struct TrainOpts {
  int layers = 4, d_model = 64, heads = 4, d_ff = 128;
  TrainConfig tc;
  std::string out = "model.safetensors";
};

struct MonthsOpts {
  std::string weights;
};

struct SweepOpts {
  std::string weights;
  std::vector<std::string> modes = {"additive"};
  std::vector<std::string> targets = {"all"};
  std::vector<int> layers;
  bool leave_one_out = false;
  std::string norm_target = "member-mean";
  bool correct_only = false;
  bool records = false;
  std::string trace, predictions, emit_spec, spec, results;
  std::vector<int> readout_ids;
};

struct CorpusOpts {
  std::vector<std::string> text;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  std::string tokenizer = "corpus-word";
  std::string out = "manifest.json";
};

struct CaptureOpts {
  std::string manifest, weights;
  bool random_init = false;
  std::uint64_t seed = 1;
  bool months = false;
  std::vector<std::string> conditions = {"all"};
  std::vector<std::string> selectors = {"last", "fourth_from_end"};
  std::vector<int> layers;
};

struct PrOpts {
  std::vector<std::string> traces;
};

struct CorrOpts {
  std::string trace, predictions;
  std::vector<std::string> metrics = {"euclidean", "angular"};
  std::vector<std::string> slots;
  std::vector<int> restrict_ids;
};

struct PhaseOpts {
  std::vector<std::string> csv;
};

struct ReportOpts {
  std::vector<std::string> csv;
};

fs::path out_path(const Common& c, const std::string& name) {
  fs::path p(name);
  return p.is_absolute() ? p : fs::path(c.out_dir) / p;
}

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw Error(std::string("missing required flag ") + flag);
  if (!fs::exists(path)) throw Error(std::string(flag) + ": file '" + path + "' does not exist");
}

ReadoutSet toy_readout() { return months_readout(months_vocab()); }

int cmd_train(const Common& c, const TrainOpts& o) {
  const auto vocab = months_vocab();
  ModelConfig cfg = default_toy_config(vocab.size());
  cfg.n_layers = o.layers;
  cfg.d_model = o.d_model;
  cfg.n_heads = o.heads;
  cfg.d_ff = o.d_ff;
  cfg.validate();
  const auto result = train_toy_model(cfg, o.tc);
  save_weights(out_path(c, o.out), result.weights);

  const auto prompts = generate_prompts(vocab);
  const auto ds = build_months_dataset(vocab, o.tc.seed, 0);
  const double acc = evaluate(result.weights, ds.eval, toy_readout());

  std::vector<CsvRow> rows;
  for (std::size_t s = 0; s < result.loss_history.size(); ++s)
    rows.push_back({c.model_name, "train", "final", static_cast<int>(s), "loss", result.loss_history[s]});
  rows.push_back({c.model_name, "validation", "final", cfg.n_layers, "loss", result.validation_loss});
  rows.push_back({c.model_name, "eval", "final", cfg.n_layers, "accuracy", acc});
  write_csv(out_path(c, "train.csv"), rows);
  std::printf("trained %d-layer model: final loss %.6g, accuracy %.4f on %zu canonical prompts\n", cfg.n_layers,
              result.loss_history.back(), acc, prompts.size());
  return 0;
}

int cmd_months(const Common& c, const MonthsOpts& o) {
  require_file(o.weights, "--weights");
  const auto w = load_model(o.weights);
  const auto prompts = generate_prompts(months_vocab());
  const auto b = run_baseline(w, prompts, toy_readout());
  std::size_t outside = 0;
  for (const auto& e : b.entries) outside += e.in_readout ? 0 : 1;
  const std::vector<CsvRow> rows = {
      {c.model_name, "baseline", "final", w.config.n_layers, "accuracy", b.accuracy()},
      {c.model_name, "baseline", "final", w.config.n_layers, "out_of_readout", static_cast<double>(outside)}};
  write_csv(out_path(c, "months.csv"), rows);
  std::printf("baseline accuracy %.4f (%zu of 144 prompts predict a non-month token)\n", b.accuracy(), outside);
  return 0;
}

std::vector<TargetKind> parse_targets(const std::vector<std::string>& v) {
  std::vector<TargetKind> out;
  for (const auto& t : v) {
    if (t == "all") return {TargetKind::input_month, TargetKind::input_interval, TargetKind::output_prediction};
    out.push_back(parse_target_kind(t));
  }
  return out;
}

std::vector<SteeringMode> parse_modes(const std::vector<std::string>& v) {
  std::vector<SteeringMode> out;
  for (const auto& m : v) {
    if (m == "all") return {SteeringMode::additive, SteeringMode::angular_snap, SteeringMode::norm_rescale};
    out.push_back(parse_steering_mode(m));
  }
  return out;
}

void curve_rows(std::vector<CsvRow>& rows, const std::string& model, const SweepResult& r) {
  for (std::size_t i = 0; i < r.curve.layers.size(); ++i)
    rows.push_back({model, to_string(r.curve.mode), to_string(r.curve.kind), r.curve.layers[i], "mean_shift",
                    r.curve.values[i]});
}

void phase_rows(std::vector<CsvRow>& rows, const std::string& model, const std::string& condition,
                std::optional<int> layer) {
  rows.push_back({model, condition, "input_month_vs_output_prediction", layer.value_or(-1), "phase_change",
                  layer ? 1.0 : 0.0});
}

int cmd_sweep(const Common& c, const SweepOpts& o) {
  SweepOptions so;
  so.layers = o.layers;
  so.leave_one_out = o.leave_one_out;
  so.correct_only = o.correct_only;
  if (o.norm_target == "member-mean")
    so.norm_target = NormTarget::member_mean;
  else if (o.norm_target == "centroid-norm")
    so.norm_target = NormTarget::centroid_norm;
  else
    throw Error("--norm-target must be member-mean or centroid-norm");
  const auto modes = parse_modes(o.modes);
  const auto kinds = parse_targets(o.targets);

  const int sources = !o.weights.empty() + !o.trace.empty() + !o.spec.empty();
  if (sources != 1) throw Error("sweep needs exactly one of --weights, --trace (with --emit-spec) or --spec (with --results)");

  std::vector<CsvRow> rows, record_rows;
  auto add_records = [&](const SweepResult& r) {
    if (!o.records) return;
    for (const auto& rec : r.records)
      record_rows.push_back({c.model_name, to_string(r.curve.mode), to_string(r.curve.kind), rec.layer,
                             "shift:prompt=" + std::to_string(rec.prompt) + ":gamma_prime=" +
                                 std::to_string(rec.gamma_prime),
                             rec.shift});
  };

  if (!o.spec.empty()) {
    require_file(o.spec, "--spec");
    require_file(o.results, "--results");
    const auto spec = read_intervention_spec(o.spec);
    const auto results = read_intervention_results(o.results, spec.readout_ids);
    auto records = score_results(spec, results);
    std::set<int> layer_set;
    for (const auto& e : spec.entries) layer_set.insert(e.layer);
    const std::vector<int> layers(layer_set.begin(), layer_set.end());
    if (spec.entries.empty()) throw Error("intervention spec has no entries");
    const auto r =
        aggregate_records(std::move(records), layers, spec.kind, spec.entries.front().vector.mode, o.correct_only);
    curve_rows(rows, c.model_name, r);
    add_records(r);
  } else if (!o.trace.empty()) {
    require_file(o.trace, "--trace");
    require_file(o.predictions, "--predictions");
    if (o.emit_spec.empty()) throw Error("--trace requires --emit-spec");
    if (o.readout_ids.size() != kMonths) throw Error("--readout-ids must list 12 token ids");
    if (modes.size() != 1 || kinds.size() != 1) throw Error("--emit-spec needs exactly one --mode and one --target");
    ReadoutSet readout;
    std::copy(o.readout_ids.begin(), o.readout_ids.end(), readout.ids.begin());
    const auto trace = read_trace(o.trace);
    const auto tb = baseline_from_trace(trace, read_predictions(o.predictions), readout);
    InterventionSpec spec{kinds[0], readout.ids,
                          plan_sweep(tb.prompts, tb.baseline, trace.n_layers, kinds[0], modes[0], so)};
    fs::path json_path = out_path(c, o.emit_spec);
    fs::path tensor_path = json_path;
    tensor_path.replace_extension(".safetensors");
    write_intervention_spec(json_path, tensor_path, spec);
    std::printf("wrote %zu interventions to %s\n", spec.entries.size(), json_path.string().c_str());
    return 0;
  } else {
    require_file(o.weights, "--weights");
    const auto w = load_model(o.weights);
    const auto prompts = generate_prompts(months_vocab());
    const auto readout = toy_readout();
    const auto baseline = run_baseline(w, prompts, readout);
    for (auto mode : modes) {
      std::map<TargetKind, EffectCurve> curves;
      for (auto kind : kinds) {
        const auto r = layer_sweep(w, prompts, baseline, readout, kind, mode, so);
        curve_rows(rows, c.model_name, r);
        add_records(r);
        curves[kind] = r.curve;
      }
      if (curves.count(TargetKind::input_month) && curves.count(TargetKind::output_prediction)) {
        const auto phase = detect_phase_change(curves[TargetKind::input_month], curves[TargetKind::output_prediction]);
        phase_rows(rows, c.model_name, to_string(mode), phase);
        std::printf("%s: phase change %s\n", to_string(mode).c_str(),
                    phase ? ("at layer " + std::to_string(*phase)).c_str() : "not found");
      }
    }
  }
  write_csv(out_path(c, "sweep.csv"), rows);
  if (o.records) write_csv(out_path(c, "sweep_records.csv"), record_rows);
  return 0;
}

int cmd_corpus(const Common& c, const CorpusOpts& o) {
  if (o.text.empty()) throw Error("build-corpus needs at least one --text file");
  std::vector<std::vector<std::string>> docs;
  for (const auto& f : o.text) {
    require_file(f, "--text");
    std::ifstream in(f);
    auto d = read_documents(in);
    docs.insert(docs.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
  }
  WordVocab vocab;
  if (o.tokenizer == "corpus-word")
    vocab = corpus_vocab(docs);
  else if (o.tokenizer == "months-word")
    vocab = months_vocab();
  else
    throw Error("--tokenizer must be corpus-word or months-word");
  const auto tok = word_tokenizer(vocab);

  CorpusManifest m;
  m.tokenizer = tok.name;
  m.vocab = vocab.words();
  m.seed = o.seed;
  std::vector<CsvRow> rows;
  for (auto lc : {LengthClass::short_context, LengthClass::long_context}) {
    auto cs = build_condition_set(docs, tok, lc, o.count, o.seed);
    rows.push_back({c.model_name, to_string(lc), "all", 0, "sequences", static_cast<double>(cs.ordered.size())});
    rows.push_back({c.model_name, to_string(lc), "all", 0, "shortfall", static_cast<double>(cs.shortfall)});
    rows.push_back({c.model_name, to_string(lc), "all", 0, "dropped", static_cast<double>(cs.dropped)});
    if (cs.shortfall)
      std::fprintf(stderr, "warning: %s condition is %zu sequences short of %zu\n", to_string(lc).c_str(),
                   cs.shortfall, o.count);
    m.conditions.push_back(std::move(cs));
  }
  write_manifest(m, out_path(c, o.out));
  write_csv(out_path(c, "corpus.csv"), rows);
  return 0;
}

// max_seq_len is only a length guard (positions are rotary), so it is widened to fit the longest input.
ModelWeights capture_model(const CaptureOpts& o, int vocab_size, std::size_t longest) {
  if (o.random_init == !o.weights.empty()) throw Error("capture needs exactly one of --weights or --random-init");
  ModelWeights w;
  if (o.random_init) {
    w = random_init(default_toy_config(vocab_size), o.seed);
  } else {
    require_file(o.weights, "--weights");
    w = load_model(o.weights);
  }
  w.config.max_seq_len = std::max(w.config.max_seq_len, static_cast<int>(longest));
  return w;
}

int cmd_capture(const Common& c, const CaptureOpts& o) {
  if (o.months) {
    const auto vocab = months_vocab();
    const auto w = capture_model(o, vocab.size(), 0);
    TracePredictions preds;
    const auto trace = capture_months_trace(w, generate_prompts(vocab), c.model_name, &preds);
    write_trace(trace, out_path(c, "months.mgtr"));
    write_predictions(preds, out_path(c, "months.predictions.safetensors"));
    return 0;
  }
  require_file(o.manifest, "--manifest");
  const auto m = read_manifest(o.manifest);
  if (m.vocab.empty()) throw Error("manifest was tokenized externally; capture it with the exporter instead");
  std::size_t longest = 0;
  for (const auto& cs : m.conditions)
    for (const auto* set : {&cs.ordered, &cs.shuffled})
      for (const auto& r : *set) longest = std::max(longest, r.tokens.size());
  const auto w = capture_model(o, static_cast<int>(m.vocab.size()), longest);
  if (w.config.vocab_size < static_cast<int>(m.vocab.size()))
    throw Error("model vocabulary (" + std::to_string(w.config.vocab_size) + ") is smaller than the manifest's");
  std::vector<TokenSelector> selectors;
  for (const auto& s : o.selectors) selectors.push_back(TokenSelector::parse(s));

  std::set<std::string> wanted(o.conditions.begin(), o.conditions.end());
  for (const auto& cs : m.conditions) {
    for (auto order : {OrderClass::ordered, OrderClass::shuffled}) {
      const auto name = condition_name(cs.length_class, order);
      if (!wanted.count("all") && !wanted.count(name)) continue;
      std::vector<CaptureInput> inputs;
      for (const auto& r : m.records(cs.length_class, order)) inputs.push_back({r.id, r.tokens});
      if (inputs.empty()) continue;
      TracePredictions preds;
      auto trace = capture_trace(w, inputs, o.layers, selectors, c.model_name, &preds);
      trace.condition = name;
      write_trace(trace, out_path(c, name + ".mgtr"));
      write_predictions(preds, out_path(c, name + ".predictions.safetensors"));
    }
  }
  return 0;
}

// Identical rows (e.g. every sequence ending on the same token at the embedding layer) leave no
// spectrum after centering; such cells are written as nan instead of aborting the run.
bool spectrum_vanishes(const Matrix& x, bool center) {
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t j = 0; j < x.cols; ++j)
      if (x(r, j) != (center ? x(0, j) : 0.0f)) return false;
  return true;
}

int cmd_pr(const Common& c, const PrOpts& o) {
  if (o.traces.empty()) throw Error("analyze-pr needs at least one --trace");
  std::vector<CsvRow> rows;
  // (model, condition, slot, metric) -> per-layer values, for the ordered-minus-shuffled rows
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::pair<std::vector<int>, std::vector<double>>>
      curves;
  for (const auto& path : o.traces) {
    require_file(path, "--trace");
    const auto t = read_trace(path);
    for (const auto& slot : t.slots) {
      for (int layer : t.layers) {
        const auto x = select_token_matrix(t, layer, slot);
        for (bool norm : {false, true}) {
          for (bool center : {true, false}) {
            std::string metric = std::string("pr") + (norm ? "_normalized" : "") + (center ? "" : "_uncentered");
            const double v = spectrum_vanishes(x, center) ? std::numeric_limits<double>::quiet_NaN()
                                                          : participation_ratio(x, norm, center).participation_ratio;
            rows.push_back({t.model, t.condition, slot, layer, metric, v});
            auto& cv = curves[{t.model, t.condition, slot, metric}];
            cv.first.push_back(layer);
            cv.second.push_back(v);
          }
        }
      }
    }
  }
  for (const auto& [key, ordered] : curves) {
    const auto& [model, condition, slot, metric] = key;
    const auto pos = condition.rfind("_ordered");
    if (pos == std::string::npos || pos + 8 != condition.size()) continue;
    const std::string stem = condition.substr(0, pos);
    auto sh = curves.find({model, stem + "_shuffled", slot, metric});
    if (sh == curves.end() || sh->second.first != ordered.first) continue;
    const auto diff = baseline_difference(ordered.second, sh->second.second);
    for (std::size_t i = 0; i < diff.size(); ++i)
      rows.push_back({model, stem + "_ordered_minus_shuffled", slot, ordered.first[i], metric, diff[i]});
  }
  write_csv(out_path(c, "pr.csv"), rows);
  return 0;
}

int cmd_corr(const Common& c, const CorrOpts& o) {
  require_file(o.trace, "--trace");
  require_file(o.predictions, "--predictions");
  const auto t = read_trace(o.trace);
  const auto p = read_predictions(o.predictions);
  if (p.n_sequences != t.sequences.size() || p.n_slots != t.slots.size())
    throw Error("predictions sidecar does not align with the trace");
  std::vector<CsvRow> rows;
  const auto slots = o.slots.empty() ? t.slots : o.slots;
  for (const auto& slot : slots) {
    const std::size_t si = t.slot_index(slot);
    std::vector<std::vector<double>> dists;
    for (std::size_t s = 0; s < t.sequences.size(); ++s) {
      auto full = p.probs(s, si);
      if (o.restrict_ids.empty()) {
        dists.push_back(std::move(full));
        continue;
      }
      std::vector<double> r;
      double z = 0.0;
      for (int id : o.restrict_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= full.size()) throw Error("--restrict-ids entry out of range");
        r.push_back(full[static_cast<std::size_t>(id)]);
        z += r.back();
      }
      for (auto& v : r) v /= z;
      dists.push_back(std::move(r));
    }
    for (const auto& ms : o.metrics) {
      const auto metric = parse_distance_metric(ms);
      const auto curve = layer_correlation_curve(t, slot, dists, metric);
      for (std::size_t i = 0; i < curve.layers.size(); ++i)
        rows.push_back({t.model, t.condition, slot, curve.layers[i], "spearman_" + ms,
                        curve.rho[i] ? *curve.rho[i] : std::nan("")});
    }
  }
  write_csv(out_path(c, "correlation.csv"), rows);
  return 0;
}

int cmd_phase(const Common& c, const PhaseOpts& o) {
  if (o.csv.empty()) throw Error("phase needs at least one --csv");
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::map<int, double>>> curves;
  for (const auto& f : o.csv) {
    require_file(f, "--csv");
    for (const auto& r : read_csv(f))
      if (r.metric == "mean_shift") curves[{r.model, r.condition}][r.token_set][r.layer] = r.value;
  }
  std::vector<CsvRow> rows;
  for (auto& [key, bykind] : curves) {
    if (!bykind.count("input_month") || !bykind.count("output_prediction")) continue;
    EffectCurve in, out;
    for (auto [l, v] : bykind["input_month"]) in.layers.push_back(l), in.values.push_back(v);
    for (auto [l, v] : bykind["output_prediction"]) out.layers.push_back(l), out.values.push_back(v);
    const auto phase = detect_phase_change(in, out);
    phase_rows(rows, key.first, key.second, phase);
    std::printf("%s %s: %s\n", key.first.c_str(), key.second.c_str(),
                phase ? ("phase change at layer " + std::to_string(*phase)).c_str() : "no phase change");
  }
  if (rows.empty()) throw Error("no model has both input_month and output_prediction mean_shift curves");
  write_csv(out_path(c, "phase.csv"), rows);
  return 0;
}

int cmd_report(const Common& c, const ReportOpts& o) {
  if (o.csv.empty()) throw Error("report needs at least one --csv");
  std::vector<CsvRow> rows;
  for (const auto& f : o.csv) {
    require_file(f, "--csv");
    auto r = read_csv(f);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  write_csv(out_path(c, "report.csv"), rows);
  for (const auto& [name, chart] : build_charts(rows)) {
    std::ofstream out(out_path(c, name), std::ios::binary);
    if (!out) throw Error("cannot write '" + out_path(c, name).string() + "'");
    out << render_svg(chart);
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Layer-wise intervention and representation-geometry workbench"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file whose keys mirror the flag names");

  Common common;
  const char* env = std::getenv(kOutDirEnv);
  common.out_dir = env && *env ? env : ".";
  app.add_option("--out-dir", common.out_dir, std::string("Output directory (default: $") + kOutDirEnv + " or .)");
  app.add_option("--model-name", common.model_name, "Model label written into CSV rows")->capture_default_str();

  TrainOpts train;
  auto* t = app.add_subcommand("train-toy", "Train the toy calendar-arithmetic model");
  t->add_option("--layers", train.layers)->capture_default_str();
  t->add_option("--d-model", train.d_model)->capture_default_str();
  t->add_option("--heads", train.heads)->capture_default_str();
  t->add_option("--d-ff", train.d_ff)->capture_default_str();
  t->add_option("--steps", train.tc.steps)->capture_default_str();
  t->add_option("--lr", train.tc.learning_rate)->capture_default_str();
  t->add_option("--batch", train.tc.batch_size)->capture_default_str();
  t->add_option("--seed", train.tc.seed)->capture_default_str();
  t->add_option("--augment", train.tc.augment_copies, "Prefixed replicas per prompt")->capture_default_str();
  t->add_option("--max-prefix", train.tc.max_prefix)->capture_default_str();
  t->add_option("--eval-fraction", train.tc.eval_fraction)->capture_default_str();
  t->add_option("--out", train.out, "Weights file name")->capture_default_str();

  MonthsOpts months;
  auto* rm = app.add_subcommand("run-months", "Baseline accuracy on the 144 prompts");
  rm->add_option("--weights", months.weights)->required();

  SweepOpts sweep;
  auto* sw = app.add_subcommand("sweep", "Layer sweep of intervention effects");
  sw->add_option("--weights", sweep.weights, "Toy model weights");
  sw->add_option("--mode", sweep.modes, "additive | angular | norm | all")->delimiter(',')->capture_default_str();
  sw->add_option("--target", sweep.targets, "input-month | interval | output | all")->delimiter(',')->capture_default_str();
  sw->add_option("--layers", sweep.layers, "Layers to sweep (default 1..n_layers)")->delimiter(',');
  sw->add_flag("--leave-one-out", sweep.leave_one_out, "Exclude a prompt from its own source centroid");
  sw->add_option("--norm-target", sweep.norm_target, "member-mean | centroid-norm")->capture_default_str();
  sw->add_flag("--correct-only", sweep.correct_only, "Aggregate only baseline-correct prompts");
  sw->add_flag("--records", sweep.records, "Also write per-intervention rows");
  sw->add_option("--trace", sweep.trace, "Months trace to plan from");
  sw->add_option("--predictions", sweep.predictions, "Predictions sidecar of --trace");
  sw->add_option("--readout-ids", sweep.readout_ids, "12 month token ids")->delimiter(',');
  sw->add_option("--emit-spec", sweep.emit_spec, "Write an intervention spec instead of running");
  sw->add_option("--spec", sweep.spec, "Intervention spec to score");
  sw->add_option("--results", sweep.results, "Results file for --spec");

  CorpusOpts corpus;
  auto* bc = app.add_subcommand("build-corpus", "Cut short/long ordered/shuffled sequences from text");
  bc->add_option("--text", corpus.text, "Plain-text files, documents separated by blank lines")->delimiter(',');
  bc->add_option("--count", corpus.count)->capture_default_str();
  bc->add_option("--seed", corpus.seed)->capture_default_str();
  bc->add_option("--tokenizer", corpus.tokenizer, "corpus-word | months-word")->capture_default_str();
  bc->add_option("--out", corpus.out)->capture_default_str();

  CaptureOpts capture;
  auto* cp = app.add_subcommand("capture", "Capture residual-stream traces");
  cp->add_option("--manifest", capture.manifest);
  cp->add_option("--weights", capture.weights);
  cp->add_flag("--random-init", capture.random_init, "Use an untrained model (control)");
  cp->add_option("--seed", capture.seed)->capture_default_str();
  cp->add_flag("--months", capture.months, "Capture the 144 calendar prompts instead of a corpus");
  cp->add_option("--conditions", capture.conditions)->delimiter(',')->capture_default_str();
  cp->add_option("--selectors", capture.selectors)->delimiter(',')->capture_default_str();
  cp->add_option("--layers", capture.layers, "Default: every layer")->delimiter(',');

  PrOpts pr;
  auto* ap = app.add_subcommand("analyze-pr", "Participation ratio per layer");
  ap->add_option("--trace", pr.traces)->delimiter(',');

  CorrOpts corr;
  auto* ac = app.add_subcommand("analyze-correlation", "Distance vs prediction-divergence Spearman per layer");
  ac->add_option("--trace", corr.trace);
  ac->add_option("--predictions", corr.predictions);
  ac->add_option("--metric", corr.metrics, "euclidean,angular")->delimiter(',')->capture_default_str();
  ac->add_option("--slots", corr.slots, "Default: every slot")->delimiter(',');
  ac->add_option("--restrict-ids", corr.restrict_ids, "Restrict predictions to these token ids")->delimiter(',');

  PhaseOpts phase;
  auto* ph = app.add_subcommand("phase", "Phase-change layer from sweep CSVs");
  ph->add_option("--csv", phase.csv)->delimiter(',');

  ReportOpts report;
  auto* rp = app.add_subcommand("report", "Merge CSVs and draw SVG charts");
  rp->add_option("--csv", report.csv)->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    fs::create_directories(common.out_dir);
    const auto* sub = app.get_subcommands().front();
    {
      std::ofstream snap(fs::path(common.out_dir) / (sub->get_name() + ".config.toml"), std::ios::binary);
      snap << app.config_to_str(true, false);
    }
    if (sub == t) return cmd_train(common, train);
    if (sub == rm) return cmd_months(common, months);
    if (sub == sw) return cmd_sweep(common, sweep);
    if (sub == bc) return cmd_corpus(common, corpus);
    if (sub == cp) return cmd_capture(common, capture);
    if (sub == ap) return cmd_pr(common, pr);
    if (sub == ac) return cmd_corr(common, corr);
    if (sub == ph) return cmd_phase(common, phase);
    if (sub == rp) return cmd_report(common, report);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace mgeo
