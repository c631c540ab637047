#include "mgeo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kernels.hpp"

namespace mgeo {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("train config: learning rate must be positive");
  if (steps < 1) throw Error("train config: steps must be >= 1");
  if (batch_size < 1) throw Error("train config: batch size must be >= 1");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw Error("train config: eval fraction must lie in (0, 1)");
  if (augment_copies < 0) throw Error("train config: augment copies must be >= 0");
  if (max_prefix < 1) throw Error("train config: max prefix must be >= 1");
}

ModelConfig default_toy_config(int vocab_size) {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 128;
  c.vocab_size = vocab_size;
  c.max_seq_len = 32;
  return c;
}

MonthsDataset build_months_dataset(const WordVocab& vocab, std::uint64_t augmentation_seed, int augment_copies,
                                   int max_prefix, double eval_fraction) {
  MonthsDataset ds;
  for (const auto& p : generate_prompts(vocab)) ds.eval.push_back({p.tokens, p.gamma, true});
  ds.train = ds.eval;

  std::vector<LabeledSequence> augmented;
  std::mt19937_64 rng(augmentation_seed);
  const auto fillers = distractor_words();
  for (int copy = 0; copy < augment_copies; ++copy) {
    for (const auto& c : ds.eval) {
      const int n = std::uniform_int_distribution<int>(1, max_prefix)(rng);
      LabeledSequence s{{}, c.target_month, false};
      for (int i = 0; i < n; ++i)
        s.tokens.push_back(
            vocab.id(fillers[std::uniform_int_distribution<std::size_t>(0, fillers.size() - 1)(rng)]));
      s.tokens.insert(s.tokens.end(), c.tokens.begin(), c.tokens.end());
      augmented.push_back(std::move(s));
    }
  }
  std::shuffle(augmented.begin(), augmented.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(eval_fraction * static_cast<double>(augmented.size())));
  ds.validation.assign(augmented.begin(), augmented.begin() + static_cast<std::ptrdiff_t>(n_val));
  ds.train.insert(ds.train.end(), augmented.begin() + static_cast<std::ptrdiff_t>(n_val), augmented.end());
  return ds;
}

namespace {

struct LayerCache {
  Matrix x_in, a, q, k, v, ctx, x_mid, b, g, u, hprod;
  std::vector<float> r1, r2;
  std::vector<std::vector<float>> probs;  // per head, T x T (lower triangle used)
};

struct SequenceCache {
  std::vector<LayerCache> layers;
  Matrix x_final;
  float r_final = 0.0f;
  std::vector<float> y_final;
  std::vector<float> logits;
};

// Mirrors forward_with_hooks operation for operation; the test suite checks
// the logits agree bit for bit.
void forward_cached(const ModelWeights& w, std::span<const int> tokens, SequenceCache& c) {
  const auto& cfg = w.config;
  const std::size_t T = tokens.size(), D = static_cast<std::size_t>(cfg.d_model), F = static_cast<std::size_t>(cfg.d_ff);
  const int H = cfg.n_heads, hd = cfg.head_dim();
  if (T > static_cast<std::size_t>(cfg.max_seq_len)) throw Error("training sequence exceeds max_seq_len");

  Matrix x(T, D);
  for (std::size_t t = 0; t < T; ++t) {
    if (tokens[t] < 0 || tokens[t] >= cfg.vocab_size) throw Error("training token id out of range");
    auto src = w.embed.row(static_cast<std::size_t>(tokens[t]));
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }
  c.layers.resize(w.layers.size());
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& lw = w.layers[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.a = Matrix(T, D);
    lc.q = Matrix(T, D);
    lc.k = Matrix(T, D);
    lc.v = Matrix(T, D);
    lc.ctx = Matrix(T, D);
    lc.r1.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      lc.r1[t] = kernels::inv_rms(x.row(t), cfg.rms_eps);
      kernels::rms_norm_into(x.row(t), lw.norm1, cfg.rms_eps, lc.a.row(t));
      kernels::matvec(lw.attn_q, lc.a.row(t), lc.q.row(t));
      kernels::matvec(lw.attn_k, lc.a.row(t), lc.k.row(t));
      kernels::matvec(lw.attn_v, lc.a.row(t), lc.v.row(t));
      kernels::rope(lc.q.row(t), t, H, hd, cfg.rope_theta);
      kernels::rope(lc.k.row(t), t, H, hd, cfg.rope_theta);
    }
    lc.probs.assign(static_cast<std::size_t>(H), std::vector<float>(T * T, 0.0f));
    std::vector<float> scores(T);
    for (int h = 0; h < H; ++h) {
      const std::size_t off = static_cast<std::size_t>(h) * hd;
      auto& P = lc.probs[static_cast<std::size_t>(h)];
      for (std::size_t t = 0; t < T; ++t) {
        float m = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          float acc = 0.0f;
          for (int i = 0; i < hd; ++i) acc += lc.q(t, off + i) * lc.k(s, off + i);
          scores[s] = acc * scale;
          m = std::max(m, scores[s]);
        }
        float z = 0.0f;
        for (std::size_t s = 0; s <= t; ++s) z += (scores[s] = std::exp(scores[s] - m));
        for (std::size_t s = 0; s <= t; ++s) {
          const float p = scores[s] / z;
          P[t * T + s] = p;
          for (int i = 0; i < hd; ++i) lc.ctx(t, off + i) += p * lc.v(s, off + i);
        }
      }
    }
    std::vector<float> o(D);
    for (std::size_t t = 0; t < T; ++t) {
      kernels::matvec(lw.attn_o, lc.ctx.row(t), o);
      auto row = x.row(t);
      for (std::size_t i = 0; i < D; ++i) row[i] += o[i];
    }
    lc.x_mid = x;
    lc.b = Matrix(T, D);
    lc.g = Matrix(T, F);
    lc.u = Matrix(T, F);
    lc.hprod = Matrix(T, F);
    lc.r2.resize(T);
    std::vector<float> m(D);
    for (std::size_t t = 0; t < T; ++t) {
      lc.r2[t] = kernels::inv_rms(x.row(t), cfg.rms_eps);
      kernels::rms_norm_into(x.row(t), lw.norm2, cfg.rms_eps, lc.b.row(t));
      kernels::matvec(lw.mlp_gate, lc.b.row(t), lc.g.row(t));
      kernels::matvec(lw.mlp_up, lc.b.row(t), lc.u.row(t));
      for (std::size_t i = 0; i < F; ++i) lc.hprod(t, i) = kernels::silu(lc.g(t, i)) * lc.u(t, i);
      kernels::matvec(lw.mlp_down, lc.hprod.row(t), m);
      auto row = x.row(t);
      for (std::size_t i = 0; i < D; ++i) row[i] += m[i];
    }
  }
  c.x_final = x;
  c.y_final.assign(D, 0.0f);
  c.r_final = kernels::inv_rms(x.row(T - 1), cfg.rms_eps);
  kernels::rms_norm_into(x.row(T - 1), w.final_norm, cfg.rms_eps, c.y_final);
  c.logits.assign(w.unembed.rows, 0.0f);
  kernels::matvec(w.unembed, c.y_final, c.logits);
}

// dx += d(rms_norm(x, gain))/dx ^T dy ; dgain += dy * x * r
void rms_backward(std::span<const float> x, std::span<const float> gain, float r, std::span<const float> dy,
                  std::span<float> dx, std::span<float> dgain) {
  const std::size_t D = x.size();
  float s = 0.0f;
  for (std::size_t i = 0; i < D; ++i) s += gain[i] * dy[i] * x[i];
  const float coef = r * r * r * s / static_cast<float>(D);
  for (std::size_t i = 0; i < D; ++i) {
    dx[i] += r * gain[i] * dy[i] - coef * x[i];
    dgain[i] += dy[i] * x[i] * r;
  }
}

double cross_entropy(std::span<const float> logits, int target, std::vector<float>* dlogits, float grad_scale) {
  const auto p = softmax(logits);
  const double loss = -std::log(std::max(p[static_cast<std::size_t>(target)], 1e-300));
  if (dlogits) {
    dlogits->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
      (*dlogits)[i] = static_cast<float>(p[i] - (static_cast<int>(i) == target ? 1.0 : 0.0)) * grad_scale;
  }
  return loss;
}

void backward(const ModelWeights& w, std::span<const int> tokens, const SequenceCache& c,
              std::span<const float> dlogits, ModelWeights& g) {
  const auto& cfg = w.config;
  const std::size_t T = tokens.size(), D = static_cast<std::size_t>(cfg.d_model), F = static_cast<std::size_t>(cfg.d_ff);
  const int H = cfg.n_heads, hd = cfg.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  kernels::outer_acc(g.unembed, dlogits, c.y_final);
  std::vector<float> dy(D, 0.0f);
  kernels::matvec_t_acc(w.unembed, dlogits, dy);
  Matrix dx(T, D);
  rms_backward(c.x_final.row(T - 1), w.final_norm, c.r_final, dy, dx.row(T - 1), g.final_norm);

  for (std::size_t li = w.layers.size(); li-- > 0;) {
    const auto& lw = w.layers[li];
    const auto& lc = c.layers[li];
    auto& lg = g.layers[li];

    // MLP; dx currently holds the gradient w.r.t. the block output.
    Matrix dmid = dx;
    std::vector<float> dh(F), dg(F), du(F), db(D);
    for (std::size_t t = 0; t < T; ++t) {
      kernels::outer_acc(lg.mlp_down, dx.row(t), lc.hprod.row(t));
      std::fill(dh.begin(), dh.end(), 0.0f);
      kernels::matvec_t_acc(lw.mlp_down, dx.row(t), dh);
      for (std::size_t i = 0; i < F; ++i) {
        const float gv = lc.g(t, i);
        const float sg = kernels::sigmoid(gv);
        du[i] = dh[i] * gv * sg;
        dg[i] = dh[i] * lc.u(t, i) * sg * (1.0f + gv * (1.0f - sg));
      }
      kernels::outer_acc(lg.mlp_gate, dg, lc.b.row(t));
      kernels::outer_acc(lg.mlp_up, du, lc.b.row(t));
      std::fill(db.begin(), db.end(), 0.0f);
      kernels::matvec_t_acc(lw.mlp_gate, dg, db);
      kernels::matvec_t_acc(lw.mlp_up, du, db);
      rms_backward(lc.x_mid.row(t), lw.norm2, lc.r2[t], db, dmid.row(t), lg.norm2);
    }

    // Attention
    Matrix dctx(T, D), dq(T, D), dk(T, D), dv(T, D);
    for (std::size_t t = 0; t < T; ++t) {
      kernels::outer_acc(lg.attn_o, dmid.row(t), lc.ctx.row(t));
      kernels::matvec_t_acc(lw.attn_o, dmid.row(t), dctx.row(t));
    }
    std::vector<float> dP(T);
    for (int h = 0; h < H; ++h) {
      const std::size_t off = static_cast<std::size_t>(h) * hd;
      const auto& P = lc.probs[static_cast<std::size_t>(h)];
      for (std::size_t t = 0; t < T; ++t) {
        float sum = 0.0f;
        for (std::size_t s = 0; s <= t; ++s) {
          float acc = 0.0f;
          for (int i = 0; i < hd; ++i) acc += dctx(t, off + i) * lc.v(s, off + i);
          dP[s] = acc;
          sum += P[t * T + s] * acc;
          for (int i = 0; i < hd; ++i) dv(s, off + i) += P[t * T + s] * dctx(t, off + i);
        }
        for (std::size_t s = 0; s <= t; ++s) {
          const float ds = P[t * T + s] * (dP[s] - sum) * scale;
          for (int i = 0; i < hd; ++i) {
            dq(t, off + i) += ds * lc.k(s, off + i);
            dk(s, off + i) += ds * lc.q(t, off + i);
          }
        }
      }
    }
    Matrix dx_in = dmid;
    std::vector<float> da(D);
    for (std::size_t t = 0; t < T; ++t) {
      kernels::rope(dq.row(t), t, H, hd, cfg.rope_theta, -1);
      kernels::rope(dk.row(t), t, H, hd, cfg.rope_theta, -1);
      kernels::outer_acc(lg.attn_q, dq.row(t), lc.a.row(t));
      kernels::outer_acc(lg.attn_k, dk.row(t), lc.a.row(t));
      kernels::outer_acc(lg.attn_v, dv.row(t), lc.a.row(t));
      std::fill(da.begin(), da.end(), 0.0f);
      kernels::matvec_t_acc(lw.attn_q, dq.row(t), da);
      kernels::matvec_t_acc(lw.attn_k, dk.row(t), da);
      kernels::matvec_t_acc(lw.attn_v, dv.row(t), da);
      rms_backward(lc.x_in.row(t), lw.norm1, lc.r1[t], da, dx_in.row(t), lg.norm1);
    }
    dx = std::move(dx_in);
  }

  for (std::size_t t = 0; t < T; ++t) {
    auto row = g.embed.row(static_cast<std::size_t>(tokens[t]));
    for (std::size_t i = 0; i < D; ++i) row[i] += dx(t, i);
  }
}

void zero(ModelWeights& g) {
  for_each_parameter(g, [](const std::string&, std::vector<std::int64_t>, std::span<float> v) {
    std::fill(v.begin(), v.end(), 0.0f);
  });
}

std::vector<std::span<float>> flat_views(ModelWeights& w) {
  std::vector<std::span<float>> out;
  for_each_parameter(w, [&](const std::string&, std::vector<std::int64_t>, std::span<float> v) { out.push_back(v); });
  return out;
}

}  // namespace

double loss_and_gradients(const ModelWeights& weights, std::span<const LabeledSequence> batch,
                          const ReadoutSet& readout, ModelWeights& grads) {
  if (batch.empty()) throw Error("empty training batch");
  if (grads.layers.size() != weights.layers.size()) grads = weights;
  zero(grads);
  const float grad_scale = 1.0f / static_cast<float>(batch.size());
  double total = 0.0;
  SequenceCache cache;
  std::vector<float> dlogits;
  for (const auto& s : batch) {
    forward_cached(weights, s.tokens, cache);
    total += cross_entropy(cache.logits, readout.ids[static_cast<std::size_t>(s.target_month)], &dlogits, grad_scale);
    backward(weights, s.tokens, cache, dlogits, grads);
  }
  return total / static_cast<double>(batch.size());
}

double mean_loss(const ModelWeights& weights, std::span<const LabeledSequence> batch, const ReadoutSet& readout) {
  if (batch.empty()) throw Error("empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    const auto fwd = forward_with_hooks(weights, s.tokens, {}, {}, LogitRows::last);
    total += cross_entropy(fwd.logits.row(0), readout.ids[static_cast<std::size_t>(s.target_month)], nullptr, 1.0f);
  }
  return total / static_cast<double>(batch.size());
}

TrainResult train_toy_model(const ModelConfig& config, const TrainConfig& tc) {
  config.validate();
  tc.validate();
  const WordVocab vocab = months_vocab();
  if (config.vocab_size < vocab.size())
    throw Error("model vocab_size " + std::to_string(config.vocab_size) + " is smaller than the task vocabulary (" +
                std::to_string(vocab.size()) + ")");
  const ReadoutSet readout = months_readout(vocab);
  const MonthsDataset ds = build_months_dataset(vocab, tc.seed, tc.augment_copies, tc.max_prefix, tc.eval_fraction);

  TrainResult result;
  result.weights = random_init(config, tc.seed);
  ModelWeights grads = result.weights;
  auto params = flat_views(result.weights);
  auto grad_views = flat_views(grads);
  std::vector<std::vector<float>> m1, m2;
  for (const auto& p : params) {
    m1.emplace_back(p.size(), 0.0f);
    m2.emplace_back(p.size(), 0.0f);
  }

  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<LabeledSequence> batch;
  const auto bsz = std::min<std::size_t>(static_cast<std::size_t>(tc.batch_size), order.size());

  for (int step = 1; step <= tc.steps; ++step) {
    batch.clear();
    while (batch.size() < bsz) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(ds.train[order[cursor++]]);
    }
    const double loss = loss_and_gradients(result.weights, batch, readout, grads);
    if (!std::isfinite(loss)) throw Error("training diverged: non-finite loss at step " + std::to_string(step));
    result.loss_history.push_back(loss);

    const double bc1 = 1.0 - std::pow(tc.beta1, step);
    const double bc2 = 1.0 - std::pow(tc.beta2, step);
    const auto lr = static_cast<float>(tc.learning_rate * std::sqrt(bc2) / bc1);
    const auto b1 = static_cast<float>(tc.beta1), b2 = static_cast<float>(tc.beta2);
    const auto eps = static_cast<float>(tc.adam_eps);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto p = params[pi];
      auto gv = grad_views[pi];
      auto& a = m1[pi];
      auto& b = m2[pi];
      for (std::size_t i = 0; i < p.size(); ++i) {
        a[i] = b1 * a[i] + (1.0f - b1) * gv[i];
        b[i] = b2 * b[i] + (1.0f - b2) * gv[i] * gv[i];
        p[i] -= lr * a[i] / (std::sqrt(b[i]) + eps);
      }
    }
  }
  if (!ds.validation.empty()) result.validation_loss = mean_loss(result.weights, ds.validation, readout);
  return result;
}

double evaluate(const ModelWeights& weights, std::span<const LabeledSequence> sequences, const ReadoutSet& readout) {
  if (sequences.empty()) throw Error("cannot evaluate an empty prompt set");
  readout.validate(weights.config.vocab_size);
  std::size_t hits = 0;
  for (const auto& s : sequences) {
    const auto fwd = forward_with_hooks(weights, s.tokens, {}, {}, LogitRows::last);
    if (readout_prediction(fwd.logits.row(0), readout).month == s.target_month) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sequences.size());
}

}  // namespace mgeo
