#include "mgeo/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "kernels.hpp"
#include "mgeo/tensor_file.hpp"

namespace mgeo {

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

void ModelConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1 || max_seq_len < 1)
    throw Error("model config: all counts must be >= 1");
  if (d_model % n_heads != 0)
    throw Error("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                std::to_string(n_heads));
  if (head_dim() % 2 != 0) throw Error("model config: rotary embeddings need an even head dimension");
  if (!(rms_eps > 0.0)) throw Error("model config: rms_eps must be positive");
  if (!(rope_theta > 0.0)) throw Error("model config: rope_theta must be positive");
}

std::size_t Position::resolve(std::size_t len) const {
  if (from_end) {
    if (offset >= len)
      throw Error("position " + std::to_string(offset + 1) + " from the end is outside a sequence of length " +
                  std::to_string(len));
    return len - 1 - offset;
  }
  if (offset >= len)
    throw Error("position " + std::to_string(offset) + " is outside a sequence of length " + std::to_string(len));
  return offset;
}

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, double eps) {
  std::vector<float> out(x.size());
  kernels::rms_norm_into(x, gain, eps, out);
  return out;
}

std::vector<double> softmax(std::span<const float> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(static_cast<double>(logits[i]) - m));
  for (auto& v : p) v /= z;
  return p;
}

namespace {

struct ResolvedHook {
  std::size_t position;
  const HiddenTransform* transform;
};

void apply_hooks(int layer, const std::vector<std::vector<ResolvedHook>>& by_layer, Matrix& x) {
  for (const auto& h : by_layer[static_cast<std::size_t>(layer)]) {
    auto out = (*h.transform)(x.row(h.position));
    if (out.size() != x.cols)
      throw Error("hook at layer " + std::to_string(layer) + " changed the hidden-state dimension");
    std::copy(out.begin(), out.end(), x.row(h.position).begin());
  }
}

void attention_block(const ModelConfig& cfg, const LayerWeights& lw, Matrix& x) {
  const std::size_t T = x.rows, D = x.cols;
  const int H = cfg.n_heads, hd = cfg.head_dim();
  Matrix q(T, D), k(T, D), v(T, D), ctx(T, D);
  std::vector<float> a(D);
  for (std::size_t t = 0; t < T; ++t) {
    kernels::rms_norm_into(x.row(t), lw.norm1, cfg.rms_eps, a);
    kernels::matvec(lw.attn_q, a, q.row(t));
    kernels::matvec(lw.attn_k, a, k.row(t));
    kernels::matvec(lw.attn_v, a, v.row(t));
    kernels::rope(q.row(t), t, H, hd, cfg.rope_theta);
    kernels::rope(k.row(t), t, H, hd, cfg.rope_theta);
  }
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  std::vector<float> scores(T);
  for (int h = 0; h < H; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * hd;
    for (std::size_t t = 0; t < T; ++t) {
      float m = -INFINITY;
      for (std::size_t s = 0; s <= t; ++s) {
        float acc = 0.0f;
        for (int i = 0; i < hd; ++i) acc += q(t, off + i) * k(s, off + i);
        scores[s] = acc * scale;
        m = std::max(m, scores[s]);
      }
      float z = 0.0f;
      for (std::size_t s = 0; s <= t; ++s) z += (scores[s] = std::exp(scores[s] - m));
      for (std::size_t s = 0; s <= t; ++s) {
        const float p = scores[s] / z;
        for (int i = 0; i < hd; ++i) ctx(t, off + i) += p * v(s, off + i);
      }
    }
  }
  std::vector<float> o(D);
  for (std::size_t t = 0; t < T; ++t) {
    kernels::matvec(lw.attn_o, ctx.row(t), o);
    auto row = x.row(t);
    for (std::size_t i = 0; i < D; ++i) row[i] += o[i];
  }
}

void mlp_block(const ModelConfig& cfg, const LayerWeights& lw, Matrix& x) {
  const std::size_t D = x.cols, F = static_cast<std::size_t>(cfg.d_ff);
  std::vector<float> b(D), g(F), u(F), m(D);
  for (std::size_t t = 0; t < x.rows; ++t) {
    kernels::rms_norm_into(x.row(t), lw.norm2, cfg.rms_eps, b);
    kernels::matvec(lw.mlp_gate, b, g);
    kernels::matvec(lw.mlp_up, b, u);
    for (std::size_t i = 0; i < F; ++i) g[i] = kernels::silu(g[i]) * u[i];
    kernels::matvec(lw.mlp_down, g, m);
    auto row = x.row(t);
    for (std::size_t i = 0; i < D; ++i) row[i] += m[i];
  }
}

}  // namespace

ForwardResult forward_with_hooks(const ModelWeights& weights, std::span<const int> tokens,
                                 std::span<const HookAction> hooks, std::span<const int> capture_layers,
                                 LogitRows logit_rows) {
  const auto& cfg = weights.config;
  const std::size_t T = tokens.size();
  if (T == 0) throw Error("forward pass needs at least one token");
  if (T > static_cast<std::size_t>(cfg.max_seq_len))
    throw Error("sequence length " + std::to_string(T) + " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  for (int tok : tokens)
    if (tok < 0 || tok >= cfg.vocab_size) throw Error("token id " + std::to_string(tok) + " is out of range");

  std::vector<std::vector<ResolvedHook>> by_layer(static_cast<std::size_t>(cfg.n_layers) + 1);
  std::set<std::pair<int, std::size_t>> seen;
  for (const auto& h : hooks) {
    if (h.layer < 0 || h.layer > cfg.n_layers)
      throw Error("hook layer " + std::to_string(h.layer) + " is out of range [0, " + std::to_string(cfg.n_layers) + "]");
    const std::size_t pos = h.position.resolve(T);
    if (!seen.emplace(h.layer, pos).second)
      throw Error("more than one hook at layer " + std::to_string(h.layer) + ", position " + std::to_string(pos));
    by_layer[static_cast<std::size_t>(h.layer)].push_back({pos, &h.transform});
  }
  std::vector<bool> capture(static_cast<std::size_t>(cfg.n_layers) + 1, false);
  for (int l : capture_layers) {
    if (l < 0 || l > cfg.n_layers) throw Error("capture layer " + std::to_string(l) + " is out of range");
    capture[static_cast<std::size_t>(l)] = true;
  }

  ForwardResult result;
  Matrix x(T, static_cast<std::size_t>(cfg.d_model));
  for (std::size_t t = 0; t < T; ++t) {
    auto src = weights.embed.row(static_cast<std::size_t>(tokens[t]));
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }
  apply_hooks(0, by_layer, x);
  if (capture[0]) result.captured.emplace(0, x);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = weights.layers[static_cast<std::size_t>(l)];
    attention_block(cfg, lw, x);
    mlp_block(cfg, lw, x);
    apply_hooks(l + 1, by_layer, x);
    if (capture[static_cast<std::size_t>(l) + 1]) result.captured.emplace(l + 1, x);
  }

  if (logit_rows != LogitRows::none) {
    const std::size_t first = logit_rows == LogitRows::last ? T - 1 : 0;
    result.logits = Matrix(T - first, static_cast<std::size_t>(cfg.vocab_size));
    for (std::size_t t = first; t < T; ++t) {
      auto logits = unembed_logits(weights, x.row(t));
      std::copy(logits.begin(), logits.end(), result.logits.row(t - first).begin());
    }
  }
  return result;
}

std::vector<float> unembed_logits(const ModelWeights& weights, std::span<const float> h, ReadoutNorm norm) {
  std::vector<float> out(weights.unembed.rows);
  if (norm == ReadoutNorm::bypass) {
    kernels::matvec(weights.unembed, h, out);
  } else {
    std::vector<float> y(h.size());
    kernels::rms_norm_into(h, weights.final_norm, weights.config.rms_eps, y);
    kernels::matvec(weights.unembed, y, out);
  }
  return out;
}

namespace {

LayerWeights shaped_layer(const ModelConfig& c) {
  const auto D = static_cast<std::size_t>(c.d_model), F = static_cast<std::size_t>(c.d_ff);
  LayerWeights lw;
  lw.attn_q = Matrix(D, D);
  lw.attn_k = Matrix(D, D);
  lw.attn_v = Matrix(D, D);
  lw.attn_o = Matrix(D, D);
  lw.mlp_gate = Matrix(F, D);
  lw.mlp_up = Matrix(F, D);
  lw.mlp_down = Matrix(D, F);
  lw.norm1.assign(D, 1.0f);
  lw.norm2.assign(D, 1.0f);
  return lw;
}

ModelWeights shaped_weights(const ModelConfig& c) {
  c.validate();
  ModelWeights w;
  w.config = c;
  w.embed = Matrix(static_cast<std::size_t>(c.vocab_size), static_cast<std::size_t>(c.d_model));
  for (int l = 0; l < c.n_layers; ++l) w.layers.push_back(shaped_layer(c));
  w.final_norm.assign(static_cast<std::size_t>(c.d_model), 1.0f);
  w.unembed = Matrix(static_cast<std::size_t>(c.vocab_size), static_cast<std::size_t>(c.d_model));
  return w;
}

std::vector<std::int64_t> shape_of(const Matrix& m) {
  return {static_cast<std::int64_t>(m.rows), static_cast<std::int64_t>(m.cols)};
}

template <typename W, typename Fn>
void visit(W& w, Fn&& fn) {
  fn("embed", shape_of(w.embed), std::span(w.embed.data));
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& lw = w.layers[i];
    const std::string p = "layer." + std::to_string(i) + ".";
    fn(p + "attn_q", shape_of(lw.attn_q), std::span(lw.attn_q.data));
    fn(p + "attn_k", shape_of(lw.attn_k), std::span(lw.attn_k.data));
    fn(p + "attn_v", shape_of(lw.attn_v), std::span(lw.attn_v.data));
    fn(p + "attn_o", shape_of(lw.attn_o), std::span(lw.attn_o.data));
    fn(p + "mlp_gate", shape_of(lw.mlp_gate), std::span(lw.mlp_gate.data));
    fn(p + "mlp_up", shape_of(lw.mlp_up), std::span(lw.mlp_up.data));
    fn(p + "mlp_down", shape_of(lw.mlp_down), std::span(lw.mlp_down.data));
    fn(p + "norm1", std::vector<std::int64_t>{static_cast<std::int64_t>(lw.norm1.size())}, std::span(lw.norm1));
    fn(p + "norm2", std::vector<std::int64_t>{static_cast<std::int64_t>(lw.norm2.size())}, std::span(lw.norm2));
  }
  fn("final_norm", std::vector<std::int64_t>{static_cast<std::int64_t>(w.final_norm.size())}, std::span(w.final_norm));
  fn("unembed", shape_of(w.unembed), std::span(w.unembed.data));
}

std::string shape_string(const std::vector<std::int64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

void for_each_parameter(ModelWeights& w,
                        const std::function<void(const std::string&, std::vector<std::int64_t>, std::span<float>)>& fn) {
  visit(w, fn);
}

void for_each_parameter(const ModelWeights& w,
                        const std::function<void(const std::string&, std::vector<std::int64_t>, std::span<const float>)>& fn) {
  visit(w, fn);
}

ModelWeights random_init(const ModelConfig& config, std::uint64_t seed) {
  ModelWeights w = shaped_weights(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f / std::sqrt(static_cast<float>(config.d_model)));
  for_each_parameter(w, [&](const std::string& name, std::vector<std::int64_t> shape, std::span<float> values) {
    if (shape.size() == 1) return;  // norm gains stay at 1
    (void)name;
    for (auto& v : values) v = dist(rng);
  });
  return w;
}

ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  ModelWeights w = shaped_weights(config);
  const TensorFile file = read_tensor_file(path);
  for_each_parameter(w, [&](const std::string& name, std::vector<std::int64_t> shape, std::span<float> values) {
    auto it = file.tensors.find(name);
    if (it == file.tensors.end()) throw Error("weight container is missing tensor '" + name + "'");
    if (it->second.shape != shape)
      throw Error("tensor '" + name + "' has shape " + shape_string(it->second.shape) + ", expected " +
                  shape_string(shape));
    for (float v : it->second.values)
      if (!std::isfinite(v)) throw Error("tensor '" + name + "' contains non-finite values");
    std::copy(it->second.values.begin(), it->second.values.end(), values.begin());
  });
  return w;
}

namespace {

ModelConfig config_from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw Error(std::string("weight container metadata lacks '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.n_layers = std::stoi(get("n_layers"));
  c.d_model = std::stoi(get("d_model"));
  c.n_heads = std::stoi(get("n_heads"));
  c.d_ff = std::stoi(get("d_ff"));
  c.vocab_size = std::stoi(get("vocab_size"));
  c.rope_theta = std::stod(get("rope_theta"));
  c.rms_eps = std::stod(get("rms_eps"));
  c.max_seq_len = std::stoi(get("max_seq_len"));
  return c;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ModelWeights load_model(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  return load_weights(path, config_from_metadata(file.metadata));
}

void save_weights(const std::filesystem::path& path, const ModelWeights& weights) {
  TensorFile file;
  const auto& c = weights.config;
  file.metadata = {{"n_layers", std::to_string(c.n_layers)}, {"d_model", std::to_string(c.d_model)},
                   {"n_heads", std::to_string(c.n_heads)},   {"d_ff", std::to_string(c.d_ff)},
                   {"vocab_size", std::to_string(c.vocab_size)}, {"rope_theta", exact(c.rope_theta)},
                   {"rms_eps", exact(c.rms_eps)},             {"max_seq_len", std::to_string(c.max_seq_len)}};
  for_each_parameter(weights, [&](const std::string& name, std::vector<std::int64_t> shape,
                                  std::span<const float> values) {
    file.tensors[name] = NamedTensor{std::move(shape), std::vector<float>(values.begin(), values.end())};
  });
  write_tensor_file(path, file);
}

}  // namespace mgeo
