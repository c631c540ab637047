#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mgeo/model.hpp"
#include "mgeo/tensor_file.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace mgeo;
using testing_support::TempDir;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.vocab_size = 11;
  c.max_seq_len = 16;
  return c;
}

using Vec = std::vector<double>;

Vec mv(const Matrix& w, const Vec& x) {
  Vec y(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) y[r] += double(w(r, c)) * x[c];
  return y;
}

Vec rms(const Vec& x, const std::vector<float>& g, double eps) {
  double ms = 0;
  for (double v : x) ms += v * v;
  ms /= double(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = g[i] * x[i] / std::sqrt(ms + eps);
  return y;
}

// Straight-line double-precision forward written from the architecture description.
std::vector<Vec> reference_forward(const ModelWeights& w, const std::vector<int>& tokens) {
  const auto& c = w.config;
  const std::size_t T = tokens.size(), D = c.d_model;
  const int H = c.n_heads, hd = D / H;
  std::vector<Vec> x(T);
  for (std::size_t t = 0; t < T; ++t) x[t] = Vec(w.embed.row(tokens[t]).begin(), w.embed.row(tokens[t]).end());
  auto rotate = [&](Vec& v, std::size_t pos) {
    for (int h = 0; h < H; ++h)
      for (int i = 0; i < hd / 2; ++i) {
        const double ang = double(pos) * std::pow(c.rope_theta, -2.0 * i / hd);
        double& a = v[h * hd + i];
        double& b = v[h * hd + i + hd / 2];
        const double na = a * std::cos(ang) - b * std::sin(ang), nb = a * std::sin(ang) + b * std::cos(ang);
        a = na;
        b = nb;
      }
  };
  for (const auto& L : w.layers) {
    std::vector<Vec> q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      const Vec a = rms(x[t], L.norm1, c.rms_eps);
      q[t] = mv(L.attn_q, a);
      k[t] = mv(L.attn_k, a);
      v[t] = mv(L.attn_v, a);
      rotate(q[t], t);
      rotate(k[t], t);
    }
    for (std::size_t t = 0; t < T; ++t) {
      Vec ctx(D, 0.0);
      for (int h = 0; h < H; ++h) {
        Vec s(t + 1);
        for (std::size_t u = 0; u <= t; ++u) {
          double dp = 0;
          for (int i = 0; i < hd; ++i) dp += q[t][h * hd + i] * k[u][h * hd + i];
          s[u] = dp / std::sqrt(double(hd));
        }
        const Vec p = oracle::softmax(s);
        for (std::size_t u = 0; u <= t; ++u)
          for (int i = 0; i < hd; ++i) ctx[h * hd + i] += p[u] * v[u][h * hd + i];
      }
      const Vec o = mv(L.attn_o, ctx);
      for (std::size_t i = 0; i < D; ++i) x[t][i] += o[i];
    }
    for (std::size_t t = 0; t < T; ++t) {
      const Vec b = rms(x[t], L.norm2, c.rms_eps);
      const Vec g = mv(L.mlp_gate, b), u = mv(L.mlp_up, b);
      Vec act(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) act[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
      const Vec m = mv(L.mlp_down, act);
      for (std::size_t i = 0; i < D; ++i) x[t][i] += m[i];
    }
  }
  std::vector<Vec> logits(T);
  for (std::size_t t = 0; t < T; ++t) logits[t] = mv(w.unembed, rms(x[t], w.final_norm, c.rms_eps));
  return logits;
}

HookAction identity_hook(int layer, Position p) {
  return {layer, p, [](std::span<const float> h) { return std::vector<float>(h.begin(), h.end()); }};
}

}  // namespace

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(small_config().validate());
  auto c = small_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.n_heads = 8;  // head_dim 1 cannot be rotated in pairs
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.rms_eps = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Position, Resolve) {
  EXPECT_EQ(Position::last().resolve(5), 4u);
  EXPECT_EQ(Position::at(2).resolve(5), 2u);
  EXPECT_EQ((Position{true, 3}).resolve(5), 1u);
  EXPECT_THROW(Position::at(5).resolve(5), Error);
  EXPECT_THROW((Position{true, 5}).resolve(5), Error);
}

TEST(RmsNorm, Examples) {
  const std::vector<float> g = {1, 1};
  const auto y = rms_norm(std::vector<float>{3, 4}, g, 0.0 + 1e-12);
  // rms of (3,4) is sqrt(12.5)
  EXPECT_NEAR(y[0], 3 / std::sqrt(12.5), 1e-6);
  EXPECT_NEAR(y[1], 4 / std::sqrt(12.5), 1e-6);
  const auto z = rms_norm(std::vector<float>{0, 0}, g, 1e-5);
  EXPECT_EQ(z[0], 0.0f);
  const auto gg = rms_norm(std::vector<float>{1, 1}, std::vector<float>{2, -3}, 1e-12);
  EXPECT_NEAR(gg[0], 2.0, 1e-6);
  EXPECT_NEAR(gg[1], -3.0, 1e-6);
}

TEST(RmsNorm, ScaleInvariant) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> nd;
  std::vector<float> x(16), g(16);
  for (auto& v : x) v = nd(rng);
  for (auto& v : g) v = nd(rng);
  const auto a = rms_norm(x, g, 1e-12);
  for (float s : {0.01f, 3.0f, 1000.0f}) {
    auto xs = x;
    for (auto& v : xs) v *= s;
    const auto b = rms_norm(xs, g, 1e-12);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
  }
}

TEST(RandomInit, DeterministicPerSeed) {
  const auto a = random_init(small_config(), 42);
  const auto b = random_init(small_config(), 42);
  const auto c = random_init(small_config(), 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.embed, c.embed);
  EXPECT_EQ(a.final_norm, std::vector<float>(8, 1.0f));
  auto bad = small_config();
  bad.n_heads = 3;
  EXPECT_THROW(random_init(bad, 1), Error);
}

TEST(Forward, MatchesReferenceImplementationTiny) {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 2;
  c.n_heads = 1;
  c.d_ff = 3;
  c.vocab_size = 3;
  c.max_seq_len = 4;
  const auto w = random_init(c, 7);
  const std::vector<int> tokens = {2, 0, 1};
  const auto got = forward_with_hooks(w, tokens).logits;
  const auto want = reference_forward(w, tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t)
    for (int v = 0; v < 3; ++v) EXPECT_NEAR(got(t, v), want[t][v], 1e-6) << "t=" << t << " v=" << v;
}

TEST(Forward, MatchesReferenceImplementationMultiHead) {
  const auto w = random_init(small_config(), 3);
  const std::vector<int> tokens = {1, 5, 9, 2, 2, 7, 10};
  const auto got = forward_with_hooks(w, tokens).logits;
  const auto want = reference_forward(w, tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t)
    for (int v = 0; v < 11; ++v) EXPECT_NEAR(got(t, v), want[t][v], 1e-5);
}

TEST(Forward, DeterministicAndLogitRows) {
  const auto w = random_init(small_config(), 5);
  const std::vector<int> tokens = {3, 1, 4, 1, 5};
  const auto a = forward_with_hooks(w, tokens);
  const auto b = forward_with_hooks(w, tokens);
  EXPECT_EQ(a.logits, b.logits);
  const auto last = forward_with_hooks(w, tokens, {}, {}, LogitRows::last);
  ASSERT_EQ(last.logits.rows, 1u);
  for (int v = 0; v < 11; ++v) EXPECT_EQ(last.logits(0, v), a.logits(4, v));
  EXPECT_EQ(forward_with_hooks(w, tokens, {}, {}, LogitRows::none).logits.rows, 0u);
}

TEST(Forward, IdentityHooksAreNeutralBitwise) {
  const auto w = random_init(small_config(), 5);
  const std::vector<int> tokens = {3, 1, 4, 1, 5};
  const std::vector<int> all = {0, 1, 2};
  const auto base = forward_with_hooks(w, tokens, {}, all);
  std::vector<HookAction> hooks;
  for (int l = 0; l <= 2; ++l) hooks.push_back(identity_hook(l, Position::at(static_cast<std::size_t>(l))));
  const auto hooked = forward_with_hooks(w, tokens, hooks, all);
  EXPECT_EQ(base.logits, hooked.logits);
  EXPECT_EQ(base.captured, hooked.captured);
}

TEST(Forward, CausalityPrefixUnaffectedByLaterTokens) {
  const auto w = random_init(small_config(), 9);
  const auto a = forward_with_hooks(w, std::vector<int>{1, 2, 3, 4, 5}, {}, std::vector<int>{1, 2});
  const auto b = forward_with_hooks(w, std::vector<int>{1, 2, 3, 9, 0, 6}, {}, std::vector<int>{1, 2});
  for (std::size_t t = 0; t < 3; ++t) {
    for (int v = 0; v < 11; ++v) EXPECT_EQ(a.logits(t, v), b.logits(t, v));
    for (int l : {1, 2})
      for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a.captured.at(l)(t, i), b.captured.at(l)(t, i));
  }
}

TEST(Forward, HookAtLaterPositionLeavesEarlierPositionsAlone) {
  const auto w = random_init(small_config(), 9);
  const std::vector<int> tokens = {1, 2, 3, 4, 5};
  const auto base = forward_with_hooks(w, tokens);
  const std::vector<HookAction> hooks = {
      {1, Position::at(3), [](std::span<const float> h) {
         std::vector<float> o(h.begin(), h.end());
         for (auto& v : o) v *= -2.0f;
         return o;
       }}};
  const auto hooked = forward_with_hooks(w, tokens, hooks);
  for (std::size_t t = 0; t < 3; ++t)
    for (int v = 0; v < 11; ++v) EXPECT_EQ(base.logits(t, v), hooked.logits(t, v));
  bool changed = false;
  for (int v = 0; v < 11; ++v) changed |= base.logits(4, v) != hooked.logits(4, v);
  EXPECT_TRUE(changed);
}

TEST(Forward, CapturedStatesAreLayerOutputs) {
  const auto w = random_init(small_config(), 2);
  const std::vector<int> tokens = {4, 8};
  const auto r = forward_with_hooks(w, tokens, {}, std::vector<int>{0, 2});
  EXPECT_EQ(r.captured.size(), 2u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(r.captured.at(0)(1, i), w.embed(8, i));
  const auto logits = unembed_logits(w, r.captured.at(2).row(1));
  for (int v = 0; v < 11; ++v) EXPECT_EQ(logits[v], r.logits(1, v));
}

TEST(Forward, Errors) {
  const auto w = random_init(small_config(), 1);
  EXPECT_THROW(forward_with_hooks(w, std::vector<int>{}), Error);
  EXPECT_THROW(forward_with_hooks(w, std::vector<int>{11}), Error);
  EXPECT_THROW(forward_with_hooks(w, std::vector<int>{-1}), Error);
  EXPECT_THROW(forward_with_hooks(w, std::vector<int>(17, 0)), Error);
  const std::vector<int> tokens = {1, 2};
  EXPECT_THROW(forward_with_hooks(w, tokens, std::vector<HookAction>{identity_hook(3, Position::last())}), Error);
  EXPECT_THROW(forward_with_hooks(w, tokens, std::vector<HookAction>{identity_hook(1, Position::at(2))}), Error);
  EXPECT_THROW(forward_with_hooks(w, tokens, std::vector<HookAction>{identity_hook(1, Position::last()),
                                                                     identity_hook(1, Position::at(1))}),
               Error);
  const std::vector<HookAction> shrink = {
      {1, Position::last(), [](std::span<const float>) { return std::vector<float>(3, 0.0f); }}};
  EXPECT_THROW(forward_with_hooks(w, tokens, shrink), Error);
  EXPECT_THROW(forward_with_hooks(w, tokens, {}, std::vector<int>{3}), Error);
}

TEST(Unembed, LinearWithoutNormAndZeroMapsToZero) {
  const auto w = random_init(small_config(), 4);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> nd;
  std::vector<float> a(8), b(8), s(8);
  for (std::size_t i = 0; i < 8; ++i) {
    a[i] = nd(rng);
    b[i] = nd(rng);
    s[i] = 2.0f * a[i] + b[i];
  }
  const auto la = unembed_logits(w, a, ReadoutNorm::bypass), lb = unembed_logits(w, b, ReadoutNorm::bypass),
             ls = unembed_logits(w, s, ReadoutNorm::bypass);
  for (int v = 0; v < 11; ++v) EXPECT_NEAR(ls[v], 2 * la[v] + lb[v], 1e-5);
  const std::vector<float> zero(8, 0.0f);
  for (float v : unembed_logits(w, zero, ReadoutNorm::bypass)) EXPECT_EQ(v, 0.0f);
  for (float v : unembed_logits(w, zero)) EXPECT_EQ(v, 0.0f);
}

TEST(Unembed, NormActsAsTemperature) {
  const auto w = random_init(small_config(), 6);
  std::mt19937_64 rng(6);
  std::normal_distribution<float> nd;
  std::vector<float> h(8);
  for (auto& v : h) v = nd(rng);
  auto entropy = [](const std::vector<double>& p) {
    double e = 0;
    for (double v : p) e -= v * std::log(v);
    return e;
  };
  double prev = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order0;
  for (float c : {0.1f, 1.0f, 10.0f}) {
    auto hs = h;
    for (auto& v : hs) v *= c;
    const auto logits = unembed_logits(w, hs, ReadoutNorm::bypass);
    std::vector<std::size_t> order(11);
    for (std::size_t i = 0; i < 11; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return logits[x] > logits[y]; });
    if (order0.empty()) order0 = order;
    EXPECT_EQ(order, order0);
    const double e = entropy(softmax(logits));
    EXPECT_LT(e, prev);
    prev = e;
  }
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  const std::vector<float> z = {1, 2, 3, -50};
  const auto p = softmax(z);
  double s = 0;
  for (double v : p) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  const std::vector<float> z2 = {101, 102, 103, 50};
  const auto p2 = softmax(z2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p[i], p2[i], 1e-12);
}

TEST(Weights, SaveLoadRoundTrip) {
  TempDir dir;
  const auto w = random_init(small_config(), 12);
  save_weights(dir / "m.safetensors", w);
  EXPECT_EQ(load_model(dir / "m.safetensors"), w);
  EXPECT_EQ(load_weights(dir / "m.safetensors", small_config()), w);
  std::vector<std::string> names;
  for_each_parameter(w, [&](const std::string& n, auto, auto) { names.push_back(n); });
  EXPECT_EQ(names.front(), "embed");
  EXPECT_EQ(names.back(), "unembed");
  EXPECT_NE(std::find(names.begin(), names.end(), "layer.1.mlp_down"), names.end());
}

TEST(Weights, LoadErrors) {
  TempDir dir;
  const auto w = random_init(small_config(), 12);
  save_weights(dir / "m.safetensors", w);
  auto f = read_tensor_file(dir / "m.safetensors");

  auto missing = f;
  missing.tensors.erase("unembed");
  write_tensor_file(dir / "missing", missing);
  EXPECT_THROW(load_model(dir / "missing"), Error);

  auto wide = small_config();
  wide.d_model = 10;
  wide.n_heads = 1;
  EXPECT_THROW(load_weights(dir / "m.safetensors", wide), Error);

  auto nan = f;
  nan.tensors["layer.0.attn_q"].values[3] = std::numeric_limits<float>::quiet_NaN();
  write_tensor_file(dir / "nan", nan);
  EXPECT_THROW(load_model(dir / "nan"), Error);

  auto nometa = f;
  nometa.metadata.erase("d_model");
  write_tensor_file(dir / "nometa", nometa);
  EXPECT_THROW(load_model(dir / "nometa"), Error);
}
