// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "backbone/backbone.hpp"
#include "bridger/bridger.hpp"
#include "common/errors.hpp"
#include "harness/train.hpp"
#include "ndgrad/rng.hpp"

namespace nd = etris::nd;
namespace bb = etris::backbone;
namespace br = etris::bridger;
using A = nd::Array<double>;

namespace {

A random(nd::Shape shape, nd::Rng& rng) {
  std::vector<double> v(nd::numel(shape));
  for (double& x : v) x = rng.uniform(-1, 1);
  return A(std::move(shape), std::move(v));
}

void randomize(nd::ParamStore<double>& store, const std::string& prefix, nd::Rng& rng, double scale = 0.5) {
  for (auto& p : store)
    if (nd::has_prefix(p.name, prefix))
      for (double& x : p.array.mutable_values()) x = scale * rng.uniform(-1, 1);
}

std::vector<int> sample_ids() { return {1, 5, 9, 7, 2}; }

void expect_identical(const A& a, const A& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]) << "at " << i;
}

void expect_near(const A& a, const A& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

A image(nd::Rng& rng, int size = 64) {
  std::vector<double> v(static_cast<std::size_t>(3 * size * size));
  for (double& x : v) x = rng.uniform();
  return A({3, size, size}, std::move(v));
}

}  // namespace

// ---- backbone ----

TEST(Backbone, CnnTapShapes) {
  nd::ParamStore<double> store(1);
  bb::BackboneConfig cfg;
  bb::Backbone<double> model(store, cfg);
  nd::Rng rng(3);
  const auto f = model.image.encode(image(rng));
  ASSERT_EQ(f.features.size(), 3u);
  EXPECT_EQ(f.features[0].shape(), (nd::Shape{64, 8, 8}));
  EXPECT_EQ(f.features[1].shape(), (nd::Shape{128, 4, 4}));
  EXPECT_EQ(f.features[2].shape(), (nd::Shape{256, 2, 2}));
  for (int s : cfg.tap_stages()) EXPECT_EQ(f.features[s - 2].shape(), cfg.tap_shape(s));
}

TEST(Backbone, VitTapShapes) {
  nd::ParamStore<double> store(1);
  bb::BackboneConfig cfg;
  cfg.image_variant = bb::ImageVariant::vit;
  bb::Backbone<double> model(store, cfg);
  nd::Rng rng(3);
  const auto f = model.image.encode(image(rng));
  ASSERT_EQ(f.features.size(), 3u);
  for (const auto& x : f.features) EXPECT_EQ(x.shape(), (nd::Shape{64, 8, 8}));
}

TEST(Backbone, ConfigErrors) {
  bb::BackboneConfig c;
  c.image_size = 40;
  EXPECT_THROW(c.validate(), etris::ConfigError);
  c = {};
  c.depths = {1, 1, 2};
  EXPECT_THROW(c.validate(), etris::ConfigError);
  c = {};
  c.text_layers = 6;
  EXPECT_THROW(c.validate(), etris::ConfigError);
  c = {};
  c.image_variant = bb::ImageVariant::vit;
  c.vit_layers = 6;
  EXPECT_THROW(c.validate(), etris::ConfigError);
  c = {};
  EXPECT_THROW(c.tap_shape(1), etris::ConfigError);
  EXPECT_THROW(c.tap_shape(5), etris::ConfigError);
}

TEST(Backbone, TextShapesAndLengthLimit) {
  nd::ParamStore<double> store(1);
  bb::BackboneConfig cfg;
  bb::Backbone<double> model(store, cfg);
  const auto tokens = model.text.prepare(sample_ids(), 2, 0);
  EXPECT_EQ(tokens.eos, 4);
  EXPECT_EQ(tokens.ids.size(), 17u);
  const auto t = model.text.encode(tokens);
  ASSERT_EQ(t.per_block.size(), 3u);
  for (const auto& x : t.per_block) EXPECT_EQ(x.shape(), (nd::Shape{17, 64}));
  EXPECT_EQ(t.sentence.shape(), (nd::Shape{1, 64}));

  std::vector<int> too_long(18, 5);
  too_long.back() = 2;
  EXPECT_THROW(model.text.prepare(too_long, 2, 0), etris::InputError);
  EXPECT_THROW(model.text.prepare({1, 5, 9}, 2, 0), etris::InputError);
  EXPECT_THROW(model.text.prepare({1, 99, 2}, 2, 0), etris::InputError);
}

TEST(Backbone, PadsAfterEndTokenDoNotChangeEarlierRowsOrSentence) {
  nd::ParamStore<double> store(1);
  bb::Backbone<double> model(store, bb::BackboneConfig{});
  auto a = model.text.prepare(sample_ids(), 2, 0);
  auto b = a;
  for (std::size_t i = 5; i < b.ids.size(); ++i) b.ids[i] = static_cast<int>(3 + i % 20);
  const auto fa = model.text.encode(a), fb = model.text.encode(b);
  expect_identical(fa.sentence, fb.sentence);
  for (std::size_t k = 0; k < fa.per_block.size(); ++k)
    for (int r = 0; r <= a.eos; ++r)
      for (int c = 0; c < 64; ++c)
        ASSERT_EQ(fa.per_block[k][static_cast<std::size_t>(r * 64 + c)],
                  fb.per_block[k][static_cast<std::size_t>(r * 64 + c)]);
}

TEST(Backbone, ZeroImageWithZeroShiftsGivesZeroFeatures) {
  nd::ParamStore<double> store(1);
  bb::Backbone<double> model(store, bb::BackboneConfig{});
  for (auto& p : store)
    if (p.name.ends_with(".bias") || p.name.ends_with(".beta"))
      for (double& x : p.array.mutable_values()) x = 0;
  const auto f = model.image.encode(A::zeros({3, 64, 64}));
  for (const auto& x : f.features)
    for (double v : x.values()) ASSERT_EQ(v, 0.0);
}

TEST(Backbone, FreezeMarksEveryBackboneArray) {
  nd::ParamStore<double> store(1);
  bb::Backbone<double> model(store, bb::BackboneConfig{});
  store.add("decoder.w", {3}, nd::Init::zeros());
  const std::size_t n = bb::freeze_backbone(store);
  EXPECT_EQ(n, store.size() - 1);
  EXPECT_EQ(store.trainable_count(), 3u);
  for (const auto& p : store) EXPECT_EQ(p.trainable, !nd::has_prefix(p.name, "backbone.")) << p.name;
}

TEST(Backbone, DeterministicInSeed) {
  nd::ParamStore<double> s1(9), s2(9), s3(10);
  bb::Backbone<double> m1(s1, {}), m2(s2, {}), m3(s3, {});
  nd::Rng rng(4);
  const A img = image(rng);
  expect_identical(m1.image.encode(img).features[2], m2.image.encode(img).features[2]);
  EXPECT_NE(m1.image.encode(img).features[2][0], m3.image.encode(img).features[2][0]);
}

// ---- bridger: zoom layers ----

TEST(Zoom, ConvDeconvShapes) {
  nd::ParamStore<double> store(1);
  nd::Rng rng(5);
  br::ZoomIn<double> down(store, "a", br::ZoomVariant::conv_deconv, {64, 16, 16}, 8, {4, 4});
  br::ZoomIn<double> same(store, "b", br::ZoomVariant::conv_deconv, {128, 4, 4}, 8, {4, 4});
  br::ZoomIn<double> up(store, "c", br::ZoomVariant::conv_deconv, {256, 2, 2}, 8, {4, 4});
  EXPECT_EQ(down(random({64, 16, 16}, rng)).shape(), (nd::Shape{8, 4, 4}));
  EXPECT_EQ(same(random({128, 4, 4}, rng)).shape(), (nd::Shape{8, 4, 4}));
  EXPECT_EQ(up(random({256, 2, 2}, rng)).shape(), (nd::Shape{8, 4, 4}));
  EXPECT_EQ(store.at("a.step1.weight").array.shape(), (nd::Shape{8, 8, 2, 2}));
  EXPECT_FALSE(store.contains("a.step2.weight"));
}

TEST(Zoom, RatioMustBeAPowerOfTwo) {
  nd::ParamStore<double> store(1);
  EXPECT_THROW(br::ZoomIn<double>(store, "a", br::ZoomVariant::conv_deconv, {8, 12, 12}, 8, {4, 4}),
               etris::ConfigError);
  EXPECT_THROW(br::ZoomIn<double>(store, "b", br::ZoomVariant::conv_deconv, {8, 8, 4}, 8, {4, 4}),
               etris::ConfigError);
  EXPECT_THROW(br::ZoomOut<double>(store, "c", br::ZoomVariant::conv_deconv, 8, {4, 4}, {8, 12, 12}),
               etris::ConfigError);
}

TEST(Zoom, EveryVariantGivesTheSameShapes) {
  nd::Rng rng(6);
  for (auto v : {br::ZoomVariant::linear, br::ZoomVariant::conv_interpolate, br::ZoomVariant::mlp,
                 br::ZoomVariant::conv_deconv}) {
    nd::ParamStore<double> store(1);
    br::ZoomIn<double> in(store, "in", v, {64, 8, 8}, 16, {4, 4});
    br::ZoomOut<double> out(store, "out", v, 16, {4, 4}, {128, 2, 2});
    const A z = in(random({64, 8, 8}, rng));
    EXPECT_EQ(z.shape(), (nd::Shape{16, 4, 4})) << br::to_string(v);
    const A y = out(z);
    EXPECT_EQ(y.shape(), (nd::Shape{128, 2, 2})) << br::to_string(v);
    // last layer starts at zero
    for (double x : y.values()) ASSERT_EQ(x, 0.0) << br::to_string(v);
  }
}

TEST(Zoom, ParseNames) {
  EXPECT_EQ(br::parse_zoom_variant("mlp"), br::ZoomVariant::mlp);
  EXPECT_EQ(br::parse_scope("late"), br::Scope::late);
  EXPECT_THROW(br::parse_zoom_variant("deconv"), etris::ConfigError);
  EXPECT_THROW(br::parse_scope("early"), etris::ConfigError);
}

// ---- bridger: interactor ----

namespace {

using Mat = std::vector<std::vector<double>>;

Mat affine(const Mat& x, const nd::ParamStore<double>& s, const std::string& name) {
  const A& w = s.at(name + ".weight").array;
  const A& b = s.at(name + ".bias").array;
  const int out = w.dim(0), in = w.dim(1);
  Mat y(x.size(), std::vector<double>(static_cast<std::size_t>(out)));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (int o = 0; o < out; ++o) {
      double acc = b[static_cast<std::size_t>(o)];
      for (int i = 0; i < in; ++i) acc += w[static_cast<std::size_t>(o * in + i)] * x[r][i];
      y[r][o] = acc;
    }
  return y;
}

Mat norm(const Mat& x, const nd::ParamStore<double>& s, const std::string& name) {
  const A& g = s.at(name + ".gamma").array;
  const A& b = s.at(name + ".beta").array;
  Mat y = x;
  for (auto& row : y) {
    double mu = 0, var = 0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mu) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
  return y;
}

// single-head attention, keys at index >= key_len ignored
Mat attend(const Mat& query, const Mat& kv, const nd::ParamStore<double>& s, const std::string& name,
           int key_len) {
  const Mat q = affine(query, s, name + ".q"), k = affine(kv, s, name + ".k"), v = affine(kv, s, name + ".v");
  const std::size_t d = q[0].size(), m = static_cast<std::size_t>(key_len);
  Mat out(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> logit(m);
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t c = 0; c < d; ++c) logit[j] += q[i][c] * k[j][c];
      logit[j] /= std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logit[j]);
    }
    for (double& l : logit) z += (l = std::exp(l - mx));
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i][c] += logit[j] / z * v[j][c];
  }
  return affine(out, s, name + ".o");
}

Mat ffn(const Mat& x, const nd::ParamStore<double>& s, const std::string& name) {
  Mat h = affine(x, s, name + ".fc1");
  for (auto& row : h)
    for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return affine(h, s, name + ".fc2");
}

}  // namespace

TEST(Interactor, MatchesLoopOracle) {
  nd::ParamStore<double> store(11);
  br::BridgerConfig cfg;
  cfg.hidden_dim = 8;
  cfg.heads = 1;
  cfg.ffn_dim = 12;
  const auto ita = br::Interactor<double>::create(store, "ita", cfg);
  nd::Rng rng(12);
  randomize(store, "ita", rng);
  // gammas around 1
  for (auto& p : store)
    if (p.name.ends_with(".gamma"))
      for (double& x : p.array.mutable_values()) x += 1.0;

  const int len = 5, valid = 3;
  br::BridgerCarry<double> carry{random({8, 2, 2}, rng), random({len, 8}, rng)};
  const A zv = random({8, 2, 2}, rng), zt = random({len, 8}, rng);
  const auto [fv, ft] = ita(carry, zv, zt, valid);

  Mat v(4, std::vector<double>(8)), t(static_cast<std::size_t>(len), std::vector<double>(8));
  for (int c = 0; c < 8; ++c)
    for (int p = 0; p < 4; ++p) v[p][c] = carry.visual[c * 4 + p] + zv[c * 4 + p];
  for (int r = 0; r < len; ++r)
    for (int c = 0; c < 8; ++c) t[r][c] = carry.textual[r * 8 + c] + zt[r * 8 + c];
  v = norm(v, store, "ita.ln_visual");
  t = norm(t, store, "ita.ln_text");
  const Mat v_self = attend(v, v, store, "ita.self_attn", 4);
  const Mat t_self = attend(t, t, store, "ita.self_attn", valid);
  const Mat v_out = ffn(attend(v_self, t_self, store, "ita.cross_attn", valid), store, "ita.ffn");
  const Mat t_out = ffn(attend(t_self, v_self, store, "ita.cross_attn", 4), store, "ita.ffn");

  ASSERT_EQ(fv.shape(), (nd::Shape{8, 2, 2}));
  ASSERT_EQ(ft.shape(), (nd::Shape{len, 8}));
  for (int c = 0; c < 8; ++c)
    for (int p = 0; p < 4; ++p) EXPECT_NEAR(fv[c * 4 + p], v_out[p][c], 1e-12);
  for (int r = 0; r < len; ++r)
    for (int c = 0; c < 8; ++c) EXPECT_NEAR(ft[r * 8 + c], t_out[r][c], 1e-12);
}

TEST(Interactor, ZeroedFeedForwardOutputGivesZero) {
  nd::ParamStore<double> store(11);
  br::BridgerConfig cfg;
  cfg.hidden_dim = 16;
  const auto ita = br::Interactor<double>::create(store, "ita", cfg);
  nd::Rng rng(1);
  randomize(store, "ita", rng);
  for (const char* n : {"ita.ffn.fc2.weight", "ita.ffn.fc2.bias"})
    for (double& x : store.at(n).array.mutable_values()) x = 0;
  const auto [fv, ft] =
      ita(br::BridgerCarry<double>::zeros(16, 4, 4, 6), random({16, 4, 4}, rng), random({6, 16}, rng), 4);
  for (double x : fv.values()) ASSERT_EQ(x, 0.0);
  for (double x : ft.values()) ASSERT_EQ(x, 0.0);
}

TEST(Interactor, PreNormSwitch) {
  nd::ParamStore<double> store(1);
  br::BridgerConfig cfg;
  cfg.pre_norm = false;
  const auto ita = br::Interactor<double>::create(store, "ita", cfg);
  EXPECT_FALSE(ita.ln_visual.has_value());
  EXPECT_FALSE(store.contains("ita.ln_text.gamma"));
}

// ---- bridger: model level ----

TEST(BridgerConfig, StagesPerScope) {
  bb::BackboneConfig b;
  br::BridgerConfig c;
  EXPECT_EQ(c.stages(b), (std::vector<int>{2, 3, 4}));
  c.count = 1;
  c.scope = br::Scope::late;
  EXPECT_EQ(c.stages(b), (std::vector<int>{3}));
  c.count = 2;
  EXPECT_EQ(c.stages(b), (std::vector<int>{3, 4}));
  c.count = 3;
  EXPECT_THROW(c.validate(b), etris::ConfigError);
  c.scope = br::Scope::single;
  c.count = 1;
  EXPECT_EQ(c.stages(b), (std::vector<int>{4}));
  c.count = 2;
  EXPECT_THROW(c.validate(b), etris::ConfigError);
  c = {};
  c.hidden_dim = 48;
  EXPECT_THROW(c.validate(b), etris::ConfigError);
  c = {};
  c.heads = 3;
  EXPECT_THROW(c.validate(b), etris::ConfigError);
  c = {};
  c.count = -1;
  EXPECT_THROW(c.validate(b), etris::ConfigError);
  EXPECT_EQ((br::BridgerConfig{}.reference_hw(b)), (std::pair<int, int>{4, 4}));
}

TEST(Bridger, UnitTargets) {
  nd::ParamStore<double> store(1);
  br::Bridger<double> bridger(store, {}, {});
  ASSERT_EQ(bridger.units().size(), 3u);
  const int stages[] = {2, 3, 4}, targets[] = {3, 4, 4};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(bridger.units()[i].stage(), stages[i]);
    EXPECT_EQ(bridger.units()[i].target_stage(), targets[i]);
  }
}

TEST(Bridger, FreshBridgerIsBitIdenticalToNone) {
  for (auto variant : {bb::ImageVariant::cnn, bb::ImageVariant::vit}) {
    bb::BackboneConfig bc;
    bc.image_variant = variant;
    nd::ParamStore<double> s1(3), s2(3);
    bb::Backbone<double> m1(s1, bc), m2(s2, bc);
    br::BridgerConfig with, without;
    without.count = 0;
    br::Bridger<double> b1(s1, with, bc), b2(s2, without, bc);
    ASSERT_TRUE(b2.units().empty());
    nd::Rng rng(2);
    const A img = image(rng);
    const auto tokens = m1.text.prepare(sample_ids(), 2, 0);
    const auto f1 = b1.forward(m1, img, tokens), f2 = b2.forward(m2, img, tokens);
    for (std::size_t k = 0; k < 3; ++k) {
      expect_identical(f1.image.features[k], f2.image.features[k]);
      expect_identical(f1.text.per_block[k], f2.text.per_block[k]);
    }
    expect_identical(f1.text.sentence, f2.text.sentence);
    // and equal to the plain encoders
    const auto plain = m2.image.encode(img);
    expect_identical(plain.features[2], f2.image.features[2]);
  }
}

TEST(Bridger, ForwardMatchesManualThreading) {
  nd::ParamStore<double> store(3);
  bb::BackboneConfig bc;
  bb::Backbone<double> model(store, bc);
  br::Bridger<double> bridger(store, {}, bc);
  nd::Rng rng(8);
  randomize(store, "bridger.", rng, 0.05);
  const A img = image(rng);
  const auto tokens = model.text.prepare(sample_ids(), 2, 0);
  const auto out = bridger.forward(model, img, tokens);

  // unit 0 feeds stage 3, unit 1 stage 4, unit 2 (last stage) its own output
  const auto& u = bridger.units();
  A v = model.image.run_stage(2, model.image.begin(img));
  A t = model.text.run_block(2, model.text.begin(tokens));
  const auto s0 = u[0].step(bridger.initial_carry(), model.image.tap(v), t, tokens.valid_length());
  expect_near(out.image.features[0], model.image.tap(v), 0);
  v = model.image.inject(model.image.run_stage(3, v), s0.visual_delta);
  t = nd::add(model.text.run_block(3, t), s0.text_delta);
  const auto s1 = u[1].step(s0.carry, model.image.tap(v), t, tokens.valid_length());
  expect_near(out.image.features[1], model.image.tap(v), 1e-12);
  v = model.image.inject(model.image.run_stage(4, v), s1.visual_delta);
  t = nd::add(model.text.run_block(4, t), s1.text_delta);
  const auto s2 = u[2].step(s1.carry, model.image.tap(v), t, tokens.valid_length());
  v = model.image.inject(v, s2.visual_delta);
  t = nd::add(t, s2.text_delta);
  expect_near(out.image.features[2], model.image.tap(v), 1e-9);
  expect_near(out.text.per_block[2], t, 1e-9);
  expect_near(out.text.sentence, model.text.sentence(t, tokens), 1e-9);

  // the deltas are not trivially zero
  double mag = 0;
  for (double x : s2.visual_delta.values()) mag += std::abs(x);
  EXPECT_GT(mag, 1e-6);
}

TEST(Bridger, GradientReachesZoomInAfterOneStep) {
  etris::harness::ModelConfig mc;
  nd::ParamStore<float> store(3);
  bb::Backbone<float> model(store, mc.backbone);
  br::Bridger<float> bridger(store, {}, mc.backbone);
  bb::freeze_backbone(store);
  nd::Rng rng(9);
  std::vector<float> px(3 * 64 * 64);
  for (float& x : px) x = static_cast<float>(rng.uniform());
  const nd::Array<float> img({3, 64, 64}, px);
  const auto tokens = model.text.prepare(sample_ids(), 2, 0);
  std::vector<float> wv(256 * 2 * 2);
  for (float& x : wv) x = static_cast<float>(rng.uniform(-1, 1));
  const nd::Array<float> w({256, 2, 2}, wv);

  auto grad_norm = [&](const std::string& name) {
    double s = 0;
    for (float g : store.at(name).array.grad()) s += std::abs(g);
    return s;
  };
  auto backward = [&] {
    store.zero_grad();
    const auto f = bridger.forward(model, img, tokens);
    nd::sum(nd::mul(f.image.features[2], w)).backward();
  };
  backward();
  EXPECT_GT(grad_norm("bridger.2.zoom_out.proj.weight"), 0.0);
  EXPECT_EQ(grad_norm("bridger.2.zoom_in.step0.weight"), 0.0);
  EXPECT_EQ(grad_norm("backbone.image.stage4.block0.conv.weight"), 0.0);

  etris::harness::Adam<float> adam(store, [](const std::string&) { return 1e-3; });
  adam.step();
  backward();
  EXPECT_GT(grad_norm("bridger.2.zoom_in.step0.weight"), 0.0);
  EXPECT_GT(grad_norm("bridger.1.zoom_in.step0.weight"), 0.0);
}
