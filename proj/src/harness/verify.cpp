// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/verify.hpp"

#include <chrono>
#include <cmath>

#include "common/errors.hpp"
#include "harness/model.hpp"
#include "harness/synth.hpp"
#include "ndgrad/ops.hpp"
#include "ndgrad/rng.hpp"
#include "objective/objective.hpp"
#include "risdec/decoder.hpp"

namespace etris::harness {

namespace {

using A = nd::Array<double>;
using Leaves = std::vector<std::pair<std::string, A>>;
using Clock = std::chrono::steady_clock;

// Entries are kept at least 0.1 away from zero so relu never sits on its kink.
A random_array(nd::Shape shape, nd::Rng& rng, bool requires_grad = true) {
  std::vector<double> v(nd::numel(shape));
  for (double& x : v) {
    const double mag = rng.uniform(0.1, 1.0);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return A(std::move(shape), std::move(v), requires_grad);
}

class PrimitiveSuite {
 public:
  PrimitiveSuite(std::uint64_t seed, const nd::GradcheckOptions& options) : rng_(seed), options_(options) {}

  A leaf(nd::Shape shape) { return random_array(std::move(shape), rng_); }

  // The scalar objective is a fixed random projection of the primitive's
  // output, so every output element carries a distinct weight.
  template <typename Fn>
  void check(const std::string& name, Leaves leaves, Fn fn) {
    const auto t0 = Clock::now();
    const A weights = random_array(fn().shape(), rng_, false);
    auto f = [&] { return nd::sum(nd::mul(fn(), weights)); };
    NamedReport r{"primitive/" + name, nd::gradcheck(f, std::move(leaves), options_), 0};
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    reports_.push_back(std::move(r));
  }

  std::vector<NamedReport> take() { return std::move(reports_); }
  nd::Rng& rng() { return rng_; }

 private:
  nd::Rng rng_;
  nd::GradcheckOptions options_;
  std::vector<NamedReport> reports_;
};

// A short grammar expression fits the toy max_len; scan until one does.
Sample gradcheck_sample(const RunConfig& config) {
  const int size = config.model.backbone.image_size;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    try {
      return generate_sample(config.model.seed, i, size, config.model.backbone.max_len);
    } catch (const InputError&) {
    }
  }
  throw ConfigError("no synthetic expression fits max_len " + std::to_string(config.model.backbone.max_len));
}

}  // namespace

std::vector<NamedReport> primitive_gradchecks(std::uint64_t seed, const nd::GradcheckOptions& options) {
  PrimitiveSuite s(seed, options);

  {
    A a = s.leaf({3, 4}), b = s.leaf({3, 4});
    s.check("add", {{"a", a}, {"b", b}}, [=] { return nd::add(a, b); });
    s.check("sub", {{"a", a}, {"b", b}}, [=] { return nd::sub(a, b); });
    s.check("mul", {{"a", a}, {"b", b}}, [=] { return nd::mul(a, b); });
    s.check("scale", {{"a", a}}, [=] { return nd::scale(a, 1.7); });
  }
  {
    A x = s.leaf({3, 4}), v = s.leaf({4});
    s.check("add_rowwise", {{"x", x}, {"v", v}}, [=] { return nd::add_rowwise(x, v); });
    s.check("mul_rowwise", {{"x", x}, {"v", v}}, [=] { return nd::mul_rowwise(x, v); });
  }
  {
    A a = s.leaf({3, 4}), b = s.leaf({4, 5});
    s.check("matmul", {{"a", a}, {"b", b}}, [=] { return nd::matmul(a, b); });
    A w = s.leaf({5, 4}), bias = s.leaf({5});
    s.check("linear", {{"x", a}, {"weight", w}, {"bias", bias}}, [=] { return nd::linear(a, w, nd::OptArray<double>(bias)); });
    s.check("linear_nobias", {{"x", a}, {"weight", w}}, [=] { return nd::linear(a, w); });
    s.check("transpose", {{"x", a}}, [=] { return nd::transpose(a); });
    s.check("reshape", {{"x", a}}, [=] { return nd::reshape(a, nd::Shape{2, 6}); });
  }
  {
    A p = s.leaf({2, 3, 3}), q = s.leaf({1, 3, 3});
    s.check("concat", {{"p", p}, {"q", q}}, [=] { return nd::concat(std::vector<A>{p, q}); });
    A rows = s.leaf({5, 3});
    s.check("slice", {{"x", rows}}, [=] { return nd::slice(rows, 1, 4); });
    A table = s.leaf({6, 3});
    s.check("gather_rows", {{"table", table}}, [=] { return nd::gather_rows(table, {0, 2, 2, 5}); });
  }
  {
    A x = s.leaf({3, 5}), gamma = s.leaf({5}), beta = s.leaf({5});
    s.check("layer_norm", {{"x", x}, {"gamma", gamma}, {"beta", beta}},
            [=] { return nd::layer_norm(x, gamma, beta); });
    s.check("softmax", {{"x", x}}, [=] { return nd::softmax(x); });
    s.check("sigmoid", {{"x", x}}, [=] { return nd::sigmoid(x); });
    s.check("gelu", {{"x", x}}, [=] { return nd::gelu(x); });
    s.check("relu", {{"x", x}}, [=] { return nd::relu(x); });
    s.check("sum", {{"x", x}}, [=] { return nd::sum(x); });
    s.check("mean", {{"x", x}}, [=] { return nd::mean(x); });
    s.check("mean_axis0", {{"x", x}}, [=] { return nd::mean_axis(x, 0); });
    s.check("mean_axis1", {{"x", x}}, [=] { return nd::mean_axis(x, 1); });
  }
  {
    A x = s.leaf({3, 5, 5});
    A w1 = s.leaf({4, 3, 1, 1}), b1 = s.leaf({4});
    s.check("conv1x1", {{"x", x}, {"weight", w1}, {"bias", b1}}, [=] { return nd::conv2d(x, w1, nd::OptArray<double>(b1), 1, 0); });
    A w3 = s.leaf({2, 3, 3, 3}), b3 = s.leaf({2});
    s.check("conv3x3_pad1", {{"x", x}, {"weight", w3}, {"bias", b3}},
            [=] { return nd::conv2d(x, w3, nd::OptArray<double>(b3), 1, 1); });
    s.check("conv3x3_stride2", {{"x", x}, {"weight", w3}}, [=] { return nd::conv2d(x, w3, nd::OptArray<double>{}, 2, 1); });
    A x4 = s.leaf({3, 4, 4});
    A w2 = s.leaf({2, 3, 2, 2}), b2 = s.leaf({2});
    s.check("conv2x2_stride2", {{"x", x4}, {"weight", w2}, {"bias", b2}},
            [=] { return nd::conv2d(x4, w2, nd::OptArray<double>(b2), 2, 0); });
    s.check("conv2x2_pad01", {{"x", x4}, {"weight", w2}},
            [=] { return nd::conv2d(x4, w2, nd::OptArray<double>{}, 1, nd::Padding{0, 1}); });
    A xd = s.leaf({3, 3, 3}), wd = s.leaf({3, 2, 2, 2}), bd = s.leaf({2});
    s.check("deconv2x2", {{"x", xd}, {"weight", wd}, {"bias", bd}},
            [=] { return nd::transposed_conv2d(xd, wd, nd::OptArray<double>(bd), 2); });
  }
  {
    A x = s.leaf({2, 4, 4});
    s.check("bilinear_up4", {{"x", x}}, [=] { return nd::resize_bilinear(x, 16, 16); });
    s.check("bilinear_6x5", {{"x", x}}, [=] { return nd::resize_bilinear(x, 6, 5); });
    A big = s.leaf({2, 8, 8});
    s.check("bilinear_down2", {{"x", big}}, [=] { return nd::resize_bilinear(big, 4, 4); });
    A small = s.leaf({2, 3, 3});
    s.check("nearest_up4", {{"x", small}}, [=] { return nd::upsample_nearest(small, 4); });
    A m = s.leaf({3, 2, 4});
    s.check("map_to_tokens", {{"x", m}}, [=] { return nd::map_to_tokens(m); });
    A t = s.leaf({8, 3});
    s.check("tokens_to_map", {{"x", t}}, [=] { return nd::tokens_to_map(t, 2, 4); });
  }
  {
    A q = s.leaf({4, 6}), k = s.leaf({5, 6}), v = s.leaf({5, 6});
    s.check("attention", {{"q", q}, {"k", k}, {"v", v}}, [=] { return nd::attention(q, k, v, 2); });
    s.check("attention_key_len", {{"q", q}, {"k", k}, {"v", v}},
            [=] { return nd::attention(q, k, v, 2, nd::AttentionMask{false, 3}); });
    A k4 = s.leaf({4, 6}), v4 = s.leaf({4, 6});
    s.check("attention_causal", {{"q", q}, {"k", k4}, {"v", v4}},
            [=] { return nd::attention(q, k4, v4, 3, nd::AttentionMask{true, -1}); });
  }
  {
    const int depth = 3, k = 3;
    A z_t = s.leaf({1, depth * k * k + 1}), z_c = s.leaf({depth, 5, 5});
    s.check("dynamic_conv", {{"z_t", z_t}, {"z_c", z_c}},
            [=] { return risdec::dynamic_conv(z_c, risdec::split_kernel(z_t, depth, k)); });
  }
  {
    A z = s.leaf({4, 4});
    std::vector<std::uint8_t> gt(16);
    for (auto& g : gt) g = s.rng().uniform() < 0.4 ? 1 : 0;
    s.check("contrastive_loss", {{"logits", z}}, [=] { return objective::contrastive_loss(z, gt); });
  }
  return s.take();
}

std::vector<GradcheckCase> gradcheck_cases(const RunConfig& base, bool full) {
  std::vector<GradcheckCase> cases;
  auto add = [&](const std::string& name, auto edit) {
    RunConfig c = base;
    edit(c);
    cases.push_back({name, c});
  };
  using bridger::Scope;
  using bridger::ZoomVariant;
  using backbone::ImageVariant;
  add("bridger-cnn", [](RunConfig& c) { c.model.method = Method::bridger; });
  add("adapter-cnn", [](RunConfig& c) { c.model.method = Method::adapter; });
  add("lora-cnn", [](RunConfig& c) { c.model.method = Method::lora; });
  if (!full) return cases;
  for (Method m : {Method::bridger, Method::adapter, Method::lora})
    add(to_string(m) + "-vit", [m](RunConfig& c) {
      c.model.method = m;
      c.model.backbone.image_variant = ImageVariant::vit;
    });
  for (ZoomVariant z : {ZoomVariant::linear, ZoomVariant::conv_interpolate, ZoomVariant::mlp})
    add("bridger-cnn-" + bridger::to_string(z), [z](RunConfig& c) {
      c.model.method = Method::bridger;
      c.model.bridger.zoom_variant = z;
    });
  add("bridger-cnn-late", [](RunConfig& c) {
    c.model.method = Method::bridger;
    c.model.bridger.scope = Scope::late;
    c.model.bridger.count = 2;
  });
  add("bridger-cnn-single", [](RunConfig& c) {
    c.model.method = Method::bridger;
    c.model.bridger.scope = Scope::single;
    c.model.bridger.count = 1;
  });
  return cases;
}

nd::GradcheckReport model_gradcheck(const RunConfig& config, const nd::GradcheckOptions& options) {
  EtrisModel<double> model(config.model);
  for (auto& p : model.store()) {
    if (!p.trainable) continue;
    auto values = p.array.mutable_values();
    bool all_zero = true;
    for (double v : values) all_zero = all_zero && v == 0.0;
    if (!all_zero) continue;
    nd::Rng rng(nd::derive_seed(config.model.seed, "gradcheck." + p.name));
    for (double& v : values) v = 0.1 * rng.normal();
  }
  const Sample sample = gradcheck_sample(config);
  const A image = image_tensor<double>(sample.rgb, sample.image_size);
  const auto tokens = model.tokens(sample.tokens);
  const auto gt = loss_target(sample.mask, sample.image_size / 4);
  auto f = [&] { return objective::contrastive_loss(model.forward(image, tokens), gt); };
  return nd::gradcheck(f, model.store(), options);
}

std::vector<NamedReport> run_gradcheck_suite(const RunConfig& base, bool full, const nd::GradcheckOptions& options) {
  std::vector<NamedReport> reports = primitive_gradchecks(7, options);
  for (const auto& c : gradcheck_cases(base, full)) {
    const auto t0 = Clock::now();
    NamedReport r{"model/" + c.name, model_gradcheck(c.config, options), 0};
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    reports.push_back(std::move(r));
  }
  return reports;
}

nlohmann::ordered_json gradcheck_json(const std::vector<NamedReport>& reports, const nd::GradcheckOptions& options) {
  nlohmann::ordered_json j;
  j["eps"] = options.eps;
  j["tol"] = options.tol;
  double worst = 0;
  bool passed = true;
  auto& cases = j["cases"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json c;
    c["name"] = r.name;
    c["max_rel_error"] = r.report.max_rel_error();
    c["max_resolved_error"] = r.report.max_resolved_error();
    c["passed"] = r.report.passed();
    c["seconds"] = r.seconds;
    auto& params = c["parameters"] = nlohmann::ordered_json::array();
    for (const auto& e : r.report.entries) {
      params.push_back({{"name", e.name},
                        {"count", e.count},
                        {"max_rel_error", e.max_rel_error},
                        {"max_resolved_error", e.max_resolved_error},
                        {"unresolvable", e.unresolvable},
                        {"worst_index", e.worst_index},
                        {"analytic", e.analytic},
                        {"numeric", e.numeric}});
    }
    worst = std::max(worst, r.report.max_rel_error());
    passed = passed && r.report.passed();
    cases.push_back(std::move(c));
  }
  j["max_rel_error"] = worst;
  j["passed"] = passed;
  return j;
}

}  // namespace etris::harness
