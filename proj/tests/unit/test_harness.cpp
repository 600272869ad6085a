// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "common/errors.hpp"
#include "harness/ablation.hpp"
#include "harness/checkpoint.hpp"
#include "harness/config.hpp"
#include "harness/evaluate.hpp"
#include "harness/train.hpp"
#include "harness/vocab.hpp"
#include "petzoo/petzoo.hpp"

namespace fs = std::filesystem;
namespace nd = etris::nd;
namespace hs = etris::harness;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("etris_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small stack that still reads the full 17-token expressions.
hs::RunConfig small_config() {
  hs::RunConfig c = hs::gradcheck_config();
  c.model.backbone.max_len = 17;
  c.train.batch_size = 2;
  return c;
}

hs::Dataset make_dataset(int n, int size, std::uint64_t seed = 3) {
  hs::Dataset d;
  d.seed = seed;
  d.image_size = size;
  d.max_len = 17;
  for (int i = 0; i < n; ++i) d.samples.push_back(hs::generate_sample(seed, static_cast<std::uint64_t>(i), size, 17));
  return d;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
bool same_values(const nd::Array<T>& a, const nd::Array<T>& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

// ---- vocabulary ----

TEST(Tokenizer, Examples) {
  const auto ids = hs::tokenize("the red circle", 17);
  ASSERT_EQ(ids.size(), 17u);
  EXPECT_EQ((std::vector<int>(ids.begin(), ids.begin() + 6)), (std::vector<int>{1, 3, 6, 10, 2, 0}));
  EXPECT_EQ(hs::eos_position(ids), 4);
  EXPECT_EQ(hs::detokenize(ids), "the red circle");
  EXPECT_EQ(hs::detokenize(hs::tokenize("  the   large blue triangle on the left ", 17)),
            "the large blue triangle on the left");
}

TEST(Tokenizer, Errors) {
  EXPECT_THROW(hs::tokenize("the purple circle", 17), etris::InputError);
  EXPECT_THROW(hs::tokenize("the <eos> circle", 17), etris::InputError);
  EXPECT_THROW(hs::tokenize("the red circle", 4), etris::InputError);
  EXPECT_NO_THROW(hs::tokenize("the red circle", 5));
  EXPECT_THROW(hs::eos_position({1, 3, 0}), etris::InputError);
}

TEST(Tokenizer, EveryGrammarExpressionFits) {
  const auto all = hs::grammar_expressions();
  EXPECT_GT(all.size(), 100u);
  std::set<std::string> unique(all.begin(), all.end());
  EXPECT_EQ(unique.size(), all.size());
  for (const auto& e : all) {
    const auto ids = hs::tokenize(e, 17);
    EXPECT_LE(hs::eos_position(ids) + 1, 17);
    EXPECT_EQ(hs::detokenize(ids), e);
  }
}

// ---- synthetic data ----

TEST(Synth, DeterministicInSeedAndIndex) {
  const auto a = hs::generate_sample(42, 7, 64, 17), b = hs::generate_sample(42, 7, 64, 17);
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.expression, b.expression);
  const auto c = hs::generate_sample(43, 7, 64, 17);
  EXPECT_NE(a.rgb, c.rgb);
  EXPECT_THROW(hs::generate_scene(1, 0, 40), etris::ConfigError);
}

TEST(Synth, RasterizationOracle) {
  // integer centre and radius: inside iff (2x + 1 - 2cx)^2 + (2y + 1 - 2cy)^2 <= 4 r^2
  hs::Scene scene;
  scene.shapes = {{hs::ShapeKind::circle, 0, true, 20, 24, 9}, {hs::ShapeKind::square, 2, false, 48, 48, 10}};
  scene.target = 0;
  scene.expression = "the red circle";
  const auto s = hs::render_scene(scene, 64, 17);
  const auto red = hs::shape_colors()[0], blue = hs::shape_colors()[2];
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const long dx = 2 * x + 1 - 40, dy = 2 * y + 1 - 48;
      const bool in_circle = dx * dx + dy * dy <= 4 * 81;
      // square half side 8.5: |2x + 1 - 96| <= 17
      const bool in_square = std::abs(2 * x + 1 - 96) <= 17 && std::abs(2 * y + 1 - 96) <= 17;
      const std::size_t p = static_cast<std::size_t>(y * 64 + x);
      ASSERT_EQ(s.mask.pixels[p], in_circle ? 1 : 0) << x << "," << y;
      if (in_circle) {
        ASSERT_EQ(s.rgb[3 * p], red.r);
      }
      if (in_square) {
        ASSERT_EQ(s.rgb[3 * p + 2], blue.b);
      }
    }
  EXPECT_EQ(s.tokens, hs::tokenize("the red circle", 17));
}

TEST(Synth, MaskIsTheTargetShapeAndExpressionNamesIt) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto scene = hs::generate_scene(9, i, 64);
    const auto s = hs::render_scene(scene, 64, 17);
    const auto& t = scene.shapes[static_cast<std::size_t>(scene.target)];
    std::size_t n = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const bool in = hs::shape_contains(t, x + 0.5, y + 0.5);
        n += in;
        ASSERT_EQ(s.mask.pixels[static_cast<std::size_t>(y * 64 + x)], in ? 1 : 0);
      }
    EXPECT_GT(n, 0u);
    EXPECT_NE(scene.expression.find(hs::shape_name(t.kind)), std::string::npos) << scene.expression;
    EXPECT_GE(scene.shapes.size(), 2u);
    EXPECT_LE(scene.shapes.size(), 4u);
    EXPECT_LE(s.eos + 1, 17);
  }
}

TEST(Synth, WriteAndLoadRoundTrip) {
  const fs::path dir = scratch("synth");
  hs::synth_generate(dir.string(), 5, 11, 32);
  const auto ds = hs::load_dataset(dir.string());
  ASSERT_EQ(ds.samples.size(), 5u);
  EXPECT_EQ(ds.image_size, 32);
  for (int i = 0; i < 5; ++i) {
    const auto ref = hs::generate_sample(11, static_cast<std::uint64_t>(i), 32, 17);
    EXPECT_EQ(ds.samples[i].rgb, ref.rgb);
    EXPECT_EQ(ds.samples[i].mask, ref.mask);
    EXPECT_EQ(ds.samples[i].tokens, ref.tokens);
    EXPECT_EQ(ds.samples[i].expression, ref.expression);
  }
  // truncated image
  auto bytes = read_bytes(dir / "00002" / "image.ppm");
  bytes.resize(bytes.size() - 10);
  write_bytes(dir / "00002" / "image.ppm", bytes);
  EXPECT_THROW(hs::load_dataset(dir.string()), etris::InputError);
  write_bytes(dir / "manifest.json", {'{', 'x'});
  EXPECT_THROW(hs::load_dataset(dir.string()), etris::InputError);
  EXPECT_THROW(hs::load_dataset((dir / "missing").string()), etris::InputError);
  fs::remove_all(dir);
}

// ---- configuration ----

TEST(Config, ParseAndReject) {
  const auto c = hs::parse_config(R"({"seed": 7, "bridger.zoom_variant": "mlp", "train.lr": 0.001})");
  EXPECT_EQ(c.model.seed, 7u);
  EXPECT_EQ(c.model.bridger.zoom_variant, etris::bridger::ZoomVariant::mlp);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-3);
  EXPECT_THROW(hs::parse_config(R"({"bridger.hiden_dim": 8})"), etris::ConfigError);
  EXPECT_THROW(hs::parse_config(R"({"bridger.hidden_dim": "8"})"), etris::ConfigError);
  EXPECT_THROW(hs::parse_config(R"({"bridger.scope": "early"})"), etris::ConfigError);
  EXPECT_THROW(hs::parse_config(R"([1, 2])"), etris::ConfigError);
  EXPECT_THROW(hs::parse_config("{"), etris::ConfigError);
  EXPECT_THROW(hs::load_config("/nonexistent/config.json"), etris::InputError);
  EXPECT_THROW(hs::parse_config(R"({"bridger.hidden_dim": 48})"), etris::ConfigError);
}

TEST(Config, JsonRoundTrip) {
  hs::RunConfig c = small_config();
  c.model.method = hs::Method::lora;
  c.model.bridger.scope = etris::bridger::Scope::late;
  c.model.bridger.count = 2;
  const auto back = hs::parse_config(hs::to_json(c).dump());
  EXPECT_EQ(hs::to_json(back).dump(), hs::to_json(c).dump());
}

TEST(Config, Defaults) {
  const hs::RunConfig c;
  EXPECT_EQ(c.model.seed, 42u);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-4);
  EXPECT_EQ(c.train.epochs, 60);
  EXPECT_EQ(c.train.batch_size, 8);
  EXPECT_EQ(c.model.decoder.layers, 3);
  EXPECT_EQ(c.model.decoder.heads, 8);
  EXPECT_EQ(c.model.decoder.ffn, 512);
  EXPECT_EQ(c.model.decoder.kernel_k, 3);
  EXPECT_DOUBLE_EQ(c.train.resolved_bridger_lr(c.model.backbone), 1e-4);
  auto vit = c.model.backbone;
  vit.image_variant = etris::backbone::ImageVariant::vit;
  EXPECT_DOUBLE_EQ(c.train.resolved_bridger_lr(vit), 1e-3);
}

// ---- model pieces ----

TEST(Model, LossTargetSamplesCellCentres) {
  std::vector<std::uint8_t> px(64 * 64, 0);
  px[static_cast<std::size_t>(2 * 64 + 2)] = 1;
  const auto t = hs::loss_target(etris::objective::BinaryMask(64, 64, px), 16);
  ASSERT_EQ(t.size(), 256u);
  EXPECT_EQ(t[0], 1);
  EXPECT_EQ(std::count(t.begin(), t.end(), 1), 1);
}

TEST(Model, ImageTensorScalesToUnitRange) {
  std::vector<std::uint8_t> rgb(16 * 16 * 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<std::uint8_t>(i % 256);
  const auto x = hs::image_tensor<double>(rgb, 16);
  ASSERT_EQ(x.shape(), (nd::Shape{3, 16, 16}));
  // channel 1 of pixel (0, 1) is byte 4
  EXPECT_DOUBLE_EQ(x[256 + 1], 4 / 255.0);
}

TEST(Model, SizeMismatchIsInputError) {
  hs::EtrisModel<float> model(small_config().model);
  const auto s = hs::generate_sample(1, 0, 64, 17);
  EXPECT_THROW(model.forward(s), etris::InputError);
}

// ---- training ----

TEST(Train, BackboneUnchangedAndOnlyTunedParametersMove) {
  hs::RunConfig c;
  c.train.batch_size = 1;
  const auto data = make_dataset(10, 64);
  hs::EtrisModel<float> model(c.model);
  const std::string sha = model.backbone_sha256();
  std::vector<std::vector<float>> before;
  for (const auto& p : model.store()) before.emplace_back(p.array.values().begin(), p.array.values().end());
  hs::TrainOptions o;
  o.max_steps = 10;
  const hs::SampleSet set = hs::all_samples(data);
  const auto r = hs::train_model(model, c, set, {set[0]}, o);
  EXPECT_EQ(r.steps, 10u);
  EXPECT_EQ(model.backbone_sha256(), sha);
  std::size_t i = 0;
  for (const auto& p : model.store()) {
    const bool same = std::equal(before[i].begin(), before[i].end(), p.array.values().begin());
    if (nd::has_prefix(p.name, "backbone.")) {
      EXPECT_TRUE(same) << p.name;
    }
    ++i;
  }
  // the zero-initialized Bridger outputs have moved
  const auto& w = model.store().at("bridger.2.zoom_out.proj.weight").array;
  EXPECT_TRUE(std::any_of(w.values().begin(), w.values().end(), [](float v) { return v != 0.0f; }));
}

TEST(Train, NothingTrainableMeansConstantLoss) {
  const hs::RunConfig c = small_config();
  const auto data = make_dataset(4, 32);
  hs::EtrisModel<float> model(c.model);
  model.store().set_trainable([](const std::string&) { return true; }, false);
  EXPECT_EQ(model.store().trainable_count(), 0u);
  const auto r = hs::train_model(model, c, hs::all_samples(data), {});
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_EQ(r.log[0].loss, r.log[1].loss);
  EXPECT_EQ(r.log[0].oiou, r.log[1].oiou);
}

TEST(Train, RepeatedRunsAreBitIdentical) {
  const hs::RunConfig c = small_config();
  const auto data = make_dataset(6, 32);
  hs::EtrisModel<float> m1(c.model), m2(c.model);
  const auto r1 = hs::train_model(m1, c, hs::all_samples(data), {});
  const auto r2 = hs::train_model(m2, c, hs::all_samples(data), {});
  for (std::size_t e = 0; e < r1.log.size(); ++e) {
    EXPECT_EQ(r1.log[e].loss, r2.log[e].loss);
    EXPECT_EQ(r1.log[e].oiou, r2.log[e].oiou);
  }
  auto i2 = m2.store().begin();
  for (const auto& p : m1.store()) ASSERT_TRUE(same_values(p.array, (i2++)->array)) << p.name;
}

TEST(Train, NonFiniteLossNamesTheBatch) {
  const hs::RunConfig c = small_config();
  const auto data = make_dataset(4, 32);
  hs::EtrisModel<float> model(c.model);
  for (float& v : model.store().at("decoder.proj.text.bias").array.mutable_values()) v = NAN;
  try {
    hs::train_model(model, c, hs::all_samples(data), {});
    FAIL() << "expected NumericalError";
  } catch (const etris::NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, SplitIsDeterministicAndDisjoint) {
  const auto data = make_dataset(20, 32);
  hs::SampleSet t1, v1, t2, v2;
  hs::split_dataset(data, 0.25, 5, t1, v1);
  hs::split_dataset(data, 0.25, 5, t2, v2);
  EXPECT_EQ(t1, t2);
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(v1.size(), 5u);
  std::set<const hs::Sample*> all(t1.begin(), t1.end());
  all.insert(v1.begin(), v1.end());
  EXPECT_EQ(all.size(), 20u);
  EXPECT_THROW(hs::split_dataset(make_dataset(2, 32), 1.0, 5, t1, v1), etris::InputError);
  hs::split_dataset(make_dataset(1, 32), 0.99, 5, t1, v1);
  EXPECT_TRUE(v1.empty());
}

TEST(Train, WritesLogAndCheckpoints) {
  hs::RunConfig c = small_config();
  const auto data = make_dataset(4, 32);
  const fs::path dir = scratch("train");
  hs::EtrisModel<float> model(c.model);
  hs::TrainOptions o;
  o.out_dir = dir.string();
  std::vector<int> epochs;
  o.on_epoch = [&](const hs::EpochLog& e) { epochs.push_back(e.epoch); };
  const auto r = hs::train_model(model, c, hs::all_samples(data), {}, o);
  EXPECT_EQ(epochs, (std::vector<int>{1, 2}));
  EXPECT_TRUE(fs::exists(dir / "best.etrb"));
  EXPECT_TRUE(fs::exists(dir / "final.etrb"));
  std::ifstream log(dir / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"].get<int>(), ++lines);
  }
  EXPECT_EQ(lines, 2);

  // evaluation reproduces the last monitored oIoU
  const auto report = hs::evaluate_checkpoint((dir / "final.etrb").string(), data);
  EXPECT_NEAR(report.oiou, r.log.back().oiou, 1e-6);
  EXPECT_EQ(hs::report_json(report), hs::report_json(hs::evaluate_checkpoint((dir / "final.etrb").string(), data)));
  EXPECT_THROW(hs::evaluate_checkpoint((dir / "final.etrb").string(), make_dataset(1, 64)), etris::InputError);
  fs::remove_all(dir);
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTripIsBitIdentical) {
  for (auto method : {hs::Method::bridger, hs::Method::adapter, hs::Method::lora}) {
    hs::RunConfig c = small_config();
    c.model.method = method;
    hs::EtrisModel<float> model(c.model);
    // move every trainable array off its initial value
    std::uint32_t k = 0;
    for (auto& p : model.store())
      if (p.trainable)
        for (float& v : p.array.mutable_values()) v += 0.001f * static_cast<float>(++k % 7);
    const fs::path dir = scratch("ckpt");
    const std::string path = (dir / "m.etrb").string();
    hs::save_checkpoint(path, model, c);
    const auto loaded = hs::load_checkpoint<float>(path);
    EXPECT_EQ(hs::to_json(loaded.config).dump(), hs::to_json(c).dump());
    auto it = loaded.model->store().begin();
    for (const auto& p : model.store()) ASSERT_TRUE(same_values(p.array, (it++)->array)) << p.name;
    const auto s = hs::generate_sample(2, 0, 32, 17);
    EXPECT_TRUE(same_values(model.forward(s), loaded.model->forward(s)));
    fs::remove_all(dir);
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  const hs::RunConfig c = small_config();
  hs::EtrisModel<float> model(c.model);
  const fs::path dir = scratch("corrupt");
  const fs::path path = dir / "m.etrb";
  hs::save_checkpoint(path.string(), model, c);
  const auto good = read_bytes(path);

  auto flipped = good;
  flipped[flipped.size() / 2] ^= 0x10;
  write_bytes(path, flipped);
  EXPECT_THROW(hs::load_checkpoint<float>(path.string()), etris::InputError);

  write_bytes(path, std::vector<char>(good.begin(), good.begin() + static_cast<long>(good.size() / 3)));
  EXPECT_THROW(hs::load_checkpoint<float>(path.string()), etris::InputError);

  auto magic = good;
  magic[0] = 'X';
  write_bytes(path, magic);
  EXPECT_THROW(hs::load_checkpoint<float>(path.string()), etris::InputError);

  EXPECT_THROW(hs::load_checkpoint<float>((dir / "missing.etrb").string()), etris::InputError);
  fs::remove_all(dir);
}

// ---- ablation ----

TEST(Ablation, SettingsPerAxis) {
  const hs::RunConfig base;
  const auto zoom = hs::ablation_settings(hs::AblationAxis::zoom_variant, base);
  ASSERT_EQ(zoom.size(), 4u);
  EXPECT_EQ(zoom[0].label, "linear");
  EXPECT_EQ(zoom[3].label, "conv_deconv");
  const auto dims = hs::ablation_settings(hs::AblationAxis::hidden_dim, base);
  ASSERT_EQ(dims.size(), 5u);
  for (const auto& s : dims) EXPECT_EQ(s.config.model.bridger.hidden_dim % s.config.model.bridger.heads, 0);
  EXPECT_EQ(hs::ablation_settings(hs::AblationAxis::scope, base).size(), 6u);
  const auto with = hs::ablation_settings(hs::AblationAxis::bridger, base);
  EXPECT_EQ(with[1].config.model.method, hs::Method::none);
  EXPECT_THROW(hs::parse_ablation_axis("depth"), etris::ConfigError);
  EXPECT_EQ(hs::median({3, 1, 2}), 2);
  EXPECT_EQ(hs::median({4, 1, 2, 3}), 2.5);
}

TEST(Ablation, CsvShape) {
  hs::RunConfig c = small_config();
  c.train.epochs = 1;
  c.train.decay_epoch = 0;
  const auto data = make_dataset(4, 32);
  const auto rows = hs::run_ablation(hs::AblationAxis::bridger, c, hs::all_samples(data), {});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GT(rows[0].params, 0u);
  EXPECT_EQ(rows[1].params, 0u);
  const std::string csv = hs::ablation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "axis,setting,params,oiou,pr50,pr70,pr90");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(csv.find("\nbridger,without,0,"), std::string::npos);
}
