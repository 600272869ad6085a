// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Uses only the public C header and the shared library.

#include <gtest/gtest.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "etris/etris.h"

namespace fs = std::filesystem;

namespace {

const char* kSmall = R"({
  "backbone.image_size": 32, "backbone.stem_width": 4, "backbone.widths": [4, 8, 8, 8],
  "backbone.depths": [1, 1, 1, 1], "text.max_len": 17, "text.width": 8, "text.layers": 4,
  "text.heads": 2, "text.sentence_dim": 8, "bridger.hidden_dim": 8, "bridger.heads": 2,
  "bridger.ffn_dim": 16, "decoder.dim": 8, "decoder.heads": 2, "decoder.ffn": 16,
  "decoder.proj_dim": 4, "train.epochs": 2, "train.decay_epoch": 1, "train.batch_size": 2,
  "train.val_fraction": 0.0
})";

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name)
      : dir(fs::temp_directory_path() / ("etris_capi_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string file(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  etris_free_string(s);
  return out;
}

std::vector<uint8_t> gray(int size) { return std::vector<uint8_t>(static_cast<std::size_t>(size) * size * 3, 128); }

}  // namespace

TEST(CApi, VersionAndNullArguments) {
  EXPECT_STRNE(etris_version(), "");
  etris_model* m = nullptr;
  EXPECT_EQ(etris_model_load(nullptr, &m), ETRIS_INPUT_ERROR);
  EXPECT_NE(std::string(etris_last_error()), "");
  EXPECT_EQ(etris_model_create(nullptr, nullptr), ETRIS_INPUT_ERROR);
  EXPECT_EQ(etris_params(nullptr, 1, nullptr), ETRIS_INPUT_ERROR);
  etris_model_destroy(nullptr);
  etris_free_string(nullptr);
}

TEST(CApi, ConfigErrorsMapToTheirStatus) {
  Scratch s("config");
  char* out = nullptr;
  EXPECT_EQ(etris_params(s.file("bad.json", R"({"bridger.hiden_dim": 8})").c_str(), 1, &out), ETRIS_CONFIG_ERROR);
  EXPECT_NE(std::string(etris_last_error()).find("hiden_dim"), std::string::npos);
  EXPECT_EQ(etris_params(s.path("missing.json").c_str(), 1, &out), ETRIS_INPUT_ERROR);
}

TEST(CApi, DefaultParams) {
  char* out = nullptr;
  ASSERT_EQ(etris_params(nullptr, 0, &out), ETRIS_OK) << etris_last_error();
  const std::string json = take(out);
  EXPECT_NE(json.find("\"backbone_trainable\": 356352"), std::string::npos) << json;
  ASSERT_EQ(etris_params(nullptr, 1, &out), ETRIS_OK);
  EXPECT_NE(take(out).find("backbone trainable  356352"), std::string::npos);
}

TEST(CApi, ModelLifecycle) {
  Scratch s("model");
  const std::string cfg = s.file("small.json", kSmall);
  etris_model* m = nullptr;
  ASSERT_EQ(etris_model_create(cfg.c_str(), &m), ETRIS_OK) << etris_last_error();
  int size = 0;
  ASSERT_EQ(etris_model_image_size(m, &size), ETRIS_OK);
  EXPECT_EQ(size, 32);
  char* sha = nullptr;
  ASSERT_EQ(etris_model_backbone_sha256(m, &sha), ETRIS_OK);
  const std::string hex = take(sha);
  EXPECT_EQ(hex.size(), 64u);

  const auto rgb = gray(32);
  std::vector<uint8_t> mask(32 * 32, 7);
  std::vector<float> logits(8 * 8);
  ASSERT_EQ(etris_model_predict(m, rgb.data(), 32, "the red circle", mask.data(), logits.data()), ETRIS_OK);
  for (auto v : mask) ASSERT_LE(v, 1);

  EXPECT_EQ(etris_model_predict(m, rgb.data(), 64, "the red circle", mask.data(), nullptr), ETRIS_INPUT_ERROR);
  EXPECT_NE(std::string(etris_last_error()).find("size"), std::string::npos);
  EXPECT_EQ(etris_model_predict(m, rgb.data(), 32, "the purple circle", mask.data(), nullptr), ETRIS_INPUT_ERROR);
  EXPECT_EQ(etris_model_predict(m, nullptr, 32, "the red circle", mask.data(), nullptr), ETRIS_INPUT_ERROR);

  const std::string ckpt = s.path("m.etrb");
  ASSERT_EQ(etris_model_save(m, ckpt.c_str()), ETRIS_OK) << etris_last_error();
  etris_model* back = nullptr;
  ASSERT_EQ(etris_model_load(ckpt.c_str(), &back), ETRIS_OK) << etris_last_error();
  std::vector<uint8_t> mask2(32 * 32);
  std::vector<float> logits2(8 * 8);
  ASSERT_EQ(etris_model_predict(back, rgb.data(), 32, "the red circle", mask2.data(), logits2.data()), ETRIS_OK);
  EXPECT_EQ(mask, mask2);
  EXPECT_EQ(0, std::memcmp(logits.data(), logits2.data(), logits.size() * sizeof(float)));
  ASSERT_EQ(etris_model_backbone_sha256(back, &sha), ETRIS_OK);
  EXPECT_EQ(take(sha), hex);
  etris_model_destroy(back);
  etris_model_destroy(m);

  std::ofstream(ckpt, std::ios::binary | std::ios::trunc) << "ETRB";
  EXPECT_EQ(etris_model_load(ckpt.c_str(), &back), ETRIS_INPUT_ERROR);
}

namespace {
void count_epochs(int, double, double, void* user) { ++*static_cast<int*>(user); }
}  // namespace

TEST(CApi, SynthTrainEval) {
  Scratch s("pipeline");
  const std::string cfg = s.file("small.json", kSmall);
  ASSERT_EQ(etris_synth(s.path("data").c_str(), 4, 5, 32), ETRIS_OK) << etris_last_error();
  int epochs = 0;
  char* summary = nullptr;
  ASSERT_EQ(etris_train(s.path("data").c_str(), cfg.c_str(), s.path("run").c_str(), nullptr, count_epochs, &epochs,
                        &summary),
            ETRIS_OK)
      << etris_last_error();
  EXPECT_EQ(epochs, 2);
  EXPECT_NE(take(summary).find("final"), std::string::npos);
  char* report = nullptr;
  ASSERT_EQ(etris_eval(s.path("run/final.etrb").c_str(), s.path("data").c_str(), s.path("report.json").c_str(),
                       &report),
            ETRIS_OK)
      << etris_last_error();
  const std::string r = take(report);
  EXPECT_NE(r.find("\"oiou\""), std::string::npos) << r;
  EXPECT_TRUE(fs::exists(s.path("report.json")));

  ASSERT_EQ(etris_synth(s.path("big").c_str(), 1, 5, 64), ETRIS_OK);
  EXPECT_EQ(etris_eval(s.path("run/final.etrb").c_str(), s.path("big").c_str(), nullptr, nullptr), ETRIS_INPUT_ERROR);
  EXPECT_EQ(etris_synth(s.path("odd").c_str(), 1, 5, 30), ETRIS_CONFIG_ERROR);
}
