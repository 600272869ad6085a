// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "etris/etris.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include "common/errors.hpp"
#include "harness/ablation.hpp"
#include "harness/checkpoint.hpp"
#include "harness/config.hpp"
#include "harness/evaluate.hpp"
#include "harness/train.hpp"
#include "harness/verify.hpp"
#include "harness/vocab.hpp"
#include "petzoo/petzoo.hpp"

using namespace etris;

struct etris_model {
  harness::RunConfig config;
  std::unique_ptr<harness::EtrisModel<float>> model;
};

namespace {

thread_local std::string g_last_error;

etris_status fail(etris_status status, const char* what) {
  g_last_error = what;
  return status;
}

template <typename Fn>
etris_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return ETRIS_OK;
  } catch (const InputError& e) {
    return fail(ETRIS_INPUT_ERROR, e.what());
  } catch (const ConfigError& e) {
    return fail(ETRIS_CONFIG_ERROR, e.what());
  } catch (const NumericalError& e) {
    return fail(ETRIS_NUMERICAL_ERROR, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(ETRIS_INPUT_ERROR, e.what());
  } catch (const std::bad_alloc&) {
    return fail(ETRIS_INTERNAL_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return fail(ETRIS_INTERNAL_ERROR, e.what());
  } catch (...) {
    return fail(ETRIS_INTERNAL_ERROR, "unknown exception");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

harness::RunConfig config_from(const char* path, harness::RunConfig base = {}) {
  harness::RunConfig c = path ? harness::load_config(path, base) : base;
  c.validate();
  return c;
}

void require(const void* p, const char* what) {
  if (!p) throw InputError(std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* etris_version(void) { return "0.1.0"; }

const char* etris_last_error(void) { return g_last_error.c_str(); }

void etris_free_string(char* text) { std::free(text); }

etris_status etris_synth(const char* out_dir, int n, uint64_t seed, int image_size) {
  return guarded([&] {
    require(out_dir, "out_dir");
    harness::synth_generate(out_dir, n, seed, image_size);
  });
}

etris_status etris_train(const char* data_dir, const char* config_path, const char* out_dir, const char* val_dir,
                         etris_epoch_callback on_epoch, void* user, char** summary_json) {
  return guarded([&] {
    require(data_dir, "data_dir");
    require(out_dir, "out_dir");
    const harness::RunConfig config = config_from(config_path);
    const harness::Dataset data = harness::load_dataset(data_dir);
    harness::Dataset val_data;
    harness::SampleSet train, val;
    if (val_dir) {
      val_data = harness::load_dataset(val_dir);
      train = harness::all_samples(data);
      val = harness::all_samples(val_data);
    } else {
      harness::split_dataset(data, config.train.val_fraction, config.model.seed, train, val);
    }
    harness::EtrisModel<float> model(config.model);
    harness::TrainOptions options;
    options.out_dir = out_dir;
    if (on_epoch) options.on_epoch = [&](const harness::EpochLog& e) { on_epoch(e.epoch, e.loss, e.oiou, user); };
    const auto result = harness::train_model(model, config, train, val, options);
    nlohmann::ordered_json j;
    j["epochs"] = result.log.size();
    j["steps"] = result.steps;
    j["best_epoch"] = result.best_epoch;
    j["best_oiou"] = result.best_oiou;
    j["final_loss"] = result.log.back().loss;
    j["final_oiou"] = result.log.back().oiou;
    j["backbone_sha256"] = model.backbone_sha256();
    put(summary_json, j.dump(2));
  });
}

etris_status etris_eval(const char* checkpoint_path, const char* data_dir, const char* report_path,
                        char** report_json) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(data_dir, "data_dir");
    const auto report = harness::evaluate_checkpoint(checkpoint_path, harness::load_dataset(data_dir));
    if (report_path) harness::write_report(report_path, report);
    put(report_json, harness::report_json(report));
  });
}

etris_status etris_params(const char* config_path, int as_text, char** out) {
  return guarded([&] {
    require(out, "out");
    const harness::RunConfig config = config_from(config_path);
    harness::EtrisModel<float> model(config.model);
    const auto ledger = petzoo::count_params(model.store());
    put(out, as_text ? ledger.to_text() : ledger.to_json().dump(2));
  });
}

etris_status etris_gradcheck(const char* config_path, int full, char** report_json, int* passed) {
  return guarded([&] {
    const harness::RunConfig base = config_from(config_path, harness::gradcheck_config());
    const nd::GradcheckOptions options;
    const auto reports = harness::run_gradcheck_suite(base, full != 0, options);
    const auto j = harness::gradcheck_json(reports, options);
    if (passed) *passed = j["passed"].get<bool>() ? 1 : 0;
    put(report_json, j.dump(2));
  });
}

etris_status etris_ablate(const char* axis, const char* data_dir, const char* val_dir, const char* config_path,
                          int seeds, char** csv) {
  return guarded([&] {
    require(axis, "axis");
    require(data_dir, "data_dir");
    if (seeds != 1 && seeds != 3) throw ConfigError("seeds must be 1 or 3");
    const harness::RunConfig config = config_from(config_path);
    const harness::AblationAxis a = harness::parse_ablation_axis(axis);
    const harness::Dataset data = harness::load_dataset(data_dir);
    harness::Dataset val_data;
    harness::SampleSet train, val;
    if (val_dir) {
      val_data = harness::load_dataset(val_dir);
      train = harness::all_samples(data);
      val = harness::all_samples(val_data);
    } else {
      const double fraction = config.train.val_fraction > 0 ? config.train.val_fraction : 0.2;
      harness::split_dataset(data, fraction, config.model.seed, train, val);
    }
    harness::AblationOptions options;
    options.seeds = seeds;
    put(csv, harness::ablation_csv(harness::run_ablation(a, config, train, val, options)));
  });
}

etris_status etris_model_create(const char* config_path, etris_model** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto m = std::make_unique<etris_model>();
    m->config = config_from(config_path);
    m->model = std::make_unique<harness::EtrisModel<float>>(m->config.model);
    *out = m.release();
  });
}

etris_status etris_model_load(const char* checkpoint_path, etris_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    *out = nullptr;
    auto loaded = harness::load_checkpoint<float>(checkpoint_path);
    auto m = std::make_unique<etris_model>();
    m->config = loaded.config;
    m->model = std::move(loaded.model);
    *out = m.release();
  });
}

etris_status etris_model_save(const etris_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    harness::save_checkpoint(checkpoint_path, *model->model, model->config);
  });
}

void etris_model_destroy(etris_model* model) { delete model; }

etris_status etris_model_image_size(const etris_model* model, int* size) {
  return guarded([&] {
    require(model, "model");
    require(size, "size");
    *size = model->config.model.backbone.image_size;
  });
}

etris_status etris_model_backbone_sha256(const etris_model* model, char** hex) {
  return guarded([&] {
    require(model, "model");
    require(hex, "hex");
    put(hex, model->model->backbone_sha256());
  });
}

etris_status etris_model_predict(const etris_model* model, const uint8_t* rgb, int size, const char* expression,
                                 uint8_t* mask_out, float* logits_out) {
  return guarded([&] {
    require(model, "model");
    require(rgb, "rgb");
    require(expression, "expression");
    require(mask_out, "mask_out");
    const int expected = model->config.model.backbone.image_size;
    if (size != expected)
      throw InputError("image size " + std::to_string(size) + " does not match the model's " +
                       std::to_string(expected));
    const std::size_t bytes = static_cast<std::size_t>(size) * size * 3;
    const std::vector<std::uint8_t> pixels(rgb, rgb + bytes);
    const auto& m = *model->model;
    const auto ids = harness::tokenize(expression, model->config.model.backbone.max_len);
    const auto logits = m.forward(harness::image_tensor<float>(pixels, size), m.tokens(ids));
    const auto mask = objective::finalize_mask(logits, size, size);
    std::memcpy(mask_out, mask.pixels.data(), mask.pixels.size());
    if (logits_out) std::memcpy(logits_out, logits.values().data(), logits.size() * sizeof(float));
  });
}

}  // extern "C"
