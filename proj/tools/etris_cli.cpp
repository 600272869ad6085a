// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library only through etris.h.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "etris/etris.h"

namespace {

// 0 ok, 1 input or configuration error, 2 numerical error, 3 internal error.
int exit_code(etris_status status) {
  switch (status) {
    case ETRIS_OK: return 0;
    case ETRIS_INPUT_ERROR:
    case ETRIS_CONFIG_ERROR: return 1;
    case ETRIS_NUMERICAL_ERROR: return 2;
    default: return 3;
  }
}

int report(etris_status status) {
  if (status != ETRIS_OK) std::cerr << "error: " << etris_last_error() << "\n";
  return exit_code(status);
}

const char* opt(const std::optional<std::string>& s) { return s ? s->c_str() : nullptr; }

// Prints and releases a string produced by the library.
void emit(char* text, std::FILE* to = stdout) {
  if (!text) return;
  std::fputs(text, to);
  const std::size_t n = std::char_traits<char>::length(text);
  if (n == 0 || text[n - 1] != '\n') std::fputc('\n', to);
  etris_free_string(text);
}

void print_epoch(int epoch, double loss, double oiou, void*) {
  std::fprintf(stderr, "epoch %d  loss %.6f  oiou %.6f\n", epoch, loss, oiou);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"etris: referring segmentation with a bridged frozen dual encoder"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(etris_version()));

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int n = 0;
  std::uint64_t seed = 42;
  int image_size = 64;
  std::string out;
  synth->add_option("--n", n, "number of samples")->required();
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--image-size", image_size, "image side in pixels (multiple of 16)");
  synth->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  std::string data;
  std::optional<std::string> config, val;
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--config", config, "flat JSON config");
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--val", val, "separate validation dataset");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt;
  std::optional<std::string> report_path;
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--report", report_path, "JSON report path");

  auto* params = app.add_subcommand("params", "trainable-parameter ledger");
  bool as_json = false;
  params->add_option("--config", config, "flat JSON config");
  params->add_flag("--json", as_json, "print JSON instead of a table");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  bool full = false;
  gradcheck->add_option("--config", config, "flat JSON config applied over the small instance");
  gradcheck->add_flag("--full", full, "also check the vit backbone, other zoom variants and scopes");

  auto* ablate = app.add_subcommand("ablate", "sweep one Bridger design axis");
  std::string axis;
  int seeds = 1;
  ablate->add_option("--axis", axis, "axis to sweep")
      ->required()
      ->check(CLI::IsMember({"zoom_variant", "hidden_dim", "scope", "bridger"}));
  ablate->add_option("--data", data, "training dataset directory")->required();
  ablate->add_option("--val", val, "validation dataset (default: hold out train.val_fraction, else 0.2)");
  ablate->add_option("--config", config, "flat JSON config");
  ablate->add_option("--seeds", seeds, "1, or 3 for the per-metric median")->check(CLI::IsMember({1, 3}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  char* text = nullptr;
  if (*synth) return report(etris_synth(out.c_str(), n, seed, image_size));
  if (*train) {
    const etris_status s = etris_train(data.c_str(), opt(config), out.c_str(), opt(val), print_epoch, nullptr, &text);
    if (s == ETRIS_OK) emit(text);
    return report(s);
  }
  if (*eval) {
    const etris_status s = etris_eval(ckpt.c_str(), data.c_str(), opt(report_path), &text);
    if (s == ETRIS_OK) emit(text);
    return report(s);
  }
  if (*params) {
    const etris_status s = etris_params(opt(config), as_json ? 0 : 1, &text);
    if (s == ETRIS_OK) emit(text);
    return report(s);
  }
  if (*gradcheck) {
    int passed = 0;
    const etris_status s = etris_gradcheck(opt(config), full ? 1 : 0, &text, &passed);
    if (s != ETRIS_OK) return report(s);
    emit(text);
    if (!passed) {
      std::cerr << "error: gradient check exceeded tolerance\n";
      return 2;
    }
    return 0;
  }
  if (*ablate) {
    const etris_status s = etris_ablate(axis.c_str(), data.c_str(), opt(val), opt(config), seeds, &text);
    if (s == ETRIS_OK) emit(text);
    return report(s);
  }
  return 1;
}
