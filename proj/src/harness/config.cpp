// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "common/errors.hpp"

namespace etris::harness {

namespace {

using Json = nlohmann::json;
using Setter = std::function<void(RunConfig&, const Json&)>;

template <typename V>
V get_as(const std::string& key, const Json& value) {
  try {
    if constexpr (std::is_same_v<V, int>) {
      if (!value.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_same_v<V, double>) {
      if (!value.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<V, bool>) {
      if (!value.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!value.is_string()) throw ConfigError("");
    }
    return value.get<V>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has a value of the wrong type: " + value.dump());
  }
}

std::vector<int> get_int_list(const std::string& key, const Json& value) {
  if (!value.is_array()) throw ConfigError("config key '" + key + "' must be a list of integers");
  std::vector<int> out;
  for (const auto& v : value) out.push_back(get_as<int>(key, v));
  return out;
}

#define INT_KEY(name, field) \
  {name, [](RunConfig& c, const Json& v) { c.field = get_as<int>(name, v); }}
#define DOUBLE_KEY(name, field) \
  {name, [](RunConfig& c, const Json& v) { c.field = get_as<double>(name, v); }}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed",
       [](RunConfig& c, const Json& v) {
         if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("seed must be a non-negative integer");
         c.model.seed = v.get<std::uint64_t>();
       }},
      {"backbone.image_variant",
       [](RunConfig& c, const Json& v) {
         c.model.backbone.image_variant = backbone::parse_image_variant(get_as<std::string>("backbone.image_variant", v));
       }},
      INT_KEY("backbone.num_taps", model.backbone.num_taps),
      INT_KEY("backbone.image_size", model.backbone.image_size),
      INT_KEY("backbone.stem_width", model.backbone.stem_width),
      {"backbone.widths", [](RunConfig& c, const Json& v) { c.model.backbone.widths = get_int_list("backbone.widths", v); }},
      {"backbone.depths", [](RunConfig& c, const Json& v) { c.model.backbone.depths = get_int_list("backbone.depths", v); }},
      INT_KEY("backbone.vit_patch", model.backbone.vit_patch),
      INT_KEY("backbone.vit_width", model.backbone.vit_width),
      INT_KEY("backbone.vit_layers", model.backbone.vit_layers),
      INT_KEY("backbone.vit_heads", model.backbone.vit_heads),
      INT_KEY("text.vocab_size", model.backbone.vocab_size),
      INT_KEY("text.max_len", model.backbone.max_len),
      INT_KEY("text.width", model.backbone.text_width),
      INT_KEY("text.layers", model.backbone.text_layers),
      INT_KEY("text.heads", model.backbone.text_heads),
      INT_KEY("text.sentence_dim", model.backbone.sentence_dim),
      INT_KEY("bridger.hidden_dim", model.bridger.hidden_dim),
      INT_KEY("bridger.count", model.bridger.count),
      {"bridger.scope",
       [](RunConfig& c, const Json& v) { c.model.bridger.scope = bridger::parse_scope(get_as<std::string>("bridger.scope", v)); }},
      {"bridger.zoom_variant",
       [](RunConfig& c, const Json& v) {
         c.model.bridger.zoom_variant = bridger::parse_zoom_variant(get_as<std::string>("bridger.zoom_variant", v));
       }},
      INT_KEY("bridger.heads", model.bridger.heads),
      INT_KEY("bridger.ffn_dim", model.bridger.ffn_dim),
      {"bridger.pre_norm", [](RunConfig& c, const Json& v) { c.model.bridger.pre_norm = get_as<bool>("bridger.pre_norm", v); }},
      INT_KEY("decoder.dim", model.decoder.dim),
      INT_KEY("decoder.layers", model.decoder.layers),
      INT_KEY("decoder.heads", model.decoder.heads),
      INT_KEY("decoder.ffn", model.decoder.ffn),
      INT_KEY("decoder.kernel_k", model.decoder.kernel_k),
      INT_KEY("decoder.proj_dim", model.decoder.proj_dim),
      {"petzoo.method",
       [](RunConfig& c, const Json& v) { c.model.method = parse_method(get_as<std::string>("petzoo.method", v)); }},
      INT_KEY("adapter.reduction_factor", model.adapter.reduction_factor),
      INT_KEY("lora.rank", model.lora.rank),
      DOUBLE_KEY("lora.alpha", model.lora.alpha),
      DOUBLE_KEY("train.lr", train.lr),
      DOUBLE_KEY("train.bridger_lr", train.bridger_lr),
      INT_KEY("train.epochs", train.epochs),
      INT_KEY("train.decay_epoch", train.decay_epoch),
      INT_KEY("train.batch_size", train.batch_size),
      DOUBLE_KEY("train.val_fraction", train.val_fraction),
  };
  return table;
}

#undef INT_KEY
#undef DOUBLE_KEY

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::bridger: return "bridger";
    case Method::adapter: return "adapter";
    case Method::lora: return "lora";
    case Method::none: return "none";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "bridger") return Method::bridger;
  if (text == "adapter") return Method::adapter;
  if (text == "lora") return Method::lora;
  if (text == "none") return Method::none;
  throw ConfigError("unknown petzoo.method '" + text + "' (expected bridger, adapter, lora or none)");
}

void ModelConfig::validate() const {
  backbone.validate();
  effective_bridger().validate(backbone);
  decoder.validate();
  if (adapter.reduction_factor < 1) throw ConfigError("adapter.reduction_factor must be positive");
  if (lora.rank < 1) throw ConfigError("lora.rank must be positive");
}

bridger::BridgerConfig ModelConfig::effective_bridger() const {
  bridger::BridgerConfig b = bridger;
  if (method != Method::bridger) b.count = 0;
  return b;
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (bridger_lr == 0) throw ConfigError("train.bridger_lr must be positive (or negative for the default)");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (decay_epoch < 0 || decay_epoch >= epochs)
    throw ConfigError("train.decay_epoch " + std::to_string(decay_epoch) + " must be in [0, train.epochs)");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("train.val_fraction must be in [0, 1)");
}

double TrainConfig::resolved_bridger_lr(const backbone::BackboneConfig& backbone) const {
  if (bridger_lr > 0) return bridger_lr;
  return backbone.image_variant == backbone::ImageVariant::vit ? 10.0 * lr : lr;
}

RunConfig apply_config(RunConfig base, const nlohmann::json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a flat JSON object");
  const auto& table = setters();
  for (const auto& [key, value] : flat.items()) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(base, value);
  }
  base.validate();
  return base;
}

RunConfig parse_config(const std::string& json_text, RunConfig base) {
  nlohmann::json flat;
  try {
    flat = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return apply_config(std::move(base), flat);
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  const auto& m = c.model;
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["backbone.image_variant"] = backbone::to_string(m.backbone.image_variant);
  j["backbone.num_taps"] = m.backbone.num_taps;
  j["backbone.image_size"] = m.backbone.image_size;
  j["backbone.stem_width"] = m.backbone.stem_width;
  j["backbone.widths"] = m.backbone.widths;
  j["backbone.depths"] = m.backbone.depths;
  j["backbone.vit_patch"] = m.backbone.vit_patch;
  j["backbone.vit_width"] = m.backbone.vit_width;
  j["backbone.vit_layers"] = m.backbone.vit_layers;
  j["backbone.vit_heads"] = m.backbone.vit_heads;
  j["text.vocab_size"] = m.backbone.vocab_size;
  j["text.max_len"] = m.backbone.max_len;
  j["text.width"] = m.backbone.text_width;
  j["text.layers"] = m.backbone.text_layers;
  j["text.heads"] = m.backbone.text_heads;
  j["text.sentence_dim"] = m.backbone.sentence_dim;
  j["bridger.hidden_dim"] = m.bridger.hidden_dim;
  j["bridger.count"] = m.bridger.count;
  j["bridger.scope"] = bridger::to_string(m.bridger.scope);
  j["bridger.zoom_variant"] = bridger::to_string(m.bridger.zoom_variant);
  j["bridger.heads"] = m.bridger.heads;
  j["bridger.ffn_dim"] = m.bridger.ffn_dim;
  j["bridger.pre_norm"] = m.bridger.pre_norm;
  j["decoder.dim"] = m.decoder.dim;
  j["decoder.layers"] = m.decoder.layers;
  j["decoder.heads"] = m.decoder.heads;
  j["decoder.ffn"] = m.decoder.ffn;
  j["decoder.kernel_k"] = m.decoder.kernel_k;
  j["decoder.proj_dim"] = m.decoder.proj_dim;
  j["petzoo.method"] = to_string(m.method);
  j["adapter.reduction_factor"] = m.adapter.reduction_factor;
  j["lora.rank"] = m.lora.rank;
  j["lora.alpha"] = m.lora.alpha;
  j["train.lr"] = c.train.lr;
  j["train.bridger_lr"] = c.train.bridger_lr;
  j["train.epochs"] = c.train.epochs;
  j["train.decay_epoch"] = c.train.decay_epoch;
  j["train.batch_size"] = c.train.batch_size;
  j["train.val_fraction"] = c.train.val_fraction;
  return j;
}

RunConfig gradcheck_config() {
  RunConfig c;
  auto& b = c.model.backbone;
  b.image_size = 32;
  b.stem_width = 4;
  b.widths = {4, 8, 8, 8};
  b.depths = {1, 1, 1, 1};
  b.vit_patch = 8;
  b.vit_width = 8;
  b.vit_layers = 4;
  b.vit_heads = 2;
  b.max_len = 6;
  b.text_width = 8;
  b.text_layers = 4;
  b.text_heads = 2;
  b.sentence_dim = 8;
  c.model.bridger.hidden_dim = 8;
  c.model.bridger.heads = 2;
  c.model.bridger.ffn_dim = 16;
  c.model.decoder.dim = 8;
  c.model.decoder.heads = 2;
  c.model.decoder.ffn = 16;
  c.model.decoder.proj_dim = 4;
  c.model.lora.rank = 2;
  c.train.epochs = 2;
  c.train.decay_epoch = 1;
  return c;
}

}  // namespace etris::harness
