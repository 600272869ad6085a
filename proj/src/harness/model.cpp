// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/model.hpp"

#include "common/errors.hpp"
#include "harness/digest.hpp"
#include "harness/vocab.hpp"

namespace etris::harness {

namespace {

ModelConfig validated(const ModelConfig& config) {
  config.validate();
  return config;
}

template <typename T>
nd::ParamStore<T>& with_frozen_backbone(nd::ParamStore<T>& store, backbone::Backbone<T>& model,
                                        const ModelConfig& config) {
  backbone::freeze_backbone(store);
  if (config.method == Method::adapter) petzoo::attach_adapter(store, model, config.adapter);
  if (config.method == Method::lora) petzoo::attach_lora(store, model, config.lora);
  return store;
}

}  // namespace

template <typename T>
EtrisModel<T>::EtrisModel(const ModelConfig& config)
    : config_(validated(config)),
      store_(config_.seed),
      backbone_(store_, config_.backbone),
      bridger_(with_frozen_backbone(store_, backbone_, config_), config_.effective_bridger(), config_.backbone),
      decoder_(store_, config_.decoder, config_.backbone) {}

template <typename T>
backbone::TokenSequence EtrisModel<T>::tokens(const std::vector<int>& ids) const {
  std::vector<int> trimmed(ids.begin(), ids.begin() + eos_position(ids) + 1);
  return backbone_.text.prepare(trimmed, kEosId, kPadId);
}

template <typename T>
bridger::BridgedFeatures<T> EtrisModel<T>::features(const nd::Array<T>& image,
                                                    const backbone::TokenSequence& tokens) const {
  return bridger_.forward(backbone_, image, tokens);
}

template <typename T>
nd::Array<T> EtrisModel<T>::forward(const nd::Array<T>& image, const backbone::TokenSequence& tokens) const {
  const auto f = features(image, tokens);
  return decoder_.forward(f.image.features, f.text.sentence);
}

template <typename T>
nd::Array<T> EtrisModel<T>::forward(const Sample& sample) const {
  if (sample.image_size != config_.backbone.image_size)
    throw InputError("sample image size " + std::to_string(sample.image_size) + " does not match the model's " +
                     std::to_string(config_.backbone.image_size));
  return forward(image_tensor<T>(sample.rgb, sample.image_size), tokens(sample.tokens));
}

template <typename T>
std::string EtrisModel<T>::backbone_sha256() const {
  Sha256 h;
  for (const auto& p : store_) {
    if (!nd::has_prefix(p.name, "backbone.")) continue;
    h.update(p.name);
    auto v = p.array.values();
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(v.data()), v.size_bytes()));
  }
  return h.hex();
}

template <typename T>
nd::Array<T> image_tensor(const std::vector<std::uint8_t>& rgb, int size) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  if (rgb.size() != plane * 3) throw InputError("image buffer does not hold " + std::to_string(size) + "x" +
                                                std::to_string(size) + " RGB pixels");
  std::vector<T> values(plane * 3);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) values[c * plane + p] = static_cast<T>(rgb[3 * p + c]) / T(255);
  return nd::Array<T>({3, size, size}, std::move(values));
}

std::vector<std::uint8_t> loss_target(const objective::BinaryMask& mask, int out_size) {
  return objective::downsample_nearest(mask, out_size, out_size).pixels;
}

template class EtrisModel<float>;
template class EtrisModel<double>;
template nd::Array<float> image_tensor<float>(const std::vector<std::uint8_t>&, int);
template nd::Array<double> image_tensor<double>(const std::vector<std::uint8_t>&, int);

}  // namespace etris::harness
