// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "backbone/backbone.hpp"

#include "common/errors.hpp"

namespace etris::backbone {

std::string to_string(ImageVariant variant) { return variant == ImageVariant::cnn ? "cnn" : "vit"; }

ImageVariant parse_image_variant(const std::string& text) {
  if (text == "cnn") return ImageVariant::cnn;
  if (text == "vit") return ImageVariant::vit;
  throw ConfigError("unknown image variant '" + text + "' (expected cnn or vit)");
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("backbone: " + m); };
  if (num_taps < 2) fail("num_taps must be >= 2");
  if (image_size <= 0 || image_size % 16 != 0) fail("image_size must be a positive multiple of 16");
  if (image_variant == ImageVariant::cnn) {
    if (static_cast<int>(widths.size()) != num_taps || static_cast<int>(depths.size()) != num_taps)
      fail("cnn needs one width and one depth per stage (" + std::to_string(num_taps) + ")");
    if ((image_size >> (num_taps + 1)) < 1) fail("image too small for " + std::to_string(num_taps) + " stages");
    for (int d : depths)
      if (d < 1) fail("stage depth must be >= 1");
    for (int w : widths)
      if (w < 1) fail("stage width must be >= 1");
  } else {
    if (vit_layers % num_taps != 0) fail("vit_layers must be divisible by num_taps");
    if (vit_patch < 1 || image_size % vit_patch != 0) fail("image_size must be divisible by vit_patch");
    if (vit_width % vit_heads != 0) fail("vit_width must be divisible by vit_heads");
  }
  if (text_layers % num_taps != 0) fail("text_layers must be divisible by num_taps");
  if (text_width % text_heads != 0) fail("text_width must be divisible by text_heads");
  if (max_len < 2) fail("max_len must leave room for start and end tokens");
  if (vocab_size < 3) fail("vocab_size too small");
}

nd::Shape BackboneConfig::tap_shape(int stage) const {
  if (stage < 2 || stage > num_taps) throw ConfigError("no tap at stage " + std::to_string(stage));
  if (image_variant == ImageVariant::cnn) {
    const int side = image_size >> (stage + 1);
    return {widths[static_cast<std::size_t>(stage - 1)], side, side};
  }
  const int side = image_size / vit_patch;
  return {vit_width, side, side};
}

std::vector<int> BackboneConfig::tap_stages() const {
  std::vector<int> stages;
  for (int i = 2; i <= num_taps; ++i) stages.push_back(i);
  return stages;
}

nd::AttentionMask text_mask() { return nd::AttentionMask{true, -1}; }

template <typename T>
TransformerLayer<T> TransformerLayer<T>::create(ParamStore<T>& store, const std::string& prefix, int width,
                                                int heads) {
  TransformerLayer layer;
  layer.ln1 = nn::LayerNorm<T>::create(store, prefix + ".ln1", width, true);
  layer.attn = nn::MultiHeadAttention<T>::create(store, prefix + ".attn", width, width, heads, true);
  layer.ln2 = nn::LayerNorm<T>::create(store, prefix + ".ln2", width, true);
  layer.mlp = nn::FeedForward<T>::create(store, prefix + ".mlp", width, 4 * width, true);
  return layer;
}

template <typename T>
Array<T> TransformerLayer<T>::operator()(const Array<T>& x, nd::AttentionMask mask) const {
  Array<T> h = ln1(x);
  Array<T> a = attn(h, h, mask);
  if (attn_adapter) a = (*attn_adapter)(a);
  Array<T> y = nd::add(x, a);
  Array<T> m = mlp(ln2(y));
  if (mlp_adapter) m = (*mlp_adapter)(m);
  return nd::add(y, m);
}

template <typename T>
Array<T> ConvBlock<T>::operator()(const Array<T>& x) const {
  Array<T> y = conv(x);
  const int h = y.dim(1), w = y.dim(2);
  y = nd::tokens_to_map(nd::gelu(norm(nd::map_to_tokens(y))), h, w);
  if (adapter) y = adapter->apply_map(y);
  return y;
}

namespace {

template <typename T>
ConvBlock<T> make_block(ParamStore<T>& store, const std::string& prefix, int in, int out, int stride) {
  return ConvBlock<T>{nn::Conv2d<T>::create(store, prefix + ".conv", in, out, 3, stride, 1, true),
                      nn::LayerNorm<T>::create(store, prefix + ".norm", out, true), std::nullopt};
}

template <typename T>
void add_lora(ParamStore<T>& store, nn::Linear<T>& layer, const std::string& prefix, int rank, double alpha) {
  const int in = layer.in_features(), out = layer.out_features();
  if (rank < 1 || rank >= std::min(in, out))
    throw ConfigError("lora rank " + std::to_string(rank) + " must be in [1, " + std::to_string(std::min(in, out)) +
                      ")");
  nn::LowRank<T> lr;
  lr.a = store.add(prefix + ".a", {rank, in}, nn::fan_in_init(in), true);
  lr.b = store.add(prefix + ".b", {out, rank}, nd::Init::zeros(), true);
  lr.scaling = static_cast<T>(alpha / rank);
  layer.lora = lr;
}

template <typename T>
void attach_layer_adapters(ParamStore<T>& store, std::vector<TransformerLayer<T>>& layers, const std::string& prefix,
                           int width, int reduction) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i);
    layers[i].attn_adapter = nn::Adapter<T>::create(store, base + ".attn", width, reduction);
    layers[i].mlp_adapter = nn::Adapter<T>::create(store, base + ".mlp", width, reduction);
  }
}

template <typename T>
void attach_layer_lora(ParamStore<T>& store, std::vector<TransformerLayer<T>>& layers, const std::string& prefix,
                       int rank, double alpha) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i) + ".attn";
    add_lora(store, layers[i].attn.q, base + ".q", rank, alpha);
    add_lora(store, layers[i].attn.v, base + ".v", rank, alpha);
  }
}

template <typename T>
void merge_layer_lora(std::vector<TransformerLayer<T>>& layers) {
  for (auto& layer : layers) {
    layer.attn.q.merge_lora();
    layer.attn.k.merge_lora();
    layer.attn.v.merge_lora();
    layer.attn.o.merge_lora();
  }
}

}  // namespace

template <typename T>
ImageEncoder<T>::ImageEncoder(ParamStore<T>& store, const BackboneConfig& config) : config_(config) {
  config_.validate();
  const std::string p = "backbone.image";
  if (config_.image_variant == ImageVariant::cnn) {
    stem_ = make_block(store, p + ".stem", 3, config_.stem_width, 2);
    int in = config_.stem_width;
    for (int s = 1; s <= config_.num_taps; ++s) {
      const int width = config_.widths[static_cast<std::size_t>(s - 1)];
      std::vector<ConvBlock<T>> blocks;
      for (int b = 0; b < config_.depths[static_cast<std::size_t>(s - 1)]; ++b) {
        blocks.push_back(make_block(store, p + ".stage" + std::to_string(s) + ".block" + std::to_string(b),
                                    b == 0 ? in : width, width, b == 0 ? 2 : 1));
      }
      stages_.push_back(std::move(blocks));
      in = width;
    }
  } else {
    const int c = config_.vit_width;
    const int k = config_.vit_patch;
    patch_ = nn::Conv2d<T>::create(store, p + ".patch", 3, c, k, k, nd::Padding{0, 0}, true,
                                   nn::fan_in_init(3 * k * k));
    cls_ = store.add(p + ".cls", {1, c}, nd::Init::normal(0.5), true);
    pos_ = store.add(p + ".pos", {1 + grid() * grid(), c}, nd::Init::normal(0.5), true);
    ln_pre_ = nn::LayerNorm<T>::create(store, p + ".ln_pre", c, true);
    for (int i = 0; i < config_.vit_layers; ++i)
      layers_.push_back(TransformerLayer<T>::create(store, p + ".layer" + std::to_string(i), c, config_.vit_heads));
  }
}

template <typename T>
Array<T> ImageEncoder<T>::begin(const Array<T>& image) const {
  const int s = config_.image_size;
  if (image.shape() != nd::Shape{3, s, s})
    throw ConfigError("image shape " + nd::shape_str(image.shape()) + " does not match configured size " +
                      std::to_string(s));
  if (config_.image_variant == ImageVariant::cnn) {
    Array<T> x = (*stem_)(image);
    for (const auto& block : stages_[0]) x = block(x);
    return x;
  }
  Array<T> tokens = nd::map_to_tokens((*patch_)(image));
  Array<T> x = (*ln_pre_)(nd::add(nd::concat<T>({cls_, tokens}), pos_));
  for (int i = 0; i < layers_per_block(); ++i) x = layers_[static_cast<std::size_t>(i)](x, {});
  return x;
}

template <typename T>
Array<T> ImageEncoder<T>::run_stage(int stage, const Array<T>& state) const {
  if (stage < 2 || stage > config_.num_taps) throw ConfigError("no image stage " + std::to_string(stage));
  Array<T> x = state;
  if (config_.image_variant == ImageVariant::cnn) {
    for (const auto& block : stages_[static_cast<std::size_t>(stage - 1)]) x = block(x);
    return x;
  }
  const int per = layers_per_block();
  for (int i = (stage - 1) * per; i < stage * per; ++i) x = layers_[static_cast<std::size_t>(i)](x, {});
  return x;
}

template <typename T>
Array<T> ImageEncoder<T>::tap(const Array<T>& state) const {
  if (config_.image_variant == ImageVariant::cnn) return state;
  return nd::tokens_to_map(nd::slice(state, 1, state.dim(0)), grid(), grid());
}

template <typename T>
Array<T> ImageEncoder<T>::inject(const Array<T>& state, const Array<T>& delta) const {
  if (config_.image_variant == ImageVariant::cnn) return nd::add(state, delta);
  Array<T> cls = nd::slice(state, 0, 1);
  Array<T> grid_tokens = nd::slice(state, 1, state.dim(0));
  return nd::concat<T>({cls, nd::add(grid_tokens, nd::map_to_tokens(delta))});
}

template <typename T>
ImageStageFeatures<T> ImageEncoder<T>::encode(const Array<T>& image) const {
  ImageStageFeatures<T> out;
  Array<T> state = begin(image);
  for (int stage = 2; stage <= config_.num_taps; ++stage) {
    state = run_stage(stage, state);
    out.features.push_back(tap(state));
  }
  return out;
}

template <typename T>
void ImageEncoder<T>::attach_adapters(ParamStore<T>& store, int reduction) {
  if (config_.image_variant == ImageVariant::cnn) {
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].adapter =
            nn::Adapter<T>::create(store, "adapter.image.stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                                   config_.widths[s], reduction);
  } else {
    attach_layer_adapters(store, layers_, "adapter.image", config_.vit_width, reduction);
  }
}

template <typename T>
void ImageEncoder<T>::attach_lora(ParamStore<T>& store, int rank, double alpha) {
  // The cnn variant has no attention projections to target.
  if (config_.image_variant == ImageVariant::vit) attach_layer_lora(store, layers_, "lora.image", rank, alpha);
}

template <typename T>
void ImageEncoder<T>::merge_lora() {
  merge_layer_lora(layers_);
}

template <typename T>
TextEncoder<T>::TextEncoder(ParamStore<T>& store, const BackboneConfig& config) : config_(config) {
  config_.validate();
  const std::string p = "backbone.text";
  const int c = config_.text_width;
  token_embedding_ = store.add(p + ".token_embedding", {config_.vocab_size, c}, nd::Init::normal(1.0), true);
  pos_ = store.add(p + ".pos", {config_.max_len, c}, nd::Init::normal(0.5), true);
  for (int i = 0; i < config_.text_layers; ++i)
    layers_.push_back(TransformerLayer<T>::create(store, p + ".layer" + std::to_string(i), c, config_.text_heads));
  ln_final_ = nn::LayerNorm<T>::create(store, p + ".ln_final", c, true);
  projection_ = store.add(p + ".projection", {config_.sentence_dim, c}, nn::fan_in_init(c), true);
}

template <typename T>
TokenSequence TextEncoder<T>::prepare(const std::vector<int>& ids, int eos_id, int pad_id) const {
  if (static_cast<int>(ids.size()) > config_.max_len)
    throw InputError("token sequence of length " + std::to_string(ids.size()) + " exceeds max_len " +
                     std::to_string(config_.max_len));
  TokenSequence seq;
  seq.ids = ids;
  seq.ids.resize(static_cast<std::size_t>(config_.max_len), pad_id);
  int eos = -1;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= config_.vocab_size)
      throw InputError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(config_.vocab_size));
    if (ids[i] == eos_id && eos < 0) eos = static_cast<int>(i);
  }
  if (eos < 0) throw InputError("token sequence has no end token");
  seq.eos = eos;
  return seq;
}

template <typename T>
Array<T> TextEncoder<T>::begin(const TokenSequence& tokens) const {
  if (static_cast<int>(tokens.ids.size()) != config_.max_len)
    throw InputError("token sequence must be padded to " + std::to_string(config_.max_len));
  Array<T> x = nd::add(nd::gather_rows(token_embedding_, tokens.ids), pos_);
  for (int i = 0; i < layers_per_block(); ++i) x = layers_[static_cast<std::size_t>(i)](x, text_mask());
  return x;
}

template <typename T>
Array<T> TextEncoder<T>::run_block(int block, const Array<T>& x) const {
  if (block < 2 || block > config_.num_taps) throw ConfigError("no text block " + std::to_string(block));
  Array<T> y = x;
  const int per = layers_per_block();
  for (int i = (block - 1) * per; i < block * per; ++i) y = layers_[static_cast<std::size_t>(i)](y, text_mask());
  return y;
}

template <typename T>
Array<T> TextEncoder<T>::sentence(const Array<T>& x, const TokenSequence& tokens) const {
  Array<T> eos_row = nd::slice(ln_final_(x), tokens.eos, tokens.eos + 1);
  return nd::linear(eos_row, projection_);
}

template <typename T>
TextFeatures<T> TextEncoder<T>::encode(const TokenSequence& tokens) const {
  TextFeatures<T> out;
  Array<T> x = begin(tokens);
  for (int b = 2; b <= config_.num_taps; ++b) {
    x = run_block(b, x);
    out.per_block.push_back(x);
  }
  out.sentence = sentence(x, tokens);
  return out;
}

template <typename T>
void TextEncoder<T>::attach_adapters(ParamStore<T>& store, int reduction) {
  attach_layer_adapters(store, layers_, "adapter.text", config_.text_width, reduction);
}

template <typename T>
void TextEncoder<T>::attach_lora(ParamStore<T>& store, int rank, double alpha) {
  attach_layer_lora(store, layers_, "lora.text", rank, alpha);
}

template <typename T>
void TextEncoder<T>::merge_lora() {
  merge_layer_lora(layers_);
}

template <typename T>
Backbone<T>::Backbone(ParamStore<T>& store, const BackboneConfig& cfg)
    : config(cfg), image(store, cfg), text(store, cfg) {}

template <typename T>
std::size_t freeze_backbone(ParamStore<T>& store) {
  return store.set_trainable([](const std::string& name) { return nd::has_prefix(name, "backbone."); }, false);
}

template struct TransformerLayer<float>;
template struct TransformerLayer<double>;
template struct ConvBlock<float>;
template struct ConvBlock<double>;
template class ImageEncoder<float>;
template class ImageEncoder<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;
template struct Backbone<float>;
template struct Backbone<double>;
template std::size_t freeze_backbone(ParamStore<float>&);
template std::size_t freeze_backbone(ParamStore<double>&);

}  // namespace etris::backbone
