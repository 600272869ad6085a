// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "bridger/bridger.hpp"

#include <algorithm>

#include "common/errors.hpp"

namespace etris::bridger {

namespace {

enum class StepKind { down, up, same };

// Stride-2 steps mapping an h x w grid onto a target grid.
struct SpatialPlan {
  StepKind kind = StepKind::same;
  int steps = 1;
};

int log2_exact(int ratio) {
  int steps = 0;
  while (ratio > 1) {
    if (ratio % 2 != 0) return -1;
    ratio /= 2;
    ++steps;
  }
  return steps;
}

SpatialPlan plan_spatial(int from_h, int from_w, int to_h, int to_w, const std::string& what) {
  auto fail = [&] {
    throw ConfigError(what + ": cannot map a " + std::to_string(from_h) + "x" + std::to_string(from_w) +
                      " grid onto " + std::to_string(to_h) + "x" + std::to_string(to_w) +
                      " with stride-2 steps; the ratio must be the same power of two on both axes");
  };
  if (from_h == to_h && from_w == to_w) return {StepKind::same, 1};
  if (from_h > to_h) {
    if (from_h % to_h != 0 || from_w % to_w != 0 || from_h / to_h != from_w / to_w) fail();
    const int steps = log2_exact(from_h / to_h);
    if (steps < 1) fail();
    return {StepKind::down, steps};
  }
  if (to_h % from_h != 0 || to_w % from_w != 0 || to_h / from_h != to_w / from_w) fail();
  const int steps = log2_exact(to_h / from_h);
  if (steps < 1) fail();
  return {StepKind::up, steps};
}

template <typename T>
void build_spatial(ParamStore<T>& store, const std::string& prefix, const SpatialPlan& plan, int in, int out,
                   std::vector<nn::Conv2d<T>>& convs, std::vector<nn::Deconv2x2<T>>& deconvs) {
  for (int s = 0; s < plan.steps; ++s) {
    const int c_in = s == 0 ? in : out;
    const std::string name = prefix + ".step" + std::to_string(s);
    switch (plan.kind) {
      case StepKind::down:
        convs.push_back(nn::Conv2d<T>::create(store, name, c_in, out, 2, 2, 0, true));
        break;
      case StepKind::same:
        // 2x2 kernel, stride 1: one extra row/column on the far side keeps the size.
        convs.push_back(nn::Conv2d<T>::create(store, name, c_in, out, 2, 1, nd::Padding{0, 1}, true,
                                              nn::fan_in_init(c_in * 4)));
        break;
      case StepKind::up:
        deconvs.push_back(nn::Deconv2x2<T>::create(store, name, c_in, out, true));
        break;
    }
  }
}

template <typename T>
Array<T> resize_to(const Array<T>& x, int h, int w) {
  if (x.dim(1) == h && x.dim(2) == w) return x;
  return nd::resize_bilinear(x, h, w);
}

}  // namespace

std::string to_string(Scope scope) {
  switch (scope) {
    case Scope::full: return "full";
    case Scope::late: return "late";
    case Scope::single: return "single";
  }
  return "?";
}

std::string to_string(ZoomVariant variant) {
  switch (variant) {
    case ZoomVariant::linear: return "linear";
    case ZoomVariant::conv_interpolate: return "conv_interpolate";
    case ZoomVariant::mlp: return "mlp";
    case ZoomVariant::conv_deconv: return "conv_deconv";
  }
  return "?";
}

Scope parse_scope(const std::string& text) {
  if (text == "full") return Scope::full;
  if (text == "late") return Scope::late;
  if (text == "single") return Scope::single;
  throw ConfigError("unknown bridger.scope '" + text + "' (expected full, late or single)");
}

ZoomVariant parse_zoom_variant(const std::string& text) {
  if (text == "linear") return ZoomVariant::linear;
  if (text == "conv_interpolate") return ZoomVariant::conv_interpolate;
  if (text == "mlp") return ZoomVariant::mlp;
  if (text == "conv_deconv") return ZoomVariant::conv_deconv;
  throw ConfigError("unknown bridger.zoom_variant '" + text +
                    "' (expected linear, conv_interpolate, mlp or conv_deconv)");
}

void BridgerConfig::validate(const BackboneConfig& backbone) const {
  static constexpr int kSupportedDims[] = {8, 16, 32, 64, 128};
  if (std::find(std::begin(kSupportedDims), std::end(kSupportedDims), hidden_dim) == std::end(kSupportedDims))
    throw ConfigError("bridger.hidden_dim must be one of 8, 16, 32, 64, 128; got " + std::to_string(hidden_dim));
  if (heads < 1 || hidden_dim % heads != 0)
    throw ConfigError("bridger.hidden_dim " + std::to_string(hidden_dim) + " is not divisible by bridger.heads " +
                      std::to_string(heads));
  if (ffn_dim < 1) throw ConfigError("bridger.ffn_dim must be positive");
  if (count < 0) throw ConfigError("bridger.count must be non-negative");
  if (scope == Scope::single && count > 1) throw ConfigError("bridger.scope 'single' allows at most one Bridger");
  stages(backbone);
}

std::vector<int> BridgerConfig::stages(const BackboneConfig& backbone) const {
  const std::vector<int> taps = backbone.tap_stages();
  int start = taps.front();
  if (scope == Scope::late) start = taps[(taps.size() - 1) / 2];
  if (scope == Scope::single) start = taps.back();
  std::vector<int> result;
  for (int i = 0; i < count; ++i) {
    const int stage = start + i;
    if (stage > backbone.num_taps)
      throw ConfigError("bridger.count " + std::to_string(count) + " with scope '" + to_string(scope) +
                        "' needs stage " + std::to_string(stage) + " but the backbone has " +
                        std::to_string(backbone.num_taps) + " stages");
    result.push_back(stage);
  }
  return result;
}

std::pair<int, int> BridgerConfig::reference_hw(const BackboneConfig& backbone) const {
  const std::vector<int> taps = backbone.tap_stages();
  const nd::Shape shape = backbone.tap_shape(taps[(taps.size() - 1) / 2]);
  return {shape[1], shape[2]};
}

template <typename T>
BridgerCarry<T> BridgerCarry<T>::zeros(int hidden, int h, int w, int text_len) {
  return {Array<T>::zeros({hidden, h, w}), Array<T>::zeros({text_len, hidden})};
}

template <typename T>
ZoomIn<T>::ZoomIn(ParamStore<T>& store, const std::string& prefix, ZoomVariant variant, const nd::Shape& source,
                  int hidden, std::pair<int, int> reference)
    : variant_(variant), reference_(reference) {
  const int c = source[0];
  switch (variant) {
    case ZoomVariant::conv_deconv: {
      const SpatialPlan plan = plan_spatial(source[1], source[2], reference.first, reference.second, prefix);
      build_spatial(store, prefix, plan, c, hidden, convs_, deconvs_);
      break;
    }
    case ZoomVariant::linear:
      convs_.push_back(nn::Conv2d<T>::create(store, prefix + ".proj", c, hidden, 1, 1, 0, true));
      break;
    case ZoomVariant::conv_interpolate:
      convs_.push_back(nn::Conv2d<T>::create(store, prefix + ".conv", c, hidden, 3, 1, 1, true));
      break;
    case ZoomVariant::mlp:
      convs_.push_back(nn::Conv2d<T>::create(store, prefix + ".fc1", c, hidden, 1, 1, 0, true));
      convs_.push_back(nn::Conv2d<T>::create(store, prefix + ".fc2", hidden, hidden, 1, 1, 0, true));
      break;
  }
}

template <typename T>
Array<T> ZoomIn<T>::operator()(const Array<T>& x) const {
  Array<T> y = x;
  switch (variant_) {
    case ZoomVariant::conv_deconv:
      for (const auto& conv : convs_) y = conv(y);
      for (const auto& deconv : deconvs_) y = deconv(y);
      return y;
    case ZoomVariant::linear:
    case ZoomVariant::conv_interpolate:
      return resize_to(convs_[0](y), reference_.first, reference_.second);
    case ZoomVariant::mlp:
      return resize_to(convs_[1](nd::gelu(convs_[0](y))), reference_.first, reference_.second);
  }
  return y;
}

template <typename T>
ZoomOut<T>::ZoomOut(ParamStore<T>& store, const std::string& prefix, ZoomVariant variant, int hidden,
                    std::pair<int, int> reference, const nd::Shape& target)
    : variant_(variant), target_(target) {
  const int c = target[0];
  switch (variant) {
    case ZoomVariant::conv_deconv: {
      const SpatialPlan plan = plan_spatial(reference.first, reference.second, target[1], target[2], prefix);
      build_spatial(store, prefix, plan, hidden, hidden, convs_, deconvs_);
      head_.push_back(nn::Conv2d<T>::create(store, prefix + ".proj", hidden, c, 1, 1, nd::Padding{}, true,
                                            nd::Init::zeros()));
      break;
    }
    case ZoomVariant::linear:
      head_.push_back(nn::Conv2d<T>::create(store, prefix + ".proj", hidden, c, 1, 1, nd::Padding{}, true,
                                            nd::Init::zeros()));
      break;
    case ZoomVariant::conv_interpolate:
      head_.push_back(nn::Conv2d<T>::create(store, prefix + ".conv", hidden, c, 3, 1, nd::Padding{1, 1}, true,
                                            nd::Init::zeros()));
      break;
    case ZoomVariant::mlp:
      head_.push_back(nn::Conv2d<T>::create(store, prefix + ".fc1", hidden, hidden, 1, 1, 0, true));
      head_.push_back(nn::Conv2d<T>::create(store, prefix + ".fc2", hidden, c, 1, 1, nd::Padding{}, true,
                                            nd::Init::zeros()));
      break;
  }
}

template <typename T>
Array<T> ZoomOut<T>::operator()(const Array<T>& x) const {
  Array<T> y = x;
  if (variant_ == ZoomVariant::conv_deconv) {
    for (const auto& conv : convs_) y = conv(y);
    for (const auto& deconv : deconvs_) y = deconv(y);
  } else {
    y = resize_to(y, target_[1], target_[2]);
  }
  if (variant_ == ZoomVariant::mlp) return head_[1](nd::gelu(head_[0](y)));
  return head_[0](y);
}

template <typename T>
Interactor<T> Interactor<T>::create(ParamStore<T>& store, const std::string& prefix, const BridgerConfig& config) {
  const int d = config.hidden_dim;
  Interactor ita{
      std::nullopt,
      std::nullopt,
      nn::MultiHeadAttention<T>::create(store, prefix + ".self_attn", d, d, config.heads, true),
      nn::MultiHeadAttention<T>::create(store, prefix + ".cross_attn", d, d, config.heads, true),
      nn::FeedForward<T>::create(store, prefix + ".ffn", d, config.ffn_dim, true),
  };
  if (config.pre_norm) {
    ita.ln_visual = nn::LayerNorm<T>::create(store, prefix + ".ln_visual", d, true);
    ita.ln_text = nn::LayerNorm<T>::create(store, prefix + ".ln_text", d, true);
  }
  return ita;
}

template <typename T>
std::pair<Array<T>, Array<T>> Interactor<T>::operator()(const BridgerCarry<T>& carry, const Array<T>& zoomed_visual,
                                                        const Array<T>& zoomed_text, int text_len) const {
  const int h = zoomed_visual.dim(1), w = zoomed_visual.dim(2);
  Array<T> v = nd::map_to_tokens(nd::add(carry.visual, zoomed_visual));
  Array<T> t = nd::add(carry.textual, zoomed_text);
  if (ln_visual) v = (*ln_visual)(v);
  if (ln_text) t = (*ln_text)(t);

  const nd::AttentionMask text_keys{false, text_len};
  const Array<T> v_self = self_attn(v, v);
  const Array<T> t_self = self_attn(t, t, text_keys);
  // Both directions read the other stream's self-attended state.
  const Array<T> v_cross = cross_attn(v_self, t_self, text_keys);
  const Array<T> t_cross = cross_attn(t_self, v_self);
  return {nd::tokens_to_map(ffn(v_cross), h, w), ffn(t_cross)};
}

template <typename T>
BridgerUnit<T>::BridgerUnit(ParamStore<T>& store, const std::string& prefix, const BridgerConfig& config,
                            const BackboneConfig& backbone, int stage)
    : stage_(stage),
      target_stage_(std::min(stage + 1, backbone.num_taps)),
      zoom_in_(store, prefix + ".zoom_in", config.zoom_variant, backbone.tap_shape(stage), config.hidden_dim,
               config.reference_hw(backbone)),
      text_in_(nn::Linear<T>::create(store, prefix + ".text_in", backbone.text_width, config.hidden_dim, true)),
      interactor_(Interactor<T>::create(store, prefix + ".interactor", config)),
      zoom_out_(store, prefix + ".zoom_out", config.zoom_variant, config.hidden_dim, config.reference_hw(backbone),
                backbone.tap_shape(std::min(stage + 1, backbone.num_taps))),
      text_out_(nn::Linear<T>::create(store, prefix + ".text_out", config.hidden_dim, backbone.text_width, true,
                                      nd::Init::zeros())) {}

template <typename T>
std::pair<Array<T>, Array<T>> BridgerUnit<T>::zoom_in(const Array<T>& visual, const Array<T>& text) const {
  return {zoom_in_(visual), text_in_(text)};
}

template <typename T>
BridgerStep<T> BridgerUnit<T>::step(const BridgerCarry<T>& carry, const Array<T>& visual, const Array<T>& text,
                                    int text_len) const {
  auto [zv, zt] = zoom_in(visual, text);
  auto [fv, ft] = interactor_(carry, zv, zt, text_len);
  Array<T> dv = zoom_out_(fv);
  Array<T> dt = text_out_(ft);
  return {{fv, ft}, dv, dt};
}

template <typename T>
Bridger<T>::Bridger(ParamStore<T>& store, const BridgerConfig& config, const BackboneConfig& backbone)
    : config_(config), backbone_(backbone) {
  config_.validate(backbone_);
  const std::vector<int> stages = config_.stages(backbone_);
  for (std::size_t i = 0; i < stages.size(); ++i)
    units_.emplace_back(store, "bridger." + std::to_string(i), config_, backbone_, stages[i]);
}

template <typename T>
BridgerCarry<T> Bridger<T>::initial_carry() const {
  const auto [h, w] = config_.reference_hw(backbone_);
  return BridgerCarry<T>::zeros(config_.hidden_dim, h, w, backbone_.max_len);
}

template <typename T>
BridgedFeatures<T> Bridger<T>::forward(const backbone::Backbone<T>& backbone, const Array<T>& image,
                                       const backbone::TokenSequence& tokens) const {
  const int n = backbone_.num_taps;
  Array<T> visual = backbone.image.begin(image);
  Array<T> text = backbone.text.begin(tokens);
  BridgerCarry<T> carry = initial_carry();
  std::optional<std::pair<Array<T>, Array<T>>> pending;
  std::size_t next_unit = 0;

  BridgedFeatures<T> out;
  for (int stage = 2; stage <= n; ++stage) {
    visual = backbone.image.run_stage(stage, visual);
    text = backbone.text.run_block(stage, text);
    if (pending) {
      visual = backbone.image.inject(visual, pending->first);
      text = nd::add(text, pending->second);
      pending.reset();
    }
    if (next_unit < units_.size() && units_[next_unit].stage() == stage) {
      BridgerStep<T> s = units_[next_unit++].step(carry, backbone.image.tap(visual), text, tokens.valid_length());
      carry = s.carry;
      if (stage == n) {
        visual = backbone.image.inject(visual, s.visual_delta);
        text = nd::add(text, s.text_delta);
      } else {
        pending.emplace(s.visual_delta, s.text_delta);
      }
    }
    out.image.features.push_back(backbone.image.tap(visual));
    out.text.per_block.push_back(text);
  }
  out.text.sentence = backbone.text.sentence(text, tokens);
  return out;
}

template struct BridgerCarry<float>;
template struct BridgerCarry<double>;
template class ZoomIn<float>;
template class ZoomIn<double>;
template class ZoomOut<float>;
template class ZoomOut<double>;
template struct Interactor<float>;
template struct Interactor<double>;
template class BridgerUnit<float>;
template class BridgerUnit<double>;
template class Bridger<float>;
template class Bridger<double>;

}  // namespace etris::bridger
