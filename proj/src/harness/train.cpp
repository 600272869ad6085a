// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "common/errors.hpp"
#include "harness/checkpoint.hpp"
#include "ndgrad/rng.hpp"

namespace etris::harness {

template <typename T>
Adam<T>::Adam(nd::ParamStore<T>& store, const std::function<double(const std::string&)>& lr_of, double beta1,
              double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : store) {
    if (!p.trainable) continue;
    slots_.push_back({p.name, p.array, lr_of(p.name), std::vector<double>(p.array.size(), 0.0),
                      std::vector<double>(p.array.size(), 0.0)});
  }
}

template <typename T>
void Adam<T>::step(double lr_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    auto g = s.param.grad();
    auto w = s.param.mutable_values();
    const double lr = s.lr * lr_scale;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_));
    }
    s.param.zero_grad();
  }
}

template <typename T>
std::vector<std::string> Adam<T>::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& s : slots_) names.push_back(s.name);
  return names;
}

std::string to_jsonl(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["loss"] = log.loss;
  j["oiou"] = log.oiou;
  return j.dump();
}

void split_dataset(const Dataset& data, double val_fraction, std::uint64_t seed, SampleSet& train, SampleSet& val) {
  train.clear();
  val.clear();
  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto held = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(order.size())));
  if (held > 0) {
    nd::Rng rng(nd::derive_seed(seed, "split"));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
  }
  if (held >= order.size()) throw InputError("validation split leaves no training samples");
  for (std::size_t i = 0; i < order.size(); ++i)
    (i + held < order.size() ? train : val).push_back(&data.samples[order[i]]);
}

SampleSet all_samples(const Dataset& data) {
  SampleSet out;
  for (const auto& s : data.samples) out.push_back(&s);
  return out;
}

template <typename T>
objective::BinaryMask predict_mask(const EtrisModel<T>& model, const Sample& sample) {
  return objective::finalize_mask(model.forward(sample), sample.image_size, sample.image_size);
}

template <typename T>
objective::MetricReport evaluate_model(const EtrisModel<T>& model, const SampleSet& samples) {
  objective::MetricAccumulator acc;
  for (const Sample* s : samples) acc.add(predict_mask(model, *s), s->mask);
  return acc.report();
}

objective::MetricReport resolution_ceiling(const SampleSet& samples, int logit_size) {
  objective::MetricAccumulator acc;
  for (const Sample* s : samples) {
    const auto gt = loss_target(s->mask, logit_size);
    std::vector<double> z(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) z[i] = gt[i] ? 30.0 : -30.0;
    acc.add(objective::finalize_mask(nd::Array<double>({logit_size, logit_size}, std::move(z)), s->image_size,
                                     s->image_size),
            s->mask);
  }
  return acc.report();
}

TrainResult train_model(EtrisModel<float>& model, const RunConfig& config, const SampleSet& train,
                        const SampleSet& val, const TrainOptions& options) {
  if (train.empty()) throw InputError("training set is empty");
  const TrainConfig& tc = config.train;
  const double bridger_lr = tc.resolved_bridger_lr(config.model.backbone);
  Adam<float> adam(model.store(), [&](const std::string& name) {
    return nd::has_prefix(name, "bridger.") ? bridger_lr : tc.lr;
  });
  const SampleSet& monitor = val.empty() ? train : val;
  const int logit_size = config.model.backbone.image_size / 4;

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open(options.out_dir + "/train_log.jsonl", std::ios::trunc);
    if (!log_file) throw InputError("cannot write to '" + options.out_dir + "'");
  }

  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t batch_index = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    nd::Rng rng(nd::derive_seed(config.model.seed, "shuffle" + std::to_string(epoch)));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
    const double lr_scale = epoch >= tc.decay_epoch ? 0.1 : 1.0;

    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = *train[order[k]];
        nd::Array<float> loss =
            objective::contrastive_loss(model.forward(s), loss_target(s.mask, logit_size));
        const double value = loss.item();
        if (!std::isfinite(value))
          throw NumericalError("non-finite loss in batch " + std::to_string(batch_index) + " (epoch " +
                               std::to_string(epoch + 1) + ")");
        loss_sum += value;
        ++seen;
        nd::Array<float> scaled = nd::scale(loss, inv_batch);
        scaled.backward();
      }
      adam.step(lr_scale);
      ++batch_index;
      if (options.max_steps && adam.steps() >= options.max_steps) break;
    }

    EpochLog entry{epoch + 1, loss_sum / static_cast<double>(seen), evaluate_model(model, monitor).oiou};
    result.log.push_back(entry);
    if (log_file) log_file << to_jsonl(entry) << "\n" << std::flush;
    if (options.on_epoch) options.on_epoch(entry);
    if (entry.oiou > result.best_oiou) {
      result.best_oiou = entry.oiou;
      result.best_epoch = entry.epoch;
      if (!options.out_dir.empty())
        save_checkpoint(options.out_dir + "/best.etrb", model, config, {{"epoch", entry.epoch}, {"oiou", entry.oiou}});
    }
    if (options.max_steps && adam.steps() >= options.max_steps) break;
  }
  result.steps = adam.steps();
  if (!options.out_dir.empty()) {
    const EpochLog& last = result.log.back();
    save_checkpoint(options.out_dir + "/final.etrb", model, config, {{"epoch", last.epoch}, {"oiou", last.oiou}});
  }
  return result;
}

template class Adam<float>;
template class Adam<double>;
template objective::MetricReport evaluate_model(const EtrisModel<float>&, const SampleSet&);
template objective::MetricReport evaluate_model(const EtrisModel<double>&, const SampleSet&);
template objective::BinaryMask predict_mask(const EtrisModel<float>&, const Sample&);
template objective::BinaryMask predict_mask(const EtrisModel<double>&, const Sample&);

}  // namespace etris::harness
