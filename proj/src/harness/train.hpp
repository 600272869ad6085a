// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "harness/model.hpp"
#include "objective/objective.hpp"

namespace etris::harness {

// Adam over the trainable parameters of a store, one learning rate per
// parameter chosen at construction.
template <typename T>
class Adam {
 public:
  Adam(nd::ParamStore<T>& store, const std::function<double(const std::string&)>& lr_of, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  // Applies one update with every learning rate multiplied by lr_scale and
  // clears the gradients.
  void step(double lr_scale = 1.0);
  std::size_t steps() const { return t_; }
  std::vector<std::string> parameter_names() const;

 private:
  struct Slot {
    std::string name;
    nd::Array<T> param;
    double lr;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0;
  double oiou = 0;
};

std::string to_jsonl(const EpochLog& log);

struct TrainOptions {
  std::string out_dir;  // empty: nothing written
  std::function<void(const EpochLog&)> on_epoch;
  // Stop after this many optimizer steps (0: run every epoch).
  std::size_t max_steps = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_oiou = -1;
  std::size_t steps = 0;
};

using SampleSet = std::vector<const Sample*>;

// Deterministic split: a seeded permutation, the last val_fraction held out.
void split_dataset(const Dataset& data, double val_fraction, std::uint64_t seed, SampleSet& train, SampleSet& val);
SampleSet all_samples(const Dataset& data);

// Validation oIoU is measured on `val`, or on `train` when `val` is empty.
// Throws NumericalError on a non-finite loss, naming the batch.
TrainResult train_model(EtrisModel<float>& model, const RunConfig& config, const SampleSet& train,
                        const SampleSet& val, const TrainOptions& options = {});

template <typename T>
objective::MetricReport evaluate_model(const EtrisModel<T>& model, const SampleSet& samples);

// Metrics of the best prediction the loss grid can express: the training
// target itself, saturated, pushed through the same upsample-and-threshold
// step as real predictions.
objective::MetricReport resolution_ceiling(const SampleSet& samples, int logit_size);

template <typename T>
objective::BinaryMask predict_mask(const EtrisModel<T>& model, const Sample& sample);

}  // namespace etris::harness
