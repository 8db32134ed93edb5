#pragma once

// Loss, momentum SGD, the warmup/step-decay schedule, the training loop,
// evaluation and multi-stream score fusion.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fmv2/data.hpp"
#include "fmv2/model.hpp"
#include "fmv2/tensor.hpp"

namespace fmv2::training {

using model::ModelConfig;
using model::ModelParams;

// Mean over rows of −log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

struct ScheduleConfig {
  double base_lr = 0.1;
  std::size_t warmup_epochs = 5;
  std::vector<std::size_t> decay_epochs{35, 55, 75};
  double decay_factor = 0.1;

  void validate() const;
};

// Epochs are zero-based. Warmup: base·(epoch+1)/warmup for epoch < warmup;
// afterwards base·factor^(number of decay epochs ≤ epoch).
double lr_schedule(std::size_t epoch, const ScheduleConfig& cfg);

using Gradients = std::map<std::string, std::vector<double>>;

struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Decay biases and embedding tables too.
  bool decay_all = false;
  std::map<std::string, std::vector<double>> velocity;
};

// v ← m·v + g + wd·p;  p ← p − lr·v   (in place on `params`)
void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& state, double lr);

struct Dataset {
  std::vector<Tensor> inputs;  // J×C×F each
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

// Normalizes the selected sequences to `frames` frames and derives the
// requested stream over a chain skeleton.
Dataset make_dataset(const std::vector<data::SkeletonSequence>& seqs,
                     const std::vector<std::size_t>& indices, std::size_t frames,
                     data::Stream stream = data::Stream::kJoint);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  ScheduleConfig schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool decay_all = false;
  // Rescales the batch gradient to this global L2 norm when it is larger; 0 disables.
  double clip_norm = 0.0;
  int threads = 1;
  // Best-test-accuracy checkpoint; empty disables it.
  std::filesystem::path checkpoint_path;
};

struct EpochMetrics {
  std::size_t epoch;
  double lr;
  double train_loss;
  double train_acc;
  double test_acc;

  bool operator==(const EpochMetrics&) const = default;
};

std::string format_metrics(const EpochMetrics& m);

struct TrainResult {
  ModelParams params;       // after the last epoch
  ModelParams best_params;  // highest test accuracy (first reached)
  std::size_t best_epoch = 0;
  double best_test_acc = -1.0;
  std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Deterministic for a given seed and any thread count: samples of a batch
// are differentiated independently and their gradients are summed in batch
// order. Throws DivergenceError on a non-finite loss.
TrainResult train_loop(const Dataset& train, const Dataset& test, const ModelConfig& cfg,
                       const ModelParams& init, const TrainConfig& tc,
                       const EpochCallback& on_epoch = {});

// Row-wise argmax with ties going to the lowest class index.
std::vector<int> argmax_rows(const Tensor& scores);
double accuracy(const Tensor& logits, std::span<const int> labels);

// B×K logits for a whole split.
Tensor predict(const ModelParams& params, const ModelConfig& cfg, const Dataset& split, int threads = 1);
double evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& split, int threads = 1);

struct FusedScores {
  Tensor scores;  // Σ wᵢ·Sᵢ
  std::vector<int> predictions;
};

FusedScores ensemble_fuse(const std::vector<Tensor>& score_sets, std::span<const double> weights);

}  // namespace fmv2::training
