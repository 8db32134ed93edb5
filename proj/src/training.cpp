#include "fmv2/training.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>

#include "fmv2/errors.hpp"
#include "fmv2/ops.hpp"
#include "fmv2/rng.hpp"

namespace fmv2::training {

namespace {

ModelParams deep_copy(const ModelParams& params) {
  ModelParams out;
  for (const auto& [name, t] : params) out.emplace(name, t.detach());
  return out;
}

struct SampleResult {
  double loss = 0.0;
  int prediction = 0;
  std::vector<std::vector<double>> grads;  // in ModelParams iteration order
  std::exception_ptr error;
};

void run_parallel(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  std::vector<std::exception_ptr> errors(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for num_threads(threads < 1 ? 1 : threads) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void check_dataset(const Dataset& d, const ModelConfig& cfg, const char* what) {
  if (d.inputs.size() != d.labels.size())
    throw ContractError(std::string(what) + " split has " + std::to_string(d.inputs.size()) +
                        " inputs but " + std::to_string(d.labels.size()) + " labels");
  for (int l : d.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= cfg.num_classes)
      throw ContractError(std::string(what) + " label " + std::to_string(l) + " outside " +
                          std::to_string(cfg.num_classes) + " classes");
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return fmv2::cross_entropy(logits, labels);
}

void ScheduleConfig::validate() const {
  if (!(base_lr >= 0.0)) throw ContractError("base learning rate must be non-negative");
  if (!(decay_factor > 0.0)) throw ContractError("decay factor must be positive");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i)
    if (decay_epochs[i] <= decay_epochs[i - 1])
      throw ContractError("decay epochs must be strictly increasing");
}

double lr_schedule(std::size_t epoch, const ScheduleConfig& cfg) {
  if (epoch < cfg.warmup_epochs)
    return cfg.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  std::size_t passed = 0;
  for (auto d : cfg.decay_epochs)
    if (d <= epoch) ++passed;
  return cfg.base_lr * std::pow(cfg.decay_factor, static_cast<double>(passed));
}

void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& state, double lr) {
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw ContractError("no gradient for parameter '" + name + "'");
    const auto& g = git->second;
    if (g.size() != p.numel())
      throw DimensionError("gradient for '" + name + "' has " + std::to_string(g.size()) +
                           " entries, parameter has " + std::to_string(p.numel()));
    auto& v = state.velocity[name];
    if (v.empty()) v.assign(p.numel(), 0.0);
    if (v.size() != p.numel())
      throw DimensionError("momentum buffer for '" + name + "' does not match its parameter");
    const double wd = state.decay_all || model::is_decayed(name) ? state.weight_decay : 0.0;
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i] + wd * data[i];
      data[i] -= lr * v[i];
    }
  }
}

Dataset make_dataset(const std::vector<data::SkeletonSequence>& seqs,
                     const std::vector<std::size_t>& indices, std::size_t frames, data::Stream stream) {
  Dataset d;
  for (auto i : indices) {
    if (i >= seqs.size()) throw ContractError("dataset index out of range");
    const auto norm = data::normalize(seqs[i], frames);
    const auto parents = data::chain_parents(seqs[i].joints);
    d.inputs.push_back(stream == data::Stream::kJoint
                           ? norm.tensor
                           : data::select(data::derive_modalities(norm.tensor, parents), stream));
    d.labels.push_back(seqs[i].label);
  }
  return d;
}

std::string format_metrics(const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%zu lr=%.6g train_loss=%.6f train_acc=%.4f test_acc=%.4f",
                m.epoch, m.lr, m.train_loss, m.train_acc, m.test_acc);
  return buf;
}

TrainResult train_loop(const Dataset& train, const Dataset& test, const ModelConfig& cfg,
                       const ModelParams& init, const TrainConfig& tc, const EpochCallback& on_epoch) {
  cfg.validate();
  tc.schedule.validate();
  if (train.size() == 0) throw ContractError("training split is empty");
  if (tc.batch_size == 0) throw ContractError("batch size must be positive");
  check_dataset(train, cfg, "train");
  check_dataset(test, cfg, "test");

  TrainResult result;
  result.params = deep_copy(init);
  result.best_params = deep_copy(init);
  OptimizerState state;
  state.momentum = tc.momentum;
  state.weight_decay = tc.weight_decay;
  state.decay_all = tc.decay_all;

  Xorshift64Star rng(tc.seed);
  std::vector<std::size_t> order(train.size());
  std::vector<std::string> names;
  for (const auto& [name, t] : result.params) names.push_back(name);

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tc.schedule);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, step = 0; start < order.size(); start += tc.batch_size, ++step) {
      const std::size_t count = std::min(tc.batch_size, order.size() - start);
      std::vector<SampleResult> samples(count);
      run_parallel(count, tc.threads, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        ModelParams leaves = model::as_leaves(result.params);
        const Tensor logits = model::forward_sample(train.inputs[idx], leaves, cfg);
        const int label = train.labels[idx];
        const Tensor loss = fmv2::cross_entropy(logits, std::span<const int>(&label, 1));
        backward(loss);
        auto& s = samples[b];
        s.loss = loss.item();
        s.prediction = argmax_rows(logits)[0];
        s.grads.reserve(leaves.size());
        for (const auto& [name, leaf] : leaves) {
          const auto g = leaf.grad();
          s.grads.emplace_back(g.begin(), g.end());
          if (s.grads.back().empty()) s.grads.back().assign(leaf.numel(), 0.0);
        }
      });

      Gradients grads;
      for (std::size_t p = 0; p < names.size(); ++p) {
        auto& g = grads[names[p]];
        g.assign(samples[0].grads[p].size(), 0.0);
        for (std::size_t b = 0; b < count; ++b)
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += samples[b].grads[p][i];
        for (auto& v : g) v /= static_cast<double>(count);
      }
      if (tc.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, g] : grads)
          for (double v : g) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > tc.clip_norm)
          for (auto& [name, g] : grads)
            for (auto& v : g) v *= tc.clip_norm / norm;
      }
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        batch_loss += samples[b].loss;
        if (samples[b].prediction == train.labels[order[start + b]]) ++correct;
      }
      if (!std::isfinite(batch_loss))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + " (lr " + std::to_string(lr) + ")");
      loss_sum += batch_loss;
      sgd_step(result.params, grads, state, lr);
    }

    EpochMetrics m{epoch, lr, loss_sum / static_cast<double>(train.size()),
                   static_cast<double>(correct) / static_cast<double>(train.size()),
                   test.size() ? evaluate(result.params, cfg, test, tc.threads) : 0.0};
    result.metrics.push_back(m);
    if (m.test_acc > result.best_test_acc) {
      result.best_test_acc = m.test_acc;
      result.best_epoch = epoch;
      result.best_params = deep_copy(result.params);
      if (!tc.checkpoint_path.empty()) model::save_model(tc.checkpoint_path, cfg, result.best_params);
    }
    if (on_epoch) on_epoch(m);
  }
  return result;
}

std::vector<int> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows expects B×K, got " + to_string(scores.shape()));
  const std::size_t rows = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(rows);
  const auto d = scores.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (d[r * k + c] > d[r * k + best]) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ContractError("accuracy: " + std::to_string(labels.size()) + " labels for logits " +
                        to_string(logits.shape()));
  if (labels.empty()) throw ContractError("accuracy over an empty split");
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

Tensor predict(const ModelParams& params, const ModelConfig& cfg, const Dataset& split, int threads) {
  if (split.size() == 0) throw ContractError("predict on an empty split");
  std::vector<Tensor> rows(split.size());
  run_parallel(split.size(), threads, [&](std::size_t i) {
    rows[i] = model::forward_sample(split.inputs[i], params, cfg);
  });
  std::vector<double> flat;
  flat.reserve(split.size() * cfg.num_classes);
  for (const auto& r : rows) flat.insert(flat.end(), r.data().begin(), r.data().end());
  return Tensor({split.size(), cfg.num_classes}, std::move(flat));
}

double evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& split, int threads) {
  if (split.size() == 0) throw ContractError("evaluate on an empty split");
  return accuracy(predict(params, cfg, split, threads), split.labels);
}

FusedScores ensemble_fuse(const std::vector<Tensor>& score_sets, std::span<const double> weights) {
  if (score_sets.empty()) throw ContractError("ensemble needs at least one score set");
  if (weights.size() != score_sets.size())
    throw ContractError("ensemble has " + std::to_string(score_sets.size()) + " score sets but " +
                        std::to_string(weights.size()) + " weights");
  const Shape& shape = score_sets.front().shape();
  if (shape.size() != 2) throw DimensionError("score sets must be B×K, got " + to_string(shape));
  std::vector<double> fused(score_sets.front().numel(), 0.0);
  for (std::size_t s = 0; s < score_sets.size(); ++s) {
    if (score_sets[s].shape() != shape)
      throw DimensionError("score set " + std::to_string(s) + " has shape " +
                           to_string(score_sets[s].shape()) + ", expected " + to_string(shape));
    const auto d = score_sets[s].data();
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] += weights[s] * d[i];
  }
  Tensor scores(shape, std::move(fused));
  auto pred = argmax_rows(scores);
  return {std::move(scores), std::move(pred)};
}

}  // namespace fmv2::training
