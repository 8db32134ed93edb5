#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fmv2/errors.hpp"
#include "fmv2/rng.hpp"
#include "fmv2/training.hpp"
#include "helpers.hpp"

using namespace fmv2;
using namespace fmv2::training;
using fmv2::test::random_tensor;

namespace {

Dataset tiny_dataset(std::size_t n, std::uint64_t seed) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.inputs.push_back(random_tensor({4, 2, 6}, seed + i));
    d.labels.push_back(static_cast<int>(i % 3));
  }
  return d;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a)
    if (!b.count(name) || !bitwise_equal(t, b.at(name))) return false;
  return true;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const ScheduleConfig s;
  CHECK(lr_schedule(0, s) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(lr_schedule(4, s) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_schedule(5, s) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_schedule(34, s) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_schedule(35, s) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(lr_schedule(40, s) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(lr_schedule(60, s) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr_schedule(80, s) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(lr_schedule(500, s) == doctest::Approx(0.0001).epsilon(1e-12));

  SUBCASE("monotone after warmup") {
    for (std::size_t e = 5; e < 100; ++e) CHECK(lr_schedule(e + 1, s) <= lr_schedule(e, s));
  }
  SUBCASE("no warmup") {
    ScheduleConfig z = s;
    z.warmup_epochs = 0;
    CHECK(lr_schedule(0, z) == 0.1);
  }
  ScheduleConfig bad = s;
  bad.decay_epochs = {55, 35};
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = s;
  bad.base_lr = -1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("cross entropy") {
  // −log softmax([1,2,3])[2] = log(e+e²+e³) − 3
  const Tensor logits({2, 3}, {1, 2, 3, 0, 0, 0});
  const std::vector<int> labels{2, 1};
  const double want = 0.5 * ((std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0) + std::log(3.0));
  CHECK(training::cross_entropy(logits, labels).item() == doctest::Approx(want).epsilon(1e-14));
  const std::vector<int> out_of_range{3, 0};
  CHECK_THROWS(training::cross_entropy(logits, out_of_range));
}

TEST_CASE("sgd with momentum and weight decay") {
  SUBCASE("closed form over three steps") {
    ModelParams p;
    p.emplace("w.weight", Tensor({2}, {1.0, -2.0}));
    p.emplace("w.bias", Tensor({1}, {0.5}));
    OptimizerState st;
    st.momentum = 0.9;
    st.weight_decay = 0.1;
    const Gradients g{{"w.weight", {0.5, 0.25}}, {"w.bias", {1.0}}};
    double w = 1.0, v = 0.0, b = 0.5, vb = 0.0;
    for (int step = 0; step < 3; ++step) {
      sgd_step(p, g, st, 0.2);
      v = 0.9 * v + 0.5 + 0.1 * w;
      w -= 0.2 * v;
      vb = 0.9 * vb + 1.0;  // biases are not decayed
      b -= 0.2 * vb;
      CHECK(p.at("w.weight").data()[0] == doctest::Approx(w).epsilon(1e-15));
      CHECK(p.at("w.bias").data()[0] == doctest::Approx(b).epsilon(1e-15));
    }
    st.decay_all = true;
    const double before = p.at("w.bias").data()[0];
    sgd_step(p, g, st, 0.2);
    vb = 0.9 * vb + 1.0 + 0.1 * before;
    CHECK(p.at("w.bias").data()[0] == doctest::Approx(before - 0.2 * vb).epsilon(1e-15));
  }
  SUBCASE("gradient descent on a quadratic converges") {
    ModelParams p;
    p.emplace("x.weight", Tensor({1}, {4.0}));
    OptimizerState st;
    st.weight_decay = 0.0;
    for (int i = 0; i < 300; ++i) {
      const double x = p.at("x.weight").data()[0];
      sgd_step(p, {{"x.weight", {2.0 * (x - 1.0)}}}, st, 0.05);
    }
    CHECK(p.at("x.weight").data()[0] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("zero learning rate leaves parameters untouched") {
    ModelParams p;
    p.emplace("a.weight", Tensor({3}, {1, 2, 3}));
    const Tensor before = p.at("a.weight").detach();
    OptimizerState st;
    sgd_step(p, {{"a.weight", {9, 9, 9}}}, st, 0.0);
    CHECK(bitwise_equal(p.at("a.weight"), before));
  }
  SUBCASE("missing or misshapen gradients") {
    ModelParams p;
    p.emplace("a.weight", Tensor({3}, {1, 2, 3}));
    OptimizerState st;
    CHECK_THROWS_AS(sgd_step(p, {}, st, 0.1), ContractError);
    CHECK_THROWS_AS(sgd_step(p, {{"a.weight", {1, 2}}}, st, 0.1), DimensionError);
  }
}

TEST_CASE("argmax and accuracy") {
  const Tensor s({3, 3}, {0.2, 0.2, 0.1, -1, 5, 5, 3, 2, 1});
  CHECK(argmax_rows(s) == std::vector<int>{0, 1, 0});
  const std::vector<int> labels{0, 2, 0};
  CHECK(accuracy(s, labels) == doctest::Approx(2.0 / 3.0));
  const std::vector<int> none;
  CHECK_THROWS_AS(accuracy(s, none), ContractError);
}

TEST_CASE("ensemble fusion") {
  SUBCASE("brute-force oracle on random score sets") {
    Xorshift64Star rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 1 + rng.next() % 4, B = 1 + rng.next() % 5, K = 2 + rng.next() % 5;
      std::vector<Tensor> sets;
      std::vector<double> w;
      for (std::size_t s = 0; s < n; ++s) {
        sets.push_back(random_tensor({B, K}, rng.next()));
        w.push_back(rng.uniform(0.0, 2.0));
      }
      const auto fused = ensemble_fuse(sets, w);
      for (std::size_t b = 0; b < B; ++b) {
        int best = 0;
        double best_v = -1e300;
        for (std::size_t k = 0; k < K; ++k) {
          double v = 0.0;
          for (std::size_t s = 0; s < n; ++s) v += w[s] * sets[s].at({b, k});
          CHECK(fused.scores.at({b, k}) == doctest::Approx(v).epsilon(1e-14));
          if (v > best_v) {
            best_v = v;
            best = static_cast<int>(k);
          }
        }
        CHECK(fused.predictions[b] == best);
      }
    }
  }
  SUBCASE("single stream with unit weight is the identity") {
    const Tensor s = random_tensor({4, 3}, 9);
    const std::vector<double> w{1.0};
    const auto f = ensemble_fuse({s}, w);
    CHECK(bitwise_equal(f.scores, s));
    CHECK(f.predictions == argmax_rows(s));
  }
  SUBCASE("scaling all weights keeps predictions") {
    const std::vector<Tensor> sets{random_tensor({6, 4}, 1), random_tensor({6, 4}, 2)};
    const std::vector<double> w{0.3, 0.7}, w2{3.0, 7.0};
    CHECK(ensemble_fuse(sets, w).predictions == ensemble_fuse(sets, w2).predictions);
  }
  const std::vector<double> w1{1.0}, w2{1.0, 1.0};
  CHECK_THROWS_AS(ensemble_fuse({}, std::span<const double>()), ContractError);
  CHECK_THROWS_AS(ensemble_fuse({random_tensor({2, 3}, 1)}, w2), ContractError);
  CHECK_THROWS_AS(ensemble_fuse({random_tensor({2, 3}, 1), random_tensor({2, 4}, 2)}, w2), DimensionError);
  (void)w1;
}

TEST_CASE("training loop on the tiny config") {
  const auto cfg = model::ModelConfig::tiny();
  const auto train = tiny_dataset(10, 100), test = tiny_dataset(5, 200);
  const auto init = model::init_params(cfg, 1);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.schedule.base_lr = 0.01;

  SUBCASE("deterministic and independent of the thread count") {
    const auto a = train_loop(train, test, cfg, init, tc);
    const auto b = train_loop(train, test, cfg, init, tc);
    tc.threads = 2;
    const auto c = train_loop(train, test, cfg, init, tc);
    CHECK(a.metrics == b.metrics);
    CHECK(a.metrics == c.metrics);
    CHECK(same_params(a.params, b.params));
    CHECK(same_params(a.params, c.params));
    CHECK(a.metrics.size() == 3);
    CHECK(a.metrics[0].lr == doctest::Approx(0.002));
    CHECK_FALSE(same_params(a.params, init));
  }
  SUBCASE("zero epochs return the initial parameters") {
    tc.epochs = 0;
    const auto r = train_loop(train, test, cfg, init, tc);
    CHECK(r.metrics.empty());
    CHECK(same_params(r.params, init));
  }
  SUBCASE("zero learning rate keeps the parameters") {
    tc.schedule.base_lr = 0.0;
    const auto r = train_loop(train, test, cfg, init, tc);
    CHECK(same_params(r.params, init));
  }
  SUBCASE("best checkpoint is written and reloads") {
    const auto path = std::filesystem::temp_directory_path() / "fmv2_train_best.ckpt";
    tc.checkpoint_path = path;
    const auto r = train_loop(train, test, cfg, init, tc);
    const auto [c2, p2] = model::load_model(path);
    CHECK(same_params(p2, r.best_params));
    double best = -1.0;
    for (const auto& m : r.metrics) best = std::max(best, m.test_acc);
    CHECK(r.best_test_acc == best);
    std::filesystem::remove(path);
  }
  SUBCASE("clipping bounds the first update") {
    tc.epochs = 1;
    tc.batch_size = 10;
    tc.momentum = 0.0;
    tc.weight_decay = 0.0;
    tc.schedule.warmup_epochs = 0;
    tc.schedule.base_lr = 1.0;
    tc.clip_norm = 1e-3;
    const auto r = train_loop(train, test, cfg, init, tc);
    double sq = 0.0;
    for (const auto& [name, t] : init)
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const double d = r.params.at(name).data()[i] - t.data()[i];
        sq += d * d;
      }
    CHECK(std::sqrt(sq) <= 1e-3 * (1 + 1e-12));
    CHECK(std::sqrt(sq) > 0.0);
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(train_loop(Dataset{}, test, cfg, init, tc), ContractError);
    tc.batch_size = 0;
    CHECK_THROWS_AS(train_loop(train, test, cfg, init, tc), ContractError);
    tc.batch_size = 4;
    auto wrong = train;
    wrong.inputs[3] = random_tensor({4, 2, 7}, 1);
    CHECK_THROWS(train_loop(wrong, test, cfg, init, tc));
  }
}

TEST_CASE("predict and evaluate agree with forward") {
  const auto cfg = model::ModelConfig::tiny();
  const auto p = model::init_params(cfg, 5);
  const auto d = tiny_dataset(4, 50);
  const Tensor scores = predict(p, cfg, d);
  CHECK(bitwise_equal(scores, model::forward(d.inputs, p, cfg)));
  CHECK(evaluate(p, cfg, d) == accuracy(scores, d.labels));
  CHECK(bitwise_equal(predict(p, cfg, d, 2), scores));
}

TEST_CASE("make_dataset selects, normalizes and derives streams") {
  data::SynthOptions o;
  o.samples_per_class = 2;
  o.joints = 5;
  o.frames = 20;
  const auto seqs = data::synth_generate(o);
  const auto d = make_dataset(seqs, {0, 3, 7}, 16);
  REQUIRE(d.size() == 3);
  CHECK(d.labels == std::vector<int>{0, 1, 3});
  CHECK(d.inputs[0].shape() == Shape{5, 3, 16});
  CHECK(bitwise_equal(d.inputs[1], data::normalize(seqs[3], 16).tensor));
  const auto bone = make_dataset(seqs, {3}, 16, data::Stream::kBone);
  const auto m = data::derive_modalities(data::normalize(seqs[3], 16).tensor, data::chain_parents(5));
  CHECK(bitwise_equal(bone.inputs[0], m.bone));
  CHECK_THROWS_AS(make_dataset(seqs, {99}, 16), ContractError);
}

TEST_CASE("metric line format") {
  CHECK(format_metrics({3, 0.05, 1.25, 0.5, 0.75}) ==
        "epoch=3 lr=0.05 train_loss=1.250000 train_acc=0.5000 test_acc=0.7500");
}

TEST_CASE("tiny model learns a per-class channel offset") {
  const auto cfg = model::ModelConfig::tiny();
  Xorshift64Star rng(5);
  auto make = [&](std::size_t n) {
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
      const int k = static_cast<int>(i % 3);
      std::vector<double> v(4 * 2 * 6);
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t f = 0; f < 6; ++f)
            v[(j * 2 + c) * 6 + f] = (c ? std::sin(2.0944 * k) : std::cos(2.0944 * k)) + 0.3 * rng.gaussian();
      d.inputs.emplace_back(Shape{4, 2, 6}, std::move(v));
      d.labels.push_back(k);
    }
    return d;
  };
  const Dataset train = make(60), test = make(30);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 8;
  tc.schedule.base_lr = 0.05;
  tc.schedule.warmup_epochs = 2;
  tc.schedule.decay_epochs = {15};
  const auto r = train_loop(train, test, cfg, model::init_params(cfg, 1), tc);
  CHECK(r.metrics.back().train_acc == 1.0);
  CHECK(r.metrics.back().test_acc == 1.0);
}
