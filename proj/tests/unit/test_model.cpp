#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fmv2/checkpoint.hpp"
#include "fmv2/errors.hpp"
#include "fmv2/grad_check.hpp"
#include "fmv2/model.hpp"
#include "fmv2/ops.hpp"
#include "fmv2/rng.hpp"
#include "helpers.hpp"

using namespace fmv2;
using namespace fmv2::model;
using fmv2::test::random_tensor;

namespace {

// Perturbs every parameter so biases and tables are nonzero and relu
// pre-activations sit away from their kinks.
ModelParams jittered(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = init_params(cfg, seed);
  Xorshift64Star rng(seed + 1000);
  for (auto& [name, t] : p)
    for (auto& v : t.mutable_data()) v += rng.uniform(-0.1, 0.1);
  return p;
}

attention::Affine aff(const ModelParams& p, const std::string& prefix) {
  return {p.at(prefix + ".weight"), p.at(prefix + ".bias")};
}

attention::MixedBlockParams block(const ModelParams& p, const std::string& prefix) {
  return {{aff(p, prefix + ".u1.query"), aff(p, prefix + ".u1.key")}, aff(p, prefix + ".u2.query")};
}

}  // namespace

TEST_CASE("embed") {
  const ModelConfig cfg;
  ModelParams p = init_params(cfg, 3);
  SUBCASE("zero input and zero tables give the bias") {
    Xorshift64Star rng(4);
    for (auto& v : p.at("embed.bias").mutable_data()) v = rng.uniform(-1, 1);
    const Tensor e = embed(Tensor::zeros({25, 3, 64}), p, cfg);
    CHECK(e.shape() == Shape{25, 36, 64});
    for (std::size_t j = 0; j < 25; j += 6)
      for (std::size_t c = 0; c < 36; ++c)
        for (std::size_t f = 0; f < 64; f += 9) CHECK(e.at({j, c, f}) == p.at("embed.bias").data()[c]);
  }
  SUBCASE("random case against an affine-plus-tables loop") {
    const ModelConfig t = ModelConfig::tiny();
    const ModelParams q = jittered(t, 5);
    const Tensor x = random_tensor({4, 2, 6}, 6);
    const Tensor e = embed(x, q, t);
    const auto& W = q.at("embed.weight");
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t f = 0; f < 6; ++f) {
          double acc = 0.0;
          for (std::size_t i = 0; i < 2; ++i) acc += x.at({j, i, f}) * W.at({i, c});
          acc += q.at("embed.bias").data()[c];
          acc += q.at("embed.joint").at({j, c});
          acc += q.at("embed.frame").at({f, c});
          CHECK(e.at({j, c, f}) == doctest::Approx(acc).epsilon(1e-14));
        }
  }
  CHECK_THROWS_AS(embed(Tensor::zeros({25, 2, 64}), p, cfg), DimensionError);
}

TEST_CASE("channel split") {
  const Tensor x = random_tensor({3, 8, 5}, 10);
  const auto [a, b] = channel_split(x);
  CHECK(a.shape() == Shape{3, 4, 5});
  CHECK(bitwise_equal(concat({a, b}, 1), x));
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(a.at({2, c, 1}) == x.at({2, c, 1}));
    CHECK(b.at({2, c, 1}) == x.at({2, c + 4, 1}));
  }
  const auto [u, v] = channel_split(random_tensor({2, 2, 3}, 11));
  CHECK(u.dim(1) == 1);
  CHECK(v.dim(1) == 1);
  CHECK_THROWS_AS(channel_split(random_tensor({2, 3, 3}, 12)), ContractError);
}

TEST_CASE("config validation and serialization") {
  ModelConfig cfg;
  CHECK(cfg.n_hfab == 2);
  CHECK(cfg.n_lfab == 2);
  CHECK(cfg.n_sab == 1);
  CHECK(cfg.n_tab == 1);
  CHECK_NOTHROW(cfg.validate());
  const ModelConfig back = ModelConfig::parse(cfg.serialize());
  CHECK(back.serialize() == cfg.serialize());
  cfg.embed_channels = 35;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  cfg.ct_groups = 5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  CHECK_THROWS_AS(ModelConfig::parse("joints=4 colour=red"), ContractError);
  CHECK_THROWS_AS(ModelConfig::parse("joints=-4"), ContractError);
}

TEST_CASE("parameter counts") {
  SUBCASE("no blocks: embeddings and head only") {
    ModelConfig cfg;
    cfg.n_hfab = cfg.n_lfab = cfg.n_sab = cfg.n_tab = 0;
    const std::size_t J = 25, F = 64, Ci = 3, Ce = 36, K = 4;
    CHECK(count_parameters(cfg) == J * Ce + F * Ce + (Ci * Ce + Ce) + (Ce * K + K));
  }
  SUBCASE("closed form equals enumeration across configs") {
    for (std::size_t hf : {0, 1, 2, 7})
      for (std::size_t lf : {0, 2})
        for (std::size_t sb : {0, 1, 7})
          for (std::size_t tb : {0, 1, 2}) {
            ModelConfig cfg;
            cfg.n_hfab = hf;
            cfg.n_lfab = lf;
            cfg.n_sab = sb;
            cfg.n_tab = tb;
            CHECK(count_parameters(cfg) == flattened_size(init_params(cfg, 1)));
            CHECK(count_parameters(cfg) == flattened_size(init_params(cfg, 99)));
          }
  }
  SUBCASE("default against the seven-block uniform baseline") {
    const ModelConfig v2;
    const ModelConfig v1 = v2.v1_style();
    CHECK(v1.n_hfab + v1.n_lfab == 7);
    CHECK(v1.n_sab == 7);
    CHECK(v1.freq.mode == frequency::OperatorMode::kUniform);
    // frozen by enumeration
    CHECK(count_parameters(v2) == 23008);
    CHECK(count_parameters(v1) == 40180);
    CHECK(static_cast<double>(count_parameters(v2)) / static_cast<double>(count_parameters(v1)) <= 0.65);
  }
  SUBCASE("doubling channels roughly quadruples the affine-dominated part") {
    ModelConfig a, b;
    a.joints = b.joints = 1;
    a.frames = b.frames = 2;
    a.embed_channels = 64;
    a.attn_dim = 64;
    b.embed_channels = 128;
    b.attn_dim = 128;
    a.ct_groups = b.ct_groups = 4;
    const double r = static_cast<double>(count_parameters(b)) / static_cast<double>(count_parameters(a));
    CHECK(r > 3.7);
    CHECK(r < 4.0);
  }
}

TEST_CASE("parameter names are unique and stable") {
  const auto layout = parameter_layout(ModelConfig{});
  std::set<std::string> names;
  for (const auto& s : layout) names.insert(s.name);
  CHECK(names.size() == layout.size());
  CHECK(layout.front().name == "embed.weight");
  CHECK(names.count("hfab.1.u1.key.weight") == 1);
  CHECK(names.count("lfab.0.u2.query.bias") == 1);
  CHECK(names.count("lfab.0.u2.key.weight") == 0);
  CHECK(names.count("tab.0.value.weight") == 1);
  CHECK(names.count("fuse.weight") == 1);
  CHECK(layout.back().name == "head.bias");
}

TEST_CASE("init_params") {
  const ModelConfig cfg;
  const auto a = init_params(cfg, 7), b = init_params(cfg, 7), c = init_params(cfg, 8);
  bool any_diff = false;
  for (const auto& [name, t] : a) {
    CHECK(bitwise_equal(t, b.at(name)));
    if (!bitwise_equal(t, c.at(name))) any_diff = true;
  }
  CHECK(any_diff);
  for (const auto& entry : parameter_layout(cfg))
    if (entry.role != ParamRole::kWeight)
      for (double v : a.at(entry.name).data()) CHECK(v == 0.0);

  // moment check: U(±b) has mean 0 and variance b²/3
  ModelConfig big;
  big.embed_channels = 100;
  big.attn_dim = 100;
  const auto p = init_params(big, 3);
  const Tensor& w = p.at("value.weight");  // 100 × 100, 10k draws
  const double bound = std::sqrt(6.0 / 200.0);
  double m = 0.0, v = 0.0;
  for (double x : w.data()) {
    CHECK(std::abs(x) <= bound);
    m += x;
    v += x * x;
  }
  m /= 10000.0;
  v = v / 10000.0 - m * m;
  const double var = bound * bound / 3.0;
  CHECK(std::abs(m) < 4.0 * std::sqrt(var / 10000.0));
  CHECK(std::abs(v - var) < 0.05 * var);
}

TEST_CASE("forward determinism, shape and head covariance") {
  ModelConfig cfg = ModelConfig::tiny();
  const auto p = jittered(cfg, 20);
  const Tensor x = random_tensor({4, 2, 6}, 21);
  const Tensor y = random_tensor({4, 2, 6}, 22);
  const Tensor out = forward({x, y, x}, p, cfg);
  CHECK(out.shape() == Shape{3, 3});
  for (std::size_t k = 0; k < 3; ++k) CHECK(out.at({0, k}) == out.at({2, k}));
  CHECK(bitwise_equal(forward({x}, p, cfg), forward({x}, p, cfg)));

  // swap head rows 0 and 2
  auto q = p;
  std::vector<double> w(p.at("head.weight").data().begin(), p.at("head.weight").data().end());
  std::vector<double> b(p.at("head.bias").data().begin(), p.at("head.bias").data().end());
  for (std::size_t r = 0; r < 8; ++r) std::swap(w[r * 3 + 0], w[r * 3 + 2]);
  std::swap(b[0], b[2]);
  q["head.weight"] = Tensor({8, 3}, w);
  q["head.bias"] = Tensor({3}, b);
  const Tensor o2 = forward({x}, q, cfg);
  const Tensor o1 = forward({x}, p, cfg);
  CHECK(o2.at({0, 0}) == o1.at({0, 2}));
  CHECK(o2.at({0, 1}) == o1.at({0, 1}));
  CHECK(o2.at({0, 2}) == o1.at({0, 0}));

  cfg.num_classes = 1;
  CHECK(forward({x, y}, init_params(cfg, 1), cfg).shape() == Shape{2, 1});
}

TEST_CASE("tiny forward against a block-by-block step-through") {
  const ModelConfig cfg = ModelConfig::tiny();
  const auto p = jittered(cfg, 30);
  const Tensor x = random_tensor({4, 2, 6}, 31);
  const auto trace = forward_trace(x, p, cfg);

  // x + M·x along joints, by loops
  auto reweight = [](const Tensor& m, const Tensor& u) {
    std::vector<double> out(u.data().begin(), u.data().end());
    const std::size_t J = u.dim(0), C = u.dim(1), F = u.dim(2);
    for (std::size_t i = 0; i < J; ++i)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t k = 0; k < J; ++k) out[(i * C + c) * F + f] += m.at({i, k}) * u.at({k, c, f});
    return Tensor(u.shape(), out);
  };

  const Tensor e = embed(x, p, cfg);
  const Tensor x1 = slice(e, 1, 0, 4), x2 = slice(e, 1, 4, 8);
  auto fcfg = cfg.freq;
  fcfg.partition = 3;  // round(13/25·6)
  CHECK(resolved_frequency(cfg).partition == 3);

  const Tensor ms = attention::sab_forward(x1, x2, block(p, "sab.0")).fused;
  auto stack = [&](bool high) {
    const std::string s = high ? "hfab" : "lfab";
    auto blk = [&](const Tensor& a, const Tensor& b, const std::string& name) {
      return high ? attention::hfab_forward(a, b, fcfg, block(p, name)).fused
                  : attention::lfab_forward(a, b, fcfg, block(p, name)).fused;
    };
    const Tensor m0 = blk(x1, x2, s + ".0");
    const Tensor m1 = blk(reweight(m0, x1), reweight(m0, x2), s + ".1");
    return std::pair{m0, m1};
  };
  const auto [h0, h1] = stack(true);
  const auto [l0, l1] = stack(false);
  REQUIRE(trace.hfab_maps.size() == 2);
  REQUIRE(trace.lfab_maps.size() == 2);
  CHECK(max_abs_diff(trace.sab_maps[0], ms) < 1e-12);
  CHECK(max_abs_diff(trace.hfab_maps[0], h0) < 1e-12);
  CHECK(max_abs_diff(trace.hfab_maps[1], h1) < 1e-10);
  CHECK(max_abs_diff(trace.lfab_maps[0], l0) < 1e-12);
  CHECK(max_abs_diff(trace.lfab_maps[1], l1) < 1e-10);

  const Tensor v = attention::channel_affine(e, aff(p, "value"));
  const Tensor xt = attention::fuse_maps({ms, h1, l1}, v, aff(p, "fuse"));
  const auto tab = attention::tab_forward(xt, {aff(p, "tab.0.query"), aff(p, "tab.0.key"), aff(p, "tab.0.value"), 2});
  CHECK(max_abs_diff(trace.temporal_maps[0], tab.map) < 1e-10);

  std::vector<double> pooled(8, 0.0);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t f = 0; f < 6; ++f) pooled[c] += tab.out.at({j, c, f}) / 24.0;
  double mu = 0.0, var = 0.0;
  for (double z : pooled) mu += z / 8.0;
  for (double z : pooled) var += (z - mu) * (z - mu) / 8.0;
  for (auto& z : pooled) z = (z - mu) / std::sqrt(var + 1e-5);
  for (std::size_t k = 0; k < 3; ++k) {
    double logit = p.at("head.bias").data()[k];
    for (std::size_t c = 0; c < 8; ++c) logit += pooled[c] * p.at("head.weight").at({c, k});
    CHECK(std::abs(trace.logits.at({0, k}) - logit) < 1e-9);
  }
}

TEST_CASE("unit operators make the model equal its uniform-operator twin bitwise") {
  ModelConfig a;
  a.freq.test_mode = true;
  a.freq.h = 1.0;
  a.freq.ell = 1.0;
  ModelConfig b;
  b.freq.mode = frequency::OperatorMode::kUniform;
  b.freq.uniform = 1.0;
  const auto p = init_params(a, 4);
  const Tensor x = random_tensor({25, 3, 64}, 5);
  CHECK(bitwise_equal(forward_sample(x, p, a), forward_sample(x, p, b)));
}

TEST_CASE("end-to-end gradient check on the tiny config") {
  const ModelConfig cfg = ModelConfig::tiny();
  const auto base = jittered(cfg, 40);
  std::vector<std::string> names;
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : base) {
    names.push_back(name);
    leaves.push_back(t.as_leaf());
  }
  const std::vector<Tensor> batch{random_tensor({4, 2, 6}, 41), random_tensor({4, 2, 6}, 42)};
  const std::vector<int> labels{2, 0};
  auto loss = [&](const std::vector<Tensor>& ps) {
    ModelParams q;
    for (std::size_t i = 0; i < ps.size(); ++i) q.emplace(names[i], ps[i]);
    return cross_entropy(forward(batch, q, cfg), labels);
  };
  GradCheckOptions opts;
  opts.samples = 20;
  const auto sampled = grad_check(loss, leaves, opts);
  INFO(sampled.summary());
  CHECK(sampled.passed);
  const auto all = grad_check(loss, leaves);
  INFO(all.summary());
  CHECK(all.passed);
  CHECK(all.max_rel_error < 1e-4);
}

TEST_CASE("model checkpoint round trip") {
  const ModelConfig cfg = ModelConfig::tiny();
  const auto p = jittered(cfg, 50);
  const auto path = std::filesystem::temp_directory_path() / "fmv2_model_roundtrip.ckpt";
  save_model(path, cfg, p);
  const auto [c2, p2] = load_model(path);
  CHECK(c2.serialize() == cfg.serialize());
  REQUIRE(p2.size() == p.size());
  for (const auto& [name, t] : p) CHECK(bitwise_equal(t, p2.at(name)));

  ModelConfig other = cfg;
  other.embed_channels = 10;
  other.ct_groups = 2;
  {
    std::ofstream f(path, std::ios::binary);
    f << "FMV2CFG " << other.serialize() << '\n';
    std::vector<NamedTensor> entries;
    for (const auto& [name, t] : p) entries.push_back({name, t});
    write_checkpoint(f, entries);
  }
  CHECK_THROWS_AS(load_model(path), FormatError);
  std::filesystem::remove(path);
}
