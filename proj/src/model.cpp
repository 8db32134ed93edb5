#include "fmv2/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "fmv2/errors.hpp"
#include "fmv2/ops.hpp"
#include "fmv2/rng.hpp"

namespace fmv2::model {

namespace {

using attention::Affine;
using attention::MixedBlockParams;
using attention::TemporalBlockParams;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    if (!value.empty() && value.front() == '-') throw std::invalid_argument("negative");
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  if (pos != value.size())
    throw ContractError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' expects a number, got '" + value + "'");
  }
  if (pos != value.size())
    throw ContractError("config key '" + key + "' expects a number, got '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ContractError("config key '" + key + "' expects 0/1, got '" + value + "'");
}

const Tensor& param(const ModelParams& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("missing parameter '" + name + "'");
  return it->second;
}

Affine affine_params(const ModelParams& params, const std::string& prefix) {
  return {param(params, prefix + ".weight"), param(params, prefix + ".bias")};
}

MixedBlockParams mixed_params(const ModelParams& params, const std::string& prefix) {
  return {{affine_params(params, prefix + ".u1.query"), affine_params(params, prefix + ".u1.key")},
          affine_params(params, prefix + ".u2.query")};
}

void push_affine(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in,
                 std::size_t n) {
  out.push_back({prefix + ".weight", {in, n}, ParamRole::kWeight});
  out.push_back({prefix + ".bias", {n}, ParamRole::kBias});
}

const char* kStacks[] = {"sab", "hfab", "lfab"};

std::size_t stack_depth(const ModelConfig& cfg, int stack) {
  return stack == 0 ? cfg.n_sab : stack == 1 ? cfg.n_hfab : cfg.n_lfab;
}

std::string block_name(int stack, std::size_t k) {
  return std::string(kStacks[stack]) + "." + std::to_string(k);
}

// Runs one stack of n mixed blocks. Every block but the last re-weights
// the units it received before they reach the next block.
std::vector<Tensor> run_stack(Tensor x1, Tensor x2, const ModelParams& params,
                              const ModelConfig& cfg, const frequency::FrequencyConfig& fcfg,
                              int stack, const frequency::SpectralTensor* s1,
                              const frequency::SpectralTensor* s2) {
  const std::size_t depth = stack_depth(cfg, stack);
  const std::size_t axis = frequency::tensor_axis(fcfg.axis);
  std::vector<Tensor> maps;
  for (std::size_t k = 0; k < depth; ++k) {
    const MixedBlockParams p = mixed_params(params, block_name(stack, k));
    attention::AttentionMaps m;
    if (stack == 0) {
      m = attention::sab_forward(x1, x2, p);
    } else {
      const bool reuse = k == 0 && s1 != nullptr;
      const frequency::SpectralTensor a = reuse ? *s1 : frequency::dct(x1, axis);
      const frequency::SpectralTensor b = reuse ? *s2 : frequency::dct(x2, axis);
      m = stack == 1 ? attention::hfab_forward_spectral(a, b, fcfg, p)
                     : attention::lfab_forward_spectral(a, b, fcfg, p);
    }
    if (k + 1 < depth) {
      x1 = attention::reweight_units(x1, m.fused);
      x2 = attention::reweight_units(x2, m.fused);
    }
    maps.push_back(std::move(m.fused));
  }
  return maps;
}

}  // namespace

std::size_t ModelConfig::map_branches() const {
  return static_cast<std::size_t>(n_sab > 0) + static_cast<std::size_t>(n_hfab > 0) +
         static_cast<std::size_t>(n_lfab > 0);
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ContractError(std::string(what) + " must be positive");
  };
  positive(joints, "joints");
  positive(in_channels, "in_channels");
  positive(frames, "frames");
  positive(embed_channels, "embed_channels");
  positive(attn_dim, "attn_dim");
  positive(num_classes, "num_classes");
  if (embed_channels % 2 != 0)
    throw ContractError("embed_channels must be even for the channel split, got " +
                        std::to_string(embed_channels));
  if (n_tab > 0 && (ct_groups == 0 || embed_channels % ct_groups != 0))
    throw ContractError("ct_groups " + std::to_string(ct_groups) + " must divide embed_channels " +
                        std::to_string(embed_channels));
  if (n_hfab + n_lfab > 0) {
    const std::size_t len = freq.axis == frequency::Axis::kTemporal ? frames : joints;
    resolved_frequency(*this).validate(len);
  }
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "joints=" << joints << " in_channels=" << in_channels << " frames=" << frames
     << " embed_channels=" << embed_channels << " attn_dim=" << attn_dim << " n_hfab=" << n_hfab
     << " n_lfab=" << n_lfab << " n_sab=" << n_sab << " n_tab=" << n_tab
     << " num_classes=" << num_classes << " ct_groups=" << ct_groups
     << " partition=" << freq.partition << " ell=" << format_double(freq.ell)
     << " h=" << format_double(freq.h) << " axis=" << frequency::axis_name(freq.axis)
     << " mode=" << frequency::mode_name(freq.mode) << " uniform=" << format_double(freq.uniform)
     << " test_mode=" << (freq.test_mode ? 1 : 0) << " head_norm=" << (head_norm ? 1 : 0)
     << " seed=" << seed;
  return os.str();
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "joints") joints = parse_size(key, value);
  else if (key == "in_channels") in_channels = parse_size(key, value);
  else if (key == "frames") frames = parse_size(key, value);
  else if (key == "embed_channels") embed_channels = parse_size(key, value);
  else if (key == "attn_dim") attn_dim = parse_size(key, value);
  else if (key == "n_hfab") n_hfab = parse_size(key, value);
  else if (key == "n_lfab") n_lfab = parse_size(key, value);
  else if (key == "n_sab") n_sab = parse_size(key, value);
  else if (key == "n_tab") n_tab = parse_size(key, value);
  else if (key == "num_classes") num_classes = parse_size(key, value);
  else if (key == "ct_groups") ct_groups = parse_size(key, value);
  else if (key == "partition") freq.partition = static_cast<int>(parse_size(key, value));
  else if (key == "ell") freq.ell = parse_double(key, value);
  else if (key == "h") freq.h = parse_double(key, value);
  else if (key == "axis") freq.axis = frequency::parse_axis(value);
  else if (key == "mode") freq.mode = frequency::parse_mode(value);
  else if (key == "uniform") freq.uniform = parse_double(key, value);
  else if (key == "test_mode") freq.test_mode = parse_bool(key, value);
  else if (key == "head_norm") head_norm = parse_bool(key, value);
  else if (key == "seed") seed = parse_size(key, value);
  else throw ContractError("unknown model config key '" + key + "'");
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string token;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ContractError("malformed config token '" + token + "'");
    cfg.set(token.substr(0, eq), token.substr(eq + 1));
  }
  return cfg;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.joints = 4;
  cfg.in_channels = 2;
  cfg.frames = 6;
  cfg.embed_channels = 8;
  cfg.attn_dim = 8;
  cfg.num_classes = 3;
  cfg.ct_groups = 2;
  return cfg;
}

ModelConfig ModelConfig::v1_style() const {
  ModelConfig cfg = *this;
  cfg.freq.mode = frequency::OperatorMode::kUniform;
  cfg.n_hfab = 7;
  cfg.n_lfab = 0;
  cfg.n_sab = 7;
  cfg.n_tab = 1;
  return cfg;
}

frequency::FrequencyConfig resolved_frequency(const ModelConfig& cfg) {
  frequency::FrequencyConfig f = cfg.freq;
  const std::size_t len = f.axis == frequency::Axis::kTemporal ? cfg.frames : cfg.joints;
  f.partition = frequency::map_partition(cfg.freq.partition, len);
  return f;
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  const std::size_t ce = cfg.embed_channels, half = cfg.unit_channels(), d = cfg.attn_dim;
  std::vector<ParamSpec> out;
  push_affine(out, "embed", cfg.in_channels, ce);
  out.push_back({"embed.joint", {cfg.joints, ce}, ParamRole::kTable});
  out.push_back({"embed.frame", {cfg.frames, ce}, ParamRole::kTable});
  for (int s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < stack_depth(cfg, s); ++k) {
      const std::string b = block_name(s, k);
      push_affine(out, b + ".u1.query", half, d);
      push_affine(out, b + ".u1.key", half, d);
      push_affine(out, b + ".u2.query", half, d);
    }
  }
  if (cfg.map_branches() > 0) {
    push_affine(out, "value", ce, ce);
    push_affine(out, "fuse", cfg.map_branches() * ce, ce);
  }
  for (std::size_t k = 0; k < cfg.n_tab; ++k) {
    const std::string b = "tab." + std::to_string(k);
    push_affine(out, b + ".query", ce, d);
    push_affine(out, b + ".key", ce, d);
    push_affine(out, b + ".value", ce, ce);
  }
  push_affine(out, "head", ce, cfg.num_classes);
  return out;
}

std::size_t count_parameters(const ModelConfig& cfg) {
  const std::size_t ce = cfg.embed_channels, half = cfg.unit_channels(), d = cfg.attn_dim;
  std::size_t total = cfg.joints * ce + cfg.frames * ce + (cfg.in_channels * ce + ce);
  const std::size_t per_block = 3 * (half * d + d);
  total += (cfg.n_sab + cfg.n_hfab + cfg.n_lfab) * per_block;
  const std::size_t branches = cfg.map_branches();
  if (branches > 0) total += (ce * ce + ce) + (branches * ce * ce + ce);
  total += cfg.n_tab * (2 * (ce * d + d) + (ce * ce + ce));
  total += ce * cfg.num_classes + cfg.num_classes;
  return total;
}

std::size_t flattened_size(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Xorshift64Star rng(seed);
  ModelParams params;
  for (const auto& entry : parameter_layout(cfg)) {
    Tensor t = Tensor::zeros(entry.shape);
    if (entry.role == ParamRole::kWeight) {
      const double bound = std::sqrt(6.0 / static_cast<double>(entry.shape[0] + entry.shape[1]));
      for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
    }
    params.emplace(entry.name, std::move(t));
  }
  return params;
}

ModelParams as_leaves(const ModelParams& params) {
  ModelParams out;
  for (const auto& [name, t] : params) out.emplace(name, t.as_leaf());
  return out;
}

bool is_decayed(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return !(ends_with(".bias") || name == "embed.joint" || name == "embed.frame");
}

Tensor embed(const Tensor& x, const ModelParams& params, const ModelConfig& cfg) {
  const Shape expected{cfg.joints, cfg.in_channels, cfg.frames};
  if (x.shape() != expected)
    throw DimensionError("model input must be " + to_string(expected) + ", got " +
                         to_string(x.shape()));
  const std::size_t j = cfg.joints, f = cfg.frames, ce = cfg.embed_channels;
  Tensor h = affine(permute(x, {0, 2, 1}), param(params, "embed.weight"),
                    param(params, "embed.bias"));  // J×F×C_e
  h = add(h, repeat(reshape(param(params, "embed.joint"), {j, 1, ce}), 1, f));
  h = add(h, repeat(reshape(param(params, "embed.frame"), {1, f, ce}), 0, j));
  return permute(h, {0, 2, 1});
}

std::pair<Tensor, Tensor> channel_split(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("channel_split expects J×C×F, got " + to_string(x.shape()));
  const std::size_t c = x.dim(1);
  if (c % 2 != 0) throw ContractError("channel_split needs an even channel count, got " + std::to_string(c));
  return {slice(x, 1, 0, c / 2), slice(x, 1, c / 2, c)};
}

ForwardTrace forward_trace(const Tensor& x, const ModelParams& params, const ModelConfig& cfg) {
  ForwardTrace trace;
  const Tensor embedded = embed(x, params, cfg);
  const auto [x1, x2] = channel_split(embedded);

  const frequency::FrequencyConfig fcfg = resolved_frequency(cfg);
  std::optional<frequency::SpectralTensor> s1, s2;
  if (cfg.n_hfab > 0 && cfg.n_lfab > 0) {
    const std::size_t axis = frequency::tensor_axis(fcfg.axis);
    s1 = frequency::dct(x1, axis);
    s2 = frequency::dct(x2, axis);
  }
  const auto* p1 = s1 ? &*s1 : nullptr;
  const auto* p2 = s2 ? &*s2 : nullptr;
  trace.sab_maps = run_stack(x1, x2, params, cfg, fcfg, 0, nullptr, nullptr);
  trace.hfab_maps = run_stack(x1, x2, params, cfg, fcfg, 1, p1, p2);
  trace.lfab_maps = run_stack(x1, x2, params, cfg, fcfg, 2, p1, p2);

  Tensor xt = embedded;
  std::vector<Tensor> finals;
  for (const auto* maps : {&trace.sab_maps, &trace.hfab_maps, &trace.lfab_maps})
    if (!maps->empty()) finals.push_back(maps->back());
  if (!finals.empty()) {
    const Tensor value = attention::channel_affine(embedded, affine_params(params, "value"));
    xt = attention::fuse_maps(finals, value, affine_params(params, "fuse"));
  }

  for (std::size_t k = 0; k < cfg.n_tab; ++k) {
    const std::string b = "tab." + std::to_string(k);
    TemporalBlockParams p{affine_params(params, b + ".query"), affine_params(params, b + ".key"),
                          affine_params(params, b + ".value"), cfg.ct_groups};
    auto out = attention::tab_forward(xt, p);
    xt = std::move(out.out);
    trace.temporal_maps.push_back(std::move(out.map));
  }

  const Tensor pooled = reshape(mean(mean(xt, 2), 0), {1, cfg.embed_channels});
  trace.logits = affine(cfg.head_norm ? standardize_lastdim(pooled) : pooled, param(params, "head.weight"),
                        param(params, "head.bias"));
  return trace;
}

Tensor forward_sample(const Tensor& x, const ModelParams& params, const ModelConfig& cfg) {
  return forward_trace(x, params, cfg).logits;
}

Tensor forward(const std::vector<Tensor>& batch, const ModelParams& params, const ModelConfig& cfg) {
  if (batch.empty()) throw ContractError("forward on an empty batch");
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const auto& x : batch) rows.push_back(forward_sample(x, params, cfg));
  return rows.size() == 1 ? rows.front() : concat(rows, 0);
}

void save_model(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params,
                PayloadWidth width) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "FMV2CFG " << cfg.serialize() << '\n';
  std::vector<NamedTensor> entries;
  for (const auto& [name, t] : params) entries.push_back({name, t});
  write_checkpoint(out, entries, width);
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::pair<ModelConfig, ModelParams> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string header;
  if (!std::getline(in, header) || header.rfind("FMV2CFG ", 0) != 0)
    throw FormatError("'" + path.string() + "' has no FMV2CFG header line");
  ModelConfig cfg = ModelConfig::parse(header.substr(8));
  ModelParams params;
  for (auto& e : read_checkpoint(in)) params.emplace(e.name, std::move(e.tensor));
  for (const auto& entry : parameter_layout(cfg)) {
    auto it = params.find(entry.name);
    if (it == params.end()) throw FormatError("checkpoint lacks parameter '" + entry.name + "'");
    if (it->second.shape() != entry.shape)
      throw FormatError("parameter '" + entry.name + "' has shape " + to_string(it->second.shape()) +
                        ", config needs " + to_string(entry.shape));
  }
  return {cfg, params};
}

}  // namespace fmv2::model
