#pragma once

// End-to-end assembly: embedding → channel split → SAB / HFAB / LFAB stacks
// → value fusion → TAB passes → global average pool → linear head.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fmv2/attention.hpp"
#include "fmv2/checkpoint.hpp"
#include "fmv2/frequency.hpp"
#include "fmv2/tensor.hpp"

namespace fmv2::model {

struct ModelConfig {
  std::size_t joints = 25;
  std::size_t in_channels = 3;
  std::size_t frames = 64;
  std::size_t embed_channels = 36;  // C_e, must be even
  std::size_t attn_dim = 36;        // d
  std::size_t n_hfab = 2;
  std::size_t n_lfab = 2;
  std::size_t n_sab = 1;
  std::size_t n_tab = 1;
  std::size_t num_classes = 4;
  std::size_t ct_groups = 4;
  // Standardize the pooled feature over channels before the head.
  bool head_norm = true;
  frequency::FrequencyConfig freq;  // partition is quoted against 25 joints
  std::uint64_t seed = 1;

  std::size_t unit_channels() const { return embed_channels / 2; }
  std::size_t map_branches() const;

  void validate() const;

  // Space-separated key=value pairs; parse() accepts the same keys.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
  // Applies one key=value setting; throws ContractError on unknown keys.
  void set(const std::string& key, const std::string& value);

  // Tiny configuration used by gradient checks and step-through tests.
  static ModelConfig tiny();
  // Seven uniform-operator frequency blocks, seven spatial blocks, one
  // temporal block, at this config's dimensions.
  ModelConfig v1_style() const;
};

// The model's frequency config with the partition mapped onto the
// transform axis length.
frequency::FrequencyConfig resolved_frequency(const ModelConfig& cfg);

using ModelParams = std::map<std::string, Tensor>;

enum class ParamRole { kWeight, kBias, kTable };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamRole role;
};

// Every learnable tensor in a stable order.
std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg);

// Closed-form count of learnable scalars.
std::size_t count_parameters(const ModelConfig& cfg);
std::size_t flattened_size(const ModelParams& params);

// Weights ~ U(±sqrt(6 / (fan_in + fan_out))); biases and embedding tables 0.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Copies of every parameter as tracked leaves.
ModelParams as_leaves(const ModelParams& params);
bool is_decayed(const std::string& name);

Tensor embed(const Tensor& x, const ModelParams& params, const ModelConfig& cfg);
std::pair<Tensor, Tensor> channel_split(const Tensor& x);

struct ForwardTrace {
  Tensor logits;                   // 1×K
  std::vector<Tensor> sab_maps;    // fused map of every block, in stack order
  std::vector<Tensor> hfab_maps;
  std::vector<Tensor> lfab_maps;
  std::vector<Tensor> temporal_maps;
};

// One sample (J×C_in×F).
ForwardTrace forward_trace(const Tensor& x, const ModelParams& params, const ModelConfig& cfg);
Tensor forward_sample(const Tensor& x, const ModelParams& params, const ModelConfig& cfg);
// B samples → B×K logits.
Tensor forward(const std::vector<Tensor>& batch, const ModelParams& params, const ModelConfig& cfg);

// Checkpoint: "FMV2CFG <serialized config>\n" followed by an FMV2 blob.
void save_model(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params,
                PayloadWidth width = PayloadWidth::kF64);
std::pair<ModelConfig, ModelParams> load_model(const std::filesystem::path& path);

}  // namespace fmv2::model
