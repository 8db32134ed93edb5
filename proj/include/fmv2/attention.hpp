#pragma once

// The four attention block types: spatial (SAB), high-/low-frequency
// (HFAB/LFAB) and temporal (TAB), plus fusion of the joint maps with the
// value tensor. Unit tensors are J×(C/2)×F; embedded tensors are J×C×F.

#include <cstddef>
#include <utility>
#include <vector>

#include "fmv2/frequency.hpp"
#include "fmv2/tensor.hpp"

namespace fmv2::attention {

struct Affine {
  Tensor weight;  // in × out
  Tensor bias;    // out
};

// Per-unit query/key projector: ReLU(affine(mean over axis 2)).
struct QKProjector {
  Affine query;
  Affine key;
};

// Unit 1 contributes Q₁ and the shared K₁; unit 2 contributes only Q₂.
struct MixedBlockParams {
  QKProjector unit1;
  Affine unit2_query;
};

struct AttentionMaps {
  Tensor self_map;  // softmax(Q₁K₁ᵀ/√d)
  Tensor mix_map;   // softmax(Q₂K₁ᵀ/√d)
  Tensor fused;     // self_map + mix_map
};

struct TemporalBlockParams {
  Affine query;
  Affine key;
  Affine value;
  std::size_t groups = 1;  // channel-transform grouping
};

struct TemporalOutput {
  Tensor out;  // J×C×F
  Tensor map;  // F×F, sigmoid(softmax(Q_t K_tᵀ/√d))
};

// x: J×C×F, per-(joint, frame) affine map over channels.
Tensor channel_affine(const Tensor& x, const Affine& a);
// Applies a J×J map along the joint axis of a J×C×F tensor.
Tensor apply_joint_map(const Tensor& map, const Tensor& x);
// x + map·x along the joint axis (residual re-weighting between stacked blocks).
Tensor reweight_units(const Tensor& x, const Tensor& map);

std::pair<Tensor, Tensor> qk_project(const Tensor& x_unit, const QKProjector& p);
Tensor q_project(const Tensor& x_unit, const Affine& query);

AttentionMaps mixed_attention_pair(const Tensor& q1, const Tensor& k1, const Tensor& q2);

AttentionMaps sab_forward(const Tensor& x1, const Tensor& x2, const MixedBlockParams& p);

// Frequency blocks. The *_spectral forms take precomputed spectra so one
// DCT per unit can feed both the high and the low stack.
AttentionMaps hfab_forward(const Tensor& x1, const Tensor& x2, const frequency::FrequencyConfig& cfg,
                           const MixedBlockParams& p);
AttentionMaps lfab_forward(const Tensor& x1, const Tensor& x2, const frequency::FrequencyConfig& cfg,
                           const MixedBlockParams& p);
AttentionMaps hfab_forward_spectral(const frequency::SpectralTensor& s1,
                                    const frequency::SpectralTensor& s2,
                                    const frequency::FrequencyConfig& cfg,
                                    const MixedBlockParams& p);
AttentionMaps lfab_forward_spectral(const frequency::SpectralTensor& s1,
                                    const frequency::SpectralTensor& s2,
                                    const frequency::FrequencyConfig& cfg,
                                    const MixedBlockParams& p);

// maps: the present J×J branches (MS, MHF, MLF); value: J×C_e×F.
// Each map is applied to the value, the results are concatenated on
// channels and projected back to C_e.
Tensor fuse_maps(const std::vector<Tensor>& maps, const Tensor& value, const Affine& proj);

// Group-transpose permutation of the channel axis of a J×C×F tensor.
Tensor channel_transform(const Tensor& x, std::size_t groups);

TemporalOutput tab_forward(const Tensor& x_t, const TemporalBlockParams& p);

}  // namespace fmv2::attention
