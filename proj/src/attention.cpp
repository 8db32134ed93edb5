#include "fmv2/attention.hpp"

#include <cmath>

#include "fmv2/errors.hpp"
#include "fmv2/ops.hpp"

namespace fmv2::attention {

namespace {

void require_units(const Tensor& x1, const Tensor& x2) {
  if (x1.rank() != 3 || x1.shape() != x2.shape())
    throw DimensionError("unit tensors must be equal-shape J×C×F, got " + to_string(x1.shape()) +
                         " and " + to_string(x2.shape()));
}

Tensor scaled_scores(const Tensor& q, const Tensor& k) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return scale(matmul(q, transpose(k)), inv_sqrt_d);
}

frequency::SpectralTensor banded(const frequency::SpectralTensor& s,
                                 const frequency::FrequencyConfig& cfg, bool high) {
  if (cfg.mode == frequency::OperatorMode::kUniform)
    return frequency::apply_uniform_operator(s, cfg.uniform);
  return high ? frequency::apply_high_operator(s, cfg) : frequency::apply_low_operator(s, cfg);
}

AttentionMaps spectral_block(const frequency::SpectralTensor& s1,
                             const frequency::SpectralTensor& s2,
                             const frequency::FrequencyConfig& cfg, const MixedBlockParams& p,
                             bool high) {
  require_units(s1.coeffs, s2.coeffs);
  const Tensor u1 = banded(s1, cfg, high).coeffs;
  const Tensor u2 = banded(s2, cfg, high).coeffs;
  auto [q1, k1] = qk_project(u1, p.unit1);
  return mixed_attention_pair(q1, k1, q_project(u2, p.unit2_query));
}

}  // namespace

Tensor channel_affine(const Tensor& x, const Affine& a) {
  if (x.rank() != 3) throw DimensionError("channel_affine expects J×C×F, got " + to_string(x.shape()));
  return permute(affine(permute(x, {0, 2, 1}), a.weight, a.bias), {0, 2, 1});
}

Tensor apply_joint_map(const Tensor& map, const Tensor& x) {
  if (x.rank() != 3 || map.rank() != 2 || map.dim(1) != x.dim(0))
    throw DimensionError("joint map " + to_string(map.shape()) + " cannot act on " +
                         to_string(x.shape()));
  const Shape shape{map.dim(0), x.dim(1), x.dim(2)};
  return reshape(matmul(map, reshape(x, {x.dim(0), x.dim(1) * x.dim(2)})), shape);
}

Tensor reweight_units(const Tensor& x, const Tensor& map) {
  return add(x, apply_joint_map(map, x));
}

Tensor q_project(const Tensor& x_unit, const Affine& query) {
  if (x_unit.rank() != 3)
    throw DimensionError("unit tensor must be J×C×F, got " + to_string(x_unit.shape()));
  if (query.weight.rank() != 2 || query.weight.dim(0) != x_unit.dim(1))
    throw DimensionError("projector expects " +
                         std::to_string(query.weight.rank() == 2 ? query.weight.dim(0) : 0) +
                         " channels, unit has " + std::to_string(x_unit.dim(1)));
  return relu(affine(mean(x_unit, 2), query.weight, query.bias));
}

std::pair<Tensor, Tensor> qk_project(const Tensor& x_unit, const QKProjector& p) {
  if (x_unit.rank() != 3)
    throw DimensionError("unit tensor must be J×C×F, got " + to_string(x_unit.shape()));
  if (p.query.weight.dim(0) != x_unit.dim(1) || p.key.weight.dim(0) != x_unit.dim(1))
    throw DimensionError("projector channel count does not match unit " +
                         to_string(x_unit.shape()));
  const Tensor pooled = mean(x_unit, 2);
  return {relu(affine(pooled, p.query.weight, p.query.bias)),
          relu(affine(pooled, p.key.weight, p.key.bias))};
}

AttentionMaps mixed_attention_pair(const Tensor& q1, const Tensor& k1, const Tensor& q2) {
  if (q1.rank() != 2 || k1.rank() != 2 || q2.rank() != 2 || q1.shape() != k1.shape() ||
      q2.shape() != q1.shape())
    throw DimensionError("mixed attention needs equal J×d inputs, got " + to_string(q1.shape()) +
                         ", " + to_string(k1.shape()) + ", " + to_string(q2.shape()));
  Tensor self_map = softmax_lastdim(scaled_scores(q1, k1));
  Tensor mix_map = softmax_lastdim(scaled_scores(q2, k1));
  Tensor fused = add(self_map, mix_map);
  return {std::move(self_map), std::move(mix_map), std::move(fused)};
}

AttentionMaps sab_forward(const Tensor& x1, const Tensor& x2, const MixedBlockParams& p) {
  require_units(x1, x2);
  auto [q1, k1] = qk_project(x1, p.unit1);
  return mixed_attention_pair(q1, k1, q_project(x2, p.unit2_query));
}

AttentionMaps hfab_forward_spectral(const frequency::SpectralTensor& s1,
                                    const frequency::SpectralTensor& s2,
                                    const frequency::FrequencyConfig& cfg,
                                    const MixedBlockParams& p) {
  return spectral_block(s1, s2, cfg, p, true);
}

AttentionMaps lfab_forward_spectral(const frequency::SpectralTensor& s1,
                                    const frequency::SpectralTensor& s2,
                                    const frequency::FrequencyConfig& cfg,
                                    const MixedBlockParams& p) {
  return spectral_block(s1, s2, cfg, p, false);
}

AttentionMaps hfab_forward(const Tensor& x1, const Tensor& x2, const frequency::FrequencyConfig& cfg,
                           const MixedBlockParams& p) {
  require_units(x1, x2);
  const std::size_t axis = frequency::tensor_axis(cfg.axis);
  return hfab_forward_spectral(frequency::dct(x1, axis), frequency::dct(x2, axis), cfg, p);
}

AttentionMaps lfab_forward(const Tensor& x1, const Tensor& x2, const frequency::FrequencyConfig& cfg,
                           const MixedBlockParams& p) {
  require_units(x1, x2);
  const std::size_t axis = frequency::tensor_axis(cfg.axis);
  return lfab_forward_spectral(frequency::dct(x1, axis), frequency::dct(x2, axis), cfg, p);
}

Tensor fuse_maps(const std::vector<Tensor>& maps, const Tensor& value, const Affine& proj) {
  if (maps.empty()) throw DimensionError("fuse_maps needs at least one map");
  if (value.rank() != 3) throw DimensionError("value must be J×C×F, got " + to_string(value.shape()));
  const std::size_t joints = value.dim(0), channels = value.dim(1), frames = value.dim(2);
  if (proj.weight.rank() != 2 || proj.weight.dim(0) != maps.size() * channels)
    throw DimensionError("fusion projection " + to_string(proj.weight.shape()) + " does not take " +
                         std::to_string(maps.size()) + "×" + std::to_string(channels) +
                         " channels");
  const Tensor flat = reshape(value, {joints, channels * frames});
  std::vector<Tensor> branches;
  for (const auto& m : maps) {
    if (m.rank() != 2 || m.dim(0) != joints || m.dim(1) != joints)
      throw DimensionError("fusion map " + to_string(m.shape()) + " vs " +
                           std::to_string(joints) + " joints");
    branches.push_back(reshape(matmul(m, flat), {joints, channels, frames}));
  }
  const Tensor stacked = branches.size() == 1 ? branches.front() : concat(branches, 1);
  return channel_affine(stacked, proj);
}

Tensor channel_transform(const Tensor& x, std::size_t groups) {
  if (x.rank() != 3) throw DimensionError("channel_transform expects J×C×F, got " + to_string(x.shape()));
  const std::size_t joints = x.dim(0), channels = x.dim(1), frames = x.dim(2);
  if (groups == 0 || channels % groups != 0)
    throw ContractError("channel_transform: " + std::to_string(groups) + " groups do not divide " +
                        std::to_string(channels) + " channels");
  const std::size_t per_group = channels / groups;
  if (groups == 1 || per_group == 1) return x;
  const Tensor grouped = reshape(x, {joints, groups, per_group, frames});
  return reshape(permute(grouped, {0, 2, 1, 3}), {joints, channels, frames});
}

TemporalOutput tab_forward(const Tensor& x_t, const TemporalBlockParams& p) {
  if (x_t.rank() != 3) throw DimensionError("TAB input must be J×C×F, got " + to_string(x_t.shape()));
  const std::size_t joints = x_t.dim(0), channels = x_t.dim(1), frames = x_t.dim(2);
  const Tensor ct = channel_transform(x_t, p.groups);
  const Tensor q = relu(affine(transpose(mean(ct, 0)), p.query.weight, p.query.bias));
  const Tensor k = relu(affine(transpose(max(ct, 0)), p.key.weight, p.key.bias));
  Tensor map = sigmoid(softmax_lastdim(scaled_scores(q, k)));
  const Tensor value = channel_affine(x_t, p.value);
  Tensor out = reshape(matmul(reshape(value, {joints * channels, frames}), transpose(map)),
                       {joints, channels, frames});
  return {std::move(out), std::move(map)};
}

}  // namespace fmv2::attention
