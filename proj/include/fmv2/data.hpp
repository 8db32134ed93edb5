#pragma once

// Skeleton sequences: JSONL and SKL1 readers/writers, normalization,
// bone/motion modalities, split manifests and the synthetic generator.
//
// SKL1 layout (little-endian):
//   "SKL1" | u32 count | count × record
//   record: u16 label | u16 subject | u16 view | u16 J | u16 C | u32 F | f32 × F·J·C
// Payload order is frame-major (frame, joint, channel), the same nesting as
// the JSONL "frames" field.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "fmv2/tensor.hpp"

namespace fmv2::data {

struct SkeletonSequence {
  std::size_t joints = 0;
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::vector<float> coords;  // J×C×F, row-major
  int label = 0;
  int subject = 0;
  int view = 0;

  float at(std::size_t j, std::size_t c, std::size_t f) const {
    return coords[(j * channels + c) * frames + f];
  }
  float& at(std::size_t j, std::size_t c, std::size_t f) {
    return coords[(j * channels + c) * frames + f];
  }
  // Throws DimensionError / ContractError on inconsistent sizes or
  // non-finite values.
  void validate() const;
};

bool bitwise_equal(const SkeletonSequence& a, const SkeletonSequence& b);

// Byte offsets of each record inside its file, filled when requested.
std::vector<SkeletonSequence> load_jsonl(const std::filesystem::path& path,
                                         std::vector<std::uint64_t>* offsets = nullptr);
void write_jsonl(const std::filesystem::path& path, const std::vector<SkeletonSequence>& seqs);

std::vector<SkeletonSequence> load_binary(const std::filesystem::path& path,
                                          std::vector<std::uint64_t>* offsets = nullptr);
void write_binary(const std::filesystem::path& path, const std::vector<SkeletonSequence>& seqs);

// Dispatches on extension: ".jsonl" → JSONL, anything else → SKL1.
std::vector<SkeletonSequence> load_any(const std::filesystem::path& path);
void write_any(const std::filesystem::path& path, const std::vector<SkeletonSequence>& seqs);

enum class Split { kTrain, kTest };
enum class SplitKey { kSubject, kView };

struct ManifestEntry {
  std::size_t index;
  std::uint64_t offset;
  int label;
  int subject;
  int view;
  Split split;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  SplitKey key = SplitKey::kSubject;
  std::set<int> test_keys;
  std::vector<ManifestEntry> samples;

  std::vector<std::size_t> indices(Split split) const;
  // Throws ContractError if a key value lands in both splits or a label is
  // outside the class range.
  void validate() const;
};

// Samples whose subject (or view) is in `test_keys` go to the test split.
DatasetManifest build_manifest(const std::vector<SkeletonSequence>& seqs,
                               std::vector<std::string> class_names, SplitKey key,
                               std::set<int> test_keys,
                               const std::vector<std::uint64_t>& offsets = {});

struct Normalized {
  Tensor tensor;  // J×C×F_target
  bool degenerate = false;
};

// Root (joint 0) subtraction per frame, linear resampling of the frame axis,
// then scaling so the mean per-frame coordinate RMS is 1. A sequence with
// nothing left after centering comes back as zeros, flagged degenerate.
Normalized normalize(const SkeletonSequence& s, std::size_t target_frames);

// parent[j] is the parent joint of j, or −1 for the root.
std::vector<int> chain_parents(std::size_t joints);

struct Modalities {
  Tensor joint;
  Tensor bone;
  Tensor joint_motion;
  Tensor bone_motion;
};

enum class Stream { kJoint, kBone, kJointMotion, kBoneMotion };
Stream parse_stream(const std::string& name);
std::string stream_name(Stream s);
const Tensor& select(const Modalities& m, Stream s);

// bone[j] = x[j] − x[parent[j]] (zero for the root); motion[f] = x[f+1] − x[f]
// with the last frame repeated, so motion[F−1] = 0.
Modalities derive_modalities(const Tensor& x, const std::vector<int>& parents);

struct SynthOptions {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 250;
  std::size_t joints = 25;
  std::size_t frames = 64;
  std::size_t channels = 3;
  std::uint64_t seed = 7;
  double noise_sigma = 0.05;
  std::size_t subjects = 5;  // sample i of a class gets subject i mod subjects
  // Phase is drawn from U(0, phase_spread); 2π gives a fully random phase.
  double phase_spread = 2.0 * 3.14159265358979323846;
};

// Temporal DCT index of class k's oscillation: classes below num_classes/2
// sit in the low band, the rest in the high band.
std::vector<std::size_t> synth_class_frequencies(std::size_t num_classes, std::size_t frames);
std::vector<std::string> synth_class_names(std::size_t num_classes);

// Joints on a chain sway with the class frequency; the motion reaches joint
// j with a fixed per-joint delay, a per-sample random phase and amplitude,
// plus gaussian noise. Output is class-major.
std::vector<SkeletonSequence> synth_generate(const SynthOptions& opts);

}  // namespace fmv2::data
