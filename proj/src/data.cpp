#include "fmv2/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fmv2/errors.hpp"
#include "fmv2/rng.hpp"

namespace fmv2::data {

namespace {

using nlohmann::json;

constexpr char kSklMagic[4] = {'S', 'K', 'L', '1'};
constexpr std::size_t kRecordHeader = 14;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put_u16(std::string& out, std::uint64_t v, const char* what) {
  if (v > 0xFFFF) throw ContractError(std::string("SKL1 ") + what + " " + std::to_string(v) + " exceeds u16");
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint64_t v, const char* what) {
  if (v > 0xFFFFFFFFull)
    throw ContractError(std::string("SKL1 ") + what + " " + std::to_string(v) + " exceeds u32");
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u(const std::string& buf, std::size_t pos, int bytes) {
  std::uint32_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  return v;
}

int non_negative(const json& rec, const char* key, std::size_t line, bool required) {
  auto it = rec.find(key);
  if (it == rec.end()) {
    if (required) throw FormatError("line " + std::to_string(line) + ": missing \"" + key + "\"");
    return 0;
  }
  if (!it->is_number_integer() || it->get<long long>() < 0)
    throw FormatError("line " + std::to_string(line) + ": \"" + key +
                      "\" must be a non-negative integer");
  return static_cast<int>(it->get<long long>());
}

SkeletonSequence parse_record(const json& rec, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (!rec.is_object()) throw FormatError(where + "record must be a JSON object");
  SkeletonSequence s;
  s.label = non_negative(rec, "label", line, true);
  s.subject = non_negative(rec, "subject", line, false);
  s.view = non_negative(rec, "view", line, false);
  auto it = rec.find("frames");
  if (it == rec.end() || !it->is_array() || it->empty())
    throw FormatError(where + "\"frames\" must be a non-empty array");
  const json& frames = *it;
  s.frames = frames.size();
  if (!frames[0].is_array() || frames[0].empty() || !frames[0][0].is_array() || frames[0][0].empty())
    throw FormatError(where + "\"frames\" must nest as [frame][joint][channel]");
  s.joints = frames[0].size();
  s.channels = frames[0][0].size();
  s.coords.resize(s.joints * s.channels * s.frames);
  for (std::size_t f = 0; f < s.frames; ++f) {
    const json& fr = frames[f];
    if (!fr.is_array() || fr.size() != s.joints)
      throw DimensionError(where + "frame " + std::to_string(f) + " has " +
                           std::to_string(fr.is_array() ? fr.size() : 0) + " joints, expected " +
                           std::to_string(s.joints));
    for (std::size_t j = 0; j < s.joints; ++j) {
      const json& jt = fr[j];
      if (!jt.is_array() || jt.size() != s.channels)
        throw DimensionError(where + "frame " + std::to_string(f) + " joint " + std::to_string(j) +
                             " has " + std::to_string(jt.is_array() ? jt.size() : 0) +
                             " channels, expected " + std::to_string(s.channels));
      for (std::size_t c = 0; c < s.channels; ++c) {
        if (!jt[c].is_number())
          throw FormatError(where + "coordinate at frame " + std::to_string(f) + " joint " +
                            std::to_string(j) + " is not a number");
        const float v = static_cast<float>(jt[c].get<double>());
        if (!std::isfinite(v)) throw FormatError(where + "non-finite coordinate");
        s.at(j, c, f) = v;
      }
    }
  }
  return s;
}

json to_json(const SkeletonSequence& s) {
  json frames = json::array();
  for (std::size_t f = 0; f < s.frames; ++f) {
    json fr = json::array();
    for (std::size_t j = 0; j < s.joints; ++j) {
      json jt = json::array();
      for (std::size_t c = 0; c < s.channels; ++c) jt.push_back(static_cast<double>(s.at(j, c, f)));
      fr.push_back(std::move(jt));
    }
    frames.push_back(std::move(fr));
  }
  return json{{"label", s.label}, {"subject", s.subject}, {"view", s.view}, {"frames", std::move(frames)}};
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void SkeletonSequence::validate() const {
  if (joints == 0 || channels == 0 || frames == 0)
    throw DimensionError("skeleton sequence needs positive J, C and F");
  if (coords.size() != joints * channels * frames)
    throw DimensionError("skeleton sequence holds " + std::to_string(coords.size()) +
                         " coordinates, expected " + std::to_string(joints * channels * frames));
  for (float v : coords)
    if (!std::isfinite(v)) throw ContractError("skeleton sequence has a non-finite coordinate");
  if (label < 0) throw ContractError("negative label");
}

bool bitwise_equal(const SkeletonSequence& a, const SkeletonSequence& b) {
  return a.joints == b.joints && a.channels == b.channels && a.frames == b.frames &&
         a.label == b.label && a.subject == b.subject && a.view == b.view &&
         a.coords.size() == b.coords.size() &&
         std::memcmp(a.coords.data(), b.coords.data(), a.coords.size() * sizeof(float)) == 0;
}

std::vector<SkeletonSequence> load_jsonl(const std::filesystem::path& path,
                                         std::vector<std::uint64_t>* offsets) {
  const std::string text = read_file(path);
  std::vector<SkeletonSequence> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = text.substr(pos, end - pos);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": line " + std::to_string(line_no) + ", column " +
                          std::to_string(e.byte) + ": malformed JSON");
      }
      try {
        out.push_back(parse_record(rec, line_no));
      } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
      } catch (const DimensionError& e) {
        throw DimensionError(path.string() + ": " + e.what());
      }
      if (offsets) offsets->push_back(pos);
    }
    pos = end + 1;
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<SkeletonSequence>& seqs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (const auto& s : seqs) {
    s.validate();
    out << to_json(s).dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<SkeletonSequence> load_binary(const std::filesystem::path& path,
                                          std::vector<std::uint64_t>* offsets) {
  const std::string buf = read_file(path);
  const std::string name = path.string();
  if (buf.size() < 8)
    throw FormatError(name + ": SKL1 header needs 8 bytes, file has " + std::to_string(buf.size()));
  if (std::memcmp(buf.data(), kSklMagic, 4) != 0) throw FormatError(name + ": bad magic, expected SKL1");
  const std::uint32_t count = get_u(buf, 4, 4);
  std::vector<SkeletonSequence> out;
  out.reserve(std::min<std::size_t>(count, 1 << 16));
  std::size_t pos = 8;
  for (std::uint32_t r = 0; r < count; ++r) {
    if (buf.size() < pos + kRecordHeader)
      throw FormatError(name + ": truncated SKL1 record " + std::to_string(r) + " header: expected " +
                        std::to_string(pos + kRecordHeader) + " bytes, file has " +
                        std::to_string(buf.size()));
    SkeletonSequence s;
    s.label = static_cast<int>(get_u(buf, pos, 2));
    s.subject = static_cast<int>(get_u(buf, pos + 2, 2));
    s.view = static_cast<int>(get_u(buf, pos + 4, 2));
    s.joints = get_u(buf, pos + 6, 2);
    s.channels = get_u(buf, pos + 8, 2);
    s.frames = get_u(buf, pos + 10, 4);
    const std::size_t values = s.joints * s.channels * s.frames;
    const std::size_t need = pos + kRecordHeader + 4 * values;
    if (buf.size() < need)
      throw FormatError(name + ": truncated SKL1 record " + std::to_string(r) + " payload: expected " +
                        std::to_string(need) + " bytes, file has " + std::to_string(buf.size()));
    if (offsets) offsets->push_back(pos);
    pos += kRecordHeader;
    s.coords.resize(values);
    for (std::size_t f = 0; f < s.frames; ++f)
      for (std::size_t j = 0; j < s.joints; ++j)
        for (std::size_t c = 0; c < s.channels; ++c) {
          s.at(j, c, f) = std::bit_cast<float>(get_u(buf, pos, 4));
          pos += 4;
        }
    out.push_back(std::move(s));
  }
  if (pos != buf.size())
    throw FormatError(name + ": " + std::to_string(buf.size() - pos) + " trailing bytes after " +
                      std::to_string(count) + " SKL1 records");
  return out;
}

void write_binary(const std::filesystem::path& path, const std::vector<SkeletonSequence>& seqs) {
  std::string buf(kSklMagic, 4);
  put_u32(buf, seqs.size(), "record count");
  for (const auto& s : seqs) {
    s.validate();
    put_u16(buf, static_cast<std::uint64_t>(s.label), "label");
    put_u16(buf, static_cast<std::uint64_t>(s.subject), "subject");
    put_u16(buf, static_cast<std::uint64_t>(s.view), "view");
    put_u16(buf, s.joints, "joint count");
    put_u16(buf, s.channels, "channel count");
    put_u32(buf, s.frames, "frame count");
    for (std::size_t f = 0; f < s.frames; ++f)
      for (std::size_t j = 0; j < s.joints; ++j)
        for (std::size_t c = 0; c < s.channels; ++c)
          put_u32(buf, std::bit_cast<std::uint32_t>(s.at(j, c, f)), "payload");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<SkeletonSequence> load_any(const std::filesystem::path& path) {
  return ends_with(path.string(), ".jsonl") ? load_jsonl(path) : load_binary(path);
}

void write_any(const std::filesystem::path& path, const std::vector<SkeletonSequence>& seqs) {
  if (ends_with(path.string(), ".jsonl"))
    write_jsonl(path, seqs);
  else
    write_binary(path, seqs);
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (const auto& e : samples)
    if (e.split == split) out.push_back(e.index);
  return out;
}

void DatasetManifest::validate() const {
  std::set<int> train_keys, seen_test;
  for (const auto& e : samples) {
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= class_names.size())
      throw ContractError("sample " + std::to_string(e.index) + " label " + std::to_string(e.label) +
                          " outside " + std::to_string(class_names.size()) + " classes");
    const int k = key == SplitKey::kSubject ? e.subject : e.view;
    (e.split == Split::kTest ? seen_test : train_keys).insert(k);
  }
  for (int k : seen_test)
    if (train_keys.count(k))
      throw ContractError("split key " + std::to_string(k) + " appears in both train and test");
}

DatasetManifest build_manifest(const std::vector<SkeletonSequence>& seqs,
                               std::vector<std::string> class_names, SplitKey key,
                               std::set<int> test_keys, const std::vector<std::uint64_t>& offsets) {
  if (!offsets.empty() && offsets.size() != seqs.size())
    throw ContractError("manifest offsets do not match the sample count");
  DatasetManifest m;
  m.class_names = std::move(class_names);
  m.key = key;
  m.test_keys = std::move(test_keys);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = seqs[i];
    const int k = key == SplitKey::kSubject ? s.subject : s.view;
    m.samples.push_back({i, offsets.empty() ? 0 : offsets[i], s.label, s.subject, s.view,
                         m.test_keys.count(k) ? Split::kTest : Split::kTrain});
  }
  m.validate();
  return m;
}

Normalized normalize(const SkeletonSequence& s, std::size_t target_frames) {
  s.validate();
  if (target_frames == 0) throw ContractError("normalize: target frame count must be positive");
  const std::size_t J = s.joints, C = s.channels, F = s.frames, T = target_frames;
  std::vector<double> out(J * C * T);
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t c = 0; c < C; ++c) {
      auto centered = [&](std::size_t f) {
        return static_cast<double>(s.at(j, c, f)) - static_cast<double>(s.at(0, c, f));
      };
      for (std::size_t t = 0; t < T; ++t) {
        const double pos =
            T == 1 || F == 1 ? 0.0
                             : static_cast<double>(t) * static_cast<double>(F - 1) / static_cast<double>(T - 1);
        const auto i0 = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(i0);
        double v = centered(std::min(i0, F - 1));
        if (frac > 0.0 && i0 + 1 < F) v = v * (1.0 - frac) + centered(i0 + 1) * frac;
        out[(j * C + c) * T + t] = v;
      }
    }
  double rms_sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double sq = 0.0;
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t c = 0; c < C; ++c) sq += out[(j * C + c) * T + t] * out[(j * C + c) * T + t];
    rms_sum += std::sqrt(sq / static_cast<double>(J * C));
  }
  const double mean_rms = rms_sum / static_cast<double>(T);
  if (!(mean_rms > 1e-12) || !std::isfinite(mean_rms))
    return {Tensor::zeros({J, C, T}), true};
  for (auto& v : out) v /= mean_rms;
  return {Tensor({J, C, T}, std::move(out)), false};
}

std::vector<int> chain_parents(std::size_t joints) {
  std::vector<int> p(joints);
  for (std::size_t j = 0; j < joints; ++j) p[j] = static_cast<int>(j) - 1;
  return p;
}

Stream parse_stream(const std::string& name) {
  if (name == "joint") return Stream::kJoint;
  if (name == "bone") return Stream::kBone;
  if (name == "joint-motion") return Stream::kJointMotion;
  if (name == "bone-motion") return Stream::kBoneMotion;
  throw ContractError("unknown stream '" + name + "' (joint, bone, joint-motion, bone-motion)");
}

std::string stream_name(Stream s) {
  switch (s) {
    case Stream::kJoint: return "joint";
    case Stream::kBone: return "bone";
    case Stream::kJointMotion: return "joint-motion";
    case Stream::kBoneMotion: return "bone-motion";
  }
  return "joint";
}

const Tensor& select(const Modalities& m, Stream s) {
  switch (s) {
    case Stream::kBone: return m.bone;
    case Stream::kJointMotion: return m.joint_motion;
    case Stream::kBoneMotion: return m.bone_motion;
    case Stream::kJoint: break;
  }
  return m.joint;
}

namespace {

Tensor motion_of(const Tensor& x) {
  const std::size_t rows = x.dim(0) * x.dim(1), F = x.dim(2);
  std::vector<double> out(x.numel(), 0.0);
  const auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t f = 0; f + 1 < F; ++f) out[r * F + f] = d[r * F + f + 1] - d[r * F + f];
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Modalities derive_modalities(const Tensor& x, const std::vector<int>& parents) {
  if (x.rank() != 3) throw DimensionError("derive_modalities expects J×C×F, got " + to_string(x.shape()));
  const std::size_t J = x.dim(0), C = x.dim(1), F = x.dim(2);
  if (parents.size() != J)
    throw ContractError("parent table has " + std::to_string(parents.size()) + " entries for " +
                        std::to_string(J) + " joints");
  std::vector<double> bone(x.numel(), 0.0);
  const auto d = x.data();
  for (std::size_t j = 0; j < J; ++j) {
    const int p = parents[j];
    if (p >= static_cast<int>(J) || p == static_cast<int>(j))
      throw ContractError("invalid parent " + std::to_string(p) + " for joint " + std::to_string(j));
    if (p < 0) continue;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t f = 0; f < F; ++f)
        bone[(j * C + c) * F + f] = d[(j * C + c) * F + f] - d[(static_cast<std::size_t>(p) * C + c) * F + f];
  }
  Modalities m;
  m.joint = x.detach();
  m.bone = Tensor(x.shape(), std::move(bone));
  m.joint_motion = motion_of(m.joint);
  m.bone_motion = motion_of(m.bone);
  return m;
}

std::vector<std::size_t> synth_class_frequencies(std::size_t num_classes, std::size_t frames) {
  if (num_classes < 2) throw ContractError("synthetic data needs at least 2 classes");
  if (frames < 4) throw ContractError("synthetic data needs at least 4 frames");
  const std::size_t low = num_classes / 2, high = num_classes - low;
  const double fr = static_cast<double>(frames);
  auto spread = [](double lo, double hi, std::size_t i, std::size_t n) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < low; ++i)
    out.push_back(static_cast<std::size_t>(std::lround(spread(std::max(1.0, fr / 32), fr / 4, i, low))));
  for (std::size_t i = 0; i < high; ++i)
    out.push_back(static_cast<std::size_t>(
        std::min(std::lround(spread(fr * 5 / 8, fr * 7 / 8, i, high)), std::lround(fr - 1))));
  return out;
}

std::vector<std::string> synth_class_names(std::size_t num_classes) {
  std::vector<std::string> names;
  const std::size_t low = num_classes / 2;
  for (std::size_t k = 0; k < num_classes; ++k)
    names.push_back((k < low ? "low" : "high") + std::to_string(k < low ? k : k - low));
  return names;
}

std::vector<SkeletonSequence> synth_generate(const SynthOptions& o) {
  if (o.joints == 0 || o.channels == 0) throw ContractError("synthetic data needs joints and channels");
  if (o.subjects == 0) throw ContractError("synthetic data needs at least one subject");
  if (!(o.noise_sigma >= 0.0)) throw ContractError("noise sigma must be non-negative");
  if (!(o.phase_spread >= 0.0)) throw ContractError("phase spread must be non-negative");
  const auto freqs = synth_class_frequencies(o.num_classes, o.frames);
  Xorshift64Star rng(o.seed);
  const double F = static_cast<double>(o.frames), J = static_cast<double>(o.joints);
  constexpr double kDelayFrames = 0.5;
  std::vector<SkeletonSequence> out;
  out.reserve(o.num_classes * o.samples_per_class);
  for (std::size_t k = 0; k < o.num_classes; ++k) {
    const double omega = std::numbers::pi * static_cast<double>(freqs[k]) / F;
    for (std::size_t i = 0; i < o.samples_per_class; ++i) {
      SkeletonSequence s;
      s.joints = o.joints;
      s.channels = o.channels;
      s.frames = o.frames;
      s.label = static_cast<int>(k);
      s.subject = static_cast<int>(i % o.subjects);
      s.view = static_cast<int>((i / o.subjects) % 3);
      s.coords.resize(o.joints * o.channels * o.frames);
      const double phase = rng.uniform(0.0, o.phase_spread);
      const double amp = rng.uniform(0.5, 1.5);
      for (std::size_t j = 0; j < o.joints; ++j) {
        const double reach = (static_cast<double>(j) + 1.0) / J;
        for (std::size_t c = 0; c < o.channels; ++c) {
          const double base = c == 1 ? static_cast<double>(j) / J : 0.0;
          const double gain = 1.0 / (1.0 + static_cast<double>(c));
          const double offset = static_cast<double>(c) * std::numbers::pi / 3.0;
          for (std::size_t f = 0; f < o.frames; ++f) {
            const double t = static_cast<double>(f) + 0.5 - kDelayFrames * static_cast<double>(j);
            const double v = base + amp * reach * gain * std::cos(omega * t + phase + offset);
            s.at(j, c, f) = static_cast<float>(v + o.noise_sigma * rng.gaussian());
          }
        }
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace fmv2::data
