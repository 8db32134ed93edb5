#include "fmv2/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fmv2/errors.hpp"

namespace fmv2 {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'V', '2'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return true;
}

template <typename T>
T need_le(std::istream& in, const char* what) {
  T v{};
  if (!get_le(in, v)) throw FormatError(std::string("FMV2: truncated while reading ") + what);
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors,
                      PayloadWidth width) {
  out.write(kMagic, 4);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(width));
  for (const auto& [name, tensor] : tensors) {
    if (name.size() > 0xFFFF) throw FormatError("FMV2: tensor name too long: " + name);
    if (tensor.rank() > 0xFF) throw FormatError("FMV2: rank too large for " + name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) {
      if (width == PayloadWidth::kF32)
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw FormatError("FMV2: write failed");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("FMV2: bad magic");
  const auto version = need_le<std::uint16_t>(in, "version");
  if (version != static_cast<std::uint16_t>(PayloadWidth::kF32) &&
      version != static_cast<std::uint16_t>(PayloadWidth::kF64))
    throw FormatError("FMV2: unsupported version " + std::to_string(version));
  const bool f32 = version == static_cast<std::uint16_t>(PayloadWidth::kF32);

  std::vector<NamedTensor> result;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = need_le<std::uint16_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("FMV2: truncated name");
    const auto rank = need_le<std::uint8_t>(in, "rank");
    Shape shape;
    for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(need_le<std::uint32_t>(in, "dim"));
    std::vector<double> values(numel_of(shape));
    for (auto& v : values) {
      if (f32)
        v = std::bit_cast<float>(need_le<std::uint32_t>(in, "payload"));
      else
        v = std::bit_cast<double>(need_le<std::uint64_t>(in, "payload"));
    }
    result.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                     PayloadWidth width) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, tensors, width);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace fmv2
