#pragma once

// FMV2 checkpoint container:
//   "FMV2" | u16 version | entries until EOF
//   entry: u16 name length | name bytes | u8 rank | u32 dim × rank | payload
// All integers little-endian. Version 1 stores an f32 payload, version 2 an
// f64 payload; the layout is otherwise identical.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fmv2/tensor.hpp"

namespace fmv2 {

enum class PayloadWidth : std::uint16_t { kF32 = 1, kF64 = 2 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors,
                      PayloadWidth width = PayloadWidth::kF64);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                     PayloadWidth width = PayloadWidth::kF64);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace fmv2
