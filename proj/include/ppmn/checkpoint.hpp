#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppmn/graph.hpp"
#include "ppmn/tensor.hpp"

namespace ppmn {

// Binary layout, all integers unsigned 32-bit little-endian:
//   "PPMN" | version | tensor count |
//   per tensor: name length | UTF-8 name | rank | extents... | float32 LE values
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Rank is the tensor's extent list with trailing unit extents dropped
// (a bias [c,1,1,1] is stored as rank 1).
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

std::vector<NamedTensor> snapshot(const ParamStore& params);
// Names and shapes must match the store exactly.
void restore(ParamStore& params, const std::vector<NamedTensor>& tensors);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
void load_checkpoint(const std::filesystem::path& path, ParamStore& params);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace ppmn
