#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xmdpt/nn.hpp"
#include "xmdpt/tensor.hpp"

// Binary container for named tensor tables. Layout, all little-endian:
//   magic "XMDPTCK1" (8 bytes)
//   u32 version
//   u64 config length, config text bytes
//   u64 tensor count, then per tensor:
//     u64 name length, name bytes
//     u32 rank, u64 dims[rank]
//     f32 data[product(dims)]
// The same container stores model checkpoints, codec weights, and featurizer
// weights; the config text distinguishes them.

namespace xmdpt {

inline constexpr char kTensorFileMagic[8] = {'X', 'M', 'D', 'P', 'T', 'C', 'K', '1'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

struct TensorFile {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

void save_tensor_file(const std::string& path, const std::string& config_text,
                      const ParamMap<float>& params);
TensorFile load_tensor_file(const std::string& path);

// Copies loaded values into an existing parameter map, matching by name.
// Throws if a name is missing or a shape differs.
void restore_params(const TensorFile& file, ParamMap<float>& params);

}  // namespace xmdpt
