#include "xmdpt/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

namespace xmdpt {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

std::string get_string(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1ull << 32)) throw std::runtime_error("tensor file: oversized string");
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  return s;
}

}  // namespace

void save_tensor_file(const std::string& path, const std::string& config_text,
                      const ParamMap<float>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kTensorFileMagic, sizeof(kTensorFileMagic));
  put_u32(os, kTensorFileVersion);
  put_string(os, config_text);
  put_u64(os, params.items.size());
  for (const auto& [name, t] : params.items) {
    put_string(os, name);
    put_u32(os, std::uint32_t(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) put_u64(os, t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(t.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

TensorFile load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kTensorFileMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a tensor file: " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kTensorFileVersion)
    throw std::runtime_error("unsupported tensor file version " +
                             std::to_string(version) + " in " + path);
  TensorFile tf;
  tf.config_text = get_string(is);
  const std::uint64_t count = get_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is);
    const std::uint32_t rank = get_u32(is);
    if (rank > 8) throw std::runtime_error("tensor file: absurd rank");
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = std::size_t(get_u64(is));
      total *= d;
    }
    std::vector<float> data(total);
    is.read(reinterpret_cast<char*>(data.data()),
            std::streamsize(total * sizeof(float)));
    if (!is) throw std::runtime_error("truncated tensor file: " + path);
    tf.tensors.emplace_back(std::move(name),
                            Tensor<float>::from(std::move(shape), std::move(data)));
  }
  return tf;
}

void restore_params(const TensorFile& file, ParamMap<float>& params) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : file.tensors) by_name[name] = &t;
  for (auto& [name, t] : params.items) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("tensor file is missing parameter: " + name);
    if (it->second->shape() != t.shape())
      throw std::runtime_error("shape mismatch for " + name + ": file has " +
                               shape_str(it->second->shape()) + ", model has " +
                               shape_str(t.shape()));
    t.values() = it->second->values();
  }
}

}  // namespace xmdpt
