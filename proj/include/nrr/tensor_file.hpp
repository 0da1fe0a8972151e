#pragma once

// Named-tensor container used for checkpoints and extractor weights.
//
//   "NRRT" | u32 version | u32 meta bytes | meta (JSON text)
//   u32 tensor count, then per tensor:
//   u32 name bytes | name | u32 rank | u64 dims[rank] | float32 values
//
// All integers and floats little-endian. Tensors are written in name order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "nrr/errors.hpp"

namespace nrr {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  bool operator==(const Tensor&) const = default;
};

struct TensorFile {
  static constexpr std::uint32_t kVersion = 1;

  std::string meta;  // free-form JSON text
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("tensor '" + name + "' missing from file");
    return it->second;
  }
  bool operator==(const TensorFile&) const = default;
};

namespace detail_tf {

template <class U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& in, const std::filesystem::path& p) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated tensor file: " + p.string());
  return v;
}

inline std::string get_string(std::istream& in, std::uint32_t n, const std::filesystem::path& p) {
  if (n > (1u << 26)) throw IoError("corrupt tensor file (string length): " + p.string());
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("truncated tensor file: " + p.string());
  return s;
}

}  // namespace detail_tf

inline void save_tensor_file(const std::filesystem::path& path, const TensorFile& f) {
  using detail_tf::put;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write("NRRT", 4);
    put<std::uint32_t>(out, TensorFile::kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.meta.size()));
    out.write(f.meta.data(), static_cast<std::streamsize>(f.meta.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.tensors.size()));
    for (const auto& [name, t] : f.tensors) {
      if (t.element_count() != t.values.size()) throw ValidationError("tensor '" + name + "' dims do not match values");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
      for (auto d : t.dims) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline TensorFile load_tensor_file(const std::filesystem::path& path) {
  using detail_tf::get;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "NRRT", 4) != 0) throw IoError("not a tensor file: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != TensorFile::kVersion)
    throw IoError("unsupported tensor file version " + std::to_string(version) + ": " + path.string());
  TensorFile f;
  f.meta = detail_tf::get_string(in, get<std::uint32_t>(in, path), path);
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = detail_tf::get_string(in, get<std::uint32_t>(in, path), path);
    Tensor t;
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) throw IoError("corrupt tensor file (rank): " + path.string());
    for (std::uint32_t k = 0; k < rank; ++k) t.dims.push_back(get<std::uint64_t>(in, path));
    const auto n = t.element_count();
    if (n > (1ull << 32)) throw IoError("corrupt tensor file (size): " + path.string());
    t.values.resize(n);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw IoError("truncated tensor file: " + path.string());
    f.tensors.emplace(name, std::move(t));
  }
  return f;
}

}  // namespace nrr
