#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathfinder/params.hpp"

namespace pathfinder {

// Flat named-tensor archive, readable from any backend:
//   magic "PFTENSR1"
//   u32 meta_len, meta_len bytes of UTF-8 JSON metadata
//   u32 tensor_count, then per tensor:
//     u32 name_len, name bytes
//     u32 ndim, ndim x u32 dims
//     row-major float32 data
// All integers and floats little-endian.
namespace ckpt {

constexpr char kMagic[8] = {'P', 'F', 'T', 'E', 'N', 'S', 'R', '1'};

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void write_f32(std::ostream& os, const double* src, std::size_t n) {
  std::vector<float> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(src[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
}

}  // namespace ckpt

inline void write_checkpoint(const std::filesystem::path& path, const ParamStore& ps,
                             const nlohmann::json& meta) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "write_checkpoint: cannot open ", path.string());
  os.write(ckpt::kMagic, 8);
  const std::string m = meta.dump();
  ckpt::write_u32(os, static_cast<std::uint32_t>(m.size()));
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  const auto names = ps.names();
  ckpt::write_u32(os, static_cast<std::uint32_t>(names.size()));
  for (const auto& name : names) {
    const Tensor& t = ps.get(name);
    ckpt::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    ckpt::write_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) ckpt::write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    ckpt::write_f32(os, t.data(), t.size());
  }
  require(os.good(), "write_checkpoint: write failed for ", path.string());
}

// Loads tensors into an existing store; every archived name must exist with
// a matching shape (the model defines the structure, the archive the values).
inline nlohmann::json read_checkpoint(const std::filesystem::path& path, ParamStore& ps) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "read_checkpoint: cannot open ", path.string());
  char magic[8];
  is.read(magic, 8);
  require(is.good() && std::equal(magic, magic + 8, ckpt::kMagic),
          "read_checkpoint: bad magic in ", path.string());
  const std::uint32_t meta_len = ckpt::read_u32(is);
  std::string meta_str(meta_len, '\0');
  is.read(meta_str.data(), meta_len);
  nlohmann::json meta;
  if (meta_len > 0) meta = nlohmann::json::parse(meta_str);
  const std::uint32_t count = ckpt::read_u32(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = ckpt::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t ndim = ckpt::read_u32(is);
    std::vector<int> shape(ndim);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      shape[i] = static_cast<int>(ckpt::read_u32(is));
      n *= static_cast<std::size_t>(shape[i]);
    }
    std::vector<float> buf(n);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    require(is.good(), "read_checkpoint: truncated archive ", path.string());
    require(ps.has(name), "read_checkpoint: archive tensor ", name,
            " not present in this model");
    Tensor& t = ps.get(name);
    require(t.shape() == shape, "read_checkpoint: shape mismatch for ", name);
    double* dst = t.mut();
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(buf[i]);
  }
  return meta;
}

inline nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "read_checkpoint_meta: cannot open ", path.string());
  char magic[8];
  is.read(magic, 8);
  require(is.good() && std::equal(magic, magic + 8, ckpt::kMagic),
          "read_checkpoint_meta: bad magic in ", path.string());
  const std::uint32_t meta_len = ckpt::read_u32(is);
  std::string meta_str(meta_len, '\0');
  is.read(meta_str.data(), meta_len);
  require(is.good(), "read_checkpoint_meta: truncated archive");
  return meta_len > 0 ? nlohmann::json::parse(meta_str) : nlohmann::json{};
}

}  // namespace pathfinder
