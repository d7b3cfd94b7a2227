#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "transcp/params.hpp"

// Checkpoint archive: hierarchical parameter names mapped to shape plus a
// little-endian float32 payload. One format for every module; the prototype
// bank has its own file (see prototype.hpp).

namespace transcp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace ckpt_detail {

constexpr char kMagic[4] = {'T', 'C', 'P', 'K'};
constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is, const std::string& path,
                         const char* what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  TCP_CHECK(is.good(), path, ": truncated while reading ", what, " at offset ",
            std::streamoff(is.tellg()) < 0 ? -1 : std::streamoff(is.tellg()));
  return v;
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const ParamStore<T>& ps, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  TCP_CHECK(os.good(), "cannot open checkpoint for writing: ", path);
  os.write(ckpt_detail::kMagic, 4);
  ckpt_detail::write_u32(os, ckpt_detail::kVersion);
  std::vector<int> ids(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) ids[i] = int(i);
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    return ps.entry(a).name < ps.entry(b).name;
  });
  ckpt_detail::write_u32(os, uint32_t(ids.size()));
  for (int id : ids) {
    const auto& e = ps.entry(id);
    ckpt_detail::write_u32(os, uint32_t(e.name.size()));
    os.write(e.name.data(), std::streamsize(e.name.size()));
    ckpt_detail::write_u32(os, uint32_t(e.value.ndim()));
    for (size_t d = 0; d < e.value.ndim(); ++d)
      ckpt_detail::write_u32(os, uint32_t(e.value.size(d)));
    std::vector<float> payload(e.value.numel());
    for (size_t i = 0; i < payload.size(); ++i)
      payload[i] = float(e.value[i]);
    os.write(reinterpret_cast<const char*>(payload.data()),
             std::streamsize(payload.size() * sizeof(float)));
  }
  TCP_CHECK(os.good(), "failed writing checkpoint: ", path);
}

// Loads into an existing store; every archive entry must match a registered
// parameter by name and shape, and every parameter must be present.
template <typename T>
void load_checkpoint(ParamStore<T>& ps, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  TCP_CHECK(is.good(), "cannot open checkpoint: ", path);
  char magic[4] = {};
  is.read(magic, 4);
  TCP_CHECK(is.good() && std::equal(magic, magic + 4, ckpt_detail::kMagic),
            path, ": bad checkpoint magic at offset 0");
  uint32_t version = ckpt_detail::read_u32(is, path, "version");
  TCP_CHECK(version == ckpt_detail::kVersion, path,
            ": unsupported checkpoint version ", version, " (expected ",
            ckpt_detail::kVersion, ")");
  uint32_t count = ckpt_detail::read_u32(is, path, "entry count");
  TCP_CHECK(count == ps.size(), path, ": archive holds ", count,
            " parameters, model expects ", ps.size());
  for (uint32_t e = 0; e < count; ++e) {
    uint32_t name_len = ckpt_detail::read_u32(is, path, "name length");
    TCP_CHECK(name_len > 0 && name_len < 4096, path,
              ": implausible name length ", name_len, " at offset ",
              std::streamoff(is.tellg()) - 4);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    TCP_CHECK(is.good(), path, ": truncated parameter name at offset ",
              std::streamoff(is.tellg()));
    uint32_t ndim = ckpt_detail::read_u32(is, path, "rank");
    std::vector<size_t> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d)
      shape[d] = ckpt_detail::read_u32(is, path, "dimension");
    int id = ps.find(name);
    TCP_CHECK(id >= 0, path, ": archive parameter '", name,
              "' not present in model");
    Tensor<T>& dst = ps.value(id);
    TCP_CHECK(dst.shape() == shape, path, ": parameter '", name,
              "' has shape ", shape_str(shape), " in archive but ",
              shape_str(dst.shape()), " in model");
    std::vector<float> payload(dst.numel());
    is.read(reinterpret_cast<char*>(payload.data()),
            std::streamsize(payload.size() * sizeof(float)));
    TCP_CHECK(is.good(), path, ": truncated payload for '", name,
              "' at offset ", std::streamoff(is.tellg()));
    for (size_t i = 0; i < payload.size(); ++i) dst[i] = T(payload[i]);
  }
}

}  // namespace transcp
