#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "efficientad/tensor.hpp"

namespace ead {

// EAD1 container: little-endian named float tensors.
//
//   "EAD1"                       4 bytes magic
//   u32 version                  currently 1
//   u32 role length, role bytes  UTF-8, e.g. "features", "map", "checkpoint"
//   u32 record count
//   per record:
//     u32 name length, name bytes
//     u32 ndim, u32 dims[ndim]
//     f32 payload[product(dims)]
inline constexpr std::uint32_t kEad1Version = 1;

struct Ead1Record {
  std::string name;
  Tensor tensor;
};

struct Ead1File {
  std::string role;
  std::vector<Ead1Record> records;

  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_ead1(const Ead1File& file);
Ead1File decode_ead1(std::span<const std::uint8_t> bytes);

// Writes to a temporary sibling and renames it into place.
void write_ead1(const std::string& path, const Ead1File& file);
Ead1File read_ead1(const std::string& path);

// Feature files: role "features", single record "features", C x H x W.
void write_features(const std::string& path, const Tensor& features);
Tensor read_features(const std::string& path, std::int64_t channels = 384,
                     std::int64_t size = 64);

}  // namespace ead
