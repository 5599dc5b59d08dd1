#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cxr/layers.hpp"

namespace cxr {

// On-disk layout (all integers little-endian):
//   "CXRC" | u16 version | u32 config length | config bytes (UTF-8 key=value)
//   then until EOF, one record per parameter:
//   u32 name length | name | u32 rank | rank x u32 dims | f32 payload
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct ParamRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config;
  std::vector<ParamRecord> params;

  const ParamRecord* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError naming the offending record ("header" for the preamble).
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

template <typename T>
std::vector<ParamRecord> snapshot(const ParamList<T>& params);

// Copies every parameter whose name starts with `prefix` from the checkpoint.
// Missing names or shape mismatches throw FormatError. Returns the number of
// tensors loaded.
template <typename T>
std::size_t load_params(const Checkpoint& ckpt, const ParamList<T>& params, const std::string& prefix = "");

}  // namespace cxr
