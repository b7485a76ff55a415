#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scriptseq/adam.hpp"
#include "scriptseq/model.hpp"

namespace scriptseq {

// Binary layout, all integers little-endian:
//   "SSQCKPT\0"  magic
//   u32          format version (1)
//   u64 + bytes  JSON header {"model": ModelConfig, "optimizer": {...}|null, "meta": {...}}
//   u32          tensor count
//   per tensor:  u32 name length, name, u8 dtype (1 = f32, 2 = f64),
//                u32 rank, u64 dims[rank], row-major payload
//   u64          FNV-1a hash of every preceding byte
// Optimizer moments are stored as tensors "adam.m.<name>" / "adam.v.<name>".
template <typename T>
struct Checkpoint {
  ModelConfig config;
  ModelParams<T> params;
  std::optional<AdamState<T>> optimizer;
  nlohmann::json meta = nlohmann::json::object();
};

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint<T>& ckpt);

// Throws CorruptCheckpoint with the byte offset of the first bad field.
template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

}  // namespace scriptseq
