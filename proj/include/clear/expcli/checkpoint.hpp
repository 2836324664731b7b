#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clear/numerics/param_set.hpp"

namespace clear::expcli {

/// Layout: "CLR1", u32 version, u32 record count, then records of
/// (u32 name length, name, u32 rank, u32 extents..., f32 payload), all little
/// endian. Records hold parameters under their own names, batch-norm buffers
/// under bn.mean/ and bn.var/, Adam state under adam.m/, adam.v/, adam.step/,
/// and run metadata under meta.config (UTF-8 bytes) and meta.rng (16-bit limbs
/// of seed and step cursor). Every stored value is exact in f32 except the
/// tensors themselves, which are rounded once.
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string config;       // resolved configuration echo
  std::uint64_t seed = 0;
  std::uint64_t cursor = 0;  // optimizer steps taken; batch seeds continue from here
};

std::vector<std::uint8_t> encode_checkpoint(const nn::ParamSet& ps, const CheckpointMeta& meta);
/// Fills `ps`: existing entries must match in shape and all of them must be
/// present in the checkpoint; absent entries are created.
CheckpointMeta decode_checkpoint(const std::vector<std::uint8_t>& bytes, nn::ParamSet& ps);

void save_checkpoint(const std::filesystem::path& path, const nn::ParamSet& ps, const CheckpointMeta& meta);
CheckpointMeta load_checkpoint(const std::filesystem::path& path, nn::ParamSet& ps);

}  // namespace clear::expcli
