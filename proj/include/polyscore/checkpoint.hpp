#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "PSCK" u32 version
//   model config: u64 layers heads hidden ffn_hidden vocab_size max_positions, f64 dropout_p
//   head: u8 architecture, u8 reduction kind, u64 reduction m, u8 poly variant, u64 poly m
//   u64 record count, then per record sorted by name:
//     u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[numel]
//   u8 optimizer present; when 1:
//     u8 kind, u64 step, f64 lr_scale, f64 best_valid, u64 bad_evals,
//     first-moment records, second-moment records (same record encoding)
//
// The model fingerprint hashes everything before the optimizer flag, so
// optimizer state never invalidates candidate caches.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "polyscore/model.hpp"
#include "polyscore/optimizer.hpp"

namespace polyscore {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::optional<OptimizerState> optimizer;
};

std::string serialize_checkpoint(const Model& model, const OptimizerState* optimizer = nullptr);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t model_fingerprint(const Model& model);

}  // namespace polyscore
