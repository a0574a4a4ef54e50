#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "cvlnm/data.hpp"
#include "cvlnm/model.hpp"
#include "cvlnm/optim.hpp"

namespace cvlnm {

/// Single-file format: magic "CVLC", u32 version, u64 header length, JSON
/// header (hyperparameters, vocabulary, memory triplets, tensor directory,
/// optimizer metadata, RNG state), then the tensor payloads as raw
/// little-endian f64 in directory order. Saving the result of a load
/// reproduces the file byte for byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& file, const Model& model,
                     const Vocabulary& vocab, const Adam* optimizer = nullptr,
                     const std::string& rng_state = {});

struct LoadedCheckpoint {
  Model model;
  Vocabulary vocab;
  std::optional<Adam::State> optimizer;
  std::string rng_state;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file);

/// Throws ConfigError naming every differing hyperparameter. Used when
/// resuming or evaluating against an explicit configuration; pass force to
/// downgrade the mismatch to a stderr warning.
void require_matching_config(const ModelConfig& expected, const ModelConfig& found,
                             bool force = false);

}  // namespace cvlnm
