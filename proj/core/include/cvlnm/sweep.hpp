#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cvlnm/data.hpp"
#include "cvlnm/model.hpp"
#include "cvlnm/reason.hpp"
#include "cvlnm/training.hpp"

namespace cvlnm {

/// One training configuration in the caption-budget sweep.
struct SweepVariant {
  std::string name;
  Scalar lambda = 1.0;       // syntax-loss weight
  bool object_only = false;  // fusion fixed to OBJECT, memory off, lambda 0
  bool no_reason = false;
};

struct SweepConfig {
  std::vector<SweepVariant> variants;
  std::vector<std::size_t> x_values;   // captions per image during training
  std::vector<std::uint64_t> seeds;
  TrainConfig train;                   // schedule template; seed overridden per cell
  ModelConfig model;                   // dims template; vocab/init seed overridden
  std::vector<TripletRecord> triplets;
  std::size_t vocab_min_count = 1;
  std::filesystem::path cache_dir;     // empty disables caching
  std::size_t threads = 1;             // concurrent cells
};

struct SweepCell {
  std::string variant;
  std::size_t x = 0;
  std::uint64_t seed = 0;
  Scalar cider = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepAggregate {
  Scalar mean_cider = 0.0;
  Scalar stddev_cider = 0.0;
  Scalar mean_deterioration = 0.0;  // score at max X minus score at this X
  Scalar stddev_deterioration = 0.0;
  std::size_t completed = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  // (variant, X) -> aggregate over seeds
  std::map<std::pair<std::string, std::size_t>, SweepAggregate> aggregates;
};

/// Trains every (variant, X, seed) cell on the corpus train split and scores
/// greedy-decoded captions on the test split. Completed cells are cached on
/// disk by (configuration hash, X, seed) and reused; per-cell failures are
/// recorded and do not stop the sweep.
SweepResult run_sweep(const Corpus& corpus, const SweepConfig& cfg);

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& file);
void write_sweep_json(const SweepResult& result, const std::filesystem::path& file);

/// Stable hash of everything that affects a cell's outcome except X and seed.
std::uint64_t sweep_config_hash(const SweepConfig& cfg, const SweepVariant& variant);

}  // namespace cvlnm
