#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cvlnm/attention.hpp"
#include "cvlnm/tensor.hpp"

namespace cvlnm {

/// One commonsense fact: subject --predicate--> object, with a salience
/// weight used to rank facts when the bank is capped.
struct TripletRecord {
  std::string subject;
  std::string predicate;
  std::string object;
  Scalar weight = 0.0;
};

/// Reads a tab-separated file `subject\tpredicate\tobject\tweight`, skipping
/// blank lines and lines starting with '#'. Records are sorted by weight
/// descending (ties broken lexicographically by subject, predicate, object)
/// and truncated to at most `max_records`. Malformed lines raise IoError with
/// the 1-based line number.
std::vector<TripletRecord> load_triplets(const std::filesystem::path& file,
                                         std::size_t max_records);

struct ReasonConfig {
  std::size_t embed_dim = 16;   // d_e, per-word embedding width
  std::size_t memory_dim = 32;  // d_m
  std::size_t fused_dim = 128;  // 4·d_v, query width
};

/// Memory-backed reading head. The memory is built from per-triplet word
/// embeddings (rows of [e_s, e_p, e_o]) so the embeddings train end to end;
/// reading is a softmax address over the memory rows.
struct ReasonModule {
  FcLayer fc;  // d_m <- 3·d_e
  Tensor wv;   // d_m×fused_dim
  ReasonConfig cfg;

  ReasonModule() = default;
  ReasonModule(const ReasonConfig& cfg, Rng& rng);

  /// triplet_embeds is K×3·d_e; returns the memory matrix M, K×d_m with one
  /// row per fact: m_k = ReLU(FC(row_k)).
  Tensor build_memory(const Tensor& triplet_embeds) const;

  struct ReadResult {
    Tensor read;  // d_m
    Tensor beta;  // K, sums to 1
  };
  /// beta = softmax(M·(W_v·fused)), read = Mᵀ·beta.
  ReadResult attend(const Tensor& memory, const Tensor& fused) const;

  void collect(NamedParams& out) const;
};

}  // namespace cvlnm
