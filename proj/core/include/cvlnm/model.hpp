#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvlnm/controller.hpp"
#include "cvlnm/data.hpp"
#include "cvlnm/decoder.hpp"
#include "cvlnm/encoder.hpp"
#include "cvlnm/reason.hpp"
#include "cvlnm/tensor.hpp"

namespace cvlnm {

enum class FusionMode { Soft, Hard };

struct ModelConfig {
  std::size_t feature_dim = 64;    // d_r
  std::size_t module_dim = 32;     // d_v
  std::size_t relation_heads = 4;  // k
  std::size_t hidden_dim = 64;     // d_h
  std::size_t attn_dim = 32;       // d_a
  std::size_t layout_dim = 32;     // d_z
  std::size_t fuse_heads = 4;      // j
  std::size_t embed_dim = 16;      // d_e
  std::size_t memory_dim = 32;     // d_m
  std::size_t vocab_size = 0;
  std::size_t max_len = 16;

  FusionMode fusion = FusionMode::Soft;
  bool no_reason = false;
  int cut_module = -1;    // fusion weight zeroed and renormalized away
  int fixed_module = -1;  // fusion forced to this module's one-hot
  bool positional_encoding = true;
  bool stop_layout_gradient = false;
  Scalar gumbel_temperature = 1.0;
  Scalar leaky_slope = 0.01;
  std::uint64_t init_seed = 42;

  void validate() const;
};

/// Per-image state computed once and shared across decode steps.
struct ImageContext {
  ModuleFeatures features;
  Tensor memory;  // K×d_m; empty tensor when the memory is disabled
  bool has_memory() const { return memory.defined() && memory.rows() > 0; }
};

/// Everything a decode step produced, kept for losses and diagnostics.
struct StepTrace {
  Tensor probs;         // vocab simplex
  Tensor fuse_weights;  // the 4-simplex (or one-hot) actually used
  Tensor soft_weights;  // underlying softmax output
  Tensor beta;          // memory address weights; undefined without memory
  Tensor object_attention;     // per-region weights of each visual attention
  Tensor attribute_attention;
  Tensor relation_attention;
};

/// Mutable per-sequence decoding state.
struct SequenceState {
  LstmCell::State lstm1;
  LstmCell::State lstm2;
  LayoutHistory layout;
  std::size_t t = 0;
};

struct Model {
  ModelConfig cfg;
  Tensor embeddings;  // vocab×d_e
  Encoder encoder;
  ModuleController controller;
  ReasonModule reason;
  LstmCell lstm1;  // input d_e + d_h
  LstmCell lstm2;  // input 4·d_v + d_m + d_h
  FcLayer output_fc;  // vocab <- d_h
  std::vector<std::array<int, 3>> memory_tokens;  // triplets as vocab ids

  Model() = default;
  explicit Model(const ModelConfig& cfg);

  /// Installs the fact bank; tokens must already be vocab indices.
  void set_memory_tokens(std::vector<std::array<int, 3>> triplets);

  /// Encodes the image and (re)builds the memory matrix in-graph, so the
  /// triplet embeddings receive gradients when used during training.
  ImageContext encode(const FeatureSet& features) const;

  SequenceState initial_state() const;

  /// One decode step consuming `input_token` (the previous word, <bos> at
  /// t=0). `sample_rng` enables stochastic hard selection; with hard fusion
  /// and no rng the selection is argmax.
  StepTrace decode_step(const ImageContext& ctx, SequenceState& state,
                        int input_token, Rng* sample_rng = nullptr) const;

  /// Teacher forcing over a gold caption (no <bos>/<eos> in `tokens`);
  /// produces tokens.size()+1 traces, the last predicting <eos>.
  std::vector<StepTrace> teacher_forced(const ImageContext& ctx,
                                        const std::vector<int>& tokens,
                                        Rng* sample_rng = nullptr) const;

  /// Argmax decoding under NoGradGuard; stops at <eos> or cfg.max_len.
  /// The returned tokens never include <bos>/<eos>.
  std::vector<int> greedy_decode(const ImageContext& ctx) const;

  struct Sampled {
    std::vector<int> tokens;
    Tensor log_prob;  // graph-connected sum of chosen-token log-probs
  };
  /// Multinomial sampling from the step distributions (graph kept for the
  /// policy-gradient estimator).
  Sampled sample_decode(const ImageContext& ctx, Rng& rng) const;

  /// Length-synchronous beam search; finished hypotheses compete with open
  /// ones on total log-probability (no length normalization unless asked).
  std::vector<int> beam_search(const ImageContext& ctx, std::size_t beam_width,
                               bool length_normalize = false) const;

  NamedParams parameters() const;
};

}  // namespace cvlnm
