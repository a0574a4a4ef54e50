#pragma once

#include <optional>
#include <vector>

#include "cvlnm/attention.hpp"
#include "cvlnm/encoder.hpp"
#include "cvlnm/module_tag.hpp"
#include "cvlnm/tensor.hpp"

namespace cvlnm {

/// Additive attention producing a convex combination of the rows of V given
/// a query h: a_i = waᵀ tanh(Wv v_i + Wh h), α = softmax(a), out = Σ α_i v_i.
struct MsAtt {
  Tensor wv;  // d_a×d_v
  Tensor wh;  // d_a×d_h
  Tensor wa;  // d_a

  MsAtt() = default;
  MsAtt(std::size_t attn_dim, std::size_t value_dim, std::size_t query_dim, Rng& rng);

  struct Result {
    Tensor attended;  // d_v
    Tensor weights;   // N
  };
  Result forward(const Tensor& values, const Tensor& query) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// The per-step attended features consumed by soft fusion.
struct AttendedFeatures {
  Tensor object;     // d_v
  Tensor attribute;  // d_v
  Tensor relation;   // d_v
  Tensor function;   // d_v
  Tensor object_weights;     // N
  Tensor attribute_weights;  // N
  Tensor relation_weights;   // N
};

/// Module-collocation embeddings z_0..z_{t-1}, one per decoded step, start
/// token first. Owned per decoding sequence.
struct LayoutHistory {
  std::vector<Tensor> steps;
  std::size_t length() const { return steps.size(); }
};

struct ControllerConfig {
  std::size_t module_dim = 32;   // d_v
  std::size_t hidden_dim = 64;   // d_h
  std::size_t attn_dim = 32;     // d_a
  std::size_t layout_dim = 32;   // d_z
  std::size_t fuse_heads = 4;    // j
  bool positional_encoding = true;
  bool stop_layout_gradient = false;
  Scalar gumbel_temperature = 1.0;
};

/// Temperature-controlled relaxed one-hot sample over the categories of `w`
/// given explicit Gumbel noise. Forward is hard one-hot, backward flows
/// through the relaxed distribution.
Tensor gumbel_softmax_hard(const Tensor& probs, Scalar temperature,
                           const std::vector<Scalar>& noise);

/// Zeroes component `index` of a simplex vector and renormalizes the rest.
Tensor zero_and_renormalize(const Tensor& weights, std::size_t index);

struct ModuleController {
  MsAtt att_obj, att_attr, att_rela;
  FcLayer query_fc;                 // d_z <- 3·d_v + d_h
  MultiHeadSelfAttention layout_att;  // over Z, d_z
  struct FuseHead {
    Tensor wq, wk, wv;  // d_z×d_j
  };
  std::vector<FuseHead> fuse_heads;
  Tensor fuse_proj;   // d_z×d_z
  FcLayer weight_fc;  // 4 <- d_z
  Tensor label_embeddings;  // 4×d_z
  Tensor start_embedding;   // d_z
  ControllerConfig cfg;

  ModuleController() = default;
  ModuleController(const ControllerConfig& cfg, Rng& rng);

  /// Three independently parameterized additive attentions over the visual
  /// module outputs; the function feature comes from the function module.
  AttendedFeatures attend_all(const ModuleFeatures& features, const Tensor& h1,
                              const Tensor& function_feature) const;

  /// x = ReLU(FC([v_obj, v_attr, v_rela, h2])).
  Tensor build_query(const AttendedFeatures& att, const Tensor& h2) const;

  /// Self-attention over the stacked layout history (recomputed per step
  /// from the then-current prefix).
  Tensor layout_self_attention(const LayoutHistory& layout) const;

  struct FuseResult {
    Tensor weights;       // 4-simplex actually used for fusion (soft or hard)
    Tensor soft_weights;  // the underlying softmax output
    Tensor fused;         // 4·d_v
  };
  /// Cross-attention of the query over the attended layout, then fusion
  /// weights and the weighted concatenation of module features.
  FuseResult soft_fuse(const Tensor& layout_attended, const Tensor& query,
                       const AttendedFeatures& att) const;

  /// Straight-through Gumbel-Softmax hard selection over the soft weights.
  Tensor hard_select(const Tensor& soft_weights, Rng& rng) const;
  /// Deterministic hard selection (argmax one-hot), used at inference.
  Tensor hard_select_argmax(const Tensor& soft_weights) const;

  /// z_t = Σ_b w_b e_b (+ sinusoidal positional encoding at `pos` when
  /// enabled).
  Tensor module_embedding(const Tensor& weights, std::size_t pos) const;

  /// Start-of-layout embedding z_0 (position 0).
  Tensor start_token() const;

  void collect(NamedParams& out) const;
};

}  // namespace cvlnm
