#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cvlnm/tensor.hpp"

namespace cvlnm {

/// Ordered list of named parameters; the order is the serialization and
/// optimizer order, so it must be deterministic.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Fully-connected layer y = W·x + b with W stored out×in.
struct FcLayer {
  Tensor weight;
  Tensor bias;

  FcLayer() = default;
  FcLayer(std::size_t out, std::size_t in, Rng& rng);

  Tensor forward(const Tensor& x) const;       // 1-D in, 1-D out
  Tensor forward_rows(const Tensor& x) const;  // 2-D in (rows are samples)
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Scaled dot-product multi-head self-attention over the rows of a matrix,
/// with a final concat projection. Per-head scores are divided by
/// sqrt(head_dim).
struct MultiHeadSelfAttention {
  struct Head {
    Tensor wq, wk, wv;  // dim×head_dim each
  };
  std::vector<Head> heads;
  Tensor out_proj;  // dim×dim
  std::size_t dim = 0;
  std::size_t head_dim = 0;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t dim, std::size_t num_heads, Rng& rng,
                         const std::string& what);

  Tensor forward(const Tensor& x) const;  // N×dim -> N×dim
  /// Per-head attention matrices of the last structure (recomputed; used by
  /// tests and traces).
  std::vector<Tensor> attention_matrices(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Sinusoidal positional encoding of width `dim` for position `pos`.
Tensor positional_encoding(std::size_t pos, std::size_t dim);

}  // namespace cvlnm
