#include "cvlnm/attention.hpp"

#include <cmath>

namespace cvlnm {

FcLayer::FcLayer(std::size_t out, std::size_t in, Rng& rng)
    : weight(init_fanin_uniform({out, in}, in, rng)),
      bias(Tensor::zeros({out}, true)) {}

Tensor FcLayer::forward(const Tensor& x) const {
  return add(matvec(weight, x), bias);
}

Tensor FcLayer::forward_rows(const Tensor& x) const {
  return add(matmul(x, transpose(weight)), bias);
}

void FcLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(std::size_t dim,
                                               std::size_t num_heads, Rng& rng,
                                               const std::string& what)
    : dim(dim) {
  if (num_heads == 0 || dim % num_heads != 0)
    throw ConfigError(what + ": head count " + std::to_string(num_heads) +
                      " does not divide feature dim " + std::to_string(dim));
  head_dim = dim / num_heads;
  heads.reserve(num_heads);
  for (std::size_t i = 0; i < num_heads; ++i)
    heads.push_back(Head{init_fanin_uniform({dim, head_dim}, dim, rng),
                         init_fanin_uniform({dim, head_dim}, dim, rng),
                         init_fanin_uniform({dim, head_dim}, dim, rng)});
  out_proj = init_fanin_uniform({dim, dim}, dim, rng);
}

Tensor MultiHeadSelfAttention::forward(const Tensor& x) const {
  Scalar inv_scale = 1.0 / std::sqrt(static_cast<Scalar>(head_dim));
  std::vector<Tensor> outputs;
  outputs.reserve(heads.size());
  for (const auto& h : heads) {
    Tensor q = matmul(x, h.wq);
    Tensor k = matmul(x, h.wk);
    Tensor v = matmul(x, h.wv);
    Tensor scores = scale(matmul(q, transpose(k)), inv_scale);
    outputs.push_back(matmul(softmax_rows(scores), v));
  }
  return matmul(hconcat(outputs), out_proj);
}

std::vector<Tensor> MultiHeadSelfAttention::attention_matrices(const Tensor& x) const {
  Scalar inv_scale = 1.0 / std::sqrt(static_cast<Scalar>(head_dim));
  std::vector<Tensor> mats;
  mats.reserve(heads.size());
  for (const auto& h : heads) {
    Tensor q = matmul(x, h.wq);
    Tensor k = matmul(x, h.wk);
    mats.push_back(softmax_rows(scale(matmul(q, transpose(k)), inv_scale)));
  }
  return mats;
}

void MultiHeadSelfAttention::collect(const std::string& prefix, NamedParams& out) const {
  for (std::size_t i = 0; i < heads.size(); ++i) {
    std::string hp = prefix + ".head" + std::to_string(i);
    out.emplace_back(hp + ".wq", heads[i].wq);
    out.emplace_back(hp + ".wk", heads[i].wk);
    out.emplace_back(hp + ".wv", heads[i].wv);
  }
  out.emplace_back(prefix + ".out_proj", out_proj);
}

Tensor positional_encoding(std::size_t pos, std::size_t dim) {
  std::vector<Scalar> pe(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    Scalar exponent = static_cast<Scalar>(2 * (i / 2)) / static_cast<Scalar>(dim);
    Scalar angle = static_cast<Scalar>(pos) / std::pow(10000.0, exponent);
    pe[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return Tensor::vector(std::move(pe));
}

}  // namespace cvlnm
