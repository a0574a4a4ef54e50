#pragma once

#include "cvlnm/attention.hpp"
#include "cvlnm/tensor.hpp"

namespace cvlnm {

/// Per-image region features: one matrix per branch, rows are regions.
struct FeatureSet {
  Tensor object_features;     // N×d_r
  Tensor attribute_features;  // N×d_r

  std::size_t regions() const { return object_features.rows(); }
  std::size_t feature_dim() const { return object_features.cols(); }
  void validate() const;
};

/// Encoder outputs: three feature sets sharing N and d_v.
struct ModuleFeatures {
  Tensor object;     // N×d_v
  Tensor attribute;  // N×d_v
  Tensor relation;   // N×d_v
};

struct EncoderConfig {
  std::size_t feature_dim = 64;   // d_r
  std::size_t module_dim = 32;    // d_v
  std::size_t hidden_dim = 64;    // d_h (function-module input)
  std::size_t relation_heads = 4; // k
  Scalar leaky_slope = 0.01;
};

/// Rowwise FC + LeakyReLU over the object-branch features.
struct ObjectModule {
  FcLayer fc;
  Scalar slope = 0.01;
  ObjectModule() = default;
  ObjectModule(const EncoderConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& region_features) const;
};

/// Same structure as ObjectModule with independent parameters, applied to the
/// attribute-branch features.
struct AttributeModule {
  FcLayer fc;
  Scalar slope = 0.01;
  AttributeModule() = default;
  AttributeModule(const EncoderConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& region_features) const;
};

/// Multi-head self-attention over regions followed by a two-layer MLP
/// (FC-ReLU-FC) and LeakyReLU. No residual connections or layer norm.
struct RelationModule {
  MultiHeadSelfAttention attention;
  FcLayer mlp_hidden;  // d_r -> d_r
  FcLayer mlp_out;     // d_r -> d_v
  Scalar slope = 0.01;
  RelationModule() = default;
  RelationModule(const EncoderConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& region_features) const;
};

/// Linguistic module: FC + LeakyReLU over the second-LSTM hidden state.
struct FunctionModule {
  FcLayer fc;
  Scalar slope = 0.01;
  FunctionModule() = default;
  FunctionModule(const EncoderConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& hidden) const;
};

struct Encoder {
  ObjectModule object;
  AttributeModule attribute;
  RelationModule relation;
  FunctionModule function;

  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng);
  ModuleFeatures encode(const FeatureSet& features) const;
  void collect(NamedParams& out) const;
};

}  // namespace cvlnm
