#include "cvlnm/encoder.hpp"

#include <cmath>

namespace cvlnm {

void FeatureSet::validate() const {
  if (!object_features.defined() || !attribute_features.defined())
    throw ShapeError("feature set: missing branch");
  if (object_features.ndim() != 2 || attribute_features.ndim() != 2)
    throw ShapeError("feature set: branches must be 2-D");
  if (object_features.rows() == 0)
    throw ShapeError("feature set: at least one region required");
  if (object_features.rows() != attribute_features.rows() ||
      object_features.cols() != attribute_features.cols())
    throw ShapeError("feature set: branch shapes differ, " +
                     shape_str(object_features.shape()) + " vs " +
                     shape_str(attribute_features.shape()));
  for (Scalar v : object_features.data())
    if (!std::isfinite(v)) throw NumericsError("feature set: non-finite object feature");
  for (Scalar v : attribute_features.data())
    if (!std::isfinite(v)) throw NumericsError("feature set: non-finite attribute feature");
}

ObjectModule::ObjectModule(const EncoderConfig& cfg, Rng& rng)
    : fc(cfg.module_dim, cfg.feature_dim, rng), slope(cfg.leaky_slope) {}

Tensor ObjectModule::forward(const Tensor& region_features) const {
  return leaky_relu(fc.forward_rows(region_features), slope);
}

AttributeModule::AttributeModule(const EncoderConfig& cfg, Rng& rng)
    : fc(cfg.module_dim, cfg.feature_dim, rng), slope(cfg.leaky_slope) {}

Tensor AttributeModule::forward(const Tensor& region_features) const {
  return leaky_relu(fc.forward_rows(region_features), slope);
}

RelationModule::RelationModule(const EncoderConfig& cfg, Rng& rng)
    : attention(cfg.feature_dim, cfg.relation_heads, rng, "relation module"),
      mlp_hidden(cfg.feature_dim, cfg.feature_dim, rng),
      mlp_out(cfg.module_dim, cfg.feature_dim, rng),
      slope(cfg.leaky_slope) {}

Tensor RelationModule::forward(const Tensor& region_features) const {
  Tensor mixed = attention.forward(region_features);
  Tensor hidden = relu(mlp_hidden.forward_rows(mixed));
  return leaky_relu(mlp_out.forward_rows(hidden), slope);
}

FunctionModule::FunctionModule(const EncoderConfig& cfg, Rng& rng)
    : fc(cfg.module_dim, cfg.hidden_dim, rng), slope(cfg.leaky_slope) {}

Tensor FunctionModule::forward(const Tensor& hidden) const {
  return leaky_relu(fc.forward(hidden), slope);
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng)
    : object(cfg, rng), attribute(cfg, rng), relation(cfg, rng), function(cfg, rng) {}

ModuleFeatures Encoder::encode(const FeatureSet& features) const {
  features.validate();
  return ModuleFeatures{object.forward(features.object_features),
                        attribute.forward(features.attribute_features),
                        relation.forward(features.object_features)};
}

void Encoder::collect(NamedParams& out) const {
  object.fc.collect("encoder.object.fc", out);
  attribute.fc.collect("encoder.attribute.fc", out);
  relation.attention.collect("encoder.relation.attention", out);
  relation.mlp_hidden.collect("encoder.relation.mlp_hidden", out);
  relation.mlp_out.collect("encoder.relation.mlp_out", out);
  function.fc.collect("encoder.function.fc", out);
}

}  // namespace cvlnm
