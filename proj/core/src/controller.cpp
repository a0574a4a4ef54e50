#include "cvlnm/controller.hpp"

#include <cmath>

namespace cvlnm {

int parse_module_name(const std::string& name) {
  for (std::size_t i = 0; i < kModuleCount; ++i)
    if (name == kModuleNames[i]) return static_cast<int>(i);
  return -1;
}

MsAtt::MsAtt(std::size_t attn_dim, std::size_t value_dim, std::size_t query_dim,
             Rng& rng)
    : wv(init_fanin_uniform({attn_dim, value_dim}, value_dim, rng)),
      wh(init_fanin_uniform({attn_dim, query_dim}, query_dim, rng)),
      wa(init_fanin_uniform({attn_dim}, attn_dim, rng)) {}

MsAtt::Result MsAtt::forward(const Tensor& values, const Tensor& query) const {
  if (values.ndim() != 2 || values.rows() == 0)
    throw ShapeError("ms_att: expected non-empty 2-D value set, got " +
                     shape_str(values.shape()));
  // T = tanh(V Wvᵀ + (Wh h) broadcast over rows), a = T wa.
  Tensor keyed = matvec(wh, query);
  Tensor pre = tanh_t(add(matmul(values, transpose(wv)), keyed));
  Tensor logits = matvec(pre, wa);
  Tensor alpha = softmax(logits);
  Tensor attended = matvec(transpose(values), alpha);
  return Result{attended, alpha};
}

void MsAtt::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".wv", wv);
  out.emplace_back(prefix + ".wh", wh);
  out.emplace_back(prefix + ".wa", wa);
}

Tensor gumbel_softmax_hard(const Tensor& probs, Scalar temperature,
                           const std::vector<Scalar>& noise) {
  if (temperature <= 0.0)
    throw ConfigError("gumbel_softmax: temperature must be positive");
  if (noise.size() != probs.size())
    throw ShapeError("gumbel_softmax: noise size mismatch");
  Tensor logits = log_clamped(probs);
  Tensor shifted = add(logits, Tensor::vector(std::vector<Scalar>(noise)));
  Tensor relaxed = softmax(scale(shifted, 1.0 / temperature));
  return straight_through_onehot(relaxed);
}

Tensor zero_and_renormalize(const Tensor& weights, std::size_t index) {
  std::vector<Scalar> mask(weights.size(), 1.0);
  mask.at(index) = 0.0;
  Tensor masked = mul(weights, Tensor::vector(std::move(mask)));
  return mul(masked, reciprocal(sum(masked)));
}

ModuleController::ModuleController(const ControllerConfig& config, Rng& rng)
    : att_obj(config.attn_dim, config.module_dim, config.hidden_dim, rng),
      att_attr(config.attn_dim, config.module_dim, config.hidden_dim, rng),
      att_rela(config.attn_dim, config.module_dim, config.hidden_dim, rng),
      query_fc(config.layout_dim, 3 * config.module_dim + config.hidden_dim, rng),
      layout_att(config.layout_dim, config.fuse_heads, rng, "layout attention"),
      fuse_proj(init_fanin_uniform({config.layout_dim, config.layout_dim},
                                   config.layout_dim, rng)),
      weight_fc(kModuleCount, config.layout_dim, rng),
      label_embeddings(init_normal({kModuleCount, config.layout_dim}, 0.1, rng)),
      start_embedding(init_normal({config.layout_dim}, 0.1, rng)),
      cfg(config) {
  std::size_t head_dim = config.layout_dim / config.fuse_heads;
  fuse_heads.reserve(config.fuse_heads);
  for (std::size_t i = 0; i < config.fuse_heads; ++i)
    fuse_heads.push_back(FuseHead{
        init_fanin_uniform({config.layout_dim, head_dim}, config.layout_dim, rng),
        init_fanin_uniform({config.layout_dim, head_dim}, config.layout_dim, rng),
        init_fanin_uniform({config.layout_dim, head_dim}, config.layout_dim, rng)});
}

AttendedFeatures ModuleController::attend_all(const ModuleFeatures& features,
                                              const Tensor& h1,
                                              const Tensor& function_feature) const {
  auto o = att_obj.forward(features.object, h1);
  auto a = att_attr.forward(features.attribute, h1);
  auto r = att_rela.forward(features.relation, h1);
  return AttendedFeatures{o.attended, a.attended, r.attended, function_feature,
                          o.weights, a.weights, r.weights};
}

Tensor ModuleController::build_query(const AttendedFeatures& att,
                                     const Tensor& h2) const {
  return relu(query_fc.forward(concat({att.object, att.attribute, att.relation, h2})));
}

Tensor ModuleController::layout_self_attention(const LayoutHistory& layout) const {
  if (layout.steps.empty())
    throw ShapeError("layout_self_attention: empty layout history");
  std::vector<Tensor> rows = layout.steps;
  if (cfg.stop_layout_gradient)
    for (auto& r : rows) r = detach(r);
  return layout_att.forward(stack_rows(rows));
}

ModuleController::FuseResult ModuleController::soft_fuse(
    const Tensor& layout_attended, const Tensor& query,
    const AttendedFeatures& att) const {
  // Cross attention: single query row over the layout rows. Scores are
  // scaled by sqrt(d_z), matching the fusion formula rather than the
  // per-head-dim scaling used elsewhere.
  Scalar inv_scale = 1.0 / std::sqrt(static_cast<Scalar>(cfg.layout_dim));
  std::vector<Tensor> heads;
  heads.reserve(fuse_heads.size());
  for (const auto& h : fuse_heads) {
    Tensor q = matvec(transpose(h.wq), query);
    Tensor keys = matmul(layout_attended, h.wk);
    Tensor scores = scale(matvec(keys, q), inv_scale);
    Tensor alpha = softmax(scores);
    heads.push_back(matvec(transpose(matmul(layout_attended, h.wv)), alpha));
  }
  Tensor mixed = matvec(transpose(fuse_proj), concat(heads));
  Tensor weights = softmax(weight_fc.forward(mixed));

  Tensor fused = concat({mul(att.object, pick(weights, 0)),
                         mul(att.attribute, pick(weights, 1)),
                         mul(att.relation, pick(weights, 2)),
                         mul(att.function, pick(weights, 3))});
  return FuseResult{weights, weights, fused};
}

Tensor ModuleController::hard_select(const Tensor& soft_weights, Rng& rng) const {
  std::vector<Scalar> noise(soft_weights.size());
  for (auto& g : noise) {
    Scalar u = std::max(rng.uniform(), 1e-12);
    g = -std::log(-std::log(u));
  }
  return gumbel_softmax_hard(soft_weights, cfg.gumbel_temperature, noise);
}

Tensor ModuleController::hard_select_argmax(const Tensor& soft_weights) const {
  return straight_through_onehot(soft_weights);
}

Tensor ModuleController::module_embedding(const Tensor& weights,
                                          std::size_t pos) const {
  Tensor z = matvec(transpose(label_embeddings), weights);
  if (cfg.positional_encoding)
    z = add(z, positional_encoding(pos, cfg.layout_dim));
  return z;
}

Tensor ModuleController::start_token() const {
  if (cfg.positional_encoding)
    return add(start_embedding, positional_encoding(0, cfg.layout_dim));
  return start_embedding;
}

void ModuleController::collect(NamedParams& out) const {
  att_obj.collect("controller.att_obj", out);
  att_attr.collect("controller.att_attr", out);
  att_rela.collect("controller.att_rela", out);
  query_fc.collect("controller.query_fc", out);
  layout_att.collect("controller.layout_att", out);
  for (std::size_t i = 0; i < fuse_heads.size(); ++i) {
    std::string hp = "controller.fuse.head" + std::to_string(i);
    out.emplace_back(hp + ".wq", fuse_heads[i].wq);
    out.emplace_back(hp + ".wk", fuse_heads[i].wk);
    out.emplace_back(hp + ".wv", fuse_heads[i].wv);
  }
  out.emplace_back("controller.fuse.proj", fuse_proj);
  weight_fc.collect("controller.weight_fc", out);
  out.emplace_back("controller.label_embeddings", label_embeddings);
  out.emplace_back("controller.start_embedding", start_embedding);
}

}  // namespace cvlnm
