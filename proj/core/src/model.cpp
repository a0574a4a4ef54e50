#include "cvlnm/model.hpp"

#include <algorithm>
#include <cmath>

namespace cvlnm {

void ModelConfig::validate() const {
  if (vocab_size < Vocabulary::kReserved)
    throw ConfigError("model: vocab_size must include the reserved tokens");
  if (max_len == 0) throw ConfigError("model: max_len must be positive");
  for (auto [name, value] :
       {std::pair{"feature_dim", feature_dim}, {"module_dim", module_dim},
        {"hidden_dim", hidden_dim}, {"attn_dim", attn_dim},
        {"layout_dim", layout_dim}, {"embed_dim", embed_dim},
        {"memory_dim", memory_dim}})
    if (value == 0) throw ConfigError(std::string("model: ") + name + " must be positive");
  if (relation_heads == 0 || feature_dim % relation_heads != 0)
    throw ConfigError("model: relation_heads must divide feature_dim");
  if (fuse_heads == 0 || layout_dim % fuse_heads != 0)
    throw ConfigError("model: fuse_heads must divide layout_dim");
  if (cut_module < -1 || cut_module >= static_cast<int>(kModuleCount))
    throw ConfigError("model: cut_module out of range");
  if (fixed_module < -1 || fixed_module >= static_cast<int>(kModuleCount))
    throw ConfigError("model: fixed_module out of range");
  if (cut_module >= 0 && fixed_module >= 0)
    throw ConfigError("model: cut_module and fixed_module are mutually exclusive");
  if (gumbel_temperature <= 0.0)
    throw ConfigError("model: gumbel_temperature must be positive");
}

Model::Model(const ModelConfig& config) : cfg(config) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  embeddings = init_normal({cfg.vocab_size, cfg.embed_dim}, 0.1, rng);

  EncoderConfig enc;
  enc.feature_dim = cfg.feature_dim;
  enc.module_dim = cfg.module_dim;
  enc.hidden_dim = cfg.hidden_dim;
  enc.relation_heads = cfg.relation_heads;
  enc.leaky_slope = cfg.leaky_slope;
  encoder = Encoder(enc, rng);

  ControllerConfig ctl;
  ctl.module_dim = cfg.module_dim;
  ctl.hidden_dim = cfg.hidden_dim;
  ctl.attn_dim = cfg.attn_dim;
  ctl.layout_dim = cfg.layout_dim;
  ctl.fuse_heads = cfg.fuse_heads;
  ctl.positional_encoding = cfg.positional_encoding;
  ctl.stop_layout_gradient = cfg.stop_layout_gradient;
  ctl.gumbel_temperature = cfg.gumbel_temperature;
  controller = ModuleController(ctl, rng);

  ReasonConfig rsn;
  rsn.embed_dim = cfg.embed_dim;
  rsn.memory_dim = cfg.memory_dim;
  rsn.fused_dim = kModuleCount * cfg.module_dim;
  reason = ReasonModule(rsn, rng);

  lstm1 = LstmCell(cfg.embed_dim + cfg.hidden_dim, cfg.hidden_dim, rng);
  lstm2 = LstmCell(kModuleCount * cfg.module_dim + cfg.memory_dim + cfg.hidden_dim,
                   cfg.hidden_dim, rng);
  output_fc = FcLayer(cfg.vocab_size, cfg.hidden_dim, rng);
}

void Model::set_memory_tokens(std::vector<std::array<int, 3>> triplets) {
  for (const auto& t : triplets)
    for (int tok : t)
      if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab_size)
        throw ConfigError("memory triplet token id out of vocabulary range");
  memory_tokens = std::move(triplets);
}

ImageContext Model::encode(const FeatureSet& features) const {
  features.validate();
  if (features.feature_dim() != cfg.feature_dim)
    throw ShapeError("model: feature dim " + std::to_string(features.feature_dim()) +
                     " does not match configured " + std::to_string(cfg.feature_dim));
  ImageContext ctx;
  ctx.features = encoder.encode(features);
  if (!cfg.no_reason && !memory_tokens.empty()) {
    std::vector<Tensor> rows;
    rows.reserve(memory_tokens.size());
    for (const auto& t : memory_tokens)
      rows.push_back(concat({row(embeddings, static_cast<std::size_t>(t[0])),
                             row(embeddings, static_cast<std::size_t>(t[1])),
                             row(embeddings, static_cast<std::size_t>(t[2]))}));
    ctx.memory = reason.build_memory(stack_rows(rows));
  }
  return ctx;
}

SequenceState Model::initial_state() const {
  SequenceState s;
  s.lstm1 = lstm1.initial_state();
  s.lstm2 = lstm2.initial_state();
  return s;
}

namespace {

Tensor fuse_with_weights(const Tensor& weights, const AttendedFeatures& att) {
  return concat({mul(att.object, pick(weights, 0)),
                 mul(att.attribute, pick(weights, 1)),
                 mul(att.relation, pick(weights, 2)),
                 mul(att.function, pick(weights, 3))});
}

Tensor one_hot4(int index) {
  std::vector<Scalar> v(kModuleCount, 0.0);
  v[static_cast<std::size_t>(index)] = 1.0;
  return Tensor::vector(std::move(v));
}

}  // namespace

StepTrace Model::decode_step(const ImageContext& ctx, SequenceState& state,
                             int input_token, Rng* sample_rng) const {
  if (input_token < 0 || static_cast<std::size_t>(input_token) >= cfg.vocab_size)
    throw ConfigError("decode_step: token id " + std::to_string(input_token) +
                      " out of vocabulary range");
  Tensor h2_prev = state.lstm2.h;

  // Language LSTM over the previous word and previous visual hidden state.
  Tensor word = row(embeddings, static_cast<std::size_t>(input_token));
  state.lstm1 = lstm1.step(concat({word, h2_prev}), state.lstm1);
  const Tensor& h1 = state.lstm1.h;

  // Attend each module; the function feature is driven by h2 from the
  // previous step, as is the fusion query.
  Tensor function_feature = encoder.function.forward(h2_prev);
  AttendedFeatures att = controller.attend_all(ctx.features, h1, function_feature);
  Tensor query = controller.build_query(att, h2_prev);

  if (state.layout.steps.empty())
    state.layout.steps.push_back(controller.start_token());
  Tensor layout_attended = controller.layout_self_attention(state.layout);
  auto fuse = controller.soft_fuse(layout_attended, query, att);

  Tensor weights = fuse.weights;
  if (cfg.fixed_module >= 0) {
    weights = one_hot4(cfg.fixed_module);
  } else if (cfg.cut_module >= 0) {
    weights = zero_and_renormalize(weights, static_cast<std::size_t>(cfg.cut_module));
  } else if (cfg.fusion == FusionMode::Hard) {
    weights = sample_rng ? controller.hard_select(fuse.soft_weights, *sample_rng)
                         : controller.hard_select_argmax(fuse.soft_weights);
  }
  Tensor fused = fuse_with_weights(weights, att);
  state.layout.steps.push_back(
      controller.module_embedding(weights, state.layout.length()));

  StepTrace trace;
  Tensor v_prime;
  if (ctx.has_memory()) {
    auto read = reason.attend(ctx.memory, fused);
    v_prime = read.read;
    trace.beta = read.beta;
  } else {
    v_prime = Tensor::zeros({cfg.memory_dim});
  }

  state.lstm2 = lstm2.step(concat({fused, v_prime, h1}), state.lstm2);
  trace.probs = softmax(output_fc.forward(state.lstm2.h));
  trace.fuse_weights = weights;
  trace.soft_weights = fuse.soft_weights;
  trace.object_attention = att.object_weights;
  trace.attribute_attention = att.attribute_weights;
  trace.relation_attention = att.relation_weights;
  ++state.t;
  return trace;
}

std::vector<StepTrace> Model::teacher_forced(const ImageContext& ctx,
                                             const std::vector<int>& tokens,
                                             Rng* sample_rng) const {
  if (tokens.size() > cfg.max_len)
    throw ConfigError("teacher_forced: caption longer than max_len");
  SequenceState state = initial_state();
  std::vector<StepTrace> traces;
  traces.reserve(tokens.size() + 1);
  int prev = Vocabulary::kBos;
  for (int tok : tokens) {
    traces.push_back(decode_step(ctx, state, prev, sample_rng));
    prev = tok;
  }
  traces.push_back(decode_step(ctx, state, prev, sample_rng));  // predicts <eos>
  return traces;
}

namespace {

// Highest-probability emittable token; <pad> and <bos> are never emitted,
// matching the candidate set of the beam search.
std::size_t argmax_emittable(const std::vector<Scalar>& v) {
  std::size_t best = Vocabulary::kEos;
  for (std::size_t i = best + 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

std::vector<int> Model::greedy_decode(const ImageContext& ctx) const {
  NoGradGuard guard;
  SequenceState state = initial_state();
  std::vector<int> out;
  int prev = Vocabulary::kBos;
  for (std::size_t t = 0; t < cfg.max_len; ++t) {
    StepTrace trace = decode_step(ctx, state, prev);
    int tok = static_cast<int>(argmax_emittable(trace.probs.data()));
    if (tok == Vocabulary::kEos) break;
    out.push_back(tok);
    prev = tok;
  }
  return out;
}

Model::Sampled Model::sample_decode(const ImageContext& ctx, Rng& rng) const {
  SequenceState state = initial_state();
  Sampled result;
  result.log_prob = Tensor::scalar(0.0);
  int prev = Vocabulary::kBos;
  for (std::size_t t = 0; t < cfg.max_len; ++t) {
    StepTrace trace = decode_step(ctx, state, prev);
    const auto& p = trace.probs.data();
    Scalar u = rng.uniform();
    Scalar acc = 0.0;
    std::size_t tok = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) {
        tok = i;
        break;
      }
    }
    result.log_prob = add(result.log_prob, log_clamped(pick(trace.probs, tok)));
    if (static_cast<int>(tok) == Vocabulary::kEos) break;
    result.tokens.push_back(static_cast<int>(tok));
    prev = static_cast<int>(tok);
  }
  return result;
}

std::vector<int> Model::beam_search(const ImageContext& ctx, std::size_t beam_width,
                                    bool length_normalize) const {
  if (beam_width == 0) throw ConfigError("beam_search: beam width must be positive");
  NoGradGuard guard;

  struct Item {
    Hypothesis hyp;
    SequenceState state;
  };
  std::vector<Item> beam;
  beam.push_back(Item{Hypothesis{}, initial_state()});

  for (std::size_t t = 0; t < cfg.max_len; ++t) {
    if (std::all_of(beam.begin(), beam.end(),
                    [](const Item& i) { return i.hyp.finished; }))
      break;
    std::vector<Item> candidates;
    for (auto& item : beam) {
      if (item.hyp.finished) {
        candidates.push_back(std::move(item));
        continue;
      }
      int prev = item.hyp.tokens.empty() ? Vocabulary::kBos : item.hyp.tokens.back();
      SequenceState state = item.state;
      StepTrace trace = decode_step(ctx, state, prev);
      const auto& p = trace.probs.data();
      for (std::size_t v = 0; v < p.size(); ++v) {
        if (static_cast<int>(v) == Vocabulary::kPad ||
            static_cast<int>(v) == Vocabulary::kBos)
          continue;
        Item cand;
        cand.hyp = item.hyp;
        cand.hyp.log_prob += std::log(std::max(p[v], 1e-300));
        if (static_cast<int>(v) == Vocabulary::kEos) {
          cand.hyp.finished = true;
        } else {
          cand.hyp.tokens.push_back(static_cast<int>(v));
          cand.state = state;
        }
        candidates.push_back(std::move(cand));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Item& a, const Item& b) {
                       return a.hyp.log_prob > b.hyp.log_prob;
                     });
    if (candidates.size() > beam_width) candidates.resize(beam_width);
    beam = std::move(candidates);
  }

  auto score = [&](const Hypothesis& h) {
    if (!length_normalize) return h.log_prob;
    return h.log_prob / static_cast<Scalar>(std::max<std::size_t>(1, h.tokens.size()));
  };
  const Hypothesis* best = &beam.front().hyp;
  for (const auto& item : beam)
    if (score(item.hyp) > score(*best)) best = &item.hyp;
  return best->tokens;
}

NamedParams Model::parameters() const {
  NamedParams out;
  out.emplace_back("embeddings", embeddings);
  encoder.collect(out);
  controller.collect(out);
  reason.collect(out);
  lstm1.collect("lstm1", out);
  lstm2.collect("lstm2", out);
  output_fc.collect("output_fc", out);
  return out;
}

}  // namespace cvlnm
