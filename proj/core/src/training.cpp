#include "cvlnm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cvlnm/metrics.hpp"

namespace cvlnm {

Tensor syntax_loss(const std::vector<StepTrace>& traces,
                   const std::vector<ModuleTag>& gold_modules) {
  if (gold_modules.empty()) return Tensor::scalar(0.0);
  if (traces.size() < gold_modules.size())
    throw ConfigError("syntax_loss: fewer traces than supervised steps");
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < gold_modules.size(); ++t) {
    std::size_t g = static_cast<std::size_t>(gold_modules[t]);
    acc = add(acc, neg(pick(log_clamped(traces[t].soft_weights), g)));
  }
  return scale(acc, 1.0 / static_cast<Scalar>(gold_modules.size()));
}

Tensor xe_loss(const std::vector<StepTrace>& traces,
               const std::vector<int>& tokens) {
  if (traces.size() != tokens.size() + 1)
    throw ConfigError("xe_loss: expected one trace per token plus <eos>");
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < traces.size(); ++t) {
    int target = t < tokens.size() ? tokens[t] : Vocabulary::kEos;
    if (target < 0 || static_cast<std::size_t>(target) >= traces[t].probs.size())
      throw ConfigError("xe_loss: gold token id out of range");
    acc = add(acc, neg(pick(log_clamped(traces[t].probs),
                            static_cast<std::size_t>(target))));
  }
  return acc;
}

Tensor total_loss(const Tensor& language, const Tensor& syntax, Scalar lambda) {
  return add(language, scale(syntax, lambda));
}

ScstResult scst_loss(const std::function<Model::Sampled(Rng&)>& sampler,
                     const std::function<std::vector<int>()>& greedy_decode,
                     const RewardFn& reward, Rng& rng) {
  ScstResult result;
  result.reward_greedy = reward(greedy_decode());
  Model::Sampled sampled = sampler(rng);
  result.sampled = sampled.tokens;
  result.reward_sample = reward(sampled.tokens);
  result.advantage = result.reward_sample - result.reward_greedy;
  result.loss = scale(sampled.log_prob, -result.advantage);
  return result;
}

ScstResult scst_loss(const Model& model, const ImageContext& ctx,
                     const RewardFn& reward, Rng& rng) {
  return scst_loss(
      [&](Rng& r) { return model.sample_decode(ctx, r); },
      [&] { return model.greedy_decode(ctx); }, reward, rng);
}

RewardFn make_cider_reward(const std::vector<std::vector<std::string>>& references,
                           const Vocabulary& vocab) {
  return [references, &vocab](const std::vector<int>& tokens) {
    std::vector<std::string> words;
    words.reserve(tokens.size());
    for (int t : tokens) words.push_back(vocab.token(t));
    return cider_d({words}, {references});
  };
}

void TrainConfig::validate() const {
  if (lambda_xe < 0.0 || lambda_rl < 0.0)
    throw ConfigError("train: lambda must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (lr <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (lr_decay <= 0.0 || lr_decay > 1.0)
    throw ConfigError("train: lr decay must be in (0, 1]");
  if (lr_decay_every == 0) throw ConfigError("train: lr decay interval must be >= 1");
}

PreparedCorpus prepare_corpus(const Corpus& corpus, const Vocabulary& vocab,
                              std::size_t max_len) {
  PreparedCorpus prep;
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    const auto& item = corpus.items[i];
    prep.features.push_back(corpus.load_features_for(item));
    std::vector<std::vector<std::string>> refs;
    for (const auto& caption : item.captions) {
      caption.validate(max_len);
      refs.push_back(caption.tokens);
      PreparedExample ex;
      ex.item = i;
      for (const auto& tok : caption.tokens) ex.tokens.push_back(vocab.index(tok));
      ex.modules = caption.modules;
      prep.examples.push_back(std::move(ex));
    }
    prep.references.push_back(std::move(refs));
  }
  return prep;
}

EpochRecord evaluate_epoch(const Model& model, const PreparedCorpus& corpus,
                           const Vocabulary& vocab, bool with_cider) {
  NoGradGuard guard;
  EpochRecord rec;
  std::vector<WeightSeq> predicted;
  std::vector<std::vector<ModuleTag>> gold;
  for (const auto& ex : corpus.examples) {
    ImageContext ctx = model.encode(corpus.features[ex.item]);
    auto traces = model.teacher_forced(ctx, ex.tokens);
    WeightSeq ws;
    for (std::size_t t = 0; t < ex.modules.size(); ++t) {
      std::array<Scalar, kModuleCount> w{};
      for (std::size_t m = 0; m < kModuleCount; ++m)
        w[m] = traces[t].soft_weights.at(m);
      ws.push_back(w);
    }
    predicted.push_back(std::move(ws));
    gold.push_back(ex.modules);
  }
  if (!predicted.empty()) rec.layout_acc = layout_accuracy(predicted, gold).average;

  if (with_cider && !corpus.features.empty()) {
    std::vector<TokenSeq> candidates;
    std::vector<std::vector<TokenSeq>> references;
    for (std::size_t i = 0; i < corpus.features.size(); ++i) {
      ImageContext ctx = model.encode(corpus.features[i]);
      std::vector<std::string> words;
      for (int t : model.greedy_decode(ctx)) words.push_back(vocab.token(t));
      candidates.push_back(std::move(words));
      references.push_back(corpus.references[i]);
    }
    rec.cider = cider_d(candidates, references);
  }
  return rec;
}

void train(Model& model, const PreparedCorpus& train_set,
           const PreparedCorpus& val_set, const Vocabulary& vocab,
           const TrainConfig& cfg, const EpochCallback& on_epoch,
           const ResumeState* resume) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty corpus");
  const PreparedCorpus& eval_set = val_set.empty() ? train_set : val_set;

  AdamConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  Adam optimizer(model.parameters(), opt_cfg);
  Rng rng(cfg.seed);
  std::size_t first_epoch = 1;
  if (resume) {
    optimizer.restore(resume->optimizer);
    rng.set_state(resume->rng_state);
    first_epoch = resume->completed_epochs + 1;
  }

  std::vector<std::size_t> order(train_set.examples.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t total_epochs = cfg.epochs_xe + cfg.epochs_rl;
  for (std::size_t epoch = first_epoch; epoch <= total_epochs; ++epoch) {
    bool rl = epoch > cfg.epochs_xe;
    Scalar lambda = rl ? cfg.lambda_rl : cfg.lambda_xe;
    Scalar lr = cfg.lr * std::pow(cfg.lr_decay,
                                  static_cast<Scalar>((epoch - 1) / cfg.lr_decay_every));
    optimizer.set_lr(lr);

    // Deterministic shuffle. Reset to the identity first so each epoch's
    // permutation depends only on the RNG state, not on earlier epochs;
    // otherwise a run resumed from a checkpoint could not reproduce the
    // visiting order of an uninterrupted run.
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.integer(i)]);

    Scalar sum_l = 0.0, sum_s = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor batch_loss = Tensor::scalar(0.0);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = train_set.examples[order[k]];
        ImageContext ctx = model.encode(train_set.features[ex.item]);
        auto traces = model.teacher_forced(ctx, ex.tokens);
        Tensor l_s = syntax_loss(traces, ex.modules);
        Tensor l_l;
        if (rl) {
          RewardFn reward = make_cider_reward(train_set.references[ex.item], vocab);
          l_l = scst_loss(model, ctx, reward, rng).loss;
        } else {
          l_l = xe_loss(traces, ex.tokens);
        }
        sum_l += l_l.item();
        sum_s += l_s.item();
        ++seen;
        batch_loss = add(batch_loss, total_loss(l_l, l_s, lambda));
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<Scalar>(end - start));
      Scalar value = batch_loss.item();
      if (!std::isfinite(value))
        throw NumericsError("train: non-finite loss at epoch " +
                            std::to_string(epoch));
      optimizer.zero_grad();
      backward(batch_loss);
      optimizer.step();
    }

    EpochRecord rec = evaluate_epoch(model, eval_set, vocab, cfg.eval_cider);
    rec.epoch = epoch;
    rec.phase = rl ? "rl" : "xe";
    rec.lr = lr;
    rec.loss_l = sum_l / static_cast<Scalar>(seen);
    rec.loss_s = sum_s / static_cast<Scalar>(seen);
    if (on_epoch) on_epoch(rec, model, optimizer, rng.state());
  }
}

}  // namespace cvlnm
