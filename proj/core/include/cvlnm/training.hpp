#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cvlnm/data.hpp"
#include "cvlnm/model.hpp"
#include "cvlnm/optim.hpp"
#include "cvlnm/tensor.hpp"

namespace cvlnm {

// ---- losses -----------------------------------------------------------------

/// Cross-entropy between the predicted fusion simplex and the gold one-hot
/// module tag, averaged over the supervised steps of one sequence. Uses the
/// soft weights (the softmax output) so hard selection does not zero the
/// gradient. Logs are clamped at 1e-12.
Tensor syntax_loss(const std::vector<StepTrace>& traces,
                   const std::vector<ModuleTag>& gold_modules);

/// Language loss: -sum_t log P(s*_t), summed over the sequence including the
/// final <eos> prediction. `tokens` excludes <bos>/<eos>.
Tensor xe_loss(const std::vector<StepTrace>& traces,
               const std::vector<int>& tokens);

/// L = L_l + lambda * L_s.
Tensor total_loss(const Tensor& language, const Tensor& syntax, Scalar lambda);

using RewardFn = std::function<Scalar(const std::vector<int>&)>;

struct ScstResult {
  Tensor loss;  // -(r_sample - r_greedy) * sum_t log P(sampled_t)
  Scalar reward_sample = 0.0;
  Scalar reward_greedy = 0.0;
  Scalar advantage = 0.0;
  std::vector<int> sampled;
};

/// REINFORCE with the greedy decode as baseline. Generic over the sampler so
/// toy policies exercise the same estimator as the full model.
ScstResult scst_loss(const std::function<Model::Sampled(Rng&)>& sampler,
                     const std::function<std::vector<int>()>& greedy_decode,
                     const RewardFn& reward, Rng& rng);

ScstResult scst_loss(const Model& model, const ImageContext& ctx,
                     const RewardFn& reward, Rng& rng);

/// Sentence-level consensus reward against this image's references.
RewardFn make_cider_reward(const std::vector<std::vector<std::string>>& references,
                           const Vocabulary& vocab);

// ---- training loop -----------------------------------------------------------

struct TrainConfig {
  Scalar lambda_xe = 1.0;
  Scalar lambda_rl = 0.5;
  Scalar lr = 5e-4;
  Scalar lr_decay = 0.8;
  std::size_t lr_decay_every = 5;  // epochs
  std::size_t epochs_xe = 35;
  std::size_t epochs_rl = 65;
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  bool eval_cider = true;  // greedy-decode CIDEr-D on validation each epoch

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;       // global, 1-based
  std::string phase;           // "xe" | "rl"
  Scalar lr = 0.0;
  Scalar loss_l = 0.0;
  Scalar loss_s = 0.0;
  Scalar layout_acc = 0.0;     // teacher-forced argmax vs gold, validation
  Scalar cider = 0.0;
};

/// One caption occurrence, resolved to vocab ids.
struct PreparedExample {
  std::size_t item = 0;  // index into PreparedCorpus::features
  std::vector<int> tokens;
  std::vector<ModuleTag> modules;
};

struct PreparedCorpus {
  std::vector<FeatureSet> features;  // per image
  std::vector<std::vector<std::vector<std::string>>> references;  // per image
  std::vector<PreparedExample> examples;
  bool empty() const { return examples.empty(); }
};

PreparedCorpus prepare_corpus(const Corpus& corpus, const Vocabulary& vocab,
                              std::size_t max_len);

/// Called after every epoch; use it to persist checkpoints and logs. The
/// rng string is the serialized training RNG, sufficient to resume.
using EpochCallback = std::function<void(
    const EpochRecord&, const Model&, const Adam&, const std::string& rng_state)>;

struct ResumeState {
  Adam::State optimizer;
  std::string rng_state;
  std::size_t completed_epochs = 0;
};

/// Two-phase schedule: epochs_xe of teacher forcing, then epochs_rl of
/// self-critical training, both plus lambda-weighted syntax loss. The
/// learning rate decays by lr_decay every lr_decay_every global epochs.
/// Throws NumericsError on a non-finite loss; the caller keeps whatever the
/// callback last persisted.
void train(Model& model, const PreparedCorpus& train_set,
           const PreparedCorpus& val_set, const Vocabulary& vocab,
           const TrainConfig& cfg, const EpochCallback& on_epoch,
           const ResumeState* resume = nullptr);

/// Teacher-forced layout accuracy + optional greedy CIDEr-D on a corpus.
EpochRecord evaluate_epoch(const Model& model, const PreparedCorpus& corpus,
                           const Vocabulary& vocab, bool with_cider);

}  // namespace cvlnm
