#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cvlnm/data.hpp"
#include "cvlnm/module_tag.hpp"
#include "cvlnm/tensor.hpp"

namespace cvlnm {

using TokenSeq = std::vector<std::string>;

// ---- caption metrics ---------------------------------------------------------

/// Consensus metric: TF-IDF n-gram (n=1..4) cosine with count clipping and a
/// Gaussian length penalty (sigma=6), averaged over n and references, ×10.
/// Document frequencies come from the reference corpus with add-one corpus
/// smoothing, idf = ln((N+1)/df), so the metric stays defined on tiny
/// corpora (an identical candidate/reference pair scores 10 even with a
/// single image).
Scalar cider_d(const std::vector<TokenSeq>& candidates,
               const std::vector<std::vector<TokenSeq>>& references,
               Scalar sigma = 6.0);

/// Corpus-level BLEU: geometric mean of clipped n-gram precisions (n=1..max_n)
/// times the brevity penalty. Any zero precision makes the score 0.
Scalar bleu(const std::vector<TokenSeq>& candidates,
            const std::vector<std::vector<TokenSeq>>& references,
            std::size_t max_n = 4);

struct ChairResult {
  Scalar chair_s = 0.0;                // captions with >=1 hallucination
  std::optional<Scalar> chair_i;       // hallucinated / all object mentions
};

/// Hallucination rates. A mention is any candidate token in `object_lexicon`;
/// it hallucinates when absent from that image's gold object set.
ChairResult chair(const std::vector<TokenSeq>& candidates,
                  const std::vector<std::set<std::string>>& gold_objects,
                  const std::set<std::string>& object_lexicon);

// ---- module-collocation metrics --------------------------------------------

using WeightSeq = std::vector<std::array<Scalar, kModuleCount>>;

struct LayoutAccuracy {
  std::array<Scalar, kModuleCount> per_module{};  // matches / gold occurrences
  std::array<std::size_t, kModuleCount> gold_counts{};
  Scalar average = 0.0;  // overall match rate
};

/// Argmax of each predicted weight vector vs the gold module tag; ties break
/// toward the lowest module index.
LayoutAccuracy layout_accuracy(const std::vector<WeightSeq>& predicted,
                               const std::vector<std::vector<ModuleTag>>& gold);

std::size_t argmax_module(const std::array<Scalar, kModuleCount>& w);

/// Recall of reference words of one POS class: per image, N_gt = distinct
/// reference words of the class, N_pre = how many appear in the prediction;
/// recall = sum N_pre / sum N_gt. Null when no reference words of the class
/// exist anywhere.
std::optional<Scalar> word_recall(const std::vector<TokenSeq>& predictions,
                                  const std::vector<std::vector<TaggedCaption>>& references,
                                  const std::string& pos_class);

/// Fraction of generated tokens per module class, classified with the gold
/// lexicon (tokens outside the lexicon count as FUNCTION). Sums to 1 when any
/// token exists.
std::array<Scalar, kModuleCount> module_ratios(
    const std::vector<TokenSeq>& captions,
    const std::map<std::string, ModuleTag>& lexicon);

struct FusionEntropyReport {
  Scalar mean_entropy = 0.0;     // H(w) = -sum w ln w, in [0, ln 4]
  Scalar mean_max_weight = 0.0;
  std::map<std::string, Scalar> per_word;  // mean entropy at steps emitting the word
};

/// `words[i][t]` is the token emitted at step t of sequence i (may be empty
/// when only aggregate statistics are wanted).
FusionEntropyReport fusion_entropy(const std::vector<WeightSeq>& weights,
                                   const std::vector<TokenSeq>& words = {});

}  // namespace cvlnm
