#include "cvlnm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "cvlnm/errors.hpp"

namespace cvlnm {

namespace {

constexpr std::size_t kMaxN = 4;

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const TokenSeq& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

void check_corpus(const std::vector<TokenSeq>& candidates,
                  const std::vector<std::vector<TokenSeq>>& references,
                  const char* what) {
  if (candidates.size() != references.size())
    throw ConfigError(std::string(what) + ": candidate/reference count mismatch");
  for (const auto& refs : references)
    if (refs.empty())
      throw ConfigError(std::string(what) + ": every candidate needs >=1 reference");
}

}  // namespace

Scalar cider_d(const std::vector<TokenSeq>& candidates,
               const std::vector<std::vector<TokenSeq>>& references,
               Scalar sigma) {
  check_corpus(candidates, references, "cider_d");
  std::size_t num_images = candidates.size();
  if (num_images == 0) throw ConfigError("cider_d: empty corpus");

  // Document frequency per n-gram: number of images whose reference set
  // contains it at least once.
  std::array<NgramCounts, kMaxN> df;
  for (const auto& refs : references) {
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::set<std::vector<std::string>> seen;
      for (const auto& ref : refs)
        for (const auto& [ngram, count] : count_ngrams(ref, n)) seen.insert(ngram);
      for (const auto& ngram : seen) ++df[n - 1][ngram];
    }
  }
  auto idf = [&](std::size_t n, const std::vector<std::string>& ngram) {
    std::size_t d = 1;
    auto it = df[n - 1].find(ngram);
    if (it != df[n - 1].end()) d = std::max<std::size_t>(1, it->second);
    return std::log(static_cast<Scalar>(num_images + 1) / static_cast<Scalar>(d));
  };
  auto norm = [&](std::size_t n, const NgramCounts& counts) {
    Scalar s = 0.0;
    for (const auto& [ngram, count] : counts) {
      Scalar v = static_cast<Scalar>(count) * idf(n, ngram);
      s += v * v;
    }
    return std::sqrt(s);
  };

  Scalar total = 0.0;
  for (std::size_t i = 0; i < num_images; ++i) {
    std::array<NgramCounts, kMaxN> cand;
    for (std::size_t n = 1; n <= kMaxN; ++n)
      cand[n - 1] = count_ngrams(candidates[i], n);
    Scalar image_score = 0.0;
    for (const auto& ref : references[i]) {
      Scalar delta = static_cast<Scalar>(candidates[i].size()) -
                     static_cast<Scalar>(ref.size());
      Scalar penalty = std::exp(-delta * delta / (2.0 * sigma * sigma));
      Scalar sim_sum = 0.0;
      for (std::size_t n = 1; n <= kMaxN; ++n) {
        NgramCounts ref_counts = count_ngrams(ref, n);
        Scalar dot = 0.0;
        for (const auto& [ngram, count] : cand[n - 1]) {
          auto it = ref_counts.find(ngram);
          if (it == ref_counts.end()) continue;
          Scalar w = idf(n, ngram);
          dot += static_cast<Scalar>(std::min(count, it->second)) * w *
                 static_cast<Scalar>(it->second) * w;
        }
        Scalar nc = norm(n, cand[n - 1]);
        Scalar nr = norm(n, ref_counts);
        Scalar sim = (nc > 0.0 && nr > 0.0) ? dot / (nc * nr) : 0.0;
        sim_sum += sim * penalty;
      }
      image_score += sim_sum / static_cast<Scalar>(kMaxN);
    }
    total += 10.0 * image_score / static_cast<Scalar>(references[i].size());
  }
  return total / static_cast<Scalar>(num_images);
}

Scalar bleu(const std::vector<TokenSeq>& candidates,
            const std::vector<std::vector<TokenSeq>>& references,
            std::size_t max_n) {
  check_corpus(candidates, references, "bleu");
  if (max_n == 0) throw ConfigError("bleu: max_n must be positive");
  if (candidates.empty()) throw ConfigError("bleu: empty corpus");

  std::vector<Scalar> matched(max_n, 0.0), totals(max_n, 0.0);
  Scalar cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& cand = candidates[i];
    cand_len += static_cast<Scalar>(cand.size());
    // closest reference length, shorter on ties
    std::size_t best_ref = references[i][0].size();
    for (const auto& ref : references[i]) {
      auto diff = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (diff(ref.size()) < diff(best_ref) ||
          (diff(ref.size()) == diff(best_ref) && ref.size() < best_ref))
        best_ref = ref.size();
    }
    ref_len += static_cast<Scalar>(best_ref);

    for (std::size_t n = 1; n <= max_n; ++n) {
      NgramCounts cand_counts = count_ngrams(cand, n);
      NgramCounts max_ref;
      for (const auto& ref : references[i])
        for (const auto& [ngram, count] : count_ngrams(ref, n)) {
          auto& slot = max_ref[ngram];
          slot = std::max(slot, count);
        }
      for (const auto& [ngram, count] : cand_counts) {
        totals[n - 1] += static_cast<Scalar>(count);
        auto it = max_ref.find(ngram);
        if (it != max_ref.end())
          matched[n - 1] += static_cast<Scalar>(std::min(count, it->second));
      }
    }
  }

  Scalar log_prec = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (totals[n] == 0.0 || matched[n] == 0.0) return 0.0;
    log_prec += std::log(matched[n] / totals[n]) / static_cast<Scalar>(max_n);
  }
  Scalar bp = 1.0;
  if (cand_len < ref_len)
    bp = cand_len > 0.0 ? std::exp(1.0 - ref_len / cand_len) : 0.0;
  return bp * std::exp(log_prec);
}

ChairResult chair(const std::vector<TokenSeq>& candidates,
                  const std::vector<std::set<std::string>>& gold_objects,
                  const std::set<std::string>& object_lexicon) {
  if (object_lexicon.empty()) throw ConfigError("chair: empty object lexicon");
  if (candidates.size() != gold_objects.size())
    throw ConfigError("chair: candidate/gold count mismatch");
  std::size_t mentions = 0, hallucinated = 0, bad_captions = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    bool any_bad = false;
    for (const auto& tok : candidates[i]) {
      if (!object_lexicon.count(tok)) continue;
      ++mentions;
      if (!gold_objects[i].count(tok)) {
        ++hallucinated;
        any_bad = true;
      }
    }
    if (any_bad) ++bad_captions;
  }
  ChairResult result;
  if (!candidates.empty())
    result.chair_s = static_cast<Scalar>(bad_captions) /
                     static_cast<Scalar>(candidates.size());
  if (mentions > 0)
    result.chair_i =
        static_cast<Scalar>(hallucinated) / static_cast<Scalar>(mentions);
  return result;
}

std::size_t argmax_module(const std::array<Scalar, kModuleCount>& w) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kModuleCount; ++i)
    if (w[i] > w[best]) best = i;
  return best;
}

LayoutAccuracy layout_accuracy(const std::vector<WeightSeq>& predicted,
                               const std::vector<std::vector<ModuleTag>>& gold) {
  if (predicted.size() != gold.size())
    throw ConfigError("layout_accuracy: sequence count mismatch");
  std::array<std::size_t, kModuleCount> matches{};
  LayoutAccuracy acc;
  std::size_t total = 0, total_matches = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != gold[i].size())
      throw ConfigError("layout_accuracy: length mismatch in sequence " +
                        std::to_string(i));
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      std::size_t g = static_cast<std::size_t>(gold[i][t]);
      ++acc.gold_counts[g];
      ++total;
      if (argmax_module(predicted[i][t]) == g) {
        ++matches[g];
        ++total_matches;
      }
    }
  }
  for (std::size_t m = 0; m < kModuleCount; ++m)
    acc.per_module[m] = acc.gold_counts[m]
                            ? static_cast<Scalar>(matches[m]) /
                                  static_cast<Scalar>(acc.gold_counts[m])
                            : 0.0;
  acc.average =
      total ? static_cast<Scalar>(total_matches) / static_cast<Scalar>(total) : 0.0;
  return acc;
}

std::optional<Scalar> word_recall(
    const std::vector<TokenSeq>& predictions,
    const std::vector<std::vector<TaggedCaption>>& references,
    const std::string& pos_class) {
  if (predictions.size() != references.size())
    throw ConfigError("word_recall: prediction/reference count mismatch");
  std::size_t n_gt = 0, n_pre = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::set<std::string> gt_words;
    for (const auto& ref : references[i])
      for (std::size_t t = 0; t < ref.tokens.size(); ++t)
        if (ref.pos[t] == pos_class) gt_words.insert(ref.tokens[t]);
    std::set<std::string> pred(predictions[i].begin(), predictions[i].end());
    n_gt += gt_words.size();
    for (const auto& w : gt_words)
      if (pred.count(w)) ++n_pre;
  }
  if (n_gt == 0) return std::nullopt;
  return static_cast<Scalar>(n_pre) / static_cast<Scalar>(n_gt);
}

std::array<Scalar, kModuleCount> module_ratios(
    const std::vector<TokenSeq>& captions,
    const std::map<std::string, ModuleTag>& lexicon) {
  std::array<std::size_t, kModuleCount> counts{};
  std::size_t total = 0;
  for (const auto& caption : captions)
    for (const auto& tok : caption) {
      auto it = lexicon.find(tok);
      ModuleTag tag = it == lexicon.end() ? ModuleTag::Function : it->second;
      ++counts[static_cast<std::size_t>(tag)];
      ++total;
    }
  std::array<Scalar, kModuleCount> ratios{};
  if (total)
    for (std::size_t m = 0; m < kModuleCount; ++m)
      ratios[m] = static_cast<Scalar>(counts[m]) / static_cast<Scalar>(total);
  return ratios;
}

FusionEntropyReport fusion_entropy(const std::vector<WeightSeq>& weights,
                                   const std::vector<TokenSeq>& words) {
  if (!words.empty() && words.size() != weights.size())
    throw ConfigError("fusion_entropy: words/weights count mismatch");
  FusionEntropyReport report;
  std::map<std::string, std::pair<Scalar, std::size_t>> per_word;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t t = 0; t < weights[i].size(); ++t) {
      const auto& w = weights[i][t];
      Scalar h = 0.0, mx = 0.0;
      for (Scalar p : w) {
        if (p > 0.0) h -= p * std::log(p);
        mx = std::max(mx, p);
      }
      report.mean_entropy += h;
      report.mean_max_weight += mx;
      ++steps;
      if (!words.empty() && t < words[i].size()) {
        auto& slot = per_word[words[i][t]];
        slot.first += h;
        ++slot.second;
      }
    }
  }
  if (steps) {
    report.mean_entropy /= static_cast<Scalar>(steps);
    report.mean_max_weight /= static_cast<Scalar>(steps);
  }
  for (const auto& [word, acc] : per_word)
    report.per_word[word] = acc.first / static_cast<Scalar>(acc.second);
  return report;
}

}  // namespace cvlnm
