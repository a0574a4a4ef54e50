#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"

#include "cvlnm/metrics.hpp"
#include "oracles.hpp"

using namespace cvlnm;

namespace {

TokenSeq words(std::initializer_list<const char*> list) {
  TokenSeq out;
  for (const char* w : list) out.emplace_back(w);
  return out;
}

// Deterministic pseudo-random caption corpus for cross-checks.
std::vector<TokenSeq> random_captions(Rng& rng, std::size_t count,
                                      std::size_t vocab, std::size_t max_len) {
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < count; ++i) {
    TokenSeq cap;
    std::size_t len = 1 + rng.integer(max_len);
    for (std::size_t t = 0; t < len; ++t)
      cap.push_back("w" + std::to_string(rng.integer(vocab)));
    out.push_back(std::move(cap));
  }
  return out;
}

}  // namespace

TEST_CASE("identical candidate and reference score the maximum") {
  auto cap = words({"a", "red", "dog", "chases", "the", "cat"});
  CHECK(std::abs(cider_d({cap}, {{cap}}) - 10.0) < 1e-6);
  CHECK(bleu({cap}, {{cap}}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("consensus metric matches the brute-force reference on micro corpora") {
  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t images = 1 + rng.integer(4);
    std::vector<TokenSeq> cands;
    std::vector<std::vector<TokenSeq>> refs;
    for (std::size_t i = 0; i < images; ++i) {
      cands.push_back(random_captions(rng, 1, 5, 7)[0]);
      refs.push_back(random_captions(rng, 1 + rng.integer(3), 5, 7));
    }
    CHECK(std::abs(cider_d(cands, refs) - oracle::cider_d(cands, refs)) < 1e-9);
    CHECK(std::abs(bleu(cands, refs) - oracle::bleu(cands, refs)) < 1e-9);
  }
}

TEST_CASE("metric value is invariant to image order") {
  Rng rng(52);
  std::vector<TokenSeq> cands = random_captions(rng, 5, 6, 6);
  std::vector<std::vector<TokenSeq>> refs;
  for (int i = 0; i < 5; ++i) refs.push_back(random_captions(rng, 2, 6, 6));
  Scalar base_c = cider_d(cands, refs);
  Scalar base_b = bleu(cands, refs);
  // rotate
  std::rotate(cands.begin(), cands.begin() + 2, cands.end());
  std::rotate(refs.begin(), refs.begin() + 2, refs.end());
  CHECK(cider_d(cands, refs) == doctest::Approx(base_c).epsilon(1e-12));
  CHECK(bleu(cands, refs) == doctest::Approx(base_b).epsilon(1e-12));
}

TEST_CASE("length penalty lowers the score of an overlong candidate") {
  auto ref = words({"a", "dog"});
  auto same = words({"a", "dog"});
  auto longer = words({"a", "dog", "a", "dog", "a", "dog", "a", "dog"});
  CHECK(cider_d({longer}, {{ref}}) < cider_d({same}, {{ref}}));
}

TEST_CASE("bleu applies the brevity penalty against the closest reference") {
  auto cand = words({"a", "dog"});
  auto ref4 = words({"a", "dog", "runs", "fast"});
  Scalar score = bleu({cand}, {{ref4}}, 2);
  // precisions are 1; penalty exp(1 - 4/2)
  CHECK(score == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  // a second reference of matching length removes the penalty
  CHECK(bleu({cand}, {{ref4, cand}}, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bleu is zero when any n-gram order has no match") {
  auto cand = words({"x", "y"});
  auto ref = words({"x", "z"});
  CHECK(bleu({cand}, {{ref}}, 2) == 0.0);
}

TEST_CASE("hallucination rates on a frozen example") {
  std::vector<TokenSeq> cands{words({"a", "dog", "near", "a", "cat"}),
                              words({"the", "car"})};
  std::vector<std::set<std::string>> gold{{"dog"}, {"car"}};
  std::set<std::string> lexicon{"dog", "cat", "car"};
  ChairResult r = chair(cands, gold, lexicon);
  // caption 1 hallucinates "cat"; caption 2 is clean
  CHECK(r.chair_s == doctest::Approx(0.5).epsilon(1e-12));
  REQUIRE(r.chair_i.has_value());
  CHECK(*r.chair_i == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("hallucination per-mention rate is null without object mentions") {
  std::vector<TokenSeq> cands{words({"hello", "there"})};
  ChairResult r = chair(cands, {{}}, {"dog"});
  CHECK(r.chair_s == 0.0);
  CHECK_FALSE(r.chair_i.has_value());
}

TEST_CASE("layout accuracy counts argmax matches per module") {
  WeightSeq seq{{0.7, 0.1, 0.1, 0.1},    // object, correct
                {0.1, 0.6, 0.2, 0.1},    // attribute, correct
                {0.4, 0.3, 0.2, 0.1},    // object but gold relation
                {0.1, 0.1, 0.1, 0.7}};   // function, correct
  std::vector<std::vector<ModuleTag>> gold{{ModuleTag::Object, ModuleTag::Attribute,
                                            ModuleTag::Relation, ModuleTag::Function}};
  LayoutAccuracy acc = layout_accuracy({seq}, gold);
  CHECK(acc.average == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(acc.per_module[0] == doctest::Approx(1.0));
  CHECK(acc.per_module[2] == doctest::Approx(0.0));
  CHECK(acc.gold_counts[1] == 1);
}

TEST_CASE("argmax ties break toward the lowest module index") {
  CHECK(argmax_module({0.25, 0.25, 0.25, 0.25}) == 0);
  CHECK(argmax_module({0.1, 0.45, 0.45, 0.0}) == 1);
}

TEST_CASE("word recall over a POS class") {
  TaggedCaption ref;
  ref.tokens = {"a", "red", "dog"};
  ref.pos = {"DET", "ADJ", "NN"};
  ref.modules = {ModuleTag::Function, ModuleTag::Attribute, ModuleTag::Object};
  auto r = word_recall({words({"red", "cat"})}, {{ref}}, "ADJ");
  REQUIRE(r.has_value());
  CHECK(*r == doctest::Approx(1.0));
  auto none = word_recall({words({"red"})}, {{ref}}, "CD");
  CHECK_FALSE(none.has_value());
}

TEST_CASE("module ratios classify unknown tokens as function words") {
  std::map<std::string, ModuleTag> lexicon{{"dog", ModuleTag::Object},
                                           {"red", ModuleTag::Attribute}};
  auto ratios = module_ratios({words({"dog", "red", "blorp", "dog"})}, lexicon);
  CHECK(ratios[0] == doctest::Approx(0.5));
  CHECK(ratios[1] == doctest::Approx(0.25));
  CHECK(ratios[3] == doctest::Approx(0.25));
}

TEST_CASE("fusion entropy spans the degenerate and uniform extremes") {
  WeightSeq onehot{{1.0, 0.0, 0.0, 0.0}};
  WeightSeq half{{0.5, 0.5, 0.0, 0.0}};
  WeightSeq uniform{{0.25, 0.25, 0.25, 0.25}};
  CHECK(fusion_entropy({onehot}).mean_entropy == doctest::Approx(0.0));
  CHECK(fusion_entropy({half}).mean_entropy ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(fusion_entropy({uniform}).mean_entropy ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(fusion_entropy({uniform}).mean_max_weight == doctest::Approx(0.25));
  auto report = fusion_entropy({half}, {words({"dog"})});
  CHECK(report.per_word.at("dog") == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}
