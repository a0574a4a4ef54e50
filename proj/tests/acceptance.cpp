// End-to-end acceptance gate. Each criterion prints a single PASS/FAIL line;
// the process exits non-zero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <array>
#include <exception>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cvlnm/checkpoint.hpp"
#include "cvlnm/data.hpp"
#include "cvlnm/metrics.hpp"
#include "cvlnm/model.hpp"
#include "cvlnm/optim.hpp"
#include "cvlnm/sweep.hpp"
#include "cvlnm/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cvlnm;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

std::vector<Tensor> tensors(const NamedParams& params) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

Corpus make_corpus(std::size_t scenes, std::uint64_t seed,
                   const std::filesystem::path& root, std::size_t feature_dim) {
  GeneratorConfig gen = GeneratorConfig::defaults();
  gen.feature_dim = feature_dim;
  Corpus corpus;
  corpus.root = root;
  std::filesystem::create_directories(root / "features");
  for (std::size_t i = 0; i < scenes; ++i) {
    GeneratedScene scene = generate_scene(seed, i, gen);
    CorpusItem item;
    item.image_id = scene.scene.image_id;
    item.feature_path = "features/" + item.image_id + ".feat";
    item.captions = scene.captions;
    for (const auto& obj : scene.scene.objects)
      item.gold_objects.push_back(gen.categories[obj.category]);
    save_features(scene.features, root / item.feature_path);
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

Vocabulary corpus_vocab(const Corpus& corpus) {
  std::vector<std::vector<std::string>> captions;
  for (const auto& item : corpus.items)
    for (const auto& cap : item.captions) captions.push_back(cap.tokens);
  return Vocabulary::build(captions, 1);
}

ModelConfig small_config(std::uint64_t seed, std::size_t vocab) {
  ModelConfig cfg;
  cfg.feature_dim = 32;
  cfg.module_dim = 16;
  cfg.relation_heads = 2;
  cfg.hidden_dim = 32;
  cfg.attn_dim = 16;
  cfg.layout_dim = 16;
  cfg.fuse_heads = 2;
  cfg.embed_dim = 8;
  cfg.memory_dim = 16;
  cfg.vocab_size = vocab;
  cfg.max_len = 16;
  cfg.init_seed = seed;
  return cfg;
}

// Shared artefacts produced by criterion 4 and reused by 6 and 10.
struct OverfitRun {
  bool ok = false;
  Corpus corpus;
  Vocabulary vocab;
  ModelConfig config;
  std::unique_ptr<Model> model;
  PreparedCorpus prep;
  Scalar per_token = 0.0;
  Scalar exact = 0.0;
  std::size_t epochs = 0;
};

Scalar exact_match_rate(const Model& model, const PreparedCorpus& prep) {
  std::size_t hits = 0;
  for (const auto& ex : prep.examples) {
    ImageContext ctx = model.encode(prep.features[ex.item]);
    if (model.greedy_decode(ctx) == ex.tokens) ++hits;
  }
  return prep.examples.empty()
             ? 0.0
             : static_cast<Scalar>(hits) / static_cast<Scalar>(prep.examples.size());
}

// --------------------------------------------------------------------------

bool criterion_gradients(std::string& detail) {
  auto start = std::chrono::steady_clock::now();
  Scalar worst = 0.0;
  auto track = [&](Scalar err) { worst = std::max(worst, err); };

  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    Rng rng(1000 + draw);
    EncoderConfig ec;
    ec.feature_dim = 6;
    ec.module_dim = 3;
    ec.relation_heads = 2;
    ec.hidden_dim = 6;
    ObjectModule object(ec, rng);
    AttributeModule attribute(ec, rng);
    RelationModule rel(ec, rng);
    FunctionModule fun(ec, rng);
    Tensor regions = testutil::random_matrix(3, 6, rng);
    Tensor hidden = testutil::random_vector(6, rng);
    {
      NamedParams p;
      object.fc.collect("o", p);
      track(grad_check([&] { return sum(object.forward(regions)); }, tensors(p),
                       {1e-5, 6, draw}));
    }
    {
      NamedParams p;
      attribute.fc.collect("a", p);
      track(grad_check([&] { return sum(attribute.forward(regions)); }, tensors(p),
                       {1e-5, 6, draw}));
    }
    {
      NamedParams p;
      rel.attention.collect("att", p);
      rel.mlp_hidden.collect("h", p);
      rel.mlp_out.collect("out", p);
      track(grad_check([&] { return sum(rel.forward(regions)); }, tensors(p),
                       {1e-5, 4, draw}));
    }
    {
      FunctionModule fun2(ec, rng);
      NamedParams p;
      fun2.fc.collect("f", p);
      track(grad_check([&] { return sum(fun2.forward(hidden)); }, tensors(p),
                       {1e-5, 6, draw}));
    }

    MsAtt att(4, 3, 5, rng);
    Tensor values = testutil::random_matrix(3, 3, rng);
    Tensor query5 = testutil::random_vector(5, rng);
    track(grad_check(
        [&] {
          auto r = att.forward(values, query5);
          return add(sum(r.attended), pick(r.weights, 0));
        },
        {att.wv, att.wh, att.wa}, {1e-5, 6, draw}));

    ControllerConfig cc;
    cc.module_dim = 3;
    cc.hidden_dim = 4;
    cc.attn_dim = 3;
    cc.layout_dim = 4;
    cc.fuse_heads = 2;
    ModuleController ctl(cc, rng);
    Tensor layout = testutil::random_matrix(2, 4, rng);
    Tensor query4 = testutil::random_vector(4, rng);
    AttendedFeatures af;
    af.object = testutil::random_vector(3, rng);
    af.attribute = testutil::random_vector(3, rng);
    af.relation = testutil::random_vector(3, rng);
    af.function = testutil::random_vector(3, rng);
    {
      NamedParams p;
      ctl.collect(p);
      track(grad_check(
          [&] {
            auto r = ctl.soft_fuse(layout, query4, af);
            return add(sum(r.fused), pick(r.weights, 1));
          },
          tensors(p), {1e-5, 3, draw}));
    }

    ReasonConfig rc;
    rc.embed_dim = 3;
    rc.memory_dim = 4;
    rc.fused_dim = 6;
    ReasonModule reason(rc, rng);
    Tensor embeds = testutil::random_matrix(4, 9, rng, true);
    Tensor fused6 = testutil::random_vector(6, rng);
    {
      NamedParams p;
      reason.collect(p);
      auto ps = tensors(p);
      ps.push_back(embeds);
      track(grad_check(
          [&] {
            auto r = reason.attend(reason.build_memory(embeds), fused6);
            return add(sum(r.read), pick(r.beta, 1));
          },
          ps, {1e-5, 4, draw}));
    }

    LstmCell cell(4, 3, rng);
    Tensor x0 = testutil::random_vector(4, rng);
    Tensor x1 = testutil::random_vector(4, rng);
    {
      NamedParams p;
      cell.collect("cell", p);
      track(grad_check(
          [&] {
            auto s = cell.step(x1, cell.step(x0, cell.initial_state()));
            return add(sum(s.h), sum(s.c));
          },
          tensors(p), {1e-5, 4, draw}));
    }

    // Full decode step plus both losses. Parameters are jittered so no
    // freshly zeroed bias sits exactly on an activation kink; coordinates
    // whose true gradient is below 1e-6 (unresolvable by an h=1e-5 probe
    // against an O(1) loss) are verified in absolute terms instead; and
    // coordinates where a ReLU kink falls inside the probe window (possible
    // by chance, since memory pre-activations are small) are skipped because
    // a central difference is not a derivative estimate there.
    ModelConfig mc = testutil::tiny_config(draw);
    Model model(mc);
    model.set_memory_tokens({{4, 5, 6}, {5, 6, 7}});
    testutil::jitter_params(model.parameters(), rng);
    FeatureSet feats = testutil::random_features(2, mc.feature_dim, rng);
    std::vector<int> toks{4, 6};
    std::vector<ModuleTag> gold{ModuleTag::Object, ModuleTag::Relation};
    track(grad_check(
        [&] {
          auto traces = model.teacher_forced(model.encode(feats), toks);
          return total_loss(xe_loss(traces, toks), syntax_loss(traces, gold), 0.5);
        },
        tensors(model.parameters()), {1e-5, 1, draw, 1e-6, true}));
  }

  double elapsed = seconds_since(start);
  std::ostringstream os;
  os << "max relative error " << worst << ", " << elapsed << "s";
  detail = os.str();
  return worst <= 1e-4 && elapsed < 120.0;
}

bool criterion_normalization(std::string& detail) {
  NoGradGuard guard;
  std::size_t cases = 0, bad = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelConfig cfg = testutil::tiny_config(seed);
    Model model(cfg);
    model.set_memory_tokens({{4, 5, 6}, {6, 7, 8}});
    Rng rng(seed * 97 + 3);
    for (int trial = 0; trial < 25; ++trial) {
      FeatureSet feats =
          testutil::random_features(1 + rng.integer(4), cfg.feature_dim, rng);
      ImageContext ctx = model.encode(feats);
      SequenceState state = model.initial_state();
      int prev = Vocabulary::kBos;
      for (int t = 0; t < 4; ++t) {
        StepTrace trace = model.decode_step(ctx, state, prev);
        for (const Tensor* dist :
             {&trace.probs, &trace.fuse_weights, &trace.soft_weights, &trace.beta,
              &trace.object_attention, &trace.attribute_attention,
              &trace.relation_attention}) {
          Scalar total = 0.0;
          for (Scalar v : dist->data()) total += v;
          ++cases;
          if (std::abs(total - 1.0) > 1e-9) ++bad;
        }
        prev = 4 + static_cast<int>(rng.integer(cfg.vocab_size - 4));
      }
    }
  }
  std::ostringstream os;
  os << cases << " distributions checked, " << bad << " outside 1e-9";
  detail = os.str();
  return cases >= 1000 && bad == 0;
}

bool criterion_oracles(std::string& detail) {
  NoGradGuard guard;
  Scalar worst = 0.0;
  auto diff_vec = [&](const oracle::Vec& expect, const Tensor& got) {
    for (std::size_t i = 0; i < expect.size(); ++i)
      worst = std::max(worst, std::abs(expect[i] - got.at(i)));
  };

  {  // relation module, two regions, one head
    EncoderConfig ec;
    ec.feature_dim = 6;
    ec.module_dim = 3;
    ec.relation_heads = 1;
    Rng rng(7);
    RelationModule rel(ec, rng);
    Tensor regions = testutil::random_matrix(2, 6, rng);
    Tensor out = rel.forward(regions);
    oracle::Mat expect = oracle::relation_module(rel, oracle::to_mat(regions));
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 3; ++c)
        worst = std::max(worst, std::abs(out.at(r, c) - expect[r][c]));
  }
  {  // additive attention, three regions
    Rng rng(8);
    MsAtt att(5, 4, 6, rng);
    Tensor values = testutil::random_matrix(3, 4, rng);
    Tensor query = testutil::random_vector(6, rng);
    auto got = att.forward(values, query);
    auto expect = oracle::ms_att(att, oracle::to_mat(values), oracle::to_vec(query));
    diff_vec(expect.attended, got.attended);
    diff_vec(expect.alpha, got.weights);
  }
  {  // soft fusion
    ControllerConfig cc;
    cc.module_dim = 4;
    cc.hidden_dim = 6;
    cc.attn_dim = 4;
    cc.layout_dim = 6;
    cc.fuse_heads = 2;
    Rng rng(9);
    ModuleController ctl(cc, rng);
    Tensor layout = testutil::random_matrix(3, 6, rng);
    Tensor query = testutil::random_vector(6, rng);
    AttendedFeatures af;
    af.object = testutil::random_vector(4, rng);
    af.attribute = testutil::random_vector(4, rng);
    af.relation = testutil::random_vector(4, rng);
    af.function = testutil::random_vector(4, rng);
    auto got = ctl.soft_fuse(layout, query, af);
    auto expect = oracle::soft_fuse(ctl, oracle::to_mat(layout), oracle::to_vec(query),
                                    oracle::to_vec(af.object),
                                    oracle::to_vec(af.attribute),
                                    oracle::to_vec(af.relation),
                                    oracle::to_vec(af.function));
    diff_vec(expect.weights, got.weights);
    diff_vec(expect.fused, got.fused);
  }
  {  // memory read over five facts
    ReasonConfig rc;
    rc.embed_dim = 4;
    rc.memory_dim = 6;
    rc.fused_dim = 8;
    Rng rng(10);
    ReasonModule reason(rc, rng);
    Tensor memory = testutil::random_matrix(5, 6, rng);
    Tensor fused = testutil::random_vector(8, rng);
    auto got = reason.attend(memory, fused);
    auto expect =
        oracle::reason_attend(reason, oracle::to_mat(memory), oracle::to_vec(fused));
    diff_vec(expect.read, got.read);
    diff_vec(expect.beta, got.beta);
  }
  {  // two full decode steps
    ModelConfig mc = testutil::tiny_config(11);
    Model model(mc);
    model.set_memory_tokens({{4, 5, 6}, {5, 6, 7}, {6, 7, 8}});
    Rng rng(12);
    FeatureSet feats = testutil::random_features(3, mc.feature_dim, rng);
    ImageContext ctx = model.encode(feats);
    SequenceState state = model.initial_state();
    StepTrace t0 = model.decode_step(ctx, state, Vocabulary::kBos);
    StepTrace t1 = model.decode_step(ctx, state, 4);
    oracle::EncodedImage enc = oracle::encode(model, feats);
    oracle::DecodeState os = oracle::initial_state(model);
    auto o0 = oracle::decode_step(model, enc, os, Vocabulary::kBos);
    auto o1 = oracle::decode_step(model, enc, os, 4);
    diff_vec(o0.probs, t0.probs);
    diff_vec(o0.weights, t0.fuse_weights);
    diff_vec(o0.beta, t0.beta);
    diff_vec(o1.probs, t1.probs);
    diff_vec(o1.weights, t1.fuse_weights);
    diff_vec(o1.beta, t1.beta);
  }

  std::ostringstream strm;
  strm << "max absolute deviation " << worst;
  detail = strm.str();
  return worst <= 1e-10;
}

struct StopTraining {};

bool criterion_overfit(OverfitRun& run, std::string& detail) {
  auto start = std::chrono::steady_clock::now();
  testutil::TempDir dir("accept-overfit");
  Corpus full = make_corpus(32, 2024, dir.path(), 64);
  run.corpus = full;
  Corpus corpus = subsample_captions(full, 1, 7);
  run.vocab = corpus_vocab(full);

  ModelConfig mc;  // full-size configuration
  mc.vocab_size = run.vocab.size();
  mc.init_seed = 11;
  run.config = mc;
  run.model = std::make_unique<Model>(mc);
  run.prep = prepare_corpus(corpus, run.vocab, mc.max_len);

  Scalar tokens_per_example = 0.0;
  for (const auto& ex : run.prep.examples)
    tokens_per_example += static_cast<Scalar>(ex.tokens.size() + 1);
  tokens_per_example /= static_cast<Scalar>(run.prep.examples.size());

  TrainConfig tc;
  tc.lambda_xe = 1.0;
  tc.lambda_rl = 0.0;
  tc.lr = 2.5e-3;
  tc.lr_decay = 0.8;
  tc.lr_decay_every = 80;
  tc.epochs_xe = 200;
  tc.epochs_rl = 0;
  tc.batch_size = 8;
  tc.seed = 4;
  tc.eval_cider = false;

  try {
    train(*run.model, run.prep, run.prep, run.vocab, tc,
          [&](const EpochRecord& rec, const Model& m, const Adam&,
              const std::string&) {
            run.epochs = rec.epoch;
            run.per_token = rec.loss_l / tokens_per_example;
            if (run.per_token < 0.048 && rec.epoch % 5 == 0) {
              run.exact = exact_match_rate(m, run.prep);
              if (run.exact >= 0.95) throw StopTraining{};
            }
          });
  } catch (const StopTraining&) {
  }
  if (run.exact == 0.0) run.exact = exact_match_rate(*run.model, run.prep);

  double elapsed = seconds_since(start);
  std::ostringstream os;
  os << "epochs " << run.epochs << ", per-token loss " << run.per_token
     << ", exact-match " << run.exact << ", " << elapsed << "s";
  detail = os.str();
  run.ok = run.per_token < 0.05 && run.exact >= 0.95 && elapsed < 300.0;
  return run.ok;
}

bool criterion_syntax_loss(std::string& detail) {
  // Random fusion weights hit a random gold tag 25% of the time.
  Rng wrng(500);
  std::vector<WeightSeq> pred(1);
  std::vector<std::vector<ModuleTag>> gold(1);
  for (int i = 0; i < 100000; ++i) {
    std::array<Scalar, kModuleCount> w{};
    for (auto& v : w) v = wrng.uniform();
    pred[0].push_back(w);
    gold[0].push_back(static_cast<ModuleTag>(wrng.integer(4)));
  }
  Scalar random_acc = layout_accuracy(pred, gold).average;
  bool random_ok = std::abs(random_acc - 0.25) <= 0.01;

  testutil::TempDir dir("accept-syntax");
  Corpus full = make_corpus(500, 31, dir.path(), 32);
  Corpus train_split = subsample_captions(filter_split(full, 0), 1, 5);
  Corpus val_split = filter_split(full, 1);
  Vocabulary vocab = corpus_vocab(full);

  auto layout_acc_for = [&](Scalar lambda, std::uint64_t seed) {
    ModelConfig mc = small_config(seed, vocab.size());
    Model model(mc);
    TrainConfig tc;
    tc.lambda_xe = lambda;
    tc.lambda_rl = 0.0;
    tc.lr = 2e-3;
    tc.lr_decay = 0.8;
    tc.lr_decay_every = 60;
    tc.epochs_xe = 12;
    tc.epochs_rl = 0;
    tc.batch_size = 32;
    tc.seed = seed;
    tc.eval_cider = false;
    PreparedCorpus train_prep = prepare_corpus(train_split, vocab, mc.max_len);
    PreparedCorpus val_prep = prepare_corpus(val_split, vocab, mc.max_len);
    Scalar acc = 0.0;
    train(model, train_prep, val_prep, vocab, tc,
          [&](const EpochRecord& rec, const Model&, const Adam&,
              const std::string&) { acc = rec.layout_acc; });
    return acc;
  };

  std::size_t good_seeds = 0;
  std::ostringstream os;
  os.precision(3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Scalar with = layout_acc_for(1.0, seed);
    Scalar without = layout_acc_for(0.0, seed);
    bool ok = with - without >= 0.15 && with > 0.25 && without > 0.25;
    if (ok) ++good_seeds;
    os << " s" << seed << ":" << with << "/" << without;
  }
  std::ostringstream head;
  head << "random-w accuracy " << random_acc << ", seeds(with/without)" << os.str()
       << ", " << good_seeds << "/5 seeds ok";
  detail = head.str();
  return random_ok && good_seeds >= 4;
}

// A model fit on a diverse corpus cannot memorize adjectives from language
// context alone, so its adjective emission genuinely routes through the
// attribute module; an overfit model would keep emitting memorized adjectives
// with the module removed.
bool criterion_removal(std::string& detail) {
  testutil::TempDir dir("accept-removal");
  Corpus full = make_corpus(300, 31, dir.path(), 32);
  Corpus train_split = subsample_captions(filter_split(full, 0), 1, 5);
  Corpus val_split = filter_split(full, 1);
  Vocabulary vocab = corpus_vocab(full);

  ModelConfig mc = small_config(3, vocab.size());
  Model model(mc);
  TrainConfig tc;
  tc.lambda_xe = 1.0;
  tc.lambda_rl = 0.0;
  tc.lr = 2.5e-3;
  tc.lr_decay = 0.8;
  tc.lr_decay_every = 60;
  tc.epochs_xe = 70;
  tc.epochs_rl = 0;
  tc.batch_size = 16;
  tc.seed = 3;
  tc.eval_cider = false;
  PreparedCorpus train_prep = prepare_corpus(train_split, vocab, mc.max_len);
  PreparedCorpus val_prep = prepare_corpus(val_split, vocab, mc.max_len);
  train(model, train_prep, val_prep, vocab, tc,
        [](const EpochRecord&, const Model&, const Adam&, const std::string&) {});

  auto lexicon = build_module_lexicon(full);
  auto generated_ratios = [&](const Model& m) {
    std::vector<TokenSeq> captions;
    for (const auto& feats : val_prep.features) {
      ImageContext ctx = m.encode(feats);
      TokenSeq words;
      for (int t : m.greedy_decode(ctx)) words.push_back(vocab.token(t));
      captions.push_back(std::move(words));
    }
    return module_ratios(captions, lexicon);
  };

  Scalar base = generated_ratios(model)[1];

  ModelConfig cut_cfg = mc;
  cut_cfg.cut_module = static_cast<int>(ModuleTag::Attribute);
  Model cut(cut_cfg);
  NamedParams src = model.parameters();
  NamedParams dst = cut.parameters();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i].second.data() = src[i].second.data();
  Scalar removed = generated_ratios(cut)[1];

  std::ostringstream os;
  os << "adjective fraction " << base << " -> " << removed;
  detail = os.str();
  return base > 0.0 && removed > 0.0 && removed <= 0.5 * base;
}

bool criterion_decoding(std::string& detail) {
  NoGradGuard guard;
  std::size_t greedy_match = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    ModelConfig cfg = testutil::tiny_config(trial, 7);
    cfg.max_len = 6;
    Model model(cfg);
    Rng rng(trial + 9000);
    ImageContext ctx = model.encode(
        testutil::random_features(1 + rng.integer(3), cfg.feature_dim, rng));
    if (model.beam_search(ctx, 1) == model.greedy_decode(ctx)) ++greedy_match;
  }

  // Exhaustive optimum on three-word toy models (vocab ids 3, 4, 5 plus the
  // reserved tokens), max_len 3.
  std::size_t beam_match = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    ModelConfig cfg = testutil::tiny_config(trial + 300, 6);
    cfg.max_len = 3;
    Model model(cfg);
    Rng rng(trial + 12000);
    ImageContext ctx = model.encode(
        testutil::random_features(2, cfg.feature_dim, rng));

    auto sequence_score = [&](const std::vector<int>& toks) {
      SequenceState state = model.initial_state();
      Scalar total = 0.0;
      int prev = Vocabulary::kBos;
      for (int tok : toks) {
        StepTrace trace = model.decode_step(ctx, state, prev);
        total += std::log(std::max(trace.probs.at(static_cast<std::size_t>(tok)),
                                   1e-300));
        prev = tok;
      }
      if (toks.size() < cfg.max_len) {
        StepTrace trace = model.decode_step(ctx, state, prev);
        total += std::log(std::max(trace.probs.at(Vocabulary::kEos), 1e-300));
      }
      return total;
    };

    std::vector<int> best;
    Scalar best_score = -1e300;
    std::function<void(std::vector<int>&)> enumerate = [&](std::vector<int>& prefix) {
      Scalar score = sequence_score(prefix);
      if (score > best_score) {
        best_score = score;
        best = prefix;
      }
      if (prefix.size() == cfg.max_len) return;
      for (int tok = 3; tok <= 5; ++tok) {
        prefix.push_back(tok);
        enumerate(prefix);
        prefix.pop_back();
      }
    };
    std::vector<int> prefix;
    enumerate(prefix);
    if (model.beam_search(ctx, 5) == best) ++beam_match;
  }

  std::ostringstream os;
  os << "beam1==greedy " << greedy_match << "/100, beam5 optimal " << beam_match
     << "/100";
  detail = os.str();
  return greedy_match == 100 && beam_match >= 99;
}

bool criterion_metrics(std::string& detail) {
  TokenSeq cap{"a", "red", "dog", "chases", "the", "cat"};
  Scalar self_cider = cider_d({cap}, {{cap}});
  Scalar self_bleu = bleu({cap}, {{cap}});

  Rng rng(64);
  Scalar worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t images = 1 + rng.integer(4);
    std::vector<TokenSeq> cands;
    std::vector<std::vector<TokenSeq>> refs;
    auto make_caption = [&] {
      TokenSeq t;
      std::size_t len = 1 + rng.integer(7);
      for (std::size_t i = 0; i < len; ++i)
        t.push_back("w" + std::to_string(rng.integer(5)));
      return t;
    };
    for (std::size_t i = 0; i < images; ++i) {
      cands.push_back(make_caption());
      std::vector<TokenSeq> image_refs;
      std::size_t n_refs = 1 + rng.integer(3);
      for (std::size_t r = 0; r < n_refs; ++r) image_refs.push_back(make_caption());
      refs.push_back(std::move(image_refs));
    }
    worst = std::max(worst, std::abs(cider_d(cands, refs) - oracle::cider_d(cands, refs)));
    worst = std::max(worst, std::abs(bleu(cands, refs) - oracle::bleu(cands, refs)));
  }

  std::ostringstream os;
  os << "self CIDEr-D " << self_cider << ", self BLEU " << self_bleu
     << ", max oracle deviation " << worst;
  detail = os.str();
  return std::abs(self_cider - 10.0) <= 1e-6 && self_bleu == 1.0 && worst <= 1e-9;
}

bool criterion_scst(std::string& detail) {
  // Zero advantage must leave every parameter untouched, bit for bit.
  ModelConfig cfg = testutil::tiny_config(77);
  Model model(cfg);
  Rng rng(21);
  FeatureSet feats = testutil::random_features(2, cfg.feature_dim, rng);
  std::vector<std::vector<Scalar>> before;
  NamedParams params = model.parameters();
  for (const auto& [name, t] : params) before.push_back(t.data());
  Adam opt(params);
  Rng sample_rng(5);
  ScstResult r = scst_loss(model, model.encode(feats),
                           [](const std::vector<int>&) { return 0.37; }, sample_rng);
  opt.zero_grad();
  backward(r.loss);
  opt.step();
  bool untouched = r.advantage == 0.0;
  for (std::size_t i = 0; i < params.size(); ++i)
    untouched = untouched && params[i].second.data() == before[i];

  // Toy enumerable policy: two draws per sample from softmax(theta) over
  // three actions; compare the sampled policy gradient with the
  // finite-difference gradient of the exact expected reward. Samples come in
  // antithetic pairs (u and 1-u through the inverse CDF) and the baseline is
  // a fixed action pair whose reward sits near the expected reward; both are
  // unbiased-preserving variance reductions that let 1e5 samples resolve the
  // gradient to well under the 2% bound.
  Tensor theta = Tensor::vector({0.2, -0.4, 0.5}, true);
  const std::array<Scalar, 9> reward_table{0.9, 0.1, 0.4, 0.2, 0.8, 0.3,
                                           0.6, 0.0, 0.7};
  auto reward = [&](const std::vector<int>& toks) {
    return reward_table[static_cast<std::size_t>(toks[0] * 3 + toks[1])];
  };
  auto inverse_cdf = [](const std::vector<Scalar>& p, Scalar u) {
    Scalar acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size() - 1);
  };
  bool antithetic = false;
  Scalar u0 = 0.0, u1 = 0.0;
  auto sampler = [&](Rng& r) {
    Tensor p = softmax(theta);
    if (!antithetic) {
      u0 = r.uniform();
      u1 = r.uniform();
    } else {
      u0 = 1.0 - u0;
      u1 = 1.0 - u1;
    }
    antithetic = !antithetic;
    int a0 = inverse_cdf(p.data(), u0);
    int a1 = inverse_cdf(p.data(), u1);
    Model::Sampled s;
    s.tokens = {a0, a1};
    s.log_prob = add(log_clamped(pick(p, static_cast<std::size_t>(a0))),
                     log_clamped(pick(p, static_cast<std::size_t>(a1))));
    return s;
  };
  auto baseline = [] { return std::vector<int>{0, 2}; };  // reward 0.4

  std::vector<Scalar> estimate(3, 0.0);
  Rng mc_rng(1);
  const int samples = 100000;
  for (int s = 0; s < samples; ++s) {
    theta.zero_grad();
    ScstResult step = scst_loss(sampler, baseline, reward, mc_rng);
    backward(step.loss);
    // the REINFORCE ascent direction is minus the loss gradient
    for (std::size_t i = 0; i < 3; ++i) estimate[i] -= theta.grad()[i];
  }
  for (auto& v : estimate) v /= static_cast<Scalar>(samples);

  auto expected_reward = [&](const std::vector<Scalar>& logits) {
    Scalar mx = *std::max_element(logits.begin(), logits.end());
    std::vector<Scalar> p(3);
    Scalar z = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      p[i] = std::exp(logits[i] - mx);
      z += p[i];
    }
    for (auto& v : p) v /= z;
    Scalar j = 0.0;
    for (int a0 = 0; a0 < 3; ++a0)
      for (int a1 = 0; a1 < 3; ++a1)
        j += p[static_cast<std::size_t>(a0)] * p[static_cast<std::size_t>(a1)] *
             reward_table[static_cast<std::size_t>(a0 * 3 + a1)];
    return j;
  };
  std::vector<Scalar> fd(3);
  Scalar err2 = 0.0, fd2 = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<Scalar> up = theta.data(), down = theta.data();
    up[i] += 1e-6;
    down[i] -= 1e-6;
    fd[i] = (expected_reward(up) - expected_reward(down)) / 2e-6;
    err2 += (estimate[i] - fd[i]) * (estimate[i] - fd[i]);
    fd2 += fd[i] * fd[i];
  }
  Scalar rel = std::sqrt(err2 / fd2);

  std::ostringstream os;
  os << "zero-advantage untouched " << (untouched ? "yes" : "no")
     << ", policy-gradient relative error " << rel;
  detail = os.str();
  return untouched && rel <= 0.02;
}

bool criterion_determinism(const OverfitRun& run, std::string& detail) {
  testutil::TempDir dir("accept-determinism");
  Corpus corpus = make_corpus(6, 77, dir.path(), 32);
  Vocabulary vocab = corpus_vocab(corpus);

  auto run_log = [&] {
    ModelConfig mc = small_config(3, vocab.size());
    Model model(mc);
    TrainConfig tc;
    tc.epochs_xe = 2;
    tc.epochs_rl = 1;
    tc.batch_size = 8;
    tc.seed = 42;
    tc.eval_cider = true;
    PreparedCorpus prep = prepare_corpus(corpus, vocab, mc.max_len);
    std::ostringstream log;
    log.precision(17);
    train(model, prep, prep, vocab, tc,
          [&](const EpochRecord& rec, const Model&, const Adam&, const std::string&) {
            log << rec.epoch << "\t" << rec.phase << "\t" << rec.lr << "\t"
                << rec.loss_l << "\t" << rec.loss_s << "\t" << rec.layout_acc
                << "\t" << rec.cider << "\n";
          });
    return log.str();
  };
  std::string log_a = run_log();
  std::string log_b = run_log();
  bool logs_identical = !log_a.empty() && log_a == log_b;

  bool captions_preserved = false;
  if (run.model) {
    auto file = dir.path() / "model.ckpt";
    save_checkpoint(file, *run.model, run.vocab);
    LoadedCheckpoint loaded = load_checkpoint(file);
    captions_preserved = true;
    for (const auto& feats : run.prep.features) {
      std::vector<int> a = run.model->greedy_decode(run.model->encode(feats));
      std::vector<int> b = loaded.model.greedy_decode(loaded.model.encode(feats));
      captions_preserved = captions_preserved && a == b;
    }
  }

  std::ostringstream os;
  os << "metrics logs identical " << (logs_identical ? "yes" : "no")
     << ", checkpoint captions preserved " << (captions_preserved ? "yes" : "no");
  detail = os.str();
  return logs_identical && captions_preserved;
}

bool criterion_few_shot(std::string& detail) {
  testutil::TempDir dir("accept-fewshot");
  Corpus corpus = make_corpus(100, 55, dir.path(), 32);
  Vocabulary vocab = corpus_vocab(corpus);

  SweepConfig cfg;
  cfg.model = small_config(0, vocab.size());
  cfg.train.lambda_xe = 1.0;
  cfg.train.lambda_rl = 0.0;
  cfg.train.lr = 2e-3;
  cfg.train.lr_decay = 0.8;
  cfg.train.lr_decay_every = 60;
  cfg.train.epochs_xe = 10;
  cfg.train.epochs_rl = 0;
  cfg.train.batch_size = 32;
  cfg.vocab_min_count = 1;
  cfg.x_values = {1, 5};
  cfg.seeds = {1, 2, 3, 4, 5};
  cfg.threads = 1;
  SweepVariant syntax{"syntax", 1.0, false, true};
  SweepVariant object_only{"object-only", 0.0, true, true};
  cfg.variants = {syntax, object_only};

  SweepResult result = run_sweep(corpus, cfg);
  auto cider_of = [&](const std::string& variant, std::size_t x, std::uint64_t seed)
      -> std::optional<Scalar> {
    for (const auto& c : result.cells)
      if (c.variant == variant && c.x == x && c.seed == seed && !c.failed)
        return c.cider;
    return std::nullopt;
  };

  std::size_t wins = 0, comparable = 0;
  std::ostringstream seeds_os;
  seeds_os.precision(3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto s1 = cider_of("syntax", 1, seed);
    auto s5 = cider_of("syntax", 5, seed);
    auto o1 = cider_of("object-only", 1, seed);
    auto o5 = cider_of("object-only", 5, seed);
    if (!s1 || !s5 || !o1 || !o5) continue;
    ++comparable;
    Scalar det_syntax = *s5 - *s1;
    Scalar det_object = *o5 - *o1;
    if (det_syntax < det_object) ++wins;
    seeds_os << " s" << seed << ":" << det_syntax << "<" << det_object << "?";
  }
  std::ostringstream os;
  os << "syntax deterioration smaller in " << wins << "/" << comparable
     << " seeds;" << seeds_os.str();
  detail = os.str();
  return comparable == 5 && wins >= 3;
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    std::function<bool(std::string&)> fn;
  };
  OverfitRun overfit;

  std::vector<Entry> entries{
      {"criterion 1 (gradient correctness)", criterion_gradients},
      {"criterion 2 (normalization invariants)", criterion_normalization},
      {"criterion 3 (scalar-loop oracle equivalence)", criterion_oracles},
      {"criterion 4 (training-set overfit)",
       [&](std::string& d) { return criterion_overfit(overfit, d); }},
      {"criterion 5 (module-supervision effect)", criterion_syntax_loss},
      {"criterion 6 (attribute removal effect)", criterion_removal},
      {"criterion 7 (beam decoding)", criterion_decoding},
      {"criterion 8 (metric fidelity)", criterion_metrics},
      {"criterion 9 (policy-gradient sanity)", criterion_scst},
      {"criterion 10 (determinism and persistence)",
       [&](std::string& d) { return criterion_determinism(overfit, d); }},
      {"criterion 11 (few-shot deterioration ordering)", criterion_few_shot},
  };

  int failures = 0;
  for (auto& entry : entries) {
    std::string detail;
    bool ok = false;
    try {
      ok = entry.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("%s: %s%s%s\n", entry.name, ok ? "PASS" : "FAIL",
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
