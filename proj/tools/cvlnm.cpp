// Command-line surface: corpus generation, training, captioning, evaluation,
// and the caption-budget sweep. Exit codes: 0 success, 1 usage/validation,
// 2 IO failure, 3 numerical failure.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cvlnm/checkpoint.hpp"
#include "cvlnm/data.hpp"
#include "cvlnm/metrics.hpp"
#include "cvlnm/model.hpp"
#include "cvlnm/reason.hpp"
#include "cvlnm/sweep.hpp"
#include "cvlnm/training.hpp"

namespace {

using namespace cvlnm;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumerics = 3;

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setfill('0') << std::setw(16) << v;
  return out.str();
}

std::size_t env_threads() {
  const char* env = std::getenv("CVLNM_THREADS");
  if (!env) return 1;
  long v = std::atol(env);
  return v > 0 ? static_cast<std::size_t>(v) : 1;
}

int require_module_name(const std::string& name) {
  int m = parse_module_name(name);
  if (m < 0)
    throw ConfigError("unknown module name '" + name +
                      "' (expected object|attribute|relation|function)");
  return m;
}

// ---- gen-data --------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::size_t scenes = 0;
  std::uint64_t seed = 0;
  Scalar sigma = 0.1;
  std::size_t feature_dim = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::size_t max_triplets = 64;
};

int cmd_gen_data(const GenDataArgs& args) {
  if (args.scenes == 0) throw ConfigError("empty corpus: --scenes must be >= 1");
  if (args.min_objects < 2 || args.max_objects < args.min_objects)
    throw ConfigError("need 2 <= min-objects <= max-objects");

  GeneratorConfig gen = GeneratorConfig::defaults();
  gen.sigma = args.sigma;
  gen.feature_dim = args.feature_dim;
  gen.min_objects = args.min_objects;
  gen.max_objects = args.max_objects;

  std::filesystem::path root(args.out);
  std::filesystem::create_directories(root / "features");

  Corpus corpus;
  corpus.root = root;
  for (std::size_t i = 0; i < args.scenes; ++i) {
    GeneratedScene g = generate_scene(args.seed, i, gen);
    std::string feature_path = "features/" + g.scene.image_id + ".feat";
    save_features(g.features, root / feature_path);
    CorpusItem item;
    item.image_id = g.scene.image_id;
    item.feature_path = feature_path;
    item.captions = g.captions;
    for (const auto& obj : g.scene.objects)
      item.gold_objects.push_back(gen.categories[obj.category]);
    std::sort(item.gold_objects.begin(), item.gold_objects.end());
    item.gold_objects.erase(
        std::unique(item.gold_objects.begin(), item.gold_objects.end()),
        item.gold_objects.end());
    corpus.items.push_back(std::move(item));
  }
  save_corpus(corpus, root / "corpus.jsonl");

  // Fact bank: category-attribute facts for the deterministic pairs, plus
  // category-predicate-category facts with seeded weights.
  {
    std::ofstream out(root / "triplets.tsv");
    if (!out) throw IoError("cannot open " + (root / "triplets.tsv").string());
    out << "# subject\tpredicate\tobject\tweight\n";
    std::size_t written = 0;
    for (std::size_t c = 0; c < gen.categories.size() && written < args.max_triplets;
         ++c) {
      if (c == 4 || c == 5) {
        out << gen.categories[c] << "\tis\t"
            << gen.attributes[c % gen.attributes.size()] << "\t2.0\n";
        ++written;
      }
    }
    Rng rng(args.seed ^ 0x74726970ull);
    for (std::size_t c = 0; c < gen.categories.size() && written < args.max_triplets;
         ++c)
      for (std::size_t p = 0;
           p < gen.predicates.size() && written < args.max_triplets; ++p) {
        out << gen.categories[c] << "\t" << gen.predicates[p] << "\t"
            << gen.categories[(c + 1) % gen.categories.size()] << "\t"
            << std::setprecision(6) << rng.uniform() << "\n";
        ++written;
      }
    if (!out) throw IoError("write failed for triplets.tsv");
  }

  json manifest;
  manifest["scenes"] = args.scenes;
  manifest["seed"] = args.seed;
  manifest["sigma"] = args.sigma;
  manifest["feature_dim"] = args.feature_dim;
  manifest["min_objects"] = args.min_objects;
  manifest["max_objects"] = args.max_objects;
  manifest["max_triplets"] = args.max_triplets;
  manifest["corpus_hash"] = hex64(hash_file(root / "corpus.jsonl"));
  manifest["triplet_hash"] = hex64(hash_file(root / "triplets.tsv"));
  std::ofstream mf(root / "manifest.json");
  if (!mf) throw IoError("cannot open manifest.json for writing");
  mf << manifest.dump(2) << "\n";

  std::cout << "wrote " << args.scenes << " scenes to " << root.string() << "\n";
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::string out;
  std::string resume;
  std::string triplets;  // empty: <corpus>/triplets.tsv when present
  std::string fusion = "soft";
  std::string cut_module, fixed_module;
  bool no_reason = false;
  bool force = false;
  bool eval_cider = true;
  Scalar lambda_xe = 1.0;
  Scalar lambda_rl = 0.5;
  Scalar lr = 5e-4;
  Scalar lr_decay = 0.8;
  std::size_t lr_decay_every = 5;
  std::size_t epochs_xe = 35;
  std::size_t epochs_rl = 65;
  std::size_t batch = 100;
  std::uint64_t seed = 0;
  std::size_t captions_per_image = 0;  // 0 = all
  std::size_t min_count = 1;
  std::size_t max_len = 16;
  std::size_t max_triplets = 64;
  // model dims (feature_dim comes from the corpus)
  std::size_t module_dim = 32, hidden_dim = 64, attn_dim = 32, layout_dim = 32;
  std::size_t embed_dim = 16, memory_dim = 32;
  std::size_t relation_heads = 4, fuse_heads = 4;
};

std::string pack_rng_blob(std::size_t completed_epochs, const std::string& rng) {
  return "epochs " + std::to_string(completed_epochs) + "\n" + rng;
}

bool unpack_rng_blob(const std::string& blob, std::size_t& epochs, std::string& rng) {
  std::istringstream in(blob);
  std::string word;
  if (!(in >> word >> epochs) || word != "epochs") return false;
  std::getline(in, rng);  // rest of first line (empty)
  std::getline(in, rng, '\0');
  return true;
}

int cmd_train(const TrainArgs& args) {
  Corpus corpus = load_corpus(args.corpus);
  Corpus train_split = filter_split(corpus, 0);
  Corpus val_split = filter_split(corpus, 1);
  if (train_split.items.empty()) throw ConfigError("train split is empty");
  if (args.captions_per_image > 0)
    train_split = subsample_captions(train_split, args.captions_per_image, args.seed);

  std::filesystem::create_directories(args.out);
  std::filesystem::path ckpt_path = std::filesystem::path(args.out) / "checkpoint.ckpt";
  std::filesystem::path metrics_path = std::filesystem::path(args.out) / "metrics.jsonl";

  Model model;
  Vocabulary vocab;
  ResumeState resume_state;
  bool resuming = false;

  if (!args.resume.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(args.resume);
    model = std::move(loaded.model);
    vocab = std::move(loaded.vocab);
    if (!loaded.optimizer)
      throw ConfigError("cannot resume: checkpoint has no optimizer state");
    resume_state.optimizer = *loaded.optimizer;
    if (!unpack_rng_blob(loaded.rng_state, resume_state.completed_epochs,
                         resume_state.rng_state))
      throw ConfigError("cannot resume: checkpoint lacks training progress state");
    resuming = true;
  } else {
    std::vector<std::vector<std::string>> captions;
    for (const auto& item : train_split.items)
      for (const auto& c : item.captions) captions.push_back(c.tokens);
    vocab = Vocabulary::build(captions, args.min_count);

    ModelConfig mc;
    mc.feature_dim = train_split.load_features_for(train_split.items[0]).feature_dim();
    mc.module_dim = args.module_dim;
    mc.relation_heads = args.relation_heads;
    mc.hidden_dim = args.hidden_dim;
    mc.attn_dim = args.attn_dim;
    mc.layout_dim = args.layout_dim;
    mc.fuse_heads = args.fuse_heads;
    mc.embed_dim = args.embed_dim;
    mc.memory_dim = args.memory_dim;
    mc.vocab_size = vocab.size();
    mc.max_len = args.max_len;
    mc.fusion = args.fusion == "hard" ? FusionMode::Hard : FusionMode::Soft;
    mc.no_reason = args.no_reason;
    if (!args.cut_module.empty()) mc.cut_module = require_module_name(args.cut_module);
    if (!args.fixed_module.empty())
      mc.fixed_module = require_module_name(args.fixed_module);
    mc.init_seed = args.seed;
    model = Model(mc);

    std::filesystem::path triplet_path =
        args.triplets.empty() ? std::filesystem::path(args.corpus) / "triplets.tsv"
                              : std::filesystem::path(args.triplets);
    if (!mc.no_reason && std::filesystem::exists(triplet_path)) {
      std::vector<std::array<int, 3>> mem;
      for (const auto& t : load_triplets(triplet_path, args.max_triplets))
        mem.push_back({vocab.index(t.subject), vocab.index(t.predicate),
                       vocab.index(t.object)});
      model.set_memory_tokens(std::move(mem));
    }
  }

  TrainConfig tc;
  tc.lambda_xe = args.lambda_xe;
  tc.lambda_rl = args.lambda_rl;
  tc.lr = args.lr;
  tc.lr_decay = args.lr_decay;
  tc.lr_decay_every = args.lr_decay_every;
  tc.epochs_xe = args.epochs_xe;
  tc.epochs_rl = args.epochs_rl;
  tc.batch_size = args.batch;
  tc.seed = args.seed;
  tc.eval_cider = args.eval_cider;

  PreparedCorpus train_prep = prepare_corpus(train_split, vocab, model.cfg.max_len);
  PreparedCorpus val_prep = prepare_corpus(val_split, vocab, model.cfg.max_len);

  std::ofstream metrics(metrics_path,
                        resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot open " + metrics_path.string());

  bool have_checkpoint = resuming;
  auto on_epoch = [&](const EpochRecord& rec, const Model& m, const Adam& opt,
                      const std::string& rng_state) {
    json line;
    line["epoch"] = rec.epoch;
    line["phase"] = rec.phase;
    line["lr"] = rec.lr;
    line["loss_l"] = rec.loss_l;
    line["loss_s"] = rec.loss_s;
    line["layout_acc"] = rec.layout_acc;
    line["cider"] = rec.cider;
    metrics << line.dump() << "\n";
    metrics.flush();
    save_checkpoint(ckpt_path, m, vocab, &opt,
                    pack_rng_blob(rec.epoch, rng_state));
    have_checkpoint = true;
  };

  try {
    train(model, train_prep, val_prep, vocab, tc, on_epoch,
          resuming ? &resume_state : nullptr);
  } catch (const NumericsError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    if (have_checkpoint)
      std::cerr << "last good checkpoint: " << ckpt_path.string() << "\n";
    return kExitNumerics;
  }
  std::cout << "trained; checkpoint at " << ckpt_path.string() << "\n";
  return kExitOk;
}

// ---- caption ---------------------------------------------------------------

struct CaptionArgs {
  std::string ckpt;
  std::string features;
  std::string out;  // empty = stdout
  std::size_t beam = 5;
  bool length_norm = false;
};

std::size_t arg_max(const std::vector<Scalar>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

int cmd_caption(const CaptionArgs& args) {
  LoadedCheckpoint loaded = load_checkpoint(args.ckpt);
  const Model& model = loaded.model;
  FeatureSet features = load_features(args.features);
  if (features.feature_dim() != model.cfg.feature_dim)
    throw ConfigError("feature dim mismatch: checkpoint expects " +
                      std::to_string(model.cfg.feature_dim) + ", features file has " +
                      std::to_string(features.feature_dim()));

  ImageContext ctx = model.encode(features);
  std::vector<int> tokens = model.beam_search(ctx, args.beam, args.length_norm);

  // Replay the chosen caption to expose per-step collocation internals.
  json steps = json::array();
  {
    NoGradGuard guard;
    auto traces = model.teacher_forced(ctx, tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const StepTrace& tr = traces[t];
      json step;
      step["word"] = loaded.vocab.token(tokens[t]);
      step["w"] = tr.fuse_weights.data();
      step["soft_w"] = tr.soft_weights.data();
      step["module"] =
          module_name(static_cast<ModuleTag>(arg_max(tr.soft_weights.data())));
      step["attended_region"] = {
          {"object", arg_max(tr.object_attention.data())},
          {"attribute", arg_max(tr.attribute_attention.data())},
          {"relation", arg_max(tr.relation_attention.data())}};
      if (tr.beta.defined()) {
        std::vector<std::pair<Scalar, std::size_t>> ranked;
        for (std::size_t i = 0; i < tr.beta.size(); ++i)
          ranked.emplace_back(tr.beta.at(i), i);
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
          if (a.first != b.first) return a.first > b.first;
          return a.second < b.second;
        });
        json top = json::array();
        for (std::size_t k = 0; k < std::min<std::size_t>(3, ranked.size()); ++k)
          top.push_back({{"index", ranked[k].second}, {"beta", ranked[k].first}});
        step["beta_top"] = top;
      }
      steps.push_back(std::move(step));
    }
  }

  json out;
  std::vector<std::string> words;
  for (int t : tokens) words.push_back(loaded.vocab.token(t));
  out["caption"] = words;
  out["beam"] = args.beam;
  out["steps"] = steps;
  std::string text = out.dump(2) + "\n";
  if (args.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(args.out);
    if (!f) throw IoError("cannot open " + args.out + " for writing");
    f << text;
  }
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string corpus;
  std::string metrics = "layout_acc,cider,bleu,chair,recall,entropy,ratios";
  std::string split = "test";
  std::string cut_module;
  std::string out;  // empty = stdout
  std::size_t beam = 1;
};

int cmd_eval(const EvalArgs& args) {
  static const std::set<std::string> kValid{
      "layout_acc", "cider", "bleu", "chair", "recall", "entropy", "ratios"};
  std::vector<std::string> requested;
  {
    std::istringstream in(args.metrics);
    std::string name;
    while (std::getline(in, name, ',')) {
      if (!kValid.count(name)) {
        std::string all;
        for (const auto& v : kValid) all += (all.empty() ? "" : ", ") + v;
        throw ConfigError("unknown metric '" + name + "' (valid: " + all + ")");
      }
      requested.push_back(name);
    }
    if (requested.empty()) throw ConfigError("no metrics requested");
  }
  auto wants = [&](const std::string& name) {
    return std::find(requested.begin(), requested.end(), name) != requested.end();
  };

  LoadedCheckpoint loaded = load_checkpoint(args.ckpt);
  Model& model = loaded.model;
  if (!args.cut_module.empty()) {
    model.cfg.cut_module = require_module_name(args.cut_module);
    model.cfg.fixed_module = -1;
  }

  Corpus corpus = load_corpus(args.corpus);
  Corpus subset;
  subset.root = corpus.root;
  if (args.split == "all") {
    subset = corpus;
  } else {
    int split = args.split == "train" ? 0 : args.split == "val" ? 1 : 2;
    if (args.split != "train" && args.split != "val" && args.split != "test")
      throw ConfigError("unknown split '" + args.split + "'");
    subset = filter_split(corpus, split);
  }
  if (subset.items.empty()) throw ConfigError("split '" + args.split + "' is empty");

  PreparedCorpus prep = prepare_corpus(subset, loaded.vocab, model.cfg.max_len);

  // Decode every image once; teacher-forced replays provide the fusion
  // weights behind entropy.
  std::vector<TokenSeq> candidates;
  std::vector<std::vector<TokenSeq>> references;
  std::vector<WeightSeq> decoded_weights;
  {
    NoGradGuard guard;
    for (std::size_t i = 0; i < prep.features.size(); ++i) {
      ImageContext ctx = model.encode(prep.features[i]);
      std::vector<int> tokens = args.beam <= 1
                                    ? model.greedy_decode(ctx)
                                    : model.beam_search(ctx, args.beam);
      TokenSeq words;
      for (int t : tokens) words.push_back(loaded.vocab.token(t));
      if (wants("entropy")) {
        auto traces = model.teacher_forced(ctx, tokens);
        WeightSeq ws;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
          std::array<Scalar, kModuleCount> w{};
          for (std::size_t m = 0; m < kModuleCount; ++m)
            w[m] = traces[t].soft_weights.at(m);
          ws.push_back(w);
        }
        decoded_weights.push_back(std::move(ws));
      }
      candidates.push_back(std::move(words));
      references.push_back(prep.references[i]);
    }
  }

  json report;
  json m;
  if (wants("layout_acc")) {
    EpochRecord rec = evaluate_epoch(model, prep, loaded.vocab, false);
    m["layout_acc"] = rec.layout_acc;
  }
  if (wants("cider")) m["cider"] = cider_d(candidates, references);
  if (wants("bleu")) m["bleu"] = bleu(candidates, references);
  if (wants("chair")) {
    std::set<std::string> lexicon;
    std::vector<std::set<std::string>> gold;
    for (const auto& item : subset.items) {
      gold.emplace_back(item.gold_objects.begin(), item.gold_objects.end());
      for (const auto& caption : item.captions)
        for (std::size_t t = 0; t < caption.tokens.size(); ++t)
          if (caption.pos[t] == "NN") lexicon.insert(caption.tokens[t]);
    }
    ChairResult ch = chair(candidates, gold, lexicon);
    m["chair_s"] = ch.chair_s;
    m["chair_i"] = ch.chair_i ? json(*ch.chair_i) : json(nullptr);
  }
  if (wants("recall")) {
    std::vector<std::vector<TaggedCaption>> refs;
    for (const auto& item : subset.items) refs.push_back(item.captions);
    json recall;
    for (const std::string& pos : {"NN", "ADJ", "VB", "PREP", "CD"}) {
      auto r = word_recall(candidates, refs, pos);
      recall[pos] = r ? json(*r) : json(nullptr);
    }
    m["recall"] = recall;
  }
  if (wants("entropy")) {
    FusionEntropyReport rep = fusion_entropy(decoded_weights, candidates);
    m["entropy"] = {{"mean", rep.mean_entropy},
                    {"mean_max_weight", rep.mean_max_weight}};
  }
  if (wants("ratios")) {
    auto lexicon = build_module_lexicon(subset);
    auto ratios = module_ratios(candidates, lexicon);
    m["ratios"] = {{"object", ratios[0]},
                   {"attribute", ratios[1]},
                   {"relation", ratios[2]},
                   {"function", ratios[3]}};
  }
  report["metrics"] = m;
  report["split"] = args.split;
  report["beam"] = args.beam;
  report["cut_module"] = args.cut_module;
  report["checkpoint_hash"] = hex64(hash_file(args.ckpt));
  report["corpus_hash"] =
      hex64(hash_file(std::filesystem::path(args.corpus) / "corpus.jsonl"));

  std::string text = report.dump(2) + "\n";
  if (args.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(args.out);
    if (!f) throw IoError("cannot open " + args.out + " for writing");
    f << text;
  }
  return kExitOk;
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string corpus;
  std::string spec;
  std::string out;
  std::size_t threads = 0;  // 0 = CVLNM_THREADS (default 1)
};

int cmd_sweep(const SweepArgs& args) {
  std::ifstream in(args.spec);
  if (!in) throw IoError("cannot open sweep spec " + args.spec);
  json spec;
  try {
    spec = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sweep spec parse error: ") + e.what());
  }

  SweepConfig cfg;
  for (const auto& v : spec.at("variants")) {
    SweepVariant var;
    var.name = v.at("name").get<std::string>();
    var.lambda = v.value("lambda", 1.0);
    var.object_only = v.value("object_only", false);
    var.no_reason = v.value("no_reason", false);
    cfg.variants.push_back(std::move(var));
  }
  cfg.x_values = spec.at("x_values").get<std::vector<std::size_t>>();
  cfg.seeds = spec.at("seeds").get<std::vector<std::uint64_t>>();
  if (spec.contains("train")) {
    const auto& t = spec["train"];
    cfg.train.epochs_xe = t.value("epochs_xe", cfg.train.epochs_xe);
    cfg.train.epochs_rl = t.value("epochs_rl", cfg.train.epochs_rl);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.lambda_rl = t.value("lambda_rl", cfg.train.lambda_rl);
  }
  if (spec.contains("model")) {
    const auto& mj = spec["model"];
    cfg.model.feature_dim = mj.value("feature_dim", cfg.model.feature_dim);
    cfg.model.module_dim = mj.value("module_dim", cfg.model.module_dim);
    cfg.model.relation_heads = mj.value("relation_heads", cfg.model.relation_heads);
    cfg.model.hidden_dim = mj.value("hidden_dim", cfg.model.hidden_dim);
    cfg.model.attn_dim = mj.value("attn_dim", cfg.model.attn_dim);
    cfg.model.layout_dim = mj.value("layout_dim", cfg.model.layout_dim);
    cfg.model.fuse_heads = mj.value("fuse_heads", cfg.model.fuse_heads);
    cfg.model.embed_dim = mj.value("embed_dim", cfg.model.embed_dim);
    cfg.model.memory_dim = mj.value("memory_dim", cfg.model.memory_dim);
    cfg.model.max_len = mj.value("max_len", cfg.model.max_len);
  }
  cfg.vocab_min_count = spec.value("vocab_min_count", std::size_t{1});
  if (spec.contains("triplets"))
    cfg.triplets = load_triplets(spec["triplets"].get<std::string>(),
                                 spec.value("max_triplets", std::size_t{64}));

  std::filesystem::create_directories(args.out);
  cfg.cache_dir = std::filesystem::path(args.out) / "cells";
  cfg.threads = args.threads ? args.threads : env_threads();

  Corpus corpus = load_corpus(args.corpus);
  SweepResult result = run_sweep(corpus, cfg);

  write_sweep_csv(result, std::filesystem::path(args.out) / "sweep.csv");
  write_sweep_json(result, std::filesystem::path(args.out) / "sweep.json");
  for (const auto& [key, agg] : result.aggregates)
    std::cout << key.first << " X=" << key.second << " cider=" << agg.mean_cider
              << " deterioration=" << agg.mean_deterioration << " (n="
              << agg.completed << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modular visual captioning toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI/TOML file");
  app.allow_config_extras(CLI::config_extras_mode::ignore_all);

  GenDataArgs gen;
  auto* cgen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  cgen->add_option("--out", gen.out, "Output directory")->required();
  cgen->add_option("--scenes", gen.scenes, "Number of scenes");
  cgen->add_option("--seed", gen.seed, "Generator seed");
  cgen->add_option("--sigma", gen.sigma, "Feature noise stddev");
  cgen->add_option("--feature-dim", gen.feature_dim, "Region feature width");
  cgen->add_option("--min-objects", gen.min_objects, "Min objects per scene");
  cgen->add_option("--max-objects", gen.max_objects, "Max objects per scene");
  cgen->add_option("--max-triplets", gen.max_triplets, "Fact bank size cap");

  TrainArgs tr;
  auto* ctr = app.add_subcommand("train", "Train a captioning model");
  ctr->add_option("--corpus", tr.corpus, "Corpus directory")->required();
  ctr->add_option("--out", tr.out, "Output directory")->required();
  ctr->add_option("--resume", tr.resume, "Checkpoint to resume from");
  ctr->add_option("--triplets", tr.triplets, "Fact bank TSV");
  ctr->add_option("--max-triplets", tr.max_triplets, "Fact bank size cap");
  ctr->add_option("--fusion", tr.fusion, "soft|hard")
      ->check(CLI::IsMember({"soft", "hard"}));
  ctr->add_option("--lambda", tr.lambda_xe,
                  "Syntax-loss weight during teacher forcing");
  ctr->add_option("--lambda-rl", tr.lambda_rl, "Syntax-loss weight during RL");
  ctr->add_option("--lr", tr.lr, "Initial learning rate");
  ctr->add_option("--lr-decay", tr.lr_decay, "Learning-rate decay factor");
  ctr->add_option("--lr-decay-every", tr.lr_decay_every,
                  "Epochs between decays");
  ctr->add_option("--epochs-xe", tr.epochs_xe, "Teacher-forcing epochs");
  ctr->add_option("--epochs-rl", tr.epochs_rl, "Self-critical epochs");
  ctr->add_option("--batch", tr.batch, "Batch size");
  ctr->add_option("--seed", tr.seed, "Training seed");
  ctr->add_option("--captions-per-image", tr.captions_per_image,
                  "Caption budget X (0 = all)");
  ctr->add_option("--min-count", tr.min_count, "Vocabulary min frequency");
  ctr->add_option("--max-len", tr.max_len, "Max caption length");
  ctr->add_flag("--no-reason", tr.no_reason, "Disable the memory module");
  ctr->add_option("--cut-module", tr.cut_module, "Zero this module's fusion weight");
  ctr->add_option("--fixed-module", tr.fixed_module, "Force one-hot fusion");
  ctr->add_flag("--force", tr.force, "Ignore hyperparameter mismatches");
  ctr->add_flag("!--no-eval-cider", tr.eval_cider, "Skip per-epoch CIDEr-D");
  ctr->add_option("--module-dim", tr.module_dim, "Module feature width");
  ctr->add_option("--hidden-dim", tr.hidden_dim, "LSTM width");
  ctr->add_option("--attn-dim", tr.attn_dim, "Additive attention width");
  ctr->add_option("--layout-dim", tr.layout_dim, "Collocation embedding width");
  ctr->add_option("--embed-dim", tr.embed_dim, "Word embedding width");
  ctr->add_option("--memory-dim", tr.memory_dim, "Memory slot width");
  ctr->add_option("--relation-heads", tr.relation_heads, "Self-attention heads");
  ctr->add_option("--fuse-heads", tr.fuse_heads, "Fusion cross-attention heads");

  CaptionArgs cap;
  auto* ccap = app.add_subcommand("caption", "Caption one feature file");
  ccap->add_option("--ckpt", cap.ckpt, "Checkpoint file")->required();
  ccap->add_option("--features", cap.features, "Feature file")->required();
  ccap->add_option("--beam", cap.beam, "Beam width");
  ccap->add_flag("--length-norm", cap.length_norm, "Normalize beam scores by length");
  ccap->add_option("--out", cap.out, "Write JSON here instead of stdout");

  EvalArgs ev;
  auto* cev = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  cev->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  cev->add_option("--corpus", ev.corpus, "Corpus directory")->required();
  cev->add_option("--metrics", ev.metrics, "Comma-separated metric list");
  cev->add_option("--split", ev.split, "train|val|test|all");
  cev->add_option("--cut-module", ev.cut_module, "Ablate this module at decode time");
  cev->add_option("--beam", ev.beam, "Beam width (1 = greedy)");
  cev->add_option("--out", ev.out, "Write report here instead of stdout");

  SweepArgs sw;
  auto* csw = app.add_subcommand("sweep", "Caption-budget robustness sweep");
  csw->add_option("--corpus", sw.corpus, "Corpus directory")->required();
  csw->add_option("--spec", sw.spec, "Sweep spec JSON")->required();
  csw->add_option("--out", sw.out, "Output directory")->required();
  csw->add_option("--threads", sw.threads, "Concurrent cells (default CVLNM_THREADS)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cgen->parsed()) return cmd_gen_data(gen);
    if (ctr->parsed()) return cmd_train(tr);
    if (ccap->parsed()) return cmd_caption(cap);
    if (cev->parsed()) return cmd_eval(ev);
    if (csw->parsed()) return cmd_sweep(sw);
  } catch (const NumericsError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerics;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
