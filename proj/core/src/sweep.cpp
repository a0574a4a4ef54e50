#include "cvlnm/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "cvlnm/metrics.hpp"

namespace cvlnm {

using nlohmann::json;

std::uint64_t sweep_config_hash(const SweepConfig& cfg, const SweepVariant& variant) {
  json j;
  j["variant"] = {{"name", variant.name},
                  {"lambda", variant.lambda},
                  {"object_only", variant.object_only},
                  {"no_reason", variant.no_reason}};
  j["train"] = {{"lambda_xe", cfg.train.lambda_xe},
                {"lambda_rl", cfg.train.lambda_rl},
                {"lr", cfg.train.lr},
                {"lr_decay", cfg.train.lr_decay},
                {"lr_decay_every", cfg.train.lr_decay_every},
                {"epochs_xe", cfg.train.epochs_xe},
                {"epochs_rl", cfg.train.epochs_rl},
                {"batch_size", cfg.train.batch_size}};
  j["model"] = {{"feature_dim", cfg.model.feature_dim},
                {"module_dim", cfg.model.module_dim},
                {"relation_heads", cfg.model.relation_heads},
                {"hidden_dim", cfg.model.hidden_dim},
                {"attn_dim", cfg.model.attn_dim},
                {"layout_dim", cfg.model.layout_dim},
                {"fuse_heads", cfg.model.fuse_heads},
                {"embed_dim", cfg.model.embed_dim},
                {"memory_dim", cfg.model.memory_dim},
                {"max_len", cfg.model.max_len}};
  j["vocab_min_count"] = cfg.vocab_min_count;
  j["triplets"] = cfg.triplets.size();
  std::string s = j.dump();
  return fnv1a(s.data(), s.size());
}

namespace {

std::filesystem::path cell_cache_path(const SweepConfig& cfg,
                                      const SweepVariant& variant, std::size_t x,
                                      std::uint64_t seed) {
  std::ostringstream name;
  name << std::hex << std::setfill('0') << std::setw(16)
       << sweep_config_hash(cfg, variant) << std::dec << "-x" << x << "-s" << seed
       << ".json";
  return cfg.cache_dir / name.str();
}

SweepCell run_cell(const Corpus& train_split, const Corpus& test_split,
                   const SweepConfig& cfg, const SweepVariant& variant,
                   std::size_t x, std::uint64_t seed) {
  SweepCell cell;
  cell.variant = variant.name;
  cell.x = x;
  cell.seed = seed;
  try {
    Corpus subsampled = subsample_captions(train_split, x, seed);
    std::vector<std::vector<std::string>> all_captions;
    for (const auto& item : train_split.items)
      for (const auto& c : item.captions) all_captions.push_back(c.tokens);
    Vocabulary vocab = Vocabulary::build(all_captions, cfg.vocab_min_count);

    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    mc.init_seed = seed;
    if (variant.object_only) {
      mc.fixed_module = static_cast<int>(ModuleTag::Object);
      mc.no_reason = true;
    }
    if (variant.no_reason) mc.no_reason = true;
    Model model(mc);
    if (!mc.no_reason && !cfg.triplets.empty()) {
      std::vector<std::array<int, 3>> mem;
      for (const auto& t : cfg.triplets)
        mem.push_back({vocab.index(t.subject), vocab.index(t.predicate),
                       vocab.index(t.object)});
      model.set_memory_tokens(std::move(mem));
    }

    TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.lambda_xe = variant.object_only ? 0.0 : variant.lambda;
    tc.lambda_rl = variant.object_only ? 0.0 : std::min(variant.lambda, cfg.train.lambda_rl);
    tc.eval_cider = false;  // skipped per epoch; scored once below

    PreparedCorpus train_prep = prepare_corpus(subsampled, vocab, mc.max_len);
    train(model, train_prep, train_prep, vocab, tc,
          [](const EpochRecord&, const Model&, const Adam&, const std::string&) {});

    PreparedCorpus test_prep = prepare_corpus(test_split, vocab, mc.max_len);
    std::vector<TokenSeq> candidates;
    std::vector<std::vector<TokenSeq>> references;
    for (std::size_t i = 0; i < test_prep.features.size(); ++i) {
      ImageContext ctx = model.encode(test_prep.features[i]);
      TokenSeq words;
      for (int t : model.greedy_decode(ctx)) words.push_back(vocab.token(t));
      candidates.push_back(std::move(words));
      references.push_back(test_prep.references[i]);
    }
    cell.cider = cider_d(candidates, references);
  } catch (const std::exception& e) {
    cell.failed = true;
    cell.error = e.what();
  }
  return cell;
}

}  // namespace

SweepResult run_sweep(const Corpus& corpus, const SweepConfig& cfg) {
  if (cfg.variants.empty() || cfg.x_values.empty() || cfg.seeds.empty())
    throw ConfigError("sweep: variants, x values, and seeds must be non-empty");
  Corpus train_split = filter_split(corpus, 0);
  Corpus test_split = filter_split(corpus, 2);
  if (train_split.items.empty() || test_split.items.empty())
    throw ConfigError("sweep: corpus too small for the 80/10/10 split");
  if (!cfg.cache_dir.empty()) std::filesystem::create_directories(cfg.cache_dir);

  struct Job {
    const SweepVariant* variant;
    std::size_t x;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& variant : cfg.variants)
    for (std::size_t x : cfg.x_values)
      for (std::uint64_t seed : cfg.seeds) jobs.push_back({&variant, x, seed});

  SweepResult result;
  result.cells.resize(jobs.size());
  std::mutex io_mutex;
  std::size_t next = 0;
  std::mutex next_mutex;

  auto worker = [&] {
    while (true) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= jobs.size()) return;
        i = next++;
      }
      const Job& job = jobs[i];
      std::filesystem::path cache;
      if (!cfg.cache_dir.empty()) {
        cache = cell_cache_path(cfg, *job.variant, job.x, job.seed);
        std::ifstream in(cache);
        if (in) {
          json j = json::parse(in);
          SweepCell cell;
          cell.variant = job.variant->name;
          cell.x = job.x;
          cell.seed = job.seed;
          cell.cider = j.at("cider").get<Scalar>();
          cell.failed = j.at("failed").get<bool>();
          cell.error = j.at("error").get<std::string>();
          result.cells[i] = std::move(cell);
          continue;
        }
      }
      SweepCell cell = run_cell(train_split, test_split, cfg, *job.variant,
                                job.x, job.seed);
      if (!cache.empty()) {
        std::lock_guard<std::mutex> lock(io_mutex);
        json j;
        j["cider"] = cell.cider;
        j["failed"] = cell.failed;
        j["error"] = cell.error;
        std::ofstream out(cache);
        out << j.dump() << "\n";
      }
      result.cells[i] = std::move(cell);
    }
  };

  std::size_t threads = std::max<std::size_t>(1, cfg.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Aggregates: deterioration is measured against the largest budget.
  std::size_t ref_x = *std::max_element(cfg.x_values.begin(), cfg.x_values.end());
  auto cell_score = [&](const std::string& variant, std::size_t x,
                        std::uint64_t seed) -> std::optional<Scalar> {
    for (const auto& c : result.cells)
      if (c.variant == variant && c.x == x && c.seed == seed && !c.failed)
        return c.cider;
    return std::nullopt;
  };
  for (const auto& variant : cfg.variants)
    for (std::size_t x : cfg.x_values) {
      SweepAggregate agg;
      std::vector<Scalar> scores, dets;
      for (std::uint64_t seed : cfg.seeds) {
        auto s = cell_score(variant.name, x, seed);
        auto ref = cell_score(variant.name, ref_x, seed);
        if (!s) continue;
        scores.push_back(*s);
        if (ref) dets.push_back(*ref - *s);
      }
      auto mean_std = [](const std::vector<Scalar>& v) {
        if (v.empty()) return std::pair<Scalar, Scalar>{0.0, 0.0};
        Scalar mean = 0.0;
        for (Scalar x2 : v) mean += x2;
        mean /= static_cast<Scalar>(v.size());
        Scalar var = 0.0;
        for (Scalar x2 : v) var += (x2 - mean) * (x2 - mean);
        var /= static_cast<Scalar>(v.size());
        return std::pair<Scalar, Scalar>{mean, std::sqrt(var)};
      };
      std::tie(agg.mean_cider, agg.stddev_cider) = mean_std(scores);
      std::tie(agg.mean_deterioration, agg.stddev_deterioration) = mean_std(dets);
      agg.completed = scores.size();
      result.aggregates[{variant.name, x}] = agg;
    }
  return result;
}

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << "variant,x,mean_cider,stddev_cider,mean_deterioration,"
         "stddev_deterioration,completed\n";
  for (const auto& [key, agg] : result.aggregates)
    out << key.first << "," << key.second << "," << agg.mean_cider << ","
        << agg.stddev_cider << "," << agg.mean_deterioration << ","
        << agg.stddev_deterioration << "," << agg.completed << "\n";
  if (!out) throw IoError("write failed for " + file.string());
}

void write_sweep_json(const SweepResult& result, const std::filesystem::path& file) {
  json j;
  json cells = json::array();
  for (const auto& c : result.cells)
    cells.push_back({{"variant", c.variant},
                     {"x", c.x},
                     {"seed", c.seed},
                     {"cider", c.cider},
                     {"failed", c.failed},
                     {"error", c.error}});
  j["cells"] = cells;
  json aggs = json::array();
  for (const auto& [key, agg] : result.aggregates)
    aggs.push_back({{"variant", key.first},
                    {"x", key.second},
                    {"mean_cider", agg.mean_cider},
                    {"stddev_cider", agg.stddev_cider},
                    {"mean_deterioration", agg.mean_deterioration},
                    {"stddev_deterioration", agg.stddev_deterioration},
                    {"completed", agg.completed}});
  j["aggregates"] = aggs;
  std::ofstream out(file);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace cvlnm
