#include "cvlnm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cvlnm {

using nlohmann::json;

// ---- POS mapping ------------------------------------------------------------

namespace {

const std::set<std::string>& known_pos_tags() {
  static const std::set<std::string> tags{"NN", "ADJ", "VB",  "PREP",
                                          "CD", "DET", "CC",  "OTHER"};
  return tags;
}

}  // namespace

bool is_known_pos_tag(const std::string& pos_tag) {
  return known_pos_tags().count(pos_tag) > 0;
}

ModuleTag pos_to_module(const std::string& pos_tag, bool strict) {
  if (pos_tag == "NN") return ModuleTag::Object;
  if (pos_tag == "ADJ") return ModuleTag::Attribute;
  if (pos_tag == "VB" || pos_tag == "PREP" || pos_tag == "CD")
    return ModuleTag::Relation;
  if (!is_known_pos_tag(pos_tag)) {
    if (strict) throw ConfigError("pos_to_module: unknown POS tag '" + pos_tag + "'");
    std::cerr << "warning: unknown POS tag '" << pos_tag
              << "', falling back to FUNCTION\n";
  }
  return ModuleTag::Function;
}

// ---- vocabulary ----------------------------------------------------------------

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    lookup_[tokens_[i]] = static_cast<int>(i);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& captions,
                             std::size_t min_count) {
  if (captions.empty()) throw ConfigError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& caption : captions)
    for (const auto& token : caption) ++counts[token];

  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  for (const auto& [token, count] : entries) {
    if (count < min_count) continue;
    vocab.lookup_[token] = static_cast<int>(vocab.tokens_.size());
    vocab.tokens_.push_back(token);
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& ordered_tokens) {
  Vocabulary vocab;
  for (const auto& token : ordered_tokens) {
    if (vocab.lookup_.count(token)) continue;
    vocab.lookup_[token] = static_cast<int>(vocab.tokens_.size());
    vocab.tokens_.push_back(token);
  }
  return vocab;
}

int Vocabulary::index(const std::string& token) const {
  auto it = lookup_.find(token);
  return it == lookup_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return lookup_.count(token) > 0;
}

const std::string& Vocabulary::token(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= tokens_.size())
    throw ConfigError("vocabulary: index " + std::to_string(index) + " out of range");
  return tokens_[static_cast<std::size_t>(index)];
}

// ---- captions --------------------------------------------------------------------

void TaggedCaption::validate(std::size_t max_len) const {
  if (tokens.size() != pos.size() || tokens.size() != modules.size())
    throw ConfigError("tagged caption: token/pos/module lengths differ");
  if (tokens.size() > max_len)
    throw ConfigError("tagged caption: length " + std::to_string(tokens.size()) +
                      " exceeds " + std::to_string(max_len));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (modules[i] != pos_to_module(pos[i]))
      throw ConfigError("tagged caption: module tag inconsistent with POS at token " +
                        std::to_string(i));
}

// ---- synthetic generator -----------------------------------------------------------

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig cfg;
  cfg.categories = {"dog",  "cat",   "bird", "horse", "sheep", "car",
                    "bus",  "boat",  "chair", "table", "tree",  "house"};
  cfg.attributes = {"red", "blue", "green", "small", "big", "old"};
  cfg.predicates = {"near", "above", "under", "chases", "watches"};
  cfg.predicate_pos = {"PREP", "PREP", "PREP", "VB", "VB"};
  return cfg;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + (index + 1) * 0xBF58476D1CE4E5B9ull;
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  return z;
}

std::vector<Scalar> prototype(std::uint64_t base, std::size_t id, std::size_t dim) {
  Rng rng(mix_seed(base, id));
  std::vector<Scalar> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

const char* count_word(std::size_t n) {
  switch (n) {
    case 2: return "two";
    case 3: return "three";
    default: return "four";
  }
}

struct CaptionBuilder {
  TaggedCaption caption;
  void push(const std::string& token, const std::string& pos) {
    caption.tokens.push_back(token);
    caption.pos.push_back(pos);
    caption.modules.push_back(pos_to_module(pos));
  }
};

}  // namespace

GeneratedScene generate_scene(std::uint64_t seed, std::size_t scene_index,
                              const GeneratorConfig& cfg) {
  if (cfg.categories.empty() || cfg.attributes.empty() || cfg.predicates.empty())
    throw ConfigError("generate_scene: empty inventory");
  if (cfg.predicates.size() != cfg.predicate_pos.size())
    throw ConfigError("generate_scene: predicate POS list does not match predicates");

  Rng rng(mix_seed(seed, scene_index));
  GeneratedScene out;
  auto& scene = out.scene;
  {
    std::ostringstream id;
    id << "img-" << scene_index;
    scene.image_id = id.str();
  }
  scene.seed = seed;

  std::size_t count =
      cfg.min_objects + rng.integer(cfg.max_objects - cfg.min_objects + 1);
  for (std::size_t i = 0; i < count; ++i) {
    SceneObject obj;
    obj.category = static_cast<int>(rng.integer(cfg.categories.size()));
    // Two categories carry a fixed attribute; the rest carry one optional
    // attribute, so adjectives stay optional in the caption grammar.
    if (obj.category == 4 || obj.category == 5) {
      obj.attributes.push_back(obj.category % static_cast<int>(cfg.attributes.size()));
    } else if (rng.uniform() < 0.5) {
      obj.attributes.push_back(static_cast<int>(rng.integer(cfg.attributes.size())));
    }
    scene.objects.push_back(std::move(obj));
  }
  scene.relations.push_back(
      {0, static_cast<int>(rng.integer(cfg.predicates.size())), 1});
  if (scene.objects.size() >= 3)
    scene.relations.push_back(
        {1, static_cast<int>(rng.integer(cfg.predicates.size())), 2});

  // Features: category / attribute prototypes plus Gaussian noise.
  std::size_t n = scene.objects.size();
  std::vector<Scalar> obj_feats(n * cfg.feature_dim);
  std::vector<Scalar> attr_feats(n * cfg.feature_dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto proto = prototype(cfg.prototype_seed, scene.objects[i].category, cfg.feature_dim);
    for (std::size_t d = 0; d < cfg.feature_dim; ++d)
      obj_feats[i * cfg.feature_dim + d] = proto[d] + cfg.sigma * rng.normal();
    for (int attr : scene.objects[i].attributes) {
      auto ap = prototype(cfg.prototype_seed + 0x5bd1e995, attr, cfg.feature_dim);
      for (std::size_t d = 0; d < cfg.feature_dim; ++d)
        attr_feats[i * cfg.feature_dim + d] += ap[d];
    }
    for (std::size_t d = 0; d < cfg.feature_dim; ++d)
      attr_feats[i * cfg.feature_dim + d] += cfg.sigma * rng.normal();
  }
  out.features.object_features =
      Tensor::from(std::move(obj_feats), {n, cfg.feature_dim});
  out.features.attribute_features =
      Tensor::from(std::move(attr_feats), {n, cfg.feature_dim});

  // Caption realization: deterministic templates over the scene content.
  const auto& o1 = cfg.categories[scene.objects[0].category];
  const auto& o2 = cfg.categories[scene.objects[1].category];
  const SceneRelation& rel = scene.relations[0];
  const auto& pred = cfg.predicates[rel.predicate];
  const auto& pred_pos = cfg.predicate_pos[rel.predicate];
  auto attr_of = [&](std::size_t i) -> const std::string* {
    if (scene.objects[i].attributes.empty()) return nullptr;
    return &cfg.attributes[scene.objects[i].attributes[0]];
  };
  const std::string* a1 = attr_of(0);
  const std::string* a2 = attr_of(1);

  for (int variant = 0; variant < 5; ++variant) {
    CaptionBuilder b;
    switch (variant) {
      case 0:
        b.push("a", "DET");
        if (a1) b.push(*a1, "ADJ");
        b.push(o1, "NN");
        b.push(pred, pred_pos);
        b.push("a", "DET");
        if (a2) b.push(*a2, "ADJ");
        b.push(o2, "NN");
        break;
      case 1:
        b.push("the", "DET");
        b.push(o1, "NN");
        b.push(pred, pred_pos);
        b.push("the", "DET");
        b.push(o2, "NN");
        break;
      case 2:
        b.push("a", "DET");
        if (a1) b.push(*a1, "ADJ");
        b.push(o1, "NN");
        b.push("and", "CC");
        b.push("a", "DET");
        b.push(o2, "NN");
        break;
      case 3:
        b.push(count_word(scene.objects.size()), "CD");
        b.push(o1, "NN");
        b.push(pred, pred_pos);
        b.push("the", "DET");
        b.push(o2, "NN");
        break;
      case 4:
        if (a1) {
          b.push("the", "DET");
          b.push(o1, "NN");
          b.push("is", "VB");
          b.push(*a1, "ADJ");
        } else {
          b.push("a", "DET");
          b.push(o1, "NN");
          b.push(pred, pred_pos);
          b.push("the", "DET");
          b.push(o2, "NN");
        }
        break;
    }
    b.caption.validate();
    out.captions.push_back(std::move(b.caption));
  }
  return out;
}

// ---- corpus serialization -----------------------------------------------------------

namespace {

json caption_to_json(const TaggedCaption& c) {
  json j;
  j["tokens"] = c.tokens;
  j["pos"] = c.pos;
  json mods = json::array();
  for (auto m : c.modules) mods.push_back(module_name(m));
  j["modules"] = mods;
  return j;
}

TaggedCaption caption_from_json(const json& j) {
  TaggedCaption c;
  c.tokens = j.at("tokens").get<std::vector<std::string>>();
  c.pos = j.at("pos").get<std::vector<std::string>>();
  for (const auto& m : j.at("modules")) {
    int tag = parse_module_name(m.get<std::string>());
    if (tag < 0) throw IoError("corpus: unknown module tag '" + m.get<std::string>() + "'");
    c.modules.push_back(static_cast<ModuleTag>(tag));
  }
  return c;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  for (const auto& item : corpus.items) {
    json j;
    j["image_id"] = item.image_id;
    j["feature_path"] = item.feature_path;
    json caps = json::array();
    for (const auto& c : item.captions) caps.push_back(caption_to_json(c));
    j["captions"] = caps;
    j["objects"] = item.gold_objects;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed for " + file.string());
}

Corpus load_corpus_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open corpus file " + file.string());
  Corpus corpus;
  corpus.root = file.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("corpus " + file.string() + " line " + std::to_string(line_no) +
                    ": " + e.what());
    }
    CorpusItem item;
    item.image_id = j.at("image_id").get<std::string>();
    item.feature_path = j.at("feature_path").get<std::string>();
    for (const auto& c : j.at("captions")) item.captions.push_back(caption_from_json(c));
    if (j.contains("objects"))
      item.gold_objects = j.at("objects").get<std::vector<std::string>>();
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  return load_corpus_file(dir / "corpus.jsonl");
}

FeatureSet Corpus::load_features_for(const CorpusItem& item) const {
  return load_features(root / item.feature_path);
}

Corpus subsample_captions(const Corpus& corpus, std::size_t x, std::uint64_t seed) {
  Corpus out;
  out.root = corpus.root;
  out.items.reserve(corpus.items.size());
  for (std::size_t idx = 0; idx < corpus.items.size(); ++idx) {
    const auto& item = corpus.items[idx];
    if (x < 1 || x > item.captions.size())
      throw ConfigError("subsample_captions: X=" + std::to_string(x) +
                        " out of range for image " + item.image_id + " with " +
                        std::to_string(item.captions.size()) + " captions");
    std::vector<std::size_t> indices(item.captions.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    Rng rng(mix_seed(seed, idx));
    // partial Fisher-Yates, then restore original caption order
    for (std::size_t i = 0; i < x; ++i) {
      std::size_t j = i + rng.integer(indices.size() - i);
      std::swap(indices[i], indices[j]);
    }
    indices.resize(x);
    std::sort(indices.begin(), indices.end());
    CorpusItem copy;
    copy.image_id = item.image_id;
    copy.feature_path = item.feature_path;
    copy.gold_objects = item.gold_objects;
    for (std::size_t i : indices) copy.captions.push_back(item.captions[i]);
    out.items.push_back(std::move(copy));
  }
  return out;
}

int split_of(const std::string& image_id) {
  std::uint64_t h = fnv1a(image_id.data(), image_id.size());
  std::uint64_t bucket = h % 10;
  if (bucket < 8) return 0;
  return bucket == 8 ? 1 : 2;
}

Corpus filter_split(const Corpus& corpus, int split) {
  Corpus out;
  out.root = corpus.root;
  for (const auto& item : corpus.items)
    if (split_of(item.image_id) == split) out.items.push_back(item);
  return out;
}

// ---- feature container ---------------------------------------------------------------

namespace {

constexpr char kFeatureMagic[4] = {'C', 'V', 'L', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError("feature file truncated while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_matrix_f32(std::ofstream& out, const Tensor& m) {
  for (Scalar v : m.data()) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(out, bits);
  }
}

std::vector<Scalar> read_matrix_f32(std::ifstream& in, std::size_t count,
                                    const std::string& what) {
  std::vector<Scalar> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = read_u32(in, what);
    float f;
    std::memcpy(&f, &bits, 4);
    if (!std::isfinite(f))
      throw IoError("feature file: non-finite value in " + what);
    values[i] = static_cast<Scalar>(f);
  }
  return values;
}

}  // namespace

void save_features(const FeatureSet& features, const std::filesystem::path& file) {
  features.validate();
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out.write(kFeatureMagic, 4);
  write_u32(out, kFeatureVersion);
  write_u32(out, static_cast<std::uint32_t>(features.regions()));
  write_u32(out, static_cast<std::uint32_t>(features.feature_dim()));
  write_matrix_f32(out, features.object_features);
  write_matrix_f32(out, features.attribute_features);
  if (!out) throw IoError("write failed for " + file.string());
}

FeatureSet load_features(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + file.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw IoError("feature file " + file.string() + ": bad magic");
  std::uint32_t version = read_u32(in, "version");
  if (version != kFeatureVersion)
    throw IoError("feature file " + file.string() + ": unsupported version " +
                  std::to_string(version));
  std::size_t n = read_u32(in, "region count");
  std::size_t d = read_u32(in, "feature dim");
  std::size_t expected = 16 + 2 * n * d * 4;
  auto obj = read_matrix_f32(in, n * d, "object branch");
  auto attr = read_matrix_f32(in, n * d, "attribute branch");
  char extra;
  if (in.read(&extra, 1))
    throw IoError("feature file " + file.string() + ": trailing bytes, expected " +
                  std::to_string(expected) + " total");
  FeatureSet fs;
  fs.object_features = Tensor::from(std::move(obj), {n, d});
  fs.attribute_features = Tensor::from(std::move(attr), {n, d});
  fs.validate();
  return fs;
}

// ---- lexicons -------------------------------------------------------------------------

std::map<std::string, ModuleTag> build_module_lexicon(const Corpus& corpus) {
  std::map<std::string, std::array<std::size_t, kModuleCount>> counts;
  for (const auto& item : corpus.items)
    for (const auto& caption : item.captions)
      for (std::size_t i = 0; i < caption.tokens.size(); ++i)
        ++counts[caption.tokens[i]][static_cast<std::size_t>(caption.modules[i])];
  std::map<std::string, ModuleTag> lexicon;
  for (const auto& [token, c] : counts) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < kModuleCount; ++m)
      if (c[m] > c[best]) best = m;
    lexicon[token] = static_cast<ModuleTag>(best);
  }
  return lexicon;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string() + " for hashing");
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    if (!in) break;
  }
  return h;
}

}  // namespace cvlnm
