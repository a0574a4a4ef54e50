#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvlnm/encoder.hpp"
#include "cvlnm/module_tag.hpp"
#include "cvlnm/tensor.hpp"

namespace cvlnm {

// ---- POS tagging -----------------------------------------------------------

/// NN -> OBJECT, ADJ -> ATTRIBUTE, VB/PREP/CD -> RELATION, everything else
/// -> FUNCTION. Unknown tags map to FUNCTION in lenient mode (with a warning
/// to stderr) and throw in strict mode.
ModuleTag pos_to_module(const std::string& pos_tag, bool strict = false);

/// Tags covered by the mapping (no warning in lenient mode).
bool is_known_pos_tag(const std::string& pos_tag);

// ---- vocabulary --------------------------------------------------------------

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary();
  /// Tokens ordered by frequency (desc) then lexicographic; tokens with
  /// count < min_count map to <unk>.
  static Vocabulary build(const std::vector<std::vector<std::string>>& captions,
                          std::size_t min_count = 5);
  static Vocabulary from_tokens(const std::vector<std::string>& ordered_tokens);

  int index(const std::string& token) const;  // kUnk for unknown
  bool contains(const std::string& token) const;
  const std::string& token(int index) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;  // index -> token, reserved first
  std::unordered_map<std::string, int> lookup_;
};

// ---- captions and scenes -------------------------------------------------------

struct TaggedCaption {
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::vector<ModuleTag> modules;

  void validate(std::size_t max_len = 16) const;
};

struct SceneObject {
  int category = 0;
  std::vector<int> attributes;
};

struct SceneRelation {
  int subject = 0;
  int predicate = 0;
  int object = 0;
};

struct SyntheticScene {
  std::string image_id;
  std::vector<SceneObject> objects;
  std::vector<SceneRelation> relations;
  std::uint64_t seed = 0;
};

struct GeneratorConfig {
  std::vector<std::string> categories;
  std::vector<std::string> attributes;
  std::vector<std::string> predicates;  // mixed VB / PREP surface forms
  std::vector<std::string> predicate_pos;
  std::size_t feature_dim = 64;  // d_r
  Scalar sigma = 0.1;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::uint64_t prototype_seed = 1234;

  static GeneratorConfig defaults();
};

struct GeneratedScene {
  SyntheticScene scene;
  FeatureSet features;
  std::vector<TaggedCaption> captions;  // 5 variants
};

/// Fully determined by (seed, scene_index, config).
GeneratedScene generate_scene(std::uint64_t seed, std::size_t scene_index,
                              const GeneratorConfig& config);

// ---- corpus -----------------------------------------------------------------

struct CorpusItem {
  std::string image_id;
  std::string feature_path;  // relative to the corpus root
  std::vector<TaggedCaption> captions;
  std::vector<std::string> gold_objects;  // category words present in the scene
};

struct Corpus {
  std::filesystem::path root;
  std::vector<CorpusItem> items;

  FeatureSet load_features_for(const CorpusItem& item) const;
};

/// JSON-lines, one object per image.
void save_corpus(const Corpus& corpus, const std::filesystem::path& file);
Corpus load_corpus_file(const std::filesystem::path& file);
/// Loads `<dir>/corpus.jsonl` with `dir` as the feature root.
Corpus load_corpus(const std::filesystem::path& dir);

/// Uniform choice of X captions per image without replacement,
/// seed-deterministic. X must be in [1, captions-per-image].
Corpus subsample_captions(const Corpus& corpus, std::size_t x, std::uint64_t seed);

/// Seed-stable 80/10/10 split by hash of image_id: 0=train, 1=val, 2=test.
int split_of(const std::string& image_id);
Corpus filter_split(const Corpus& corpus, int split);

// ---- feature container ---------------------------------------------------------

/// Binary little-endian container: magic "CVLF", u32 version=1, u32 N,
/// u32 d_r, then N·d_r f32 for the object branch and N·d_r f32 for the
/// attribute branch.
void save_features(const FeatureSet& features, const std::filesystem::path& file);
FeatureSet load_features(const std::filesystem::path& file);

// ---- lexicons ------------------------------------------------------------------

/// token -> module class, from the corpus gold tags (majority vote; ties to
/// the lowest module index).
std::map<std::string, ModuleTag> build_module_lexicon(const Corpus& corpus);

/// FNV-1a over a byte range; used for provenance hashes in manifests and
/// reports.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t hash_file(const std::filesystem::path& file);

}  // namespace cvlnm
