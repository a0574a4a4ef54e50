#include "cvlnm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace cvlnm {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'V', 'L', 'C'};

json config_to_json(const ModelConfig& c) {
  json j;
  j["feature_dim"] = c.feature_dim;
  j["module_dim"] = c.module_dim;
  j["relation_heads"] = c.relation_heads;
  j["hidden_dim"] = c.hidden_dim;
  j["attn_dim"] = c.attn_dim;
  j["layout_dim"] = c.layout_dim;
  j["fuse_heads"] = c.fuse_heads;
  j["embed_dim"] = c.embed_dim;
  j["memory_dim"] = c.memory_dim;
  j["vocab_size"] = c.vocab_size;
  j["max_len"] = c.max_len;
  j["fusion"] = c.fusion == FusionMode::Hard ? "hard" : "soft";
  j["no_reason"] = c.no_reason;
  j["cut_module"] = c.cut_module;
  j["fixed_module"] = c.fixed_module;
  j["positional_encoding"] = c.positional_encoding;
  j["stop_layout_gradient"] = c.stop_layout_gradient;
  j["gumbel_temperature"] = c.gumbel_temperature;
  j["leaky_slope"] = c.leaky_slope;
  j["init_seed"] = c.init_seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.module_dim = j.at("module_dim").get<std::size_t>();
  c.relation_heads = j.at("relation_heads").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.attn_dim = j.at("attn_dim").get<std::size_t>();
  c.layout_dim = j.at("layout_dim").get<std::size_t>();
  c.fuse_heads = j.at("fuse_heads").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.memory_dim = j.at("memory_dim").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.fusion = j.at("fusion").get<std::string>() == "hard" ? FusionMode::Hard
                                                         : FusionMode::Soft;
  c.no_reason = j.at("no_reason").get<bool>();
  c.cut_module = j.at("cut_module").get<int>();
  c.fixed_module = j.at("fixed_module").get<int>();
  c.positional_encoding = j.at("positional_encoding").get<bool>();
  c.stop_layout_gradient = j.at("stop_layout_gradient").get<bool>();
  c.gumbel_temperature = j.at("gumbel_temperature").get<Scalar>();
  c.leaky_slope = j.at("leaky_slope").get<Scalar>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

void write_f64(std::ostream& out, const std::vector<Scalar>& values) {
  for (Scalar v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

std::vector<Scalar> read_f64(std::istream& in, std::size_t count,
                             const std::string& what) {
  std::vector<Scalar> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
      throw IoError("checkpoint truncated while reading " + what);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    std::memcpy(&values[i], &bits, 8);
  }
  return values;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const Model& model,
                     const Vocabulary& vocab, const Adam* optimizer,
                     const std::string& rng_state) {
  NamedParams params = model.parameters();
  json header;
  header["config"] = config_to_json(model.cfg);
  header["vocab"] = vocab.tokens();
  json mem = json::array();
  for (const auto& t : model.memory_tokens) mem.push_back({t[0], t[1], t[2]});
  header["memory_tokens"] = mem;
  json dir = json::array();
  for (const auto& [name, tensor] : params) {
    json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape();
    dir.push_back(entry);
  }
  header["tensors"] = dir;
  if (optimizer) {
    json opt;
    opt["t"] = optimizer->steps_taken();
    header["optimizer"] = opt;
  }
  header["rng"] = rng_state;
  std::string header_str = header.dump();

  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out.write(kMagic, 4);
  std::uint32_t version = kCheckpointVersion;
  unsigned char vb[4] = {static_cast<unsigned char>(version & 0xff),
                         static_cast<unsigned char>((version >> 8) & 0xff),
                         static_cast<unsigned char>((version >> 16) & 0xff),
                         static_cast<unsigned char>((version >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(vb), 4);
  std::uint64_t len = header_str.size();
  unsigned char lb[8];
  for (int i = 0; i < 8; ++i) lb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(lb), 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, tensor] : params) write_f64(out, tensor.data());
  if (optimizer) {
    Adam::State state = optimizer->state();
    for (const auto& m : state.m) write_f64(out, m);
    for (const auto& v : state.v) write_f64(out, v);
  }
  if (!out) throw IoError("write failed for " + file.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + file.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint " + file.string() + ": bad magic");
  unsigned char vb[4];
  if (!in.read(reinterpret_cast<char*>(vb), 4))
    throw IoError("checkpoint truncated while reading version");
  std::uint32_t version = static_cast<std::uint32_t>(vb[0]) | (vb[1] << 8) |
                          (vb[2] << 16) | (static_cast<std::uint32_t>(vb[3]) << 24);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + file.string() + ": unsupported version " +
                  std::to_string(version));
  unsigned char lb[8];
  if (!in.read(reinterpret_cast<char*>(lb), 8))
    throw IoError("checkpoint truncated while reading header length");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
  std::string header_str(len, '\0');
  if (!in.read(header_str.data(), static_cast<std::streamsize>(len)))
    throw IoError("checkpoint truncated while reading header");
  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw IoError("checkpoint " + file.string() + ": bad header: " + e.what());
  }

  LoadedCheckpoint loaded;
  loaded.model = Model(config_from_json(header.at("config")));
  loaded.vocab =
      Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
  if (loaded.vocab.size() != loaded.model.cfg.vocab_size)
    throw IoError("checkpoint: vocabulary size disagrees with hyperparameters");
  std::vector<std::array<int, 3>> mem;
  for (const auto& t : header.at("memory_tokens"))
    mem.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
  loaded.model.set_memory_tokens(std::move(mem));
  loaded.rng_state = header.at("rng").get<std::string>();

  NamedParams params = loaded.model.parameters();
  const json& dir = header.at("tensors");
  if (dir.size() != params.size())
    throw IoError("checkpoint: tensor directory has " + std::to_string(dir.size()) +
                  " entries, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = dir[i];
    auto& [name, tensor] = params[i];
    if (entry.at("name").get<std::string>() != name)
      throw IoError("checkpoint: tensor " + std::to_string(i) + " is '" +
                    entry.at("name").get<std::string>() + "', expected '" + name + "'");
    if (entry.at("shape").get<Shape>() != tensor.shape())
      throw IoError("checkpoint: shape mismatch for tensor '" + name + "'");
    tensor.data() = read_f64(in, tensor.size(), "tensor '" + name + "'");
  }
  if (header.contains("optimizer")) {
    Adam::State state;
    state.t = header.at("optimizer").at("t").get<std::int64_t>();
    for (const auto& [name, tensor] : params)
      state.m.push_back(read_f64(in, tensor.size(), "optimizer m of '" + name + "'"));
    for (const auto& [name, tensor] : params)
      state.v.push_back(read_f64(in, tensor.size(), "optimizer v of '" + name + "'"));
    loaded.optimizer = std::move(state);
  }
  char extra;
  if (in.read(&extra, 1))
    throw IoError("checkpoint " + file.string() + ": trailing bytes");
  return loaded;
}

void require_matching_config(const ModelConfig& expected, const ModelConfig& found,
                             bool force) {
  std::ostringstream diffs;
  auto cmp = [&](const char* name, auto a, auto b) {
    if (a != b) diffs << " " << name;
  };
  cmp("feature_dim", expected.feature_dim, found.feature_dim);
  cmp("module_dim", expected.module_dim, found.module_dim);
  cmp("relation_heads", expected.relation_heads, found.relation_heads);
  cmp("hidden_dim", expected.hidden_dim, found.hidden_dim);
  cmp("attn_dim", expected.attn_dim, found.attn_dim);
  cmp("layout_dim", expected.layout_dim, found.layout_dim);
  cmp("fuse_heads", expected.fuse_heads, found.fuse_heads);
  cmp("embed_dim", expected.embed_dim, found.embed_dim);
  cmp("memory_dim", expected.memory_dim, found.memory_dim);
  cmp("vocab_size", expected.vocab_size, found.vocab_size);
  cmp("max_len", expected.max_len, found.max_len);
  std::string msg = diffs.str();
  if (msg.empty()) return;
  if (force) {
    std::cerr << "warning: hyperparameter mismatch ignored (--force):" << msg << "\n";
    return;
  }
  throw ConfigError("hyperparameter mismatch:" + msg);
}

}  // namespace cvlnm
