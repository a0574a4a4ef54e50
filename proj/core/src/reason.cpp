#include "cvlnm/reason.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cvlnm/errors.hpp"

namespace cvlnm {

std::vector<TripletRecord> load_triplets(const std::filesystem::path& file,
                                         std::size_t max_records) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open triplet file " + file.string());
  std::vector<TripletRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos
                                              ? std::string::npos
                                              : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    auto fail = [&](const std::string& why) {
      throw IoError("triplet file " + file.string() + " line " +
                    std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 4) fail("expected 4 tab-separated fields, got " +
                                 std::to_string(fields.size()));
    for (int i = 0; i < 3; ++i)
      if (fields[i].empty()) fail("empty field " + std::to_string(i + 1));
    TripletRecord rec{fields[0], fields[1], fields[2], 0.0};
    try {
      std::size_t consumed = 0;
      rec.weight = std::stod(fields[3], &consumed);
      if (consumed != fields[3].size()) fail("trailing characters in weight");
    } catch (const std::exception&) {
      fail("cannot parse weight '" + fields[3] + "'");
    }
    if (!std::isfinite(rec.weight)) fail("non-finite weight");
    records.push_back(std::move(rec));
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const TripletRecord& a, const TripletRecord& b) {
                     if (a.weight != b.weight) return a.weight > b.weight;
                     if (a.subject != b.subject) return a.subject < b.subject;
                     if (a.predicate != b.predicate) return a.predicate < b.predicate;
                     return a.object < b.object;
                   });
  if (records.size() > max_records) records.resize(max_records);
  return records;
}

ReasonModule::ReasonModule(const ReasonConfig& config, Rng& rng)
    : fc(config.memory_dim, 3 * config.embed_dim, rng),
      wv(init_fanin_uniform({config.memory_dim, config.fused_dim},
                            config.fused_dim, rng)),
      cfg(config) {}

Tensor ReasonModule::build_memory(const Tensor& triplet_embeds) const {
  if (triplet_embeds.ndim() != 2 || triplet_embeds.cols() != 3 * cfg.embed_dim)
    throw ShapeError("reason memory: expected K×" +
                     std::to_string(3 * cfg.embed_dim) + " embeddings, got " +
                     shape_str(triplet_embeds.shape()));
  return relu(fc.forward_rows(triplet_embeds));
}

ReasonModule::ReadResult ReasonModule::attend(const Tensor& memory,
                                              const Tensor& fused) const {
  if (memory.ndim() != 2 || memory.rows() == 0)
    throw ShapeError("reason attend: empty memory");
  Tensor key = matvec(wv, fused);            // d_m
  Tensor beta = softmax(matvec(memory, key));  // K
  Tensor read = matvec(transpose(memory), beta);
  return ReadResult{read, beta};
}

void ReasonModule::collect(NamedParams& out) const {
  fc.collect("reason.fc", out);
  out.emplace_back("reason.wv", wv);
}

}  // namespace cvlnm
