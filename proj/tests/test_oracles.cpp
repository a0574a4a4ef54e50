#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"

#include "cvlnm/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cvlnm;

namespace {

void check_close(const oracle::Vec& expect, const Tensor& got, double tol) {
  REQUIRE(got.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(std::abs(got.at(i) - expect[i]) < tol);
}

}  // namespace

TEST_CASE("relation module matches the scalar-loop reference (N=2, one head)") {
  EncoderConfig cfg;
  cfg.feature_dim = 6;
  cfg.module_dim = 3;
  cfg.relation_heads = 1;
  Rng rng(21);
  RelationModule rel(cfg, rng);
  Tensor regions = testutil::random_matrix(2, 6, rng);
  Tensor out = rel.forward(regions);
  oracle::Mat expect = oracle::relation_module(rel, oracle::to_mat(regions));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(std::abs(out.at(r, c) - expect[r][c]) < 1e-10);
}

TEST_CASE("relation module matches the reference with multiple heads") {
  EncoderConfig cfg;
  cfg.feature_dim = 8;
  cfg.module_dim = 4;
  cfg.relation_heads = 2;
  Rng rng(22);
  RelationModule rel(cfg, rng);
  Tensor regions = testutil::random_matrix(4, 8, rng);
  Tensor out = rel.forward(regions);
  oracle::Mat expect = oracle::relation_module(rel, oracle::to_mat(regions));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(std::abs(out.at(r, c) - expect[r][c]) < 1e-10);
}

TEST_CASE("additive attention matches the scalar-loop reference (N=3)") {
  Rng rng(23);
  MsAtt att(5, 4, 6, rng);
  Tensor values = testutil::random_matrix(3, 4, rng);
  Tensor query = testutil::random_vector(6, rng);
  auto got = att.forward(values, query);
  auto expect = oracle::ms_att(att, oracle::to_mat(values), oracle::to_vec(query));
  check_close(expect.attended, got.attended, 1e-10);
  check_close(expect.alpha, got.weights, 1e-10);
}

TEST_CASE("soft fusion matches the scalar-loop reference") {
  ControllerConfig cfg;
  cfg.module_dim = 4;
  cfg.hidden_dim = 6;
  cfg.attn_dim = 4;
  cfg.layout_dim = 6;
  cfg.fuse_heads = 2;
  Rng rng(24);
  ModuleController ctl(cfg, rng);

  Tensor layout = testutil::random_matrix(3, 6, rng);
  Tensor query = testutil::random_vector(6, rng);
  AttendedFeatures att;
  att.object = testutil::random_vector(4, rng);
  att.attribute = testutil::random_vector(4, rng);
  att.relation = testutil::random_vector(4, rng);
  att.function = testutil::random_vector(4, rng);

  auto got = ctl.soft_fuse(layout, query, att);
  auto expect = oracle::soft_fuse(ctl, oracle::to_mat(layout), oracle::to_vec(query),
                                  oracle::to_vec(att.object),
                                  oracle::to_vec(att.attribute),
                                  oracle::to_vec(att.relation),
                                  oracle::to_vec(att.function));
  check_close(expect.weights, got.weights, 1e-10);
  check_close(expect.fused, got.fused, 1e-10);
}

TEST_CASE("memory read matches the scalar-loop reference (K=5)") {
  ReasonConfig cfg;
  cfg.embed_dim = 4;
  cfg.memory_dim = 6;
  cfg.fused_dim = 8;
  Rng rng(25);
  ReasonModule reason(cfg, rng);
  Tensor memory = testutil::random_matrix(5, 6, rng);
  Tensor fused = testutil::random_vector(8, rng);
  auto got = reason.attend(memory, fused);
  auto expect = oracle::reason_attend(reason, oracle::to_mat(memory),
                                      oracle::to_vec(fused));
  check_close(expect.read, got.read, 1e-10);
  check_close(expect.beta, got.beta, 1e-10);
}

TEST_CASE("lstm cell matches the scalar-loop reference over two steps") {
  Rng rng(26);
  LstmCell cell(5, 4, rng);
  Tensor x0 = testutil::random_vector(5, rng);
  Tensor x1 = testutil::random_vector(5, rng);
  auto s1 = cell.step(x0, cell.initial_state());
  auto s2 = cell.step(x1, s1);

  oracle::LstmState os{oracle::Vec(4, 0.0), oracle::Vec(4, 0.0)};
  os = oracle::lstm_step(cell, oracle::to_vec(x0), os);
  check_close(os.h, s1.h, 1e-10);
  check_close(os.c, s1.c, 1e-10);
  os = oracle::lstm_step(cell, oracle::to_vec(x1), os);
  check_close(os.h, s2.h, 1e-10);
  check_close(os.c, s2.c, 1e-10);
}

TEST_CASE("two decode steps match the full scalar-loop reference") {
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    ModelConfig cfg = testutil::tiny_config(seed);
    Model model(cfg);
    model.set_memory_tokens({{4, 5, 6}, {5, 6, 7}, {6, 7, 8}});
    Rng rng(seed + 100);
    FeatureSet feats = testutil::random_features(3, cfg.feature_dim, rng);

    NoGradGuard guard;
    ImageContext ctx = model.encode(feats);
    SequenceState state = model.initial_state();
    StepTrace t0 = model.decode_step(ctx, state, Vocabulary::kBos);
    StepTrace t1 = model.decode_step(ctx, state, 4);

    oracle::EncodedImage enc = oracle::encode(model, feats);
    oracle::DecodeState ostate = oracle::initial_state(model);
    auto o0 = oracle::decode_step(model, enc, ostate, Vocabulary::kBos);
    auto o1 = oracle::decode_step(model, enc, ostate, 4);

    check_close(o0.probs, t0.probs, 1e-10);
    check_close(o0.weights, t0.fuse_weights, 1e-10);
    check_close(o0.beta, t0.beta, 1e-10);
    check_close(o1.probs, t1.probs, 1e-10);
    check_close(o1.weights, t1.fuse_weights, 1e-10);
    check_close(o1.beta, t1.beta, 1e-10);
  }
}

TEST_CASE("decode without memory matches the reference and zero-fills the read") {
  ModelConfig cfg = testutil::tiny_config(41);
  cfg.no_reason = true;
  Model model(cfg);
  Rng rng(141);
  FeatureSet feats = testutil::random_features(2, cfg.feature_dim, rng);

  NoGradGuard guard;
  ImageContext ctx = model.encode(feats);
  CHECK_FALSE(ctx.has_memory());
  SequenceState state = model.initial_state();
  StepTrace trace = model.decode_step(ctx, state, Vocabulary::kBos);

  oracle::EncodedImage enc = oracle::encode(model, feats);
  oracle::DecodeState ostate = oracle::initial_state(model);
  auto expect = oracle::decode_step(model, enc, ostate, Vocabulary::kBos);
  check_close(expect.probs, trace.probs, 1e-10);
  CHECK_FALSE(trace.beta.defined());
}
