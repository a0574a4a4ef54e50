#include <benchmark/benchmark.h>

#include "cvlnm/data.hpp"
#include "cvlnm/model.hpp"
#include "cvlnm/training.hpp"

namespace {

using namespace cvlnm;

Model make_model(std::size_t vocab) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  return Model(cfg);
}

FeatureSet make_features(std::size_t n, std::size_t d) {
  Rng rng(7);
  std::vector<Scalar> a(n * d), b(n * d);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  FeatureSet fs;
  fs.object_features = Tensor::from(std::move(a), {n, d});
  fs.attribute_features = Tensor::from(std::move(b), {n, d});
  return fs;
}

void BM_Matmul(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = init_normal({n, n}, 1.0, rng);
  Tensor b = init_normal({n, n}, 1.0, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_DecodeStep(benchmark::State& state) {
  Model model = make_model(64);
  ImageContext ctx = model.encode(make_features(4, model.cfg.feature_dim));
  NoGradGuard guard;
  for (auto _ : state) {
    SequenceState s = model.initial_state();
    benchmark::DoNotOptimize(model.decode_step(ctx, s, Vocabulary::kBos));
  }
}
BENCHMARK(BM_DecodeStep);

void BM_GreedyDecode(benchmark::State& state) {
  Model model = make_model(64);
  ImageContext ctx = model.encode(make_features(4, model.cfg.feature_dim));
  for (auto _ : state) benchmark::DoNotOptimize(model.greedy_decode(ctx));
}
BENCHMARK(BM_GreedyDecode);

void BM_BeamSearch(benchmark::State& state) {
  Model model = make_model(64);
  ImageContext ctx = model.encode(make_features(4, model.cfg.feature_dim));
  for (auto _ : state)
    benchmark::DoNotOptimize(
        model.beam_search(ctx, static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5);

void BM_TeacherForcedBackward(benchmark::State& state) {
  Model model = make_model(64);
  FeatureSet fs = make_features(4, model.cfg.feature_dim);
  std::vector<int> tokens{4, 5, 6, 7, 8};
  for (auto _ : state) {
    ImageContext ctx = model.encode(fs);
    auto traces = model.teacher_forced(ctx, tokens);
    Tensor loss = xe_loss(traces, tokens);
    backward(loss);
    for (auto& [name, p] : model.parameters()) p.zero_grad();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TeacherForcedBackward);

}  // namespace

BENCHMARK_MAIN();
