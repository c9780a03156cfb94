#include <benchmark/benchmark.h>

#include "csmn/model.hpp"
#include "csmn/ops.hpp"
#include "csmn/training.hpp"

namespace {

using namespace csmn;

model::ModelConfig desk(std::size_t V, std::size_t depth, corpus::ImageMode mode) {
  model::ModelConfig mc;
  mc.memory.image_mode = mode;
  mc.memory.context_slots = 4;
  mc.memory.output_slots = 6;
  mc.memory.feature_dim = 32;
  mc.memory.mem_dim = 32;
  mc.memory.embed_dim = 16;
  mc.conv_depth = depth;
  mc.vocab_size = V;
  return mc;
}

num::Tensor random_feature(const model::ModelConfig& mc, num::Rng& rng) {
  const bool grid = mc.memory.image_mode == corpus::ImageMode::res5c;
  const std::size_t rows = grid ? corpus::kGridCells : 1;
  std::vector<double> f(rows * mc.memory.feature_dim);
  for (auto& x : f) x = rng.normal();
  return grid ? num::Tensor({rows, mc.memory.feature_dim}, f) : num::Tensor({mc.memory.feature_dim}, f);
}

training::TrainSample random_sample(const model::ModelConfig& mc, num::Rng& rng) {
  training::TrainSample s;
  s.post_id = "b";
  s.feature = random_feature(mc, rng);
  for (std::size_t i = 0; i < mc.memory.context_slots; ++i) s.profile.push_back(static_cast<corpus::TokenId>(5 + i));
  for (std::size_t i = 0; i + 1 < mc.memory.output_slots; ++i) s.target.push_back(static_cast<corpus::TokenId>(5 + rng.below(mc.vocab_size - 5)));
  s.target.push_back(corpus::Vocabulary::kEos);
  return s;
}

// Args: conv depth, res5c (1) or pool5 (0).
void BM_DecodeStep(benchmark::State& state) {
  const auto mode = state.range(1) ? corpus::ImageMode::res5c : corpus::ImageMode::pool5;
  const auto mc = desk(1000, static_cast<std::size_t>(state.range(0)), mode);
  num::Rng rng(1);
  const auto params = model::init_params(mc, rng);
  const auto feature = random_feature(mc, rng);
  const std::vector<corpus::TokenId> words = {5, 6, 7, 8};
  for (auto _ : state) {
    num::Tape tape(num::Precision::f32, false);
    const model::Network net(tape, mc, params);
    auto out = model::decode_step(net, corpus::Vocabulary::kBos, net.initial_memory(feature, words));
    benchmark::DoNotOptimize(out.first.token);
  }
}
BENCHMARK(BM_DecodeStep)->Args({8, 0})->Args({8, 1})->Args({300, 0})->Args({300, 1})->Unit(benchmark::kMicrosecond);

void BM_LossAndBackward(benchmark::State& state) {
  const auto mc = desk(30, 8, corpus::ImageMode::pool5);
  num::Rng rng(2);
  const auto params = model::init_params(mc, rng);
  std::vector<training::TrainSample> samples;
  for (int i = 0; i < state.range(0); ++i) samples.push_back(random_sample(mc, rng));
  std::vector<std::size_t> batch(samples.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  for (auto _ : state) {
    auto r = training::compute_gradients(params, mc, samples, batch, num::Precision::f32, 1);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndBackward)->Arg(1)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

// Args: rows, width, filter height, filters. Forward, max-pool and backward.
void BM_Conv1d(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0)), d = static_cast<std::size_t>(state.range(1));
  const auto h = static_cast<std::size_t>(state.range(2)), f = static_cast<std::size_t>(state.range(3));
  num::Rng rng(3);
  auto fill = [&](std::vector<std::size_t> shape) {
    num::Tensor t = num::Tensor::zeros(std::move(shape));
    for (auto& x : t.mutable_data()) x = rng.uniform(-1, 1);
    return t;
  };
  const auto x = fill({L, d}), w = fill({h, d, f}), b = fill({f});
  for (auto _ : state) {
    num::Tape tape(num::Precision::f32);
    const auto y = num::conv1d_valid(tape.parameter(x), tape.parameter(w), tape.parameter(b));
    tape.backward(num::cross_entropy(num::maxpool_time(y), 0));
    benchmark::DoNotOptimize(tape.grad(y));
  }
}
BENCHMARK(BM_Conv1d)->Args({49, 32, 3, 8})->Args({49, 32, 5, 300})->Args({49, 1024, 3, 300})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
