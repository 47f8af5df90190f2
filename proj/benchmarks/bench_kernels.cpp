#include <benchmark/benchmark.h>

#include <vector>

#include "gemm.hpp"
#include "wfuse/models.hpp"
#include "wfuse/nn.hpp"
#include "wfuse/ops.hpp"
#include "wfuse/tape.hpp"
#include "wfuse/train.hpp"

using namespace wfuse;

namespace {

void BM_Gemm(benchmark::State& state) {
  const std::int64_t M = state.range(0), N = state.range(1), K = state.range(2);
  std::vector<float> a(static_cast<std::size_t>(M * K), 0.5f), b(static_cast<std::size_t>(K * N), 0.25f),
      c(static_cast<std::size_t>(M * N));
  for (auto _ : state) {
    detail::gemm_nn<float>(M, N, K, a.data(), K, b.data(), N, c.data(), N, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(M * N * K), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Gemm)->Args({16, 4096, 27})->Args({32, 1024, 288})->Args({16, 144, 4096})->Args({64, 256, 576});

void BM_Conv3x3(benchmark::State& state) {
  const std::int64_t c = state.range(0), hw = state.range(1);
  Tensor x = create({8, c, hw, hw}, DType::f32, Init::normal(0, 1, 1));
  Conv2dParams p{create({c, c, 3, 3}, DType::f32, Init::normal(0, 0.1, 2)), std::nullopt, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p));
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(8 * c * c * 9 * hw * hw),
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3)->Args({4, 64})->Args({16, 32})->Args({64, 16});

void BM_Conv3x3Backward(benchmark::State& state) {
  const std::int64_t c = state.range(0), hw = state.range(1);
  Tensor x = create({8, c, hw, hw}, DType::f32, Init::normal(0, 1, 1));
  x.set_requires_grad(true);
  Conv2dParams p{create({c, c, 3, 3}, DType::f32, Init::normal(0, 0.1, 2)), std::nullopt, 1, 1};
  p.weight.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(conv2d(x, p)));
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({4, 64})->Args({16, 32});

void BM_BatchNormTraining(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  Tensor x = create({8, c, 64, 64}, DType::f32, Init::normal(0, 1, 3));
  BatchNormParams bn = make_batch_norm(c, DType::f32, Init::ones());
  for (auto _ : state) benchmark::DoNotOptimize(batch_norm2d(x, bn, Mode::training));
}
BENCHMARK(BM_BatchNormTraining)->Arg(4)->Arg(16);

void BM_DeskTrainStep(benchmark::State& state) {
  ResUNetConfig cfg;
  cfg.levels = 2;
  cfg.widths = {16, 32};
  cfg.alphas = {1, 1};
  cfg.betas = {1, 1};
  auto model = build_res_unet(cfg);
  Tensor x = create({8, 3, 64, 64}, DType::f32, Init::normal(0.5, 0.2, 4));
  Labels y{8, 64, 64, std::vector<std::int32_t>(8 * 64 * 64, 0)};
  for (std::size_t i = 0; i < y.values.size(); i += 3) y.values[i] = 1;
  SgdMomentum opt(0.9, 0.0005);
  for (auto _ : state) {
    model->zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = cross_entropy(model->forward(x, Mode::training), y);
    backward(loss);
    opt.step(model->parameters(), 0.001);
  }
}
BENCHMARK(BM_DeskTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
