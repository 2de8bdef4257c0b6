// Microbenchmarks for the per-step cost drivers: the mixture likelihood,
// full model forward and training steps, metric kernels, scene generation,
// and image codec round trips.
#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "gblab/data.hpp"
#include "gblab/genesis.hpp"
#include "gblab/metrics.hpp"
#include "gblab/nn.hpp"
#include "gblab/png_io.hpp"
#include "gblab/rng.hpp"

namespace ad = gblab::ad;
namespace nn = gblab::nn;
using gblab::GenesisConfig;
using gblab::GenesisModel;
using gblab::Rng;
using gblab::Tensor;

namespace {

GenesisConfig bench_config(int64_t K) {
  GenesisConfig cfg;
  cfg.K = K;
  cfg.mask_latent_dim = 64;
  cfg.component_latent_dim = 16;
  cfg.component_arch = gblab::ComponentArch::SYMMETRIC_DC;
  return cfg;
}

Tensor<float> normalised_masks(int64_t K, int64_t S, Rng& rng) {
  Tensor<float> pi = Tensor<float>::rand_uniform({1, K, 1, S, S}, rng, 0.01f, 1.0f);
  for (int64_t p = 0; p < S * S; ++p) {
    float sum = 0;
    for (int64_t k = 0; k < K; ++k) sum += pi.data()[k * S * S + p];
    for (int64_t k = 0; k < K; ++k) pi.data()[k * S * S + p] /= sum;
  }
  return pi;
}

void BM_SgmmNll(benchmark::State& state) {
  const int64_t K = state.range(0), S = 64;
  Rng rng(1);
  Tensor<float> x = Tensor<float>::rand_uniform({1, 3, S, S}, rng, 0.0f, 1.0f);
  Tensor<float> pi = normalised_masks(K, S, rng);
  Tensor<float> mu = Tensor<float>::rand_uniform({1, K, 3, S, S}, rng, 0.0f, 1.0f);
  for (auto _ : state) {
    ad::Tape<float> tape;
    ad::Var<float> nll =
        gblab::sgmm_nll(tape.constant(x), tape.constant(pi), tape.constant(mu), 0.7);
    benchmark::DoNotOptimize(nll.value().data());
  }
}
BENCHMARK(BM_SgmmNll)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_GenesisForward(benchmark::State& state) {
  const int64_t K = state.range(0), S = 64;
  Rng rng(2);
  nn::ParamSet<float> ps;
  GenesisModel<float> model(ps, bench_config(K), rng, S);
  Tensor<float> x = Tensor<float>::rand_uniform({1, 3, S, S}, rng, 0.0f, 1.0f);
  gblab::ZeroNoise<float> noise;
  for (auto _ : state) {
    ad::Tape<float> tape;
    nn::Binding<float> bind(tape, false);
    auto out = model.forward(bind, x, noise);
    benchmark::DoNotOptimize(out.nll_per_pixel.value().data());
  }
}
BENCHMARK(BM_GenesisForward)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_GenesisTrainStep(benchmark::State& state) {
  const int64_t K = state.range(0), S = 64;
  Rng rng(3);
  nn::ParamSet<float> ps;
  GenesisModel<float> model(ps, bench_config(K), rng, S);
  nn::Adam<float> opt(ps, 1e-4f);
  Tensor<float> x = Tensor<float>::rand_uniform({1, 3, S, S}, rng, 0.0f, 1.0f);
  Rng noise_rng(4);
  gblab::RngNoise<float> noise(noise_rng);
  for (auto _ : state) {
    ad::Tape<float> tape;
    nn::Binding<float> bind(tape, true);
    auto out = model.forward(bind, x, noise);
    ad::Var<float> loss = out.nll_per_pixel;
    tape.backward(loss);
    opt.step(bind);
    benchmark::DoNotOptimize(loss.value().data());
  }
}
BENCHMARK(BM_GenesisTrainStep)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_Ari(benchmark::State& state) {
  Rng rng(5);
  const int64_t S = 64;
  auto random_seg = [&](int64_t labels) {
    gblab::Segmentation seg;
    seg.labels = Tensor<int32_t>({S, S});
    for (int64_t i = 0; i < S * S; ++i)
      seg.labels.data()[i] = int32_t(rng.below(uint64_t(labels)));
    seg.num_labels = labels;
    return seg;
  };
  gblab::Segmentation gt = random_seg(6), pred = random_seg(5);
  for (auto _ : state) benchmark::DoNotOptimize(gblab::ari(gt, pred));
}
BENCHMARK(BM_Ari);

void BM_GenerateScene(benchmark::State& state) {
  gblab::SceneSpec spec;
  uint64_t seed = 0;
  for (auto _ : state) {
    gblab::SpriteScene scene = gblab::generate_scene(seed++, spec);
    benchmark::DoNotOptimize(scene.image.data());
  }
}
BENCHMARK(BM_GenerateScene)->Unit(benchmark::kMicrosecond);

void BM_PngRoundTrip(benchmark::State& state) {
  Rng rng(6);
  gblab::ImageU8 img;
  img.width = img.height = 64;
  img.channels = 3;
  img.pixels.resize(size_t(64 * 64 * 3));
  for (uint8_t& p : img.pixels) p = uint8_t(rng.below(256));
  const std::string path = "/tmp/gblab_bench_roundtrip.png";
  for (auto _ : state) {
    gblab::write_png(path, img);
    gblab::ImageU8 back = gblab::read_png(path);
    benchmark::DoNotOptimize(back.pixels.data());
  }
}
BENCHMARK(BM_PngRoundTrip)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
