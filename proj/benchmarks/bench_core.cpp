#include <benchmark/benchmark.h>

#include "anatomist/data.hpp"
#include "anatomist/trainer.hpp"
#include "anatomist/zeroshot.hpp"

using namespace ana;

namespace {

Mat phantom_image() {
  PhantomSpec spec;
  spec.image_pixels = 144;
  return generate_phantom(spec, 3).first;
}

EncoderParams desk_encoder() {
  Rng rng(1);
  return EncoderParams::init(EncoderConfig::make(EncoderVariant::tiny, 8), rng);
}

}  // namespace

static void EncodeForward(benchmark::State& state) {
  const EncoderParams enc = desk_encoder();
  const Mat img = phantom_image();
  const Mat crop = img.block(0, 0, 112, 112);
  for (auto _ : state) {
    const EmbeddingMap emb = encode(enc, crop, 14, 14);
    benchmark::DoNotOptimize(emb.tokens.data());
  }
}
BENCHMARK(EncodeForward)->Unit(benchmark::kMillisecond);

static void EncodeForwardBackward(benchmark::State& state) {
  const EncoderParams enc = desk_encoder();
  const Mat img = phantom_image();
  const Mat crop = img.block(0, 0, 112, 112);
  for (auto _ : state) {
    ad::Var tokens = encode_tokens(enc, crop, 14, 14);
    ad::Var loss = ad::mean_all(ad::mul(tokens, tokens));
    const ad::GradMap grads = ad::backward(loss);
    benchmark::DoNotOptimize(grads.size());
  }
}
BENCHMARK(EncodeForwardBackward)->Unit(benchmark::kMillisecond);

static void TrainStepCyclic(benchmark::State& state) {
  PhantomSpec spec;
  spec.image_pixels = 144;
  const Dataset ds = make_phantom_dataset(spec, 8, 5);
  TrainConfig cfg;
  cfg.image_pixels = 144;
  cfg.batch_size = 8;
  cfg.epochs = 3;
  cfg.threads = static_cast<int>(state.range(0));
  TrainState st = init_train_state(cfg, 8);
  std::vector<const Image*> batch;
  for (const auto& item : ds.items) batch.push_back(&item);
  int epoch = 0;
  for (auto _ : state) {
    st.epoch = epoch % 3;
    const LossBreakdown lb = train_step(st, batch, select_perspective(epoch % 3, ScheduleMode::cyclic));
    benchmark::DoNotOptimize(lb.total);
    ++epoch;
  }
  state.SetItemsProcessed(state.iterations() * 8);  // images per step
}
BENCHMARK(TrainStepCyclic)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

static void SampleCropPairAndMask(benchmark::State& state) {
  const GridSpec grid = make_grid(144, 18);
  Rng rng(7);
  for (auto _ : state) {
    auto [c1, c2] = sample_crop_pair(grid, 14, 11, rng);
    const MaskSet mask = mask_from_pair(c1, c2);
    benchmark::DoNotOptimize(mask.flags.size());
  }
}
BENCHMARK(SampleCropPairAndMask);

static void KeyDictionaryStride8(benchmark::State& state) {
  const EncoderParams enc = desk_encoder();
  const Mat img = phantom_image();
  const auto fn = make_teacher_encoder(enc);
  for (auto _ : state) {
    const KeyDictionary dict = build_key_dictionary(fn, img, 8, 14, 8, 2);
    benchmark::DoNotOptimize(dict.features.data());
  }
}
BENCHMARK(KeyDictionaryStride8)->Unit(benchmark::kMillisecond);

static void GeneratePhantom(benchmark::State& state) {
  PhantomSpec spec;
  spec.image_pixels = 144;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto [img, marks] = generate_phantom(spec, seed++);
    benchmark::DoNotOptimize(img.data());
  }
}
BENCHMARK(GeneratePhantom)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
