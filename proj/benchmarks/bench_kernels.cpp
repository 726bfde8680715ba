#include <benchmark/benchmark.h>

#include "cardioseg/components.hpp"
#include "cardioseg/layers.hpp"
#include "cardioseg/mesh.hpp"
#include "cardioseg/phantom.hpp"
#include "cardioseg/preprocess.hpp"
#include "cardioseg/rng.hpp"
#include "cardioseg/unet.hpp"

using namespace cardioseg;

namespace {

TensorF random_tensor(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    TensorF t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
    return t;
}

PhantomPhase cohort_phase() {
    CohortOptions o;
    return generate_phase(cohort_spec(o, 0), 1.0, 1);
}

}  // namespace

// 3x3x3 conv at full patch resolution, batch 4; args are (Cin, Cout).
void BM_Conv3dForward(benchmark::State& state) {
    const auto ci = static_cast<std::size_t>(state.range(0)), co = static_cast<std::size_t>(state.range(1));
    const TensorF x = random_tensor(Shape{4, ci, 4, 64, 64}, 1);
    const TensorF w = random_tensor(Shape{co, ci, 3, 3, 3}, 2);
    const TensorF b(Shape{co});
    for (auto _ : state) benchmark::DoNotOptimize(conv3d_forward(x, w, b));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 4 * ci * co * 27 * 4 * 64 * 64));
}
BENCHMARK(BM_Conv3dForward)->Args({1, 8})->Args({8, 8})->Args({16, 8})->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
    const auto ci = static_cast<std::size_t>(state.range(0)), co = static_cast<std::size_t>(state.range(1));
    const TensorF x = random_tensor(Shape{4, ci, 4, 64, 64}, 1);
    const TensorF w = random_tensor(Shape{co, ci, 3, 3, 3}, 2);
    const TensorF g = random_tensor(Shape{4, co, 4, 64, 64}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(conv3d_backward(g, x, w));
}
BENCHMARK(BM_Conv3dBackward)->Args({8, 8})->Args({16, 8})->Unit(benchmark::kMillisecond);

void BM_UNetTrainStep(benchmark::State& state) {
    UNetConfig c;
    c.base_channels = static_cast<std::size_t>(state.range(0));
    UNetParams p = build_unet(c);
    const TensorF x = random_tensor(Shape{4, 1, 4, 64, 64}, 4);
    for (auto _ : state) {
        UNetTape tape;
        p.zero_grad();
        const TensorF logits = unet_forward(p, x, Mode::Train, &tape);
        unet_backward(p, tape, logits);
    }
}
BENCHMARK(BM_UNetTrainStep)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_SlidingWindow(benchmark::State& state) {
    UNetConfig c;
    c.base_channels = 8;
    const UNetParams p = build_unet(c);
    Volume v(kCanonicalShape, {1.5, 1.5, 8});
    Rng rng(5);
    for (auto& f : v.values) f = static_cast<float>(rng.uniform01());
    for (auto _ : state) benchmark::DoNotOptimize(sliding_window_infer(p, v));
}
BENCHMARK(BM_SlidingWindow)->Unit(benchmark::kMillisecond);

void BM_MarchingCubes(benchmark::State& state) {
    const PhantomPhase ph = cohort_phase();
    for (auto _ : state) benchmark::DoNotOptimize(marching_cubes(ph.cleaned, kLvCavity));
}
BENCHMARK(BM_MarchingCubes)->Unit(benchmark::kMillisecond);

void BM_LabelComponents(benchmark::State& state) {
    const PhantomPhase ph = cohort_phase();
    std::vector<std::uint8_t> b(ph.raw.labels.size());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = ph.raw.labels[i] == kMyocardium;
    const auto conn = static_cast<Connectivity>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(label_components(b, ph.raw.dims(), conn));
}
BENCHMARK(BM_LabelComponents)
    ->Arg(static_cast<int>(Connectivity::Slice8))
    ->Arg(static_cast<int>(Connectivity::Volume26))
    ->Unit(benchmark::kMicrosecond);

void BM_CleanMask(benchmark::State& state) {
    const PhantomPhase ph = cohort_phase();
    for (auto _ : state) benchmark::DoNotOptimize(clean_mask(ph.raw));
}
BENCHMARK(BM_CleanMask)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
