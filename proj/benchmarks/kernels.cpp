#include <efcn/autodiff.hpp>
#include <efcn/embed.hpp>
#include <efcn/model.hpp>
#include <efcn/probes.hpp>

#include <benchmark/benchmark.h>

#include <random>

using namespace efcn;

namespace {

Batch random_batch(const ModelSpec& m, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> nd;
    Batch b{Tensor(Shape{n, m.input.channels, m.input.height, m.input.width}), {}};
    for (float& v : b.images.storage()) v = nd(rng);
    for (int i = 0; i < n; ++i) b.labels.push_back(i % m.classes);
    return b;
}

ModelSpec mini(int channels) { return build_vanilla_cnn(channels, {1, 16, 16}, 10); }

void BM_Embed(benchmark::State& st) {
    const ModelSpec m = mini(static_cast<int>(st.range(0)));
    const ParamVector theta = init_params(m, 1);
    const EmbeddingMap map = build_embedding_map(m);
    for (auto _ : st) benchmark::DoNotOptimize(map.apply(theta));
    st.counters["efcn_params"] = static_cast<double>(map.fcn_size());
}
BENCHMARK(BM_Embed)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_BuildEmbeddingMap(benchmark::State& st) {
    const ModelSpec m = mini(static_cast<int>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(build_embedding_map(m));
}
BENCHMARK(BM_BuildEmbeddingMap)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_ConvForward(benchmark::State& st) {
    const ModelSpec m = mini(8);
    const ParamVector theta = init_params(m, 1);
    const Batch b = random_batch(m, static_cast<int>(st.range(0)), 2);
    for (auto _ : st) benchmark::DoNotOptimize(forward(m, theta, b.images));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_ConvForward)->Arg(20)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_ConvGrad(benchmark::State& st) {
    const ModelSpec m = mini(8);
    const ParamVector theta = init_params(m, 1);
    const Batch b = random_batch(m, static_cast<int>(st.range(0)), 2);
    const LossFn loss = model_loss(m);
    for (auto _ : st) benchmark::DoNotOptimize(grad(loss, theta, b));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_ConvGrad)->Arg(20)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_DenseForward(benchmark::State& st) {
    const ModelSpec m = build_fcn_from(mini(8));
    const ParamVector theta = init_params(m, 1);
    const Batch b = random_batch(m, static_cast<int>(st.range(0)), 2);
    for (auto _ : st) benchmark::DoNotOptimize(forward(m, theta, b.images));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_DenseForward)->Arg(20)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_DenseGrad(benchmark::State& st) {
    const ModelSpec m = build_fcn_from(mini(8));
    const ParamVector theta = init_params(m, 1);
    const Batch b = random_batch(m, static_cast<int>(st.range(0)), 2);
    const LossFn loss = model_loss(m);
    for (auto _ : st) benchmark::DoNotOptimize(grad(loss, theta, b));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_DenseGrad)->Arg(20)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_Hvp(benchmark::State& st) {
    const ModelSpec m = mini(8);
    const ParamVector theta = init_params(m, 1);
    const Batch b = random_batch(m, 256, 2);
    const ParamVector v = init_params(m, 3);
    const LossFn loss = model_loss(m);
    for (auto _ : st) benchmark::DoNotOptimize(hvp(loss, theta, b, v));
}
BENCHMARK(BM_Hvp)->Unit(benchmark::kMillisecond);

void BM_Delta(benchmark::State& st) {
    const ModelSpec m = mini(8);
    const EmbeddingMap map = build_embedding_map(m);
    const ParamVector theta = map.apply(init_params(m, 1));
    for (auto _ : st) benchmark::DoNotOptimize(delta(theta, map.mask()));
}
BENCHMARK(BM_Delta)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
