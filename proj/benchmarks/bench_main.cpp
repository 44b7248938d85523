// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "fqconv/builders.hpp"
#include "fqconv/data.hpp"
#include "fqconv/forward.hpp"
#include "fqconv/integer.hpp"
#include "fqconv/kernels.hpp"
#include "fqconv/quantizer.hpp"
#include "fqconv/training.hpp"
#include "fqconv/transforms.hpp"

namespace {

using namespace fqconv;

std::vector<float> uniform(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

kernels::ConvGeometry geometry(int64_t channels) {
  return kernels::conv1d_geometry({32, channels, 64}, {channels, channels, 3}, 2, 0);
}

void BM_ConvFloat(benchmark::State& state) {
  const auto g = geometry(state.range(0));
  const auto in = uniform(static_cast<size_t>(g.input_size()), 1);
  const auto k = uniform(static_cast<size_t>(g.kernel_size()), 2);
  std::vector<float> out(static_cast<size_t>(g.output_size()));
  for (auto _ : state) {
    kernels::conv_forward(in, k, out, g);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * g.output_size() * g.fan_in());
}
BENCHMARK(BM_ConvFloat)->Arg(16)->Arg(45);

template <typename W>
void conv_int(benchmark::State& state, int wmax) {
  const auto g = geometry(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> a(0, 7), w(-wmax, wmax);
  std::vector<int32_t> in(static_cast<size_t>(g.input_size()));
  for (auto& x : in) x = a(rng);
  std::vector<W> k(static_cast<size_t>(g.kernel_size()));
  for (auto& x : k) x = static_cast<W>(w(rng));
  std::vector<int32_t> out(static_cast<size_t>(g.output_size()));
  for (auto _ : state) {
    kernels::conv_forward_int(in, k, out, g);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * g.output_size() * g.fan_in());
}

void BM_ConvTernary(benchmark::State& state) { conv_int<int8_t>(state, 1); }
void BM_ConvInt8(benchmark::State& state) { conv_int<int8_t>(state, 7); }
void BM_ConvInt32(benchmark::State& state) { conv_int<int32_t>(state, 7); }
BENCHMARK(BM_ConvTernary)->Arg(16)->Arg(45);
BENCHMARK(BM_ConvInt8)->Arg(16)->Arg(45);
BENCHMARK(BM_ConvInt32)->Arg(16)->Arg(45);

void BM_LearnedQuantize(benchmark::State& state) {
  const Tensor x({state.range(0)}, uniform(static_cast<size_t>(state.range(0)), 4));
  QuantConfig cfg;
  cfg.bits = 4;
  cfg.log_scale = -0.5f;
  for (auto _ : state) benchmark::DoNotOptimize(learned_quantize(x, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LearnedQuantize)->Arg(1 << 12)->Arg(1 << 16);

void BM_RequantizeBin(benchmark::State& state) {
  FQConvLayer layer;
  layer.kernel_shape = {16, 16, 3};
  layer.weight = {2, -1.0f, -1.0f};
  layer.input = {4, 0.0f, 0.3f};
  layer.output = {4, 0.0f, 0.1f};
  layer.shadow.reset(Tensor({16, 16, 3}, uniform(768, 5)));
  const IntegerLayerPlan plan = compile_layer(layer, layer.output);
  int64_t s = -plan.accumulator_bound;
  for (auto _ : state) {
    benchmark::DoNotOptimize(plan.bin(s));
    if (++s > plan.accumulator_bound) s = -plan.accumulator_bound;
  }
}
BENCHMARK(BM_RequantizeBin);

struct ToyModel {
  Network fq;
  IntegerModel model;
  Tensor batch;
};

const ToyModel& toy() {
  static const ToyModel m = [] {
    SequenceTaskOptions so;
    so.num_samples = 256;
    so.seed = 1;
    Dataset d = gen_sequence_classes(so);
    KwsOptions ko;
    ko.in_channels = 12;
    ko.length = 40;
    ko.embed = 32;
    ko.filters = 16;
    ko.dilations = {1, 1, 2, 2, 4, 4, 1};
    ko.num_classes = 8;
    TrainOptions o;
    o.epochs = 1;
    Network q = train_stage(to_fake_quant(build_kws_net(ko), 2, 4), d, o).net;
    ToyModel t;
    t.fq = replace_bn_relu(q);
    calibrate(t.fq, d.features);
    t.model = compile(t.fq);
    t.batch = slice_rows(d.features, 0, 64);
    return t;
  }();
  return m;
}

void BM_IntegerForward(benchmark::State& state) {
  const ToyModel& t = toy();
  for (auto _ : state) benchmark::DoNotOptimize(integer_forward(t.model, t.batch));
  state.SetItemsProcessed(state.iterations() * t.batch.dim(0));
}
BENCHMARK(BM_IntegerForward)->Unit(benchmark::kMillisecond);

void BM_FakeQuantForward(benchmark::State& state) {
  const ToyModel& t = toy();
  for (auto _ : state) benchmark::DoNotOptimize(predict(t.fq, t.batch));
  state.SetItemsProcessed(state.iterations() * t.batch.dim(0));
}
BENCHMARK(BM_FakeQuantForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
