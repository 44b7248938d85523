// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fqconv/builders.hpp"
#include "fqconv/data.hpp"
#include "fqconv/forward.hpp"
#include "fqconv/integer.hpp"
#include "fqconv/noise.hpp"
#include "fqconv/ops.hpp"
#include "fqconv/quantizer.hpp"
#include "fqconv/training.hpp"
#include "fqconv/transforms.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace fqconv;
using testing::gradient_error;
using testing::random_tensor;

namespace {

constexpr int kEpochs = 6;
constexpr int kSeeds = 10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double test_accuracy(const Network& net, const Dataset& d) { return 100.0 * evaluate(net, d, Split::kTest).accuracy; }

Dataset task(uint64_t seed, int64_t samples) {
  Dataset d = testing::toy_sequences(seed, samples);
  assign_splits(d, seed, 0.7, 0.1);
  return d;
}

TrainOptions stage_options(uint64_t seed) {
  TrainOptions o;
  o.epochs = kEpochs;
  o.seed = seed + 2;
  return o;
}

Network train_fp(const Dataset& d, uint64_t seed) {
  return train_stage(build_kws_net(testing::toy_kws(seed + 1)), d, stage_options(seed)).net;
}

GradualResult gradual(const Network& fp, const Dataset& d, uint64_t seed) {
  GradualSchedule s = kws_schedule(kEpochs);
  s.promote_teacher = true;
  GradualOptions go;
  go.base = stage_options(seed);
  return run_gradual_quantization(s, fp, d, go);
}

// 1 -------------------------------------------------------------------------

Outcome quantizer_properties() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> bits(2, 8);
  std::uniform_real_distribution<float> log_scale(-3.0f, 3.0f), u(-2.0f, 2.0f), step(0.0f, 0.5f);
  int64_t bad_idem = 0, bad_mono = 0, bad_grid = 0, bad_code = 0;
  const int64_t samples = 100000;
  for (int64_t i = 0; i < samples; ++i) {
    const QuantConfig c{bits(rng), rng() % 2 ? -1.0f : 0.0f, log_scale(rng)};
    const float e = c.scale();
    const float x1 = u(rng) * e;
    const float x2 = x1 + step(rng) * e;
    Tensor x = Tensor::vector({x1, x2});
    Tensor q = learned_quantize(x, c);
    if (learned_quantize(q, c).storage() != q.storage()) ++bad_idem;
    if (q[1] < q[0]) ++bad_mono;
    const int n = c.levels();
    for (int k = 0; k < 2; ++k) {
      const double t = static_cast<double>(q[k]) / e * n;
      if (std::fabs(t - std::round(t)) > 1e-3 || t < c.lower_bound * n - 1e-3 || t > n + 1e-3) ++bad_grid;
    }
    IntTensor codes = to_integer_codes(x, c);
    for (int32_t code : codes.data) bad_code += code < c.min_code() || code > c.max_code();
    if (from_integer_codes(codes, c).storage() != q.storage()) ++bad_code;
  }
  const int64_t total = bad_idem + bad_mono + bad_grid + bad_code;
  return {total == 0, fmt("%.0f samples; violations idempotence %.0f monotonicity %.0f grid %.0f", samples, bad_idem,
                          bad_mono, bad_grid) +
                          fmt(" code round trip %.0f", bad_code)};
}

// 2 -------------------------------------------------------------------------

double surrogate(double x, double s, double b) { return std::exp(s) * std::clamp(x / std::exp(s), b, 1.0); }

double quantizer_gradient_error(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  const QuantConfig c{2 + static_cast<int>(rng() % 7), rng() % 2 ? -1.0f : 0.0f, 1.5f * u(rng)};
  const int64_t n = 32;
  std::vector<float> xs;
  while (static_cast<int64_t>(xs.size()) < n) {
    const float x = 2.0f * c.scale() * u(rng);
    const double t = x / c.scale();
    if (std::fabs(t - 1.0) > 0.02 && std::fabs(t - c.lower_bound) > 0.02) xs.push_back(x);
  }
  Tensor x({n}, xs);
  Tensor up = random_tensor({n}, rng);
  QuantizeGradients g = learned_quantize_backward(up, x, c);
  const double h = 1e-6;
  double diff = 0.0, na = 0.0, nn = 0.0, num_s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double num = up[i] * (surrogate(x[i] + h, c.log_scale, c.lower_bound) -
                                surrogate(x[i] - h, c.log_scale, c.lower_bound)) / (2 * h);
    diff += (g.grad_x[i] - num) * (g.grad_x[i] - num);
    na += static_cast<double>(g.grad_x[i]) * g.grad_x[i];
    nn += num * num;
    num_s += up[i] * (surrogate(x[i], c.log_scale + h, c.lower_bound) - surrogate(x[i], c.log_scale - h, c.lower_bound)) /
             (2 * h);
  }
  diff += (g.grad_log_scale - num_s) * (g.grad_log_scale - num_s);
  na += static_cast<double>(g.grad_log_scale) * g.grad_log_scale;
  nn += num_s * num_s;
  const double scale = std::sqrt(std::max(na, nn));
  return scale < 1e-12 ? 0.0 : std::sqrt(diff) / scale;
}

Outcome gradient_checks() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> small(1, 4);
  std::map<std::string, std::function<double()>> checks;
  checks["learned_quantize"] = [&] { return quantizer_gradient_error(rng); };
  checks["conv1d"] = [&] {
    const int64_t ci = small(rng), co = small(rng), k = 1 + rng() % 3, dil = small(rng) % 3 + 1;
    const int64_t pad = rng() % 2, len = k * dil + 4;
    std::vector<Tensor> leaves{random_tensor({2, ci, len}, rng), random_tensor({co, ci, k}, rng)};
    return gradient_error(leaves, [&](Tape&, std::vector<Var>& v) {
      return conv1d(v[0], v[1], static_cast<int>(dil), static_cast<int>(pad)); }, rng);
  };
  checks["conv2d"] = [&] {
    const int64_t ci = small(rng), co = small(rng), k = 1 + rng() % 3, stride = 1 + rng() % 2, pad = rng() % 2;
    std::vector<Tensor> leaves{random_tensor({2, ci, 6, 5}, rng), random_tensor({co, ci, k, k}, rng)};
    return gradient_error(leaves, [&](Tape&, std::vector<Var>& v) {
      return conv2d(v[0], v[1], static_cast<int>(stride), static_cast<int>(pad)); }, rng);
  };
  checks["dense"] = [&] {
    const int64_t in = small(rng) + 1, out = small(rng), pos = small(rng);
    std::vector<Tensor> leaves{random_tensor({3, in, pos}, rng), random_tensor({out, in}, rng), random_tensor({out}, rng)};
    return gradient_error(leaves, [](Tape&, std::vector<Var>& v) { return dense(v[0], v[1], v[2]); }, rng);
  };
  checks["batch_norm"] = [&] {
    const int64_t c = small(rng), b = 4 + rng() % 5, l = small(rng) + 2;
    std::vector<Tensor> leaves{random_tensor({b, c, l}, rng, -2.0f, 2.0f), random_tensor({c}, rng, 0.5f, 1.5f),
                               random_tensor({c}, rng)};
    return gradient_error(leaves, [](Tape&, std::vector<Var>& v) { return batch_norm(v[0], v[1], v[2], 1e-5f); }, rng);
  };
  checks["softmax_cross_entropy"] = [&] {
    const int k = 2 + static_cast<int>(rng() % 8);
    std::vector<int> labels;
    for (int i = 0; i < 3; ++i) labels.push_back(static_cast<int>(rng() % static_cast<uint64_t>(k)));
    Tensor target = one_hot(labels, k);
    std::vector<Tensor> leaves{random_tensor({3, k}, rng, -4.0f, 4.0f)};
    return gradient_error(
        leaves, [&](Tape&, std::vector<Var>& v) { return softmax_cross_entropy(v[0], target); }, rng, 5e-3f);
  };
  bool ok = true;
  std::string detail = "worst relative error over 100 configurations:";
  for (auto& [name, check] : checks) {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) worst = std::max(worst, check());
    ok = ok && worst <= 1e-3;
    detail += " " + name + fmt(" %.2e", worst);
  }
  return {ok, detail};
}

// 3 -------------------------------------------------------------------------

Outcome bn_fold_exactness() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(-3.0, 3.0), v(0.01, 4.0);
  uint64_t worst = 0;
  int64_t over = 0;
  for (int i = 0; i < 10000; ++i) {
    BatchNormParams p;
    p.gamma = {u(rng)};
    p.beta = {u(rng)};
    p.running_mean = {u(rng)};
    p.running_var = {v(rng)};
    p.eps = 1e-5;
    const double x = 4.0 * u(rng);
    const long double sigma = std::sqrt(static_cast<long double>(p.running_var[0]) + p.eps);
    const double oracle =
        static_cast<double>(p.gamma[0] * (static_cast<long double>(x) - p.running_mean[0]) / sigma + p.beta[0]);
    const uint64_t d = testing::ulp_distance(bn_fold(p).apply(0, x), oracle);
    worst = std::max(worst, d);
    over += d > 1;
  }
  return {over == 0, fmt("10000 parameter sets; max distance %.0f ULP; %.0f above 1 ULP", static_cast<double>(worst),
                         static_cast<double>(over))};
}

// Shared toy fully quantized model -------------------------------------------

struct ToyModel {
  Dataset data;
  Network q24;
  Network fq24;
};

const ToyModel& toy_model() {
  static std::optional<ToyModel> m;
  if (!m) {
    const uint64_t seed = 1;
    ToyModel t{task(seed, 5000), {}, {}};
    GradualResult g = gradual(train_fp(t.data, seed), t.data, seed);
    t.q24 = g.stages.at("Q24").net;
    t.fq24 = g.stages.at("FQ24").net;
    m = std::move(t);
  }
  return *m;
}

// 4 -------------------------------------------------------------------------

Outcome integer_equivalence() {
  const ToyModel& t = toy_model();
  IntegerModel model = compile(t.fq24);
  int64_t mismatches = 0, checked = 0;
  for (const IntegerLayerPlan& p : model.plans) {
    ScanResult r = exhaustive_scan(p);
    mismatches += r.mismatches;
    checked += r.checked;
  }
  EquivalenceReport r = verify_equivalence(model, t.fq24, t.data, Split::kTest);
  const bool ok = model.is_ternary() && mismatches == 0 && r.samples == 1000 && r.argmax_agreements == r.samples;
  return {ok, fmt("%.0f layers ternary %.0f; scan %.0f accumulator values, %.0f discrepancies; ",
                  static_cast<double>(model.plans.size()), model.is_ternary(), static_cast<double>(checked),
                  static_cast<double>(mismatches)) +
                  fmt("argmax agreement %.0f/%.0f; fq accuracy %.1f%%", static_cast<double>(r.argmax_agreements),
                      static_cast<double>(r.samples), test_accuracy(t.fq24, t.data))};
}

// 5 and 6 ---------------------------------------------------------------------

struct SeedRun {
  double fp = 0, gq = 0, fq = 0, direct = 0;
};

const std::vector<SeedRun>& seed_runs() {
  static std::vector<SeedRun> runs;
  if (runs.empty()) {
    for (uint64_t seed = 1; seed <= kSeeds; ++seed) {
      Dataset d = task(seed, 3000);
      Network fp = train_fp(d, seed);
      GradualResult g = gradual(fp, d, seed);
      GradualOptions go;
      go.base = stage_options(seed);
      GradualResult direct = run_gradual_quantization(direct_schedule(2, 4, kEpochs), fp, d, go);
      SeedRun r{test_accuracy(fp, d), test_accuracy(g.stages.at("Q24").net, d), test_accuracy(g.stages.at("FQ24").net, d),
                test_accuracy(direct.stages.at("Q24").net, d)};
      std::printf("  seed %2d  FP %.1f  gradual Q24 %.1f  FQ24 %.1f  direct Q24 %.1f\n", static_cast<int>(seed), r.fp, r.gq,
                  r.fq, r.direct);
      std::fflush(stdout);
      runs.push_back(r);
    }
  }
  return runs;
}

Outcome gradual_benefit() {
  std::vector<double> gq, direct;
  double worst = -1e9;
  for (const SeedRun& r : seed_runs()) {
    gq.push_back(r.gq);
    direct.push_back(r.direct);
    worst = std::max(worst, r.direct - r.gq);
  }
  const double gap = median(gq) - median(direct);
  return {gap >= 2.0 && worst <= 0.5,
          fmt("median gradual %.1f direct %.1f (gap %.1f, need >= 2); largest direct lead %.1f (need <= 0.5)", median(gq),
              median(direct), gap, worst)};
}

Outcome fq_transform_cost() {
  std::vector<double> delta, q, fq;
  for (const SeedRun& r : seed_runs()) {
    delta.push_back(r.fq - r.gq);
    q.push_back(r.gq);
    fq.push_back(r.fq);
  }
  const double m = median(delta);
  return {m >= -1.5, fmt("median Q24 %.1f FQ24 %.1f; median per-seed change %.2f (need >= -1.5)", median(q), median(fq), m)};
}

// 7 -------------------------------------------------------------------------

Outcome noise_robustness() {
  const ToyModel& t = toy_model();
  std::vector<double> ladder;
  for (const NoiseSpec& spec : noise_ladder(7, 10)) ladder.push_back(100.0 * median(noisy_eval(t.fq24, t.data, Split::kTest, spec).accuracies));
  bool monotone = true;
  for (size_t i = 1; i < ladder.size(); ++i) monotone = monotone && ladder[i] <= ladder[i - 1];

  NoiseSpec point{20, 20, 100, 17, 10};
  TrainOptions o = stage_options(1);
  o.optimizer = OptimizerConfig::adam(0.001f);
  NoiseSpec train_spec = point;
  train_spec.seed = 18;
  Network aware = noise_aware_train(t.fq24, t.data, train_spec, o).net;
  const double plain = 100.0 * median(noisy_eval(t.fq24, t.data, Split::kTest, point).accuracies);
  const double trained = 100.0 * median(noisy_eval(aware, t.data, Split::kTest, point).accuracies);

  std::string detail = "ladder medians";
  for (double a : ladder) detail += fmt(" %.1f", a);
  detail += fmt("; at 20/20/100 noise-aware %.1f vs plain %.1f (gain %.1f, need >= 3)", trained, plain, trained - plain);
  return {monotone && trained - plain >= 3.0, detail};
}

// 8 -------------------------------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

Outcome determinism() {
#ifndef FQCONV_CLI
  return {false, "command line tool was not built"};
#else
  const char* config = R"({
  "seed": 11,
  "epochs": 2,
  "dataset": {"kind": "sequence", "classes": 4, "samples": 300, "jitter": 1.0},
  "network": {"arch": "kws", "embed": 16, "filters": 8, "dilations": [1, 2, 1]},
  "noise": {"points": [[0, 0, 0], [10, 10, 50]], "repetitions": 3, "train": [10, 10, 50]}
})";
  const std::vector<std::string> commands = {
      "gen-data --config run.json --out data",
      "train --config run.json --out runs",
      "quantize --config run.json --out runs",
      "transform-fq --init runs/Q24 --out runs/Q24fq",
      "train --config run.json --init runs/FQ24 --stage noisy --out runs",
      "compile-int --config run.json --init runs/FQ24 --out int",
      "verify --config run.json --init runs/FQ24 --model int",
      "infer --config run.json --init int --out predictions.tsv",
      "noise-eval --config run.json --init runs/FQ24 --out noise.tsv",
  };
  const fs::path base = fs::temp_directory_path() / "fqconv_acceptance_determinism";
  fs::remove_all(base);
  int failures = 0;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = base / run;
    fs::create_directories(dir);
    std::ofstream(dir / "run.json") << config;
    for (size_t i = 0; i < commands.size(); ++i) {
      const std::string cmd = "cd '" + dir.string() + "' && '" FQCONV_CLI "' " + commands[i] + " > stdout_" +
                              std::to_string(i) + ".txt 2>&1";
      failures += std::system(cmd.c_str()) != 0;
    }
  }
  const auto a = snapshot(base / "a"), b = snapshot(base / "b");
  int differing = 0;
  std::set<std::string> names;
  for (const auto& [k, v] : a) names.insert(k);
  for (const auto& [k, v] : b) names.insert(k);
  for (const std::string& n : names) {
    if (!a.count(n) || !b.count(n) || a.at(n) != b.at(n)) {
      ++differing;
      std::printf("  differs: %s\n", n.c_str());
    }
  }
  fs::remove_all(base);
  return {failures == 0 && differing == 0 && a.size() > 20,
          fmt("%.0f commands twice; %.0f files compared, %.0f differ; %.0f nonzero exits",
              static_cast<double>(commands.size()), static_cast<double>(names.size()), differing, failures)};
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"quantizer properties", quantizer_properties},
      {"gradient checks", gradient_checks},
      {"batch-norm fold exactness", bn_fold_exactness},
      {"integer equivalence", integer_equivalence},
      {"gradual quantization benefit", gradual_benefit},
      {"fq transform cost", fq_transform_cost},
      {"noise robustness", noise_robustness},
      {"determinism", determinism},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o = criteria[i].second();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
