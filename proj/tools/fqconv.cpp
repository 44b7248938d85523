// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fqconv/archive.hpp"
#include "fqconv/config.hpp"
#include "fqconv/error.hpp"
#include "fqconv/forward.hpp"
#include "fqconv/integer.hpp"
#include "fqconv/noise.hpp"
#include "fqconv/ops.hpp"
#include "fqconv/training.hpp"
#include "fqconv/transforms.hpp"

namespace fs = std::filesystem;
using namespace fqconv;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4, kEquivalence = 5 };

struct Flags {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::string init;
  std::string teacher;
  std::string model;
  std::string stage;
  std::string split = "test";
  bool resume = false;
};

RunConfig read_config(const Flags& f) {
  if (f.config.empty()) throw ConfigError("--config is required");
  std::ifstream in(f.config);
  if (!in) throw ConfigError("cannot read config " + f.config);
  std::ostringstream os;
  os << in.rdbuf();
  if (!f.seed) return parse_run_config(os.str());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(os.str());
  } catch (const nlohmann::ordered_json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected an object");
  j["seed"] = *f.seed;
  return parse_run_config(j.dump());
}

fs::path out_dir(const Flags& f, const RunConfig& cfg) {
  if (!f.out.empty()) return f.out;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  throw ConfigError("no output directory: pass --out or set config.out");
}

Split parse_split(const std::string& s) {
  try {
    return split_from_string(s);
  } catch (const DataError&) {
    throw ConfigError("--split: expected train, val or test, got '" + s + "'");
  }
}

Network load_net(const std::string& path, const char* flag) {
  if (path.empty()) throw ConfigError(std::string(flag) + " is required");
  return load_network(path).net;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void save_with_provenance(const Network& net, const fs::path& dir, std::map<std::string, std::string> prov) {
  NetworkArchive a;
  a.net = net;
  a.provenance = std::move(prov);
  save_network(a, dir);
}

int cmd_gen_data(const Flags& f) {
  const RunConfig cfg = read_config(f);
  const Dataset data = make_dataset(cfg);
  save_dataset(data, out_dir(f, cfg));
  std::printf("samples\t%lld\nclasses\t%d\n", static_cast<long long>(data.size()), data.num_classes);
  return kOk;
}

int cmd_train(const Flags& f) {
  const RunConfig cfg = read_config(f);
  const Dataset data = make_dataset(cfg);
  const fs::path out = out_dir(f, cfg);
  std::optional<Network> teacher;
  if (!f.teacher.empty()) teacher = load_net(f.teacher, "--teacher");
  Network net = f.init.empty() ? make_network(cfg, data) : load_net(f.init, "--init");
  const bool fq = net.mode == NetMode::kFullyQuantized;
  const std::string stage = !f.stage.empty() ? f.stage : fq ? "FQ" : f.init.empty() ? "FP" : "train";

  TrainOptions o = train_options(cfg);
  o.stage_id = stage;
  if (teacher) o.teacher = &*teacher;
  std::ostringstream log;
  o.log = &log;
  StageResult r;
  if (cfg.train_noise && fq) {
    r = noise_aware_train(std::move(net), data, *cfg.train_noise, o);
  } else if (fq) {
    r = finetune_fq(std::move(net), data, o);
  } else {
    r = train_stage(std::move(net), data, o);
  }

  fs::create_directories(out);
  save_with_provenance(r.net, out / stage,
                       {{"command", "train"},
                        {"stage", stage},
                        {"seed", std::to_string(cfg.seed)},
                        {"init", f.init},
                        {"teacher", f.teacher},
                        {"best_epoch", std::to_string(r.best_epoch)}});
  write_text(out / (stage + ".jsonl"), log.str());
  write_text(out / "config.json", to_json(cfg) + "\n");
  std::printf("%s\tbest_epoch %d\tval_accuracy %.4f\n", stage.c_str(), r.best_epoch, r.best_val.accuracy);
  return kOk;
}

int cmd_quantize(const Flags& f) {
  const RunConfig cfg = read_config(f);
  if (cfg.schedule.stages.empty()) {
    std::fprintf(stderr, "warning: schedule is empty, nothing to do\n");
    return kOk;
  }
  const fs::path out = out_dir(f, cfg);
  const Dataset data = make_dataset(cfg);
  const fs::path base = f.init.empty() ? out / "FP" : fs::path(f.init);
  const Network fp = load_network(base).net;

  GradualSchedule schedule = cfg.schedule;
  if (!f.stage.empty()) {
    size_t k = 0;
    while (k < schedule.stages.size() && schedule.stages[k].id != f.stage) ++k;
    if (k == schedule.stages.size()) throw ConfigError("--stage: schedule has no stage '" + f.stage + "'");
    schedule.stages.resize(k + 1);
  }

  GradualOptions go;
  go.base = train_options(cfg);
  if (f.resume) {
    for (const StageSpec& st : schedule.stages) {
      if (fs::exists(out / st.id / kManifestName)) go.completed.emplace(st.id, load_network(out / st.id).net);
    }
  }
  fs::create_directories(out);
  std::ostringstream log;
  go.base.log = &log;
  go.on_stage = [&](const StageSpec& st, const StageResult& r) {
    save_with_provenance(r.net, out / st.id,
                         {{"command", "quantize"},
                          {"stage", st.id},
                          {"seed", std::to_string(cfg.seed)},
                          {"init", st.init},
                          {"teacher", st.teacher},
                          {"best_epoch", std::to_string(r.best_epoch)}});
    write_text(out / (st.id + ".jsonl"), log.str());
    log.str("");
  };
  write_text(out / "config.json", to_json(cfg) + "\n");
  const GradualResult g = run_gradual_quantization(schedule, fp, data, go);

  for (const std::string& id : g.order) {
    const bool reused = go.completed.count(id) > 0;
    std::printf("%s\t%.4f%s\n", id.c_str(), g.stages.at(id).best_val.accuracy, reused ? "\tresumed" : "");
  }
  if (!g.stopped_at.empty()) {
    std::fprintf(stderr, "error: stage %s fell below the accuracy floor %.4f; stopped\n", g.stopped_at.c_str(),
                 schedule.accuracy_floor);
    return kFailure;
  }
  return kOk;
}

int cmd_transform_fq(const Flags& f) {
  if (f.init.empty() || f.out.empty()) throw ConfigError("--init and --out are required");
  const NetworkArchive in = load_network(f.init);
  if (in.net.mode == NetMode::kFullyQuantized) {
    std::fprintf(stderr, "warning: %s is already fully quantized; copying unchanged\n", f.init.c_str());
    save_network(in, f.out);
    return kOk;
  }
  const Network fq = replace_bn_relu(in.net);
  auto prov = in.provenance;
  prov["command"] = "transform-fq";
  prov["init"] = f.init;
  save_with_provenance(fq, f.out, prov);
  std::printf("batch_norm_nodes\t%d\n", fq.count(NodeKind::kBatchNorm));
  return kOk;
}

int report(const EquivalenceReport& r) {
  std::fputs(r.summary().c_str(), stdout);
  if (!r.ok()) {
    std::fprintf(stderr, "error: integer model disagrees with the fake-quant network\n");
    return kEquivalence;
  }
  return kOk;
}

int cmd_compile_int(const Flags& f) {
  const RunConfig cfg = read_config(f);
  const Network net = load_net(f.init, "--init");
  if (net.mode != NetMode::kFullyQuantized) throw UsageError("compile-int needs a fully quantized network");
  const fs::path out = out_dir(f, cfg);
  const Dataset data = make_dataset(cfg);
  const IntegerModel model = compile(net);
  const EquivalenceReport r = verify_equivalence(model, net, data, parse_split(f.split));
  const int code = report(r);
  if (code != kOk) return code;
  save_integer_model(model, out);
  write_text(out / "equivalence.tsv", r.summary());
  return kOk;
}

int cmd_verify(const Flags& f) {
  const RunConfig cfg = read_config(f);
  const Network net = load_net(f.init, "--init");
  const Dataset data = make_dataset(cfg);
  const IntegerModel model = f.model.empty() ? compile(net) : load_integer_model(f.model);
  return report(verify_equivalence(model, net, data, parse_split(f.split)));
}

int cmd_infer(const Flags& f) {
  const RunConfig cfg = read_config(f);
  if (f.init.empty()) throw ConfigError("--init is required");
  const Dataset data = make_dataset(cfg);
  const Split split = parse_split(f.split);
  const Dataset part = subset(data, split);
  Tensor logits;
  if (archive_kind(f.init) == ArchiveKind::kInteger) {
    logits = integer_forward(load_integer_model(f.init), part.features);
  } else {
    logits = predict(load_network(f.init).net, part.features);
  }
  const std::vector<int> pred = argmax_rows(logits);
  int64_t correct = 0;
  std::ostringstream rows;
  rows << "index\tlabel\tprediction\n";
  for (size_t i = 0; i < pred.size(); ++i) {
    correct += pred[i] == part.labels[i];
    rows << i << '\t' << part.labels[i] << '\t' << pred[i] << '\n';
  }
  if (!f.out.empty()) {
    fs::create_directories(fs::path(f.out).parent_path().empty() ? fs::path(".") : fs::path(f.out).parent_path());
    write_text(f.out, rows.str());
  }
  const double acc = pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
  std::printf("split\t%s\nsamples\t%zu\naccuracy\t%.4f\n", to_string(split), pred.size(), acc);
  return kOk;
}

int cmd_noise_eval(const Flags& f) {
  const RunConfig cfg = read_config(f);
  const Network net = load_net(f.init, "--init");
  const Dataset data = make_dataset(cfg);
  const Split split = parse_split(f.split);
  std::ostringstream table;
  table << "weight_pct\tact_pct\tmac_pct\trepetitions\tmean_accuracy\tstd_accuracy\n";
  for (const NoiseSpec& spec : cfg.noise_points) {
    const NoiseReport r = noisy_eval(net, data, split, spec);
    char line[160];
    std::snprintf(line, sizeof(line), "%g\t%g\t%g\t%d\t%.4f\t%.4f\n", spec.weight_pct, spec.act_pct, spec.mac_pct,
                  spec.repetitions, r.mean_accuracy, r.std_accuracy);
    table << line;
  }
  std::fputs(table.str().c_str(), stdout);
  if (!f.out.empty()) write_text(f.out, table.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fully quantized CNN training, compilation and noise evaluation"};
  app.require_subcommand(1);
  Flags f;

  auto config = [&](CLI::App* c) { c->add_option("--config", f.config, "JSON run configuration"); };
  auto seed = [&](CLI::App* c) { c->add_option("--seed", f.seed, "Override the config seed"); };
  auto out = [&](CLI::App* c, const char* what) { c->add_option("--out", f.out, what); };
  auto init = [&](CLI::App* c, const char* what) { c->add_option("--init", f.init, what); };
  auto split = [&](CLI::App* c) { c->add_option("--split", f.split, "train, val or test"); };

  CLI::App* gen = app.add_subcommand("gen-data", "Write the configured dataset as an archive");
  config(gen);
  seed(gen);
  out(gen, "Dataset archive directory");

  CLI::App* train = app.add_subcommand("train", "Train a network (float, or fine-tune an --init archive)");
  config(train);
  seed(train);
  out(train, "Run directory");
  init(train, "Network archive to continue from");
  train->add_option("--teacher", f.teacher, "Network archive supplying soft labels");
  train->add_option("--stage", f.stage, "Name of the written archive");

  CLI::App* quant = app.add_subcommand("quantize", "Run the gradual quantization schedule");
  config(quant);
  seed(quant);
  out(quant, "Run directory; one archive per stage");
  init(quant, "Full-precision baseline (default <out>/FP)");
  quant->add_flag("--resume", f.resume, "Reuse stage archives already present");
  quant->add_option("--stage", f.stage, "Stop after this stage");

  CLI::App* tfq = app.add_subcommand("transform-fq", "Replace batch norm and ReLU by learned quantizers");
  init(tfq, "Quantized network archive");
  out(tfq, "Fully quantized archive directory");

  CLI::App* cint = app.add_subcommand("compile-int", "Compile a fully quantized network to integer plans");
  config(cint);
  seed(cint);
  init(cint, "Fully quantized network archive");
  out(cint, "Integer model archive directory");
  split(cint);

  CLI::App* infer = app.add_subcommand("infer", "Classify a split with a network or integer model");
  config(infer);
  seed(infer);
  init(infer, "Network or integer model archive");
  out(infer, "Predictions TSV");
  split(infer);

  CLI::App* noise = app.add_subcommand("noise-eval", "Accuracy under weight, activation and MAC noise");
  config(noise);
  seed(noise);
  init(noise, "Fully quantized network archive");
  out(noise, "Report TSV");
  split(noise);

  CLI::App* verify = app.add_subcommand("verify", "Check integer inference against the fake-quant network");
  config(verify);
  seed(verify);
  init(verify, "Fully quantized network archive");
  verify->add_option("--model", f.model, "Compiled integer model (default: compile --init)");
  split(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(f);
    if (*train) return cmd_train(f);
    if (*quant) return cmd_quantize(f);
    if (*tfq) return cmd_transform_fq(f);
    if (*cint) return cmd_compile_int(f);
    if (*infer) return cmd_infer(f);
    if (*noise) return cmd_noise_eval(f);
    if (*verify) return cmd_verify(f);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kDivergence;
  } catch (const EquivalenceError& e) {
    std::fprintf(stderr, "equivalence failure: %s\n", e.what());
    return kEquivalence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
