// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fqconv/builders.hpp"
#include "fqconv/data.hpp"
#include "fqconv/noise.hpp"
#include "fqconv/training.hpp"

namespace fqconv {

struct DatasetConfig {
  /// "sequence", "image", "csv" or "archive".
  std::string kind = "sequence";
  SequenceTaskOptions sequence;
  ImageTaskOptions image;
  /// csv file or dataset archive directory.
  std::string path;
  CsvSchema csv;
};

struct NetworkConfig {
  /// "kws" or "resnet".
  std::string arch = "kws";
  KwsOptions kws;
  ResNetOptions resnet;
};

struct RunConfig {
  std::string name = "run";
  uint64_t seed = 0;
  std::string out_dir;
  DatasetConfig dataset;
  NetworkConfig network;
  int epochs = 10;
  int64_t batch_size = 32;
  OptimizerConfig optimizer;
  bool augment = false;
  DistillConfig distill;
  GradualSchedule schedule;
  /// Evaluation points; defaults to the five-point noise ladder.
  std::vector<NoiseSpec> noise_points;
  /// When set, `train` on a fully quantized network injects this noise.
  std::optional<NoiseSpec> train_noise;
};

/// Parses JSON text. Every key is checked: unknown keys, wrong types,
/// a missing seed or invalid values throw ConfigError naming the key path.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON for the resolved configuration; parse_run_config accepts it.
std::string to_json(const RunConfig& cfg);

/// Dataset described by cfg.dataset, seeded from cfg.seed.
Dataset make_dataset(const RunConfig& cfg);
/// Untrained full-precision network sized for `data`.
Network make_network(const RunConfig& cfg, const Dataset& data);
/// Training options shared by every stage.
TrainOptions train_options(const RunConfig& cfg);

}  // namespace fqconv
