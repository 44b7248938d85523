// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fqconv/tensor.hpp"

namespace fqconv {

enum class Split : uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

const char* to_string(Split split);
Split split_from_string(const std::string& s);

/// Labelled samples stored as one tensor [N, sample_shape...].
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<Split> split;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  Shape sample_shape() const;
  std::vector<int64_t> indices(Split s) const;
  /// Throws DataError on inconsistent sizes or labels outside [0, K).
  void validate() const;
};

/// Rows `rows` of a [N, ...] tensor.
Tensor gather_rows(const Tensor& t, std::span<const int64_t> rows);
std::vector<int> gather_labels(const Dataset& d, std::span<const int64_t> rows);
/// Dataset holding only the samples of one split.
Dataset subset(const Dataset& d, Split s);
/// Shuffles sample order under `seed` and tags the first `train` fraction as
/// train, the next `val` fraction as validation and the rest as test.
void assign_splits(Dataset& d, uint64_t seed, double train = 0.8, double val = 0.1);

struct SequenceTaskOptions {
  int num_classes = 8;
  int64_t num_samples = 2000;
  int64_t length = 40;
  int64_t channels = 12;
  uint64_t seed = 0;
  /// Std of the per-element Gaussian noise, relative to template amplitude 1.
  float jitter = 0.5f;
  /// Template amplitude.
  float separation = 1.0f;
  /// Samples are shifted in time by up to this many frames.
  int64_t max_shift = 3;
};

/// Smooth per-class channel patterns plus Gaussian jitter and a random time shift.
Dataset gen_sequence_classes(const SequenceTaskOptions& options);
/// Class templates [K, C, L] that gen_sequence_classes samples around (zero shift).
Tensor sequence_templates(const SequenceTaskOptions& options);

struct ImageTaskOptions {
  int num_classes = 10;
  int64_t num_samples = 2000;
  int64_t height = 16;
  int64_t width = 16;
  int64_t channels = 3;
  uint64_t seed = 0;
  float jitter = 0.5f;
  float separation = 1.0f;
  int64_t max_shift = 2;
};

/// Blob-pattern images normalized to zero mean and unit standard deviation.
Dataset gen_image_classes(const ImageTaskOptions& options);

/// Random horizontal flips and zero-padded shifted crops, in place, on a
/// batch [B, C, H, W].
void augment_images(Tensor& batch, std::mt19937_64& rng, int64_t max_shift = 2);

/// CSV rows are `label,split,f0,f1,...` with features in row-major order.
struct CsvSchema {
  Shape feature_shape;
  int num_classes = 0;
  bool has_header = true;
  /// Without a split column, splits are assigned with assign_splits(seed).
  bool has_split_column = true;
  uint64_t seed = 0;
};

/// Throws DataError naming the line of any malformed row.
Dataset load_csv_features(const std::string& path, const CsvSchema& schema);
void save_csv_features(const Dataset& d, const std::string& path);

}  // namespace fqconv
