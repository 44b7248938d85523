// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/data.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fqconv/error.hpp"

namespace fqconv {

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

Shape Dataset::sample_shape() const {
  if (features.rank() < 2) return {};
  return Shape(features.shape().begin() + 1, features.shape().end());
}

std::vector<int64_t> Dataset::indices(Split s) const {
  std::vector<int64_t> out;
  for (size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(static_cast<int64_t>(i));
  }
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (features.rank() < 2 || features.dim(0) != size()) {
    throw DataError("dataset features " + shape_to_string(features.shape()) + " do not match " +
                    std::to_string(size()) + " labels");
  }
  if (split.size() != labels.size()) throw DataError("dataset split tags do not match the number of samples");
  if (num_classes < 1) throw DataError("dataset needs at least one class");
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) + " is outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

Tensor gather_rows(const Tensor& t, std::span<const int64_t> rows) {
  const int64_t row = t.size() / t.dim(0);
  Shape s = t.shape();
  s[0] = static_cast<int64_t>(rows.size());
  std::vector<float> data(static_cast<size_t>(s[0] * row));
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(t.storage().begin() + rows[i] * row, row, data.begin() + static_cast<int64_t>(i) * row);
  }
  return Tensor(std::move(s), std::move(data));
}

std::vector<int> gather_labels(const Dataset& d, std::span<const int64_t> rows) {
  std::vector<int> out(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) out[i] = d.labels[static_cast<size_t>(rows[i])];
  return out;
}

Dataset subset(const Dataset& d, Split s) {
  std::vector<int64_t> rows = d.indices(s);
  if (rows.empty()) throw DataError(std::string("dataset has no ") + to_string(s) + " samples");
  Dataset out;
  out.features = gather_rows(d.features, rows);
  out.labels = gather_labels(d, rows);
  out.num_classes = d.num_classes;
  out.split.assign(rows.size(), s);
  return out;
}

void assign_splits(Dataset& d, uint64_t seed, double train, double val) {
  if (train < 0.0 || val < 0.0 || train + val > 1.0) throw DataError("split fractions must be non-negative and sum to at most 1");
  const size_t n = d.labels.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n_train = static_cast<size_t>(std::llround(train * static_cast<double>(n)));
  const size_t n_val = static_cast<size_t>(std::llround(val * static_cast<double>(n)));
  d.split.assign(n, Split::kTest);
  for (size_t k = 0; k < n; ++k) {
    d.split[order[k]] = k < n_train ? Split::kTrain : k < n_train + n_val ? Split::kVal : Split::kTest;
  }
}

namespace {

Tensor make_sequence_templates(const SequenceTaskOptions& o, std::mt19937_64& rng, int64_t padded) {
  constexpr double kPi = 3.14159265358979323846;
  std::uniform_real_distribution<double> freq(0.5, 3.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> amp(0.3, 1.0);
  Tensor t({o.num_classes, o.channels, padded});
  for (int k = 0; k < o.num_classes; ++k) {
    for (int64_t c = 0; c < o.channels; ++c) {
      double f[3], p[3], a[3];
      for (int j = 0; j < 3; ++j) {
        f[j] = freq(rng);
        p[j] = phase(rng);
        a[j] = amp(rng);
      }
      for (int64_t x = 0; x < padded; ++x) {
        double v = 0.0;
        for (int j = 0; j < 3; ++j) v += a[j] * std::sin(2.0 * kPi * f[j] * static_cast<double>(x) / static_cast<double>(o.length) + p[j]);
        t[(k * o.channels + c) * padded + x] = static_cast<float>(o.separation * v / 1.5);
      }
    }
  }
  return t;
}

void check_positive(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string(what) + ": sizes must be positive");
}

}  // namespace

Tensor sequence_templates(const SequenceTaskOptions& o) {
  check_positive(o.num_classes > 0 && o.length > 0 && o.channels > 0 && o.max_shift >= 0, "sequence_templates");
  std::mt19937_64 rng(o.seed);
  const int64_t padded = o.length + 2 * o.max_shift;
  Tensor full = make_sequence_templates(o, rng, padded);
  Tensor out({o.num_classes, o.channels, o.length});
  for (int64_t r = 0; r < o.num_classes * o.channels; ++r) {
    for (int64_t x = 0; x < o.length; ++x) out[r * o.length + x] = full[r * padded + x + o.max_shift];
  }
  return out;
}

Dataset gen_sequence_classes(const SequenceTaskOptions& o) {
  check_positive(o.num_classes > 0 && o.num_samples > 0 && o.length > 0 && o.channels > 0 && o.max_shift >= 0,
                 "gen_sequence_classes");
  std::mt19937_64 rng(o.seed);
  const int64_t padded = o.length + 2 * o.max_shift;
  Tensor templates = make_sequence_templates(o, rng, padded);
  std::uniform_int_distribution<int64_t> shift(-o.max_shift, o.max_shift);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.num_classes = o.num_classes;
  d.features = Tensor({o.num_samples, o.channels, o.length});
  d.labels.resize(static_cast<size_t>(o.num_samples));
  for (int64_t i = 0; i < o.num_samples; ++i) {
    const int k = static_cast<int>(i % o.num_classes);
    d.labels[static_cast<size_t>(i)] = k;
    const int64_t u = shift(rng);
    for (int64_t c = 0; c < o.channels; ++c) {
      const float* src = templates.data().data() + (k * o.channels + c) * padded + o.max_shift + u;
      float* dst = d.features.data().data() + (i * o.channels + c) * o.length;
      for (int64_t x = 0; x < o.length; ++x) {
        const double j = o.jitter > 0.0f ? o.jitter * noise(rng) : 0.0;
        dst[x] = static_cast<float>(src[x] + j);
      }
    }
  }
  assign_splits(d, o.seed);
  return d;
}

Dataset gen_image_classes(const ImageTaskOptions& o) {
  check_positive(o.num_classes > 0 && o.num_samples > 0 && o.height > 0 && o.width > 0 && o.channels > 0 &&
                     o.max_shift >= 0,
                 "gen_image_classes");
  std::mt19937_64 rng(o.seed);
  const int64_t ph = o.height + 2 * o.max_shift;
  const int64_t pw = o.width + 2 * o.max_shift;
  std::uniform_real_distribution<double> cy(0.0, static_cast<double>(ph));
  std::uniform_real_distribution<double> cx(0.0, static_cast<double>(pw));
  std::uniform_real_distribution<double> radius(1.5, 0.25 * static_cast<double>(std::min(o.height, o.width)) + 1.5);
  std::uniform_real_distribution<double> weight(-1.0, 1.0);
  Tensor templates({o.num_classes, o.channels, ph, pw});
  for (int k = 0; k < o.num_classes; ++k) {
    for (int blob = 0; blob < 4; ++blob) {
      const double y0 = cy(rng), x0 = cx(rng), r = radius(rng);
      for (int64_t c = 0; c < o.channels; ++c) {
        const double w = weight(rng) * o.separation;
        for (int64_t y = 0; y < ph; ++y) {
          for (int64_t x = 0; x < pw; ++x) {
            const double d2 = (static_cast<double>(y) - y0) * (static_cast<double>(y) - y0) +
                              (static_cast<double>(x) - x0) * (static_cast<double>(x) - x0);
            templates[((k * o.channels + c) * ph + y) * pw + x] += static_cast<float>(w * std::exp(-d2 / (2.0 * r * r)));
          }
        }
      }
    }
  }
  std::uniform_int_distribution<int64_t> shift(-o.max_shift, o.max_shift);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.num_classes = o.num_classes;
  d.features = Tensor({o.num_samples, o.channels, o.height, o.width});
  d.labels.resize(static_cast<size_t>(o.num_samples));
  const int64_t plane = o.height * o.width;
  for (int64_t i = 0; i < o.num_samples; ++i) {
    const int k = static_cast<int>(i % o.num_classes);
    d.labels[static_cast<size_t>(i)] = k;
    const int64_t dy = shift(rng) + o.max_shift;
    const int64_t dx = shift(rng) + o.max_shift;
    for (int64_t c = 0; c < o.channels; ++c) {
      for (int64_t y = 0; y < o.height; ++y) {
        for (int64_t x = 0; x < o.width; ++x) {
          const double j = o.jitter > 0.0f ? o.jitter * noise(rng) : 0.0;
          d.features[(i * o.channels + c) * plane + y * o.width + x] =
              static_cast<float>(templates[((k * o.channels + c) * ph + y + dy) * pw + x + dx] + j);
        }
      }
    }
  }
  double sum = 0.0, sq = 0.0;
  for (float v : d.features.data()) sum += v;
  const double mean = sum / static_cast<double>(d.features.size());
  for (float v : d.features.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(d.features.size()));
  const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
  for (float& v : d.features.data()) v = static_cast<float>((v - mean) * inv);
  assign_splits(d, o.seed);
  return d;
}

void augment_images(Tensor& batch, std::mt19937_64& rng, int64_t max_shift) {
  if (batch.rank() != 4) throw DimensionError("augment_images expects [B, C, H, W], got " + shape_to_string(batch.shape()));
  const int64_t b = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  std::bernoulli_distribution flip(0.5);
  std::uniform_int_distribution<int64_t> shift(-max_shift, max_shift);
  std::vector<float> tmp(static_cast<size_t>(c * h * w));
  for (int64_t i = 0; i < b; ++i) {
    float* img = batch.data().data() + i * c * h * w;
    const bool f = flip(rng);
    const int64_t dy = shift(rng);
    const int64_t dx = shift(rng);
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          const int64_t sy = y + dy;
          const int64_t sx0 = x + dx;
          const int64_t sx = f ? w - 1 - sx0 : sx0;
          float v = 0.0f;
          if (sy >= 0 && sy < h && sx0 >= 0 && sx0 < w) v = img[(ch * h + sy) * w + sx];
          tmp[static_cast<size_t>((ch * h + y) * w + x)] = v;
        }
      }
    }
    std::copy(tmp.begin(), tmp.end(), img);
  }
}

Dataset load_csv_features(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  if (schema.num_classes < 1) throw DataError("CSV schema needs a positive class count");
  const int64_t per_row = num_elements(schema.feature_shape);
  const int64_t lead = schema.has_split_column ? 2 : 1;
  Dataset d;
  d.num_classes = schema.num_classes;
  std::vector<float> features;
  std::string line;
  int64_t line_no = 0;
  std::vector<std::string> cells;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && schema.has_header) continue;
    if (line.empty()) continue;
    cells.clear();
    size_t start = 0;
    while (true) {
      size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    const std::string where = path + ":" + std::to_string(line_no);
    if (static_cast<int64_t>(cells.size()) != per_row + lead) {
      throw DataError(where + ": expected " + std::to_string(per_row + lead) + " columns, found " +
                      std::to_string(cells.size()));
    }
    char* end = nullptr;
    errno = 0;
    const long label = std::strtol(cells[0].c_str(), &end, 10);
    if (cells[0].empty() || *end != '\0' || errno != 0) throw DataError(where + ": bad label '" + cells[0] + "'");
    if (label < 0 || label >= schema.num_classes) {
      throw DataError(where + ": label " + std::to_string(label) + " outside [0, " + std::to_string(schema.num_classes) + ")");
    }
    d.labels.push_back(static_cast<int>(label));
    if (schema.has_split_column) {
      try {
        d.split.push_back(split_from_string(cells[1]));
      } catch (const DataError&) {
        throw DataError(where + ": unknown split '" + cells[1] + "'");
      }
    }
    for (int64_t k = lead; k < per_row + lead; ++k) {
      const std::string& cell = cells[static_cast<size_t>(k)];
      errno = 0;
      const float v = std::strtof(cell.c_str(), &end);
      if (cell.empty() || *end != '\0' || errno == ERANGE) {
        throw DataError(where + ": bad value '" + cell + "' in column " + std::to_string(k + 1));
      }
      features.push_back(v);
    }
  }
  if (d.labels.empty()) throw DataError("'" + path + "' contains no samples");
  Shape shape = schema.feature_shape;
  shape.insert(shape.begin(), d.size());
  d.features = Tensor(std::move(shape), std::move(features));
  if (!schema.has_split_column) assign_splits(d, schema.seed);
  d.validate();
  return d;
}

void save_csv_features(const Dataset& d, const std::string& path) {
  d.validate();
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("cannot write '" + path + "'");
  const int64_t per_row = d.features.size() / d.size();
  std::fprintf(f, "label,split");
  for (int64_t k = 0; k < per_row; ++k) std::fprintf(f, ",f%lld", static_cast<long long>(k));
  std::fprintf(f, "\n");
  for (int64_t i = 0; i < d.size(); ++i) {
    std::fprintf(f, "%d,%s", d.labels[static_cast<size_t>(i)], to_string(d.split[static_cast<size_t>(i)]));
    for (int64_t k = 0; k < per_row; ++k) std::fprintf(f, ",%.9g", static_cast<double>(d.features[i * per_row + k]));
    std::fprintf(f, "\n");
  }
  if (std::fclose(f) != 0) throw DataError("failed writing '" + path + "'");
}

}  // namespace fqconv
