// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "fqconv/archive.hpp"
#include "fqconv/error.hpp"

namespace fqconv {

using json = nlohmann::ordered_json;

namespace {

template <typename T>
constexpr bool kIsVector = false;
template <typename T>
constexpr bool kIsVector<std::vector<T>> = true;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    out = convert<T>(j_.at(key), path_ + "." + key);
  }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": required key is missing");
    T out{};
    get(key, out);
    return out;
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError(path_ + "." + k + ": unknown key");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<int64_t>() < 0) throw ConfigError(path + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
      return v.get<T>();
    } else if constexpr (kIsVector<T>) {
      if (!v.is_array()) throw ConfigError(path + ": expected an array");
      T out;
      for (size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void parse_dataset(Section s, DatasetConfig& d) {
  s.get("kind", d.kind);
  if (d.kind == "sequence") {
    SequenceTaskOptions& o = d.sequence;
    s.get("classes", o.num_classes);
    s.get("samples", o.num_samples);
    s.get("length", o.length);
    s.get("channels", o.channels);
    s.get("jitter", o.jitter);
    s.get("separation", o.separation);
    s.get("max_shift", o.max_shift);
    if (o.num_classes < 2 || o.num_samples < 10 || o.length < 1 || o.channels < 1 || o.max_shift < 0 ||
        !(o.jitter >= 0.0f)) {
      throw ConfigError(s.path() + ": sequence task sizes out of range");
    }
  } else if (d.kind == "image") {
    ImageTaskOptions& o = d.image;
    s.get("classes", o.num_classes);
    s.get("samples", o.num_samples);
    s.get("height", o.height);
    s.get("width", o.width);
    s.get("channels", o.channels);
    s.get("jitter", o.jitter);
    s.get("separation", o.separation);
    s.get("max_shift", o.max_shift);
    if (o.num_classes < 2 || o.num_samples < 10 || o.height < 1 || o.width < 1 || o.channels < 1 ||
        o.max_shift < 0 || !(o.jitter >= 0.0f)) {
      throw ConfigError(s.path() + ": image task sizes out of range");
    }
  } else if (d.kind == "csv") {
    d.path = s.require<std::string>("path");
    d.csv.feature_shape = s.require<Shape>("feature_shape");
    d.csv.num_classes = s.require<int>("classes");
    s.get("header", d.csv.has_header);
    s.get("split_column", d.csv.has_split_column);
  } else if (d.kind == "archive") {
    d.path = s.require<std::string>("path");
  } else {
    throw ConfigError(s.path() + ".kind: expected sequence, image, csv or archive, got '" + d.kind + "'");
  }
  s.finish();
}

void parse_network(Section s, NetworkConfig& n) {
  s.get("arch", n.arch);
  if (n.arch == "kws") {
    s.get("embed", n.kws.embed);
    s.get("filters", n.kws.filters);
    s.get("kernel", n.kws.kernel);
    s.get("dilations", n.kws.dilations);
    if (n.kws.embed < 1 || n.kws.filters < 1 || n.kws.kernel < 1 || n.kws.dilations.empty()) {
      throw ConfigError(s.path() + ": kws sizes out of range");
    }
    for (int d : n.kws.dilations) {
      if (d < 1) throw ConfigError(s.path() + ".dilations: entries must be positive");
    }
  } else if (n.arch == "resnet") {
    s.get("depth", n.resnet.depth);
    s.get("widths", n.resnet.widths);
    if (n.resnet.depth < 1 || n.resnet.widths.empty()) throw ConfigError(s.path() + ": resnet sizes out of range");
  } else {
    throw ConfigError(s.path() + ".arch: expected kws or resnet, got '" + n.arch + "'");
  }
  s.finish();
}

OptimizerConfig parse_optimizer(Section s) {
  std::string kind = "adam";
  s.get("kind", kind);
  OptimizerConfig o;
  if (kind == "adam") {
    o = OptimizerConfig::adam();
    s.get("learning_rate", o.learning_rate);
    s.get("lr_decay", o.lr_decay);
    s.get("weight_decay", o.weight_decay);
  } else if (kind == "sgd") {
    o = OptimizerConfig::sgd();
    s.get("learning_rate", o.learning_rate);
    s.get("momentum", o.momentum);
    s.get("weight_decay", o.weight_decay);
    s.get("milestones", o.milestones);
    s.get("step_gamma", o.step_gamma);
  } else {
    throw ConfigError(s.path() + ".kind: expected adam or sgd, got '" + kind + "'");
  }
  if (!(o.learning_rate > 0.0f) || !(o.weight_decay >= 0.0f)) {
    throw ConfigError(s.path() + ": learning rate must be positive and weight decay non-negative");
  }
  s.finish();
  return o;
}

StageSpec parse_stage(Section s, int default_epochs) {
  StageSpec st;
  st.weight_bits = s.require<int>("weight_bits");
  st.act_bits = s.require<int>("act_bits");
  s.get("fully_quantized", st.fully_quantized);
  st.id = stage_name(st.weight_bits, st.act_bits, st.fully_quantized);
  s.get("id", st.id);
  s.get("init", st.init);
  s.get("teacher", st.teacher);
  st.epochs = default_epochs;
  s.get("epochs", st.epochs);
  if (s.has("optimizer")) st.optimizer = parse_optimizer(s.child("optimizer"));
  s.finish();
  return st;
}

void parse_schedule(Section s, RunConfig& c) {
  std::string preset = "kws";
  s.get("preset", preset);
  int epochs = c.epochs;
  s.get("epochs", epochs);
  if (s.has("stages")) {
    if (s.has("preset")) throw ConfigError(s.path() + ": give either preset or stages, not both");
    const json& arr = s.raw("stages");
    if (!arr.is_array()) throw ConfigError(s.path() + ".stages: expected an array");
    for (size_t i = 0; i < arr.size(); ++i) {
      c.schedule.stages.push_back(parse_stage(Section(arr[i], s.path() + ".stages[" + std::to_string(i) + "]"), epochs));
    }
  } else if (preset == "kws") {
    c.schedule = kws_schedule(epochs);
  } else if (preset == "resnet") {
    c.schedule = resnet_schedule(epochs);
  } else if (preset == "direct") {
    c.schedule = direct_schedule(s.require<int>("weight_bits"), s.require<int>("act_bits"), epochs);
  } else if (preset != "none") {
    throw ConfigError(s.path() + ".preset: expected kws, resnet, direct or none, got '" + preset + "'");
  }
  s.get("accuracy_floor", c.schedule.accuracy_floor);
  s.get("promote_teacher", c.schedule.promote_teacher);
  s.finish();
  c.schedule.validate();
}

NoiseSpec parse_noise_point(const json& v, const std::string& path) {
  std::vector<float> p = Section::convert<std::vector<float>>(v, path);
  if (p.size() != 3) throw ConfigError(path + ": expected [weight_pct, act_pct, mac_pct]");
  NoiseSpec n;
  n.weight_pct = p[0];
  n.act_pct = p[1];
  n.mac_pct = p[2];
  return n;
}

void parse_noise(Section s, RunConfig& c) {
  int reps = 10;
  bool frozen = false;
  s.get("repetitions", reps);
  s.get("frozen_weights", frozen);
  if (s.has("points")) {
    const json& arr = s.raw("points");
    if (!arr.is_array()) throw ConfigError(s.path() + ".points: expected an array");
    c.noise_points.clear();
    for (size_t i = 0; i < arr.size(); ++i) {
      c.noise_points.push_back(parse_noise_point(arr[i], s.path() + ".points[" + std::to_string(i) + "]"));
    }
  }
  if (s.has("train")) {
    NoiseSpec t = parse_noise_point(s.raw("train"), s.path() + ".train");
    c.train_noise = t;
  }
  s.finish();
  for (NoiseSpec& n : c.noise_points) {
    n.repetitions = reps;
    n.frozen_weights = frozen;
  }
  if (c.train_noise) c.train_noise->frozen_weights = false;
}

void finalize_seeds(RunConfig& c) {
  c.dataset.sequence.seed = c.seed;
  c.dataset.image.seed = c.seed;
  c.dataset.csv.seed = c.seed;
  c.network.kws.seed = c.seed + 1;
  c.network.resnet.seed = c.seed + 1;
  for (NoiseSpec& n : c.noise_points) n.seed = c.seed + 3;
  if (c.train_noise) c.train_noise->seed = c.seed + 4;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section s(j, "config");
  c.seed = s.require<uint64_t>("seed");
  s.get("name", c.name);
  s.get("out", c.out_dir);
  s.get("epochs", c.epochs);
  s.get("batch_size", c.batch_size);
  s.get("augment", c.augment);
  if (c.epochs < 0) throw ConfigError("config.epochs: must be non-negative");
  if (c.batch_size < 2) throw ConfigError("config.batch_size: must be at least 2");
  if (s.has("dataset")) parse_dataset(s.child("dataset"), c.dataset);
  if (s.has("network")) parse_network(s.child("network"), c.network);
  if (s.has("optimizer")) c.optimizer = parse_optimizer(s.child("optimizer"));
  if (s.has("distill")) {
    Section d = s.child("distill");
    d.get("temperature", c.distill.temperature);
    d.get("alpha", c.distill.alpha);
    d.finish();
    try {
      c.distill.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config.distill: ") + e.what());
    }
  }
  c.noise_points = noise_ladder(0, 10);
  if (s.has("noise")) parse_noise(s.child("noise"), c);
  if (s.has("schedule")) {
    parse_schedule(s.child("schedule"), c);
  } else {
    c.schedule = kws_schedule(c.epochs);
  }
  s.finish();
  finalize_seeds(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_run_config(os.str());
}

namespace {

json optimizer_json(const OptimizerConfig& o) {
  json j;
  if (o.kind == OptimizerKind::kAdam) {
    j["kind"] = "adam";
    j["learning_rate"] = o.learning_rate;
    j["lr_decay"] = o.lr_decay;
    j["weight_decay"] = o.weight_decay;
  } else {
    j["kind"] = "sgd";
    j["learning_rate"] = o.learning_rate;
    j["momentum"] = o.momentum;
    j["weight_decay"] = o.weight_decay;
    j["milestones"] = o.milestones;
    j["step_gamma"] = o.step_gamma;
  }
  return j;
}

json point_json(const NoiseSpec& n) { return json::array({n.weight_pct, n.act_pct, n.mac_pct}); }

}  // namespace

std::string to_json(const RunConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["out"] = c.out_dir;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["augment"] = c.augment;
  json d;
  d["kind"] = c.dataset.kind;
  if (c.dataset.kind == "sequence") {
    const SequenceTaskOptions& o = c.dataset.sequence;
    d["classes"] = o.num_classes;
    d["samples"] = o.num_samples;
    d["length"] = o.length;
    d["channels"] = o.channels;
    d["jitter"] = o.jitter;
    d["separation"] = o.separation;
    d["max_shift"] = o.max_shift;
  } else if (c.dataset.kind == "image") {
    const ImageTaskOptions& o = c.dataset.image;
    d["classes"] = o.num_classes;
    d["samples"] = o.num_samples;
    d["height"] = o.height;
    d["width"] = o.width;
    d["channels"] = o.channels;
    d["jitter"] = o.jitter;
    d["separation"] = o.separation;
    d["max_shift"] = o.max_shift;
  } else if (c.dataset.kind == "csv") {
    d["path"] = c.dataset.path;
    d["feature_shape"] = c.dataset.csv.feature_shape;
    d["classes"] = c.dataset.csv.num_classes;
    d["header"] = c.dataset.csv.has_header;
    d["split_column"] = c.dataset.csv.has_split_column;
  } else {
    d["path"] = c.dataset.path;
  }
  j["dataset"] = d;
  json n;
  n["arch"] = c.network.arch;
  if (c.network.arch == "kws") {
    n["embed"] = c.network.kws.embed;
    n["filters"] = c.network.kws.filters;
    n["kernel"] = c.network.kws.kernel;
    n["dilations"] = c.network.kws.dilations;
  } else {
    n["depth"] = c.network.resnet.depth;
    n["widths"] = c.network.resnet.widths;
  }
  j["network"] = n;
  j["optimizer"] = optimizer_json(c.optimizer);
  j["distill"] = {{"temperature", c.distill.temperature}, {"alpha", c.distill.alpha}};
  json noise;
  json points = json::array();
  for (const NoiseSpec& p : c.noise_points) points.push_back(point_json(p));
  noise["points"] = points;
  noise["repetitions"] = c.noise_points.empty() ? 10 : c.noise_points.front().repetitions;
  noise["frozen_weights"] = !c.noise_points.empty() && c.noise_points.front().frozen_weights;
  if (c.train_noise) noise["train"] = point_json(*c.train_noise);
  j["noise"] = noise;
  json sched;
  json stages = json::array();
  for (const StageSpec& st : c.schedule.stages) {
    json sj;
    sj["id"] = st.id;
    sj["weight_bits"] = st.weight_bits;
    sj["act_bits"] = st.act_bits;
    sj["init"] = st.init;
    sj["teacher"] = st.teacher;
    sj["epochs"] = st.epochs;
    sj["fully_quantized"] = st.fully_quantized;
    if (st.optimizer) sj["optimizer"] = optimizer_json(*st.optimizer);
    stages.push_back(std::move(sj));
  }
  if (stages.empty()) {
    sched["preset"] = "none";
  } else {
    sched["stages"] = stages;
  }
  sched["accuracy_floor"] = c.schedule.accuracy_floor;
  sched["promote_teacher"] = c.schedule.promote_teacher;
  j["schedule"] = sched;
  return j.dump(2);
}

Dataset make_dataset(const RunConfig& c) {
  const DatasetConfig& d = c.dataset;
  if (d.kind == "sequence") return gen_sequence_classes(d.sequence);
  if (d.kind == "image") return gen_image_classes(d.image);
  if (d.kind == "csv") return load_csv_features(d.path, d.csv);
  if (d.kind == "archive") return load_dataset(d.path);
  throw ConfigError("unknown dataset kind '" + d.kind + "'");
}

Network make_network(const RunConfig& c, const Dataset& data) {
  const Shape s = data.sample_shape();
  if (c.network.arch == "kws") {
    if (s.size() != 2) throw ConfigError("kws networks need [channels, length] samples, got " + shape_to_string(s));
    KwsOptions o = c.network.kws;
    o.in_channels = s[0];
    o.length = s[1];
    o.num_classes = data.num_classes;
    return build_kws_net(o);
  }
  if (s.size() != 3) throw ConfigError("resnet networks need [channels, height, width] samples, got " + shape_to_string(s));
  ResNetOptions o = c.network.resnet;
  o.in_channels = s[0];
  o.height = s[1];
  o.width = s[2];
  o.num_classes = data.num_classes;
  return build_resblock_net(o);
}

TrainOptions train_options(const RunConfig& c) {
  TrainOptions o;
  o.epochs = c.epochs;
  o.batch_size = c.batch_size;
  o.optimizer = c.optimizer;
  o.distill = c.distill;
  o.seed = c.seed + 2;
  o.augment = c.augment;
  return o;
}

}  // namespace fqconv
