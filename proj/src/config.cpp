#include "nfm/config.hpp"

#include <fstream>
#include <set>

#include "nfm/error.hpp"

namespace nfm {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error("config: " + where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw Error("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("config: '" + where + "." + key + "' has the wrong type");
  }
}

// unsigned fields must reject negative numbers instead of wrapping
bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

void read_size(const json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!non_negative_integer(v)) throw Error("config: '" + where + "." + key + "' must be a non-negative integer");
  out = v.get<std::size_t>();
}

void read_double(const json& j, const char* key, double& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number()) throw Error("config: '" + where + "." + key + "' must be a number");
  out = j.at(key).get<double>();
}

TaskSpec task_from(const json& j) {
  check_keys(j, {"kind", "horizon", "downsample", "classes", "lambda", "norm", "anomaly_ratio"}, "task");
  TaskSpec t;
  std::string kind = "classify", norm = "none";
  read(j, "kind", kind, "task");
  read(j, "norm", norm, "task");
  t.kind = parse_task_kind(kind);
  t.norm = parse_norm_mode(norm);
  read_size(j, "horizon", t.horizon, "task");
  read_size(j, "downsample", t.downsample, "task");
  read_size(j, "classes", t.n_classes, "task");
  read_double(j, "lambda", t.lambda, "task");
  read_double(j, "anomaly_ratio", t.anomaly_ratio, "task");
  return t;
}

ModelConfig model_from(const json& j) {
  check_keys(j, {"hidden", "blocks", "h0", "inr_hidden", "inr_layers", "w0", "ff_scale", "proj_width", "proj_freq",
                 "mlp_ratio", "dropout"},
             "model");
  ModelConfig m;
  read_size(j, "hidden", m.hidden, "model");
  read_size(j, "blocks", m.blocks, "model");
  read_size(j, "h0", m.h0, "model");
  read_size(j, "inr_hidden", m.inr_hidden, "model");
  read_size(j, "inr_layers", m.inr_layers, "model");
  read_double(j, "w0", m.w0, "model");
  read_double(j, "ff_scale", m.ff_scale, "model");
  read_size(j, "proj_width", m.proj_width, "model");
  read_double(j, "proj_freq", m.proj_freq, "model");
  read_size(j, "mlp_ratio", m.mlp_ratio, "model");
  read_double(j, "dropout", m.dropout, "model");
  return m;
}

SynthSpec synth_from(const json& j) {
  const std::string w = "data.synth";
  check_keys(j, {"classes", "fixed", "random", "length", "band", "noise", "per_class", "phase", "random_max"}, w);
  SynthSpec s;
  read_size(j, "classes", s.classes, w);
  read_size(j, "fixed", s.fixed, w);
  read_size(j, "random", s.random, w);
  read_size(j, "length", s.length, w);
  if (j.contains("band")) {
    const json& b = j.at("band");
    if (!b.is_array() || b.size() != 2 || !non_negative_integer(b[0]) || !non_negative_integer(b[1])) {
      throw Error("config: 'data.synth.band' must be [f_A, f_B]");
    }
    s.band_lo = b[0].get<std::size_t>();
    s.band_hi = b[1].get<std::size_t>();
  }
  read_double(j, "noise", s.noise, w);
  read_size(j, "per_class", s.per_class, w);
  read_double(j, "phase", s.phase, w);
  read_size(j, "random_max", s.random_max, w);
  return s;
}

DataConfig data_from(const json& j) {
  check_keys(j, {"source", "synth", "sines", "spikes", "csv", "window", "train_stride", "eval_stride", "split", "standardize"},
             "data");
  DataConfig d;
  read(j, "source", d.source, "data");
  if (j.contains("synth")) d.synth = synth_from(j.at("synth"));
  if (j.contains("sines")) {
    const json& s = j.at("sines");
    check_keys(s, {"length", "periods", "amplitudes", "noise"}, "data.sines");
    read_size(s, "length", d.sines.length, "data.sines");
    read(s, "periods", d.sines.periods, "data.sines");
    read(s, "amplitudes", d.sines.amplitudes, "data.sines");
    read_double(s, "noise", d.sines.noise, "data.sines");
  }
  if (j.contains("spikes")) {
    const json& s = j.at("spikes");
    check_keys(s, {"ratio", "segment", "magnitude"}, "data.spikes");
    read_double(s, "ratio", d.spikes.ratio, "data.spikes");
    read_size(s, "segment", d.spikes.segment, "data.spikes");
    read_double(s, "magnitude", d.spikes.magnitude, "data.spikes");
  }
  if (j.contains("csv")) {
    const json& s = j.at("csv");
    check_keys(s, {"path", "columns", "label_column"}, "data.csv");
    read(s, "path", d.csv.path, "data.csv");
    read(s, "columns", d.csv.columns, "data.csv");
    read(s, "label_column", d.csv.label_column, "data.csv");
  }
  read_size(j, "window", d.window, "data");
  read_size(j, "train_stride", d.train_stride, "data");
  read_size(j, "eval_stride", d.eval_stride, "data");
  read(j, "split", d.split, "data");
  read(j, "standardize", d.standardize, "data");
  return d;
}

OptimConfig optim_from(const json& j) {
  check_keys(j, {"epochs", "batch", "eval_batch", "lr", "lr_min", "schedule", "patience", "sampler"}, "optim");
  OptimConfig o;
  read_size(j, "epochs", o.epochs, "optim");
  read_size(j, "batch", o.batch, "optim");
  read_size(j, "eval_batch", o.eval_batch, "optim");
  read_double(j, "lr", o.lr, "optim");
  read_double(j, "lr_min", o.lr_min, "optim");
  read(j, "schedule", o.schedule, "optim");
  read(j, "sampler", o.sampler, "optim");
  read_size(j, "patience", o.patience, "optim");
  return o;
}

}  // namespace

void RunConfig::validate() const {
  if (data.source != "synth" && data.source != "sines" && data.source != "spikes" && data.source != "csv") {
    throw Error("config: data.source must be one of synth, sines, spikes, csv");
  }
  if (task.kind == TaskKind::Classify && data.source != "synth") throw Error("config: classification needs data.source synth");
  if (task.kind != TaskKind::Classify && data.source == "synth") throw Error("config: synth data only supports classification");
  if (task.kind == TaskKind::Anomaly && data.source == "sines") throw Error("config: anomaly detection needs labelled data");
  if (task.kind == TaskKind::Forecast && task.horizon == 0) throw Error("config: forecasting needs task.horizon > 0");
  if (task.kind == TaskKind::Anomaly) {
    if (task.downsample == 0 || data.window % task.downsample != 0) {
      throw Error("config: task.downsample must divide data.window");
    }
    if (task.anomaly_ratio <= 0.0 || task.anomaly_ratio >= 100.0) throw Error("config: task.anomaly_ratio must be in (0, 100)");
  }
  if (task.kind == TaskKind::Classify && task.n_classes != data.synth.classes) {
    throw Error("config: task.classes must equal data.synth.classes");
  }
  if (task.lambda < 0.0 || task.lambda > 1.0) throw Error("config: task.lambda must be in [0, 1]");
  if (data.split.size() != 3 || data.split[0] <= 0.0 || data.split[1] < 0.0 || data.split[2] <= 0.0 ||
      std::abs(data.split[0] + data.split[1] + data.split[2] - 1.0) > 1e-9) {
    throw Error("config: data.split must be three non-negative ratios summing to 1 with train and test > 0");
  }
  if (data.window == 0 || data.train_stride == 0) throw Error("config: data.window and data.train_stride must be positive");
  if (data.sines.periods.size() != data.sines.amplitudes.size()) {
    throw Error("config: data.sines.periods and data.sines.amplitudes must have equal length");
  }
  if (optim.batch == 0 || optim.eval_batch == 0 || optim.epochs == 0) throw Error("config: optim sizes must be positive");
  if (!(optim.lr > 0.0) || optim.lr_min < 0.0 || optim.lr_min > optim.lr) throw Error("config: need 0 <= lr_min <= lr, lr > 0");
  if (optim.schedule != "cosine" && optim.schedule != "constant") throw Error("config: optim.schedule must be cosine or constant");
  if (optim.sampler != "shuffle" && optim.sampler != "balanced") throw Error("config: optim.sampler must be shuffle or balanced");
  if (optim.sampler == "balanced" && task.kind != TaskKind::Classify) {
    throw Error("config: optim.sampler 'balanced' needs class labels (classification only)");
  }
  if (data.source == "synth") data.synth.validate();
  model.validate();
}

RunConfig config_from_json(const json& j) {
  check_keys(j, {"task", "model", "data", "optim", "seed", "out_dir"}, "");
  RunConfig c;
  if (j.contains("task")) c.task = task_from(j.at("task"));
  if (j.contains("model")) c.model = model_from(j.at("model"));
  if (j.contains("data")) c.data = data_from(j.at("data"));
  if (j.contains("optim")) c.optim = optim_from(j.at("optim"));
  if (j.contains("seed")) {
    if (!non_negative_integer(j.at("seed"))) throw Error("config: 'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  read(j, "out_dir", c.out_dir, "");
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["task"] = {{"kind", to_string(c.task.kind)},     {"horizon", c.task.horizon}, {"downsample", c.task.downsample},
               {"classes", c.task.n_classes},        {"lambda", c.task.lambda},   {"norm", to_string(c.task.norm)},
               {"anomaly_ratio", c.task.anomaly_ratio}};
  const ModelConfig& m = c.model;
  j["model"] = {{"hidden", m.hidden},         {"blocks", m.blocks},   {"h0", m.h0},
                {"inr_hidden", m.inr_hidden}, {"inr_layers", m.inr_layers}, {"w0", m.w0},
                {"ff_scale", m.ff_scale},     {"proj_width", m.proj_width}, {"proj_freq", m.proj_freq},
                {"mlp_ratio", m.mlp_ratio},   {"dropout", m.dropout}};
  const DataConfig& d = c.data;
  const SynthSpec& s = d.synth;
  j["data"] = {
      {"source", d.source},
      {"synth",
       {{"classes", s.classes}, {"fixed", s.fixed}, {"random", s.random}, {"length", s.length},
        {"band", {s.band_lo, s.band_hi}}, {"noise", s.noise}, {"per_class", s.per_class}, {"phase", s.phase},
        {"random_max", s.random_max}}},
      {"sines",
       {{"length", d.sines.length}, {"periods", d.sines.periods}, {"amplitudes", d.sines.amplitudes}, {"noise", d.sines.noise}}},
      {"spikes", {{"ratio", d.spikes.ratio}, {"segment", d.spikes.segment}, {"magnitude", d.spikes.magnitude}}},
      {"csv", {{"path", d.csv.path}, {"columns", d.csv.columns}, {"label_column", d.csv.label_column}}},
      {"window", d.window},
      {"train_stride", d.train_stride},
      {"eval_stride", d.eval_stride},
      {"split", d.split},
      {"standardize", d.standardize}};
  const OptimConfig& o = c.optim;
  j["optim"] = {{"epochs", o.epochs}, {"batch", o.batch},       {"eval_batch", o.eval_batch}, {"lr", o.lr},
                {"lr_min", o.lr_min}, {"schedule", o.schedule}, {"patience", o.patience},
                {"sampler", o.sampler}};
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t config_hash(const RunConfig& c) {
  json j = config_to_json(c);
  j.erase("seed");
  j.erase("out_dir");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stream) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace nfm
