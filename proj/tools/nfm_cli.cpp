#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "nfm/config.hpp"
#include "nfm/data.hpp"
#include "nfm/error.hpp"
#include "nfm/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

nfm::RunConfig resolve(const Common& c) {
  nfm::RunConfig cfg = c.config.empty() ? nfm::RunConfig{} : nfm::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text, bool append = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw nfm::Error("cannot write " + path.string());
  out << text;
}

nfm::SamplingRate parse_sr(const std::string& s) {
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return {nfm::Rational(std::stoll(s))};
    return {nfm::Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)))};
  } catch (const std::logic_error&) {
    throw nfm::Error("--sr expects a ratio such as 1/2, got '" + s + "'");
  }
}

// the checkpoint is authoritative; a supplied config must hash identically
nfm::Checkpoint open_checkpoint(const std::string& path, const Common& c) {
  nfm::Checkpoint ck = nfm::load_checkpoint(path);
  if (!c.config.empty()) {
    const nfm::RunConfig given = nfm::load_config(c.config);
    if (nfm::config_hash(given) != ck.hash) {
      throw nfm::Error("config-hash mismatch: " + c.config + " hashes to " + nfm::hash_hex(nfm::config_hash(given)) +
                       ", checkpoint has " + nfm::hash_hex(ck.hash));
    }
  }
  if (c.seed) ck.config.seed = *c.seed;
  if (!c.out.empty()) ck.config.out_dir = c.out;
  return ck;
}

void emit_metrics(const nfm::RunConfig& cfg, const nfm::Metrics& m, const fs::path& file) {
  const std::string lines = nfm::metrics_jsonl(cfg, m);
  std::cout << lines;
  write_text(file, lines);
}

void write_anomaly_csv(const fs::path& path, const nfm::AnomalyOutcome& a) {
  std::string text = "index,score,flag\n";
  char buf[64];
  for (std::size_t i = 0; i < a.scores.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%d\n", i, a.scores[i], a.flags[i]);
    text += buf;
  }
  write_text(path, text);
}

int cmd_train(const Common& c) {
  const nfm::RunConfig cfg = resolve(c);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  const nfm::PreparedData data = nfm::prepare_data(cfg);
  nfm::NfmModel model(nfm::resolved_model(cfg, data.channels), nfm::derive_seed(cfg.seed, "model"));
  std::cerr << "params: " << model.param_count() << ", train windows: " << data.train.num << '\n';

  write_text(out / "train_log.jsonl", "");
  const auto on_epoch = [&](const nfm::EpochLog& e) {
    json j = {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}};
    if (data.kind == nfm::TaskKind::Classify) j["val_accuracy"] = e.val_accuracy;
    write_text(out / "train_log.jsonl", j.dump() + '\n', true);
    std::cerr << j.dump() << '\n';
  };
  const nfm::TrainResult r = nfm::train_model(cfg, data, model, on_epoch);
  nfm::save_checkpoint(out / "checkpoint.json", cfg, model, r.rng_state, r.best_epoch);
  if (r.diverged) {
    std::cerr << "error: training diverged (non-finite loss); wrote last good checkpoint\n";
    return 3;
  }
  nfm::AnomalyOutcome anomaly;
  const nfm::Metrics m = nfm::evaluate(cfg, data, model, "test", {}, &anomaly);
  emit_metrics(cfg, m, out / "metrics.jsonl");
  if (data.kind == nfm::TaskKind::Anomaly) write_anomaly_csv(out / "anomaly.csv", anomaly);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& split, const std::string& sr_text) {
  nfm::Checkpoint ck = open_checkpoint(checkpoint, c);
  const nfm::SamplingRate sr = parse_sr(sr_text);
  const nfm::PreparedData data = nfm::prepare_data(ck.config);
  nfm::AnomalyOutcome anomaly;
  nfm::Metrics m = nfm::evaluate(ck.config, data, *ck.model, split, sr, &anomaly);
  const fs::path out = ck.config.out_dir;
  const bool at_sr = !(sr.ratio == nfm::Rational(1));
  if (at_sr)
    for (auto& [name, _] : m) name += "@sr=" + sr.ratio.str();
  emit_metrics(ck.config, m, out / (at_sr ? "eval_sr_metrics.jsonl" : "eval_metrics.jsonl"));
  if (data.kind == nfm::TaskKind::Anomaly) write_anomaly_csv(out / "anomaly.csv", anomaly);
  return 0;
}

int cmd_dump_filter(const Common& c, const std::string& checkpoint, std::size_t block, std::size_t probes) {
  nfm::Checkpoint ck = open_checkpoint(checkpoint, c);
  const nfm::PreparedData data = nfm::prepare_data(ck.config);
  const nfm::FilterDump dump = nfm::dump_filter(ck.config, data, *ck.model, probes);
  const fs::path path = fs::path(ck.config.out_dir) / ("filter_block" + std::to_string(block) + ".csv");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  nfm::write_filter_csv(path, dump, block);
  json j = {{"csv", path.string()}, {"bins", dump.bins}, {"blocks", dump.blocks}};
  if (ck.config.data.source == "synth") {
    j["band_ratio"] = dump.band_ratio(ck.config.data.synth.band_lo, ck.config.data.synth.band_hi);
  }
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_gradcheck(const Common& c, double tol) {
  nfm::ModelConfig toy = nfm::toy_model_config();
  std::uint64_t seed = c.seed.value_or(0);
  if (!c.config.empty()) {
    const nfm::RunConfig cfg = resolve(c);
    toy = cfg.model;
    toy.channels = 2;
    seed = cfg.seed;
  }
  const nfm::GradReport r = nfm::gradcheck_suite(toy, seed);
  if (r.params >= 5000) throw nfm::Error("gradcheck: toy model has " + std::to_string(r.params) + " parameters (limit 5000)");
  for (const auto& [name, err] : r.components) {
    std::cout << json{{"component", name}, {"max_rel_error", err}, {"pass", err < tol}}.dump() << '\n';
  }
  std::cout << json{{"params", r.params}, {"max_rel_error", r.max_error()}, {"pass", r.max_error() < tol}}.dump() << '\n';
  return r.max_error() < tol ? 0 : 1;
}

int cmd_synth(const Common& c) {
  const nfm::RunConfig cfg = resolve(c);
  nfm::Rng rng(nfm::derive_seed(cfg.seed, "data"));
  const nfm::SynthData d = nfm::synth_generate(cfg.data.synth, rng);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  nfm::CachedDataset ds;
  ds.data = d.signals;
  ds.shape = {d.count(), d.length, 1};
  nfm::save_cache(out / "synth", ds);
  std::string labels = "index,label\n";
  for (std::size_t i = 0; i < d.count(); ++i) labels += std::to_string(i) + "," + std::to_string(d.labels[i]) + "\n";
  write_text(out / "synth_labels.csv", labels);
  json freqs = json::array();
  for (const auto& f : d.class_freqs) freqs.push_back(f);
  write_text(out / "synth_class_freqs.json", freqs.dump() + '\n');
  std::cout << json{{"samples", d.count()}, {"length", d.length}, {"cache", (out / "synth").string()}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Fourier modelling: training, evaluation and diagnostics"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, split = "test", sr = "1/2";
  std::size_t block = 0, probes = 16;
  double tol = 1e-4;

  const auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", common.config, "run config (JSON)");
    if (config_required) opt->required();
    opt->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--out", common.out, "output directory (overrides out_dir)");
  };

  auto* train = app.add_subcommand("train", "train a model and write checkpoint, logs and test metrics");
  add_common(train, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, false);
  eval->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split, "train | val | test");

  auto* eval_sr = app.add_subcommand("eval-sr", "evaluate at a lower sampling rate (inputs decimated, L unchanged)");
  add_common(eval_sr, false);
  eval_sr->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  eval_sr->add_option("--split", split, "train | val | test");
  eval_sr->add_option("--sr", sr, "test/train sampling-rate ratio, e.g. 1/2");

  auto* dump = app.add_subcommand("dump-filter", "write per-bin |R[k]| of a mixer block as CSV");
  add_common(dump, false);
  dump->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  dump->add_option("--block", block, "mixer block index");
  dump->add_option("--probes", probes, "number of test windows averaged");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer and loss on toy dims");
  add_common(grad, false);
  grad->add_option("--tol", tol, "maximum relative error");

  auto* synth = app.add_subcommand("synth", "generate the synthetic class dataset into a cache");
  add_common(synth, true);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint, split, "1");
    if (*eval_sr) return cmd_eval(common, checkpoint, split, sr);
    if (*dump) return cmd_dump_filter(common, checkpoint, block, probes);
    if (*grad) return cmd_gradcheck(common, tol);
    if (*synth) return cmd_synth(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
