#include "nfm/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "nfm/error.hpp"
#include "nfm/optim.hpp"
#include "nfm/pool.hpp"

namespace nfm {

using nlohmann::json;

const Split& PreparedData::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw Error("unknown split '" + name + "' (expected train, val or test)");
}

ModelConfig resolved_model(const RunConfig& cfg, std::size_t channels) {
  ModelConfig m = cfg.model;
  m.channels = channels;
  if (cfg.task.kind == TaskKind::Classify) {
    m.head = HeadKind::Pooled;
    m.out_dim = cfg.task.n_classes;
  } else {
    // channel independence: every channel is a separate univariate sequence
    m.channels = 1;
    m.head = HeadKind::Pointwise;
    m.out_dim = 1;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Data preparation

namespace {

Split windows_to_split(const WindowDataset& w, const std::string& name, bool keep_targets) {
  Split s;
  s.name = name;
  s.num = w.num;
  s.inputs = w.windows;
  if (keep_targets) s.targets = w.targets;
  return s;
}

// per-point labels of the windows [t, t + n) for t = 0, stride, ...
std::vector<int> window_labels(std::span<const int> labels, std::size_t n, std::size_t num, std::size_t stride) {
  std::vector<int> out;
  out.reserve(num * n);
  for (std::size_t i = 0; i < num; ++i) out.insert(out.end(), labels.begin() + static_cast<std::ptrdiff_t>(i * stride),
                                                   labels.begin() + static_cast<std::ptrdiff_t>(i * stride + n));
  return out;
}

void prepare_classification(const RunConfig& cfg, PreparedData& d) {
  Rng data_rng(derive_seed(cfg.seed, "data"));
  const SynthData synth = synth_generate(cfg.data.synth, data_rng);
  const std::size_t count = synth.count(), n = synth.length;
  d.n = n;
  d.channels = 1;
  d.classes = cfg.data.synth.classes;

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, "split"));
  for (std::size_t i = count; i > 1; --i) {
    const auto j = static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.data.split[0] * static_cast<double>(count)));
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.data.split[1] * static_cast<double>(count)));
  if (n_train == 0 || n_train + n_val >= count) throw Error("prepare: split leaves an empty train or test set");
  d.split_bounds = {n_train, n_train + n_val, count};

  const auto fill = [&](Split& s, const std::string& name, std::size_t lo, std::size_t hi) {
    s.name = name;
    s.num = hi - lo;
    s.inputs.reserve(s.num * n);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t idx = order[i];
      s.inputs.insert(s.inputs.end(), synth.signals.begin() + static_cast<std::ptrdiff_t>(idx * n),
                      synth.signals.begin() + static_cast<std::ptrdiff_t>((idx + 1) * n));
      s.labels.push_back(synth.labels[idx]);
    }
  };
  fill(d.train, "train", 0, n_train);
  fill(d.val, "val", n_train, n_train + n_val);
  fill(d.test, "test", n_train + n_val, count);

  if (cfg.data.standardize) {
    Series train_series;
    train_series.data = d.train.inputs;
    const Standardizer z = Standardizer::fit(train_series);
    for (Split* s : {&d.train, &d.val, &d.test}) {
      for (double& v : s->inputs) v = (v - z.mean[0]) / z.std[0];
    }
  }
}

void prepare_series(const RunConfig& cfg, PreparedData& d) {
  Rng data_rng(derive_seed(cfg.seed, "data"));
  const DataConfig& dc = cfg.data;
  Series series;
  std::vector<int> labels;
  if (dc.source == "csv") {
    if (dc.csv.path.empty()) throw Error("prepare: data.csv.path is empty");
    std::vector<std::string> cols = dc.csv.columns;
    series = load_csv(dc.csv.path, cols);
    if (!dc.csv.label_column.empty()) {
      const Series lab = load_csv(dc.csv.path, {dc.csv.label_column});
      labels.reserve(lab.length());
      for (double v : lab.data) labels.push_back(v != 0.0 ? 1 : 0);
      if (cols.empty()) {
        // drop the label column from the channels
        Series kept;
        const auto it = std::find(series.names.begin(), series.names.end(), dc.csv.label_column);
        if (it != series.names.end()) {
          const auto drop = static_cast<std::size_t>(it - series.names.begin());
          kept.channels = series.channels - 1;
          for (std::size_t c = 0; c < series.channels; ++c)
            if (c != drop) kept.names.push_back(series.names[c]);
          for (std::size_t t = 0; t < series.length(); ++t)
            for (std::size_t c = 0; c < series.channels; ++c)
              if (c != drop) kept.data.push_back(series.at(t, c));
          series = std::move(kept);
        }
      }
    }
  } else {
    series = sines_series(dc.sines.length, dc.sines.periods, dc.sines.amplitudes, dc.sines.noise, data_rng);
    if (dc.source == "spikes") {
      AnomalySeries a = inject_spikes(std::move(series), dc.spikes.ratio, dc.spikes.segment, dc.spikes.magnitude, data_rng);
      series = std::move(a.series);
      labels = std::move(a.labels);
    }
  }
  if (cfg.task.kind == TaskKind::Anomaly && labels.empty()) throw Error("prepare: anomaly detection needs point labels");

  SplitSeries parts = split_chronological(series, dc.split[0], dc.split[1]);
  d.split_bounds = {parts.train_end, parts.val_end, series.length()};
  if (dc.standardize) {
    const Standardizer z = Standardizer::fit(parts.train);
    z.apply(parts.train);
    z.apply(parts.val);
    z.apply(parts.test);
  }
  d.n = dc.window;
  d.channels = series.channels;

  if (cfg.task.kind == TaskKind::Forecast) {
    d.horizon = cfg.task.horizon;
    const std::size_t eval_stride = dc.eval_stride == 0 ? 1 : dc.eval_stride;
    d.train = windows_to_split(make_windows(parts.train, d.n, d.horizon, dc.train_stride, "train"), "train", true);
    if (parts.val.length() >= d.n + d.horizon) {
      d.val = windows_to_split(make_windows(parts.val, d.n, d.horizon, eval_stride, "val"), "val", true);
    }
    d.test = windows_to_split(make_windows(parts.test, d.n, d.horizon, eval_stride, "test"), "test", true);
    return;
  }

  // anomaly: reconstruction targets are the windows themselves; scoring
  // windows tile each split without overlap so every point is scored once
  const std::size_t n = d.n;
  const auto lab = [&](std::size_t a, std::size_t b) { return std::span<const int>(labels).subspan(a, b - a); };
  d.train = windows_to_split(make_windows(parts.train, n, 0, dc.train_stride, "train"), "train", true);
  d.train_scoring = windows_to_split(make_windows(parts.train, n, 0, n, "train"), "train_scoring", true);
  d.train_scoring.labels = window_labels(lab(0, parts.train_end), n, d.train_scoring.num, n);
  if (parts.val.length() >= n) {
    d.val = windows_to_split(make_windows(parts.val, n, 0, n, "val"), "val", true);
    d.val.labels = window_labels(lab(parts.train_end, parts.val_end), n, d.val.num, n);
  }
  d.test = windows_to_split(make_windows(parts.test, n, 0, n, "test"), "test", true);
  d.test.labels = window_labels(lab(parts.val_end, series.length()), n, d.test.num, n);
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg) {
  cfg.validate();
  PreparedData d;
  d.kind = cfg.task.kind;
  if (cfg.task.kind == TaskKind::Classify) prepare_classification(cfg, d);
  else prepare_series(cfg, d);
  d.train.name = "train";
  d.val.name = "val";
  d.test.name = "test";
  return d;
}

Rational SamplingRate::inverse() const {
  if (ratio.num <= 0 || ratio.num > ratio.den) throw Error("sampling rate must be in (0, 1]");
  return Rational(ratio.den, ratio.num);
}

// ---------------------------------------------------------------------------
// Batches

namespace {

struct ModelInput {
  std::vector<double> x;  ///< [B', n_in, c'], normalized; B' = B*c and c' = 1 under channel independence
  NormStats stats;
  std::size_t batch = 0, n_in = 0, channels = 1;
  ExtensionFactors factors;
};

bool channel_independent(TaskKind kind) { return kind != TaskKind::Classify; }

// [B, n, c] <-> [B*c, n, 1]
std::vector<double> fold_channels(std::span<const double> x, std::size_t batch, std::size_t n, std::size_t c) {
  if (c == 1) return {x.begin(), x.end()};
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) out[(b * c + ch) * n + t] = x[(b * n + t) * c + ch];
  return out;
}

std::vector<double> unfold_channels(std::span<const double> x, std::size_t batch, std::size_t n, std::size_t c) {
  if (c == 1) return {x.begin(), x.end()};
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) out[(b * n + t) * c + ch] = x[(b * c + ch) * n + t];
  return out;
}

// resample every (b, c) column of [B, n, c] to length l
std::vector<double> resample_time(std::span<const double> x, std::size_t batch, std::size_t n, std::size_t c,
                                  std::size_t l) {
  if (l == n) return {x.begin(), x.end()};
  std::vector<double> out(batch * l * c);
  const bool integral = n % l == 0;
  std::vector<double> col(n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < n; ++t) col[t] = x[(b * n + t) * c + ch];
      const std::vector<double> r = integral ? decimate(col, n / l) : sinc_resample(col, l);
      for (std::size_t t = 0; t < l; ++t) out[(b * l + t) * c + ch] = r[t];
    }
  }
  return out;
}

ModelInput model_input(const RunConfig& cfg, const PreparedData& d, const Split& s, std::span<const std::size_t> idx,
                       SamplingRate sr) {
  const std::size_t n = d.n, c = d.channels, b = idx.size();
  std::vector<double> raw;
  raw.reserve(b * n * c);
  for (std::size_t i : idx) {
    raw.insert(raw.end(), s.inputs.begin() + static_cast<std::ptrdiff_t>(i * n * c),
               s.inputs.begin() + static_cast<std::ptrdiff_t>((i + 1) * n * c));
  }
  ModelInput in;
  in.factors = cfg.task.factors(n);
  std::size_t len = n;
  if (cfg.task.kind == TaskKind::Anomaly) {
    len = n / cfg.task.downsample;
    raw = resample_time(raw, b, n, c, len);
  }
  const Rational inv = sr.inverse();
  if (!(inv == Rational(1))) {
    const Rational target = Rational(static_cast<std::int64_t>(len)) / inv;
    if (!target.is_integer()) {
      throw Error("non-integral decimation: sampling rate " + sr.ratio.str() + " on " + std::to_string(len) + " points");
    }
    const auto l = static_cast<std::size_t>(target.num);
    raw = resample_time(raw, b, len, c, l);
    len = l;
    in.factors.m_f = in.factors.m_f * inv;
  }
  in.n_in = len;
  in.batch = b;
  in.channels = c;
  if (channel_independent(cfg.task.kind)) {
    raw = fold_channels(raw, b, len, c);
    in.batch = b * c;
    in.channels = 1;
  }
  Normalized norm = norm_apply(raw, in.batch, in.channels, cfg.task.norm);
  in.x = std::move(norm.data);
  in.stats = std::move(norm.stats);
  return in;
}

std::size_t output_length(const PreparedData& d) { return d.kind == TaskKind::Forecast ? d.n + d.horizon : d.n; }

struct Forward {
  ad::Var out;   ///< de-normalized series or logits
  ad::Var loss;
};

Forward forward_batch(ad::Tape& tape, const RunConfig& cfg, const PreparedData& d, const NfmModel& model, const Split& s,
                      std::span<const std::size_t> idx, SamplingRate sr, const ForwardContext& ctx, bool with_loss) {
  ModelInput in = model_input(cfg, d, s, idx, sr);
  ad::Var x = tape.constant({in.batch, in.n_in, in.channels}, std::move(in.x));
  ad::Var y = model.forward(tape, x, in.factors, ctx);
  Forward f;
  if (d.kind == TaskKind::Classify) {
    f.out = y;
    if (with_loss) {
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(s.labels[i]);
      f.loss = ad::softmax_cross_entropy(y, labels);
    }
    return f;
  }
  f.out = norm_invert(y, in.stats);
  if (with_loss) {
    const std::size_t l = output_length(d), c = d.channels;
    if (f.out.dim(1) != l) throw Error("model output length " + std::to_string(f.out.dim(1)) + " != " + std::to_string(l));
    std::vector<double> target;
    target.reserve(idx.size() * l * c);
    for (std::size_t i : idx) {
      target.insert(target.end(), s.targets.begin() + static_cast<std::ptrdiff_t>(i * l * c),
                    s.targets.begin() + static_cast<std::ptrdiff_t>((i + 1) * l * c));
    }
    // losses are means over every element, so the folded layout gives the same value
    ad::Var t = tape.constant({in.batch, l, in.channels}, fold_channels(target, idx.size(), l, c));
    f.loss = d.kind == TaskKind::Forecast ? forecast_loss(f.out, t, cfg.task.lambda) : anomaly_loss(f.out, t, cfg.task.lambda);
  }
  return f;
}

struct SplitRun {
  Predictions pred;
  double loss = 0.0;
};

SplitRun run_split(const RunConfig& cfg, const PreparedData& d, const NfmModel& model, const Split& s, SamplingRate sr,
                   bool with_loss) {
  SplitRun r;
  r.pred.num = s.num;
  if (s.num == 0) return r;
  const std::size_t eb = cfg.optim.eval_batch;
  const std::size_t batches = (s.num + eb - 1) / eb;
  std::vector<std::vector<double>> outs(batches);
  std::vector<double> losses(batches, 0.0);
  parallel_for(batches, [&](std::size_t bi) {
    const std::size_t lo = bi * eb, hi = std::min(s.num, lo + eb);
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    ad::Tape tape(false);
    const Forward f = forward_batch(tape, cfg, d, model, s, idx, sr, ForwardContext{}, with_loss);
    if (d.kind == TaskKind::Classify) outs[bi].assign(f.out.value().begin(), f.out.value().end());
    else outs[bi] = unfold_channels(f.out.value(), hi - lo, f.out.dim(1), d.channels);
    if (with_loss) losses[bi] = f.loss.item() * static_cast<double>(hi - lo);
  });
  r.pred.width = outs[0].size() / std::min(s.num, eb);
  r.pred.values.reserve(s.num * r.pred.width);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    r.pred.values.insert(r.pred.values.end(), outs[bi].begin(), outs[bi].end());
    r.loss += losses[bi];
  }
  r.loss /= static_cast<double>(s.num);
  return r;
}

}  // namespace

Predictions predict(const RunConfig& cfg, const PreparedData& data, const NfmModel& model, const Split& split,
                    SamplingRate sr) {
  return run_split(cfg, data, model, split, sr, false).pred;
}

// ---------------------------------------------------------------------------
// Training

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

std::vector<std::size_t> epoch_order(const Split& train, std::size_t classes, bool balanced, Rng& rng) {
  std::vector<std::size_t> order(train.num);
  std::iota(order.begin(), order.end(), 0);
  if (!balanced) {
    shuffle(order, rng);
    return order;
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < train.num; ++i) by_class.at(static_cast<std::size_t>(train.labels[i])).push_back(i);
  std::size_t longest = 0;
  for (auto& members : by_class) {
    shuffle(members, rng);
    longest = std::max(longest, members.size());
  }
  order.clear();
  for (std::size_t r = 0; r < longest; ++r)
    for (const auto& members : by_class)
      if (r < members.size()) order.push_back(members[r]);
  return order;
}

TrainResult train_model(const RunConfig& cfg, const PreparedData& d, NfmModel& model,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  const OptimConfig& oc = cfg.optim;
  const Split& train = d.train;
  if (train.num == 0) throw Error("train: empty training split");
  Rng rng(derive_seed(cfg.seed, "train"));
  ad::AdamConfig ac;
  ac.lr = oc.lr;
  ad::Adam adam(model.params(), ac);

  const std::size_t steps_per_epoch = (train.num + oc.batch - 1) / oc.batch;
  const std::size_t total_steps = steps_per_epoch * oc.epochs;
  const bool classify = d.kind == TaskKind::Classify;
  const bool have_val = d.val.num > 0;

  TrainResult result;
  std::vector<double> last_good = model.params().flatten();
  std::vector<double> best = last_good;
  double best_loss = std::numeric_limits<double>::infinity();
  double best_acc = -1.0;
  std::size_t stale = 0;
  std::vector<std::size_t> order;

  for (std::size_t epoch = 0; epoch < oc.epochs; ++epoch) {
    order = epoch_order(train, d.classes, oc.sampler == "balanced", rng);
    EpochLog log;
    log.epoch = epoch + 1;
    double loss_sum = 0.0;
    bool diverged = false;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t t = epoch * steps_per_epoch + step;
      const double lr = oc.schedule == "cosine" ? ad::cosine_lr(t, total_steps, oc.lr, oc.lr_min) : oc.lr;
      adam.set_lr(lr);
      if (step == 0) log.lr = lr;
      const std::size_t lo = step * oc.batch, hi = std::min(train.num, lo + oc.batch);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      model.params().zero_grad();
      ad::Tape tape;
      ForwardContext ctx{true, &rng};
      const Forward f = forward_batch(tape, cfg, d, model, train, idx, {}, ctx, true);
      const double loss = f.loss.item();
      if (!std::isfinite(loss)) {
        diverged = true;
        break;
      }
      tape.backward(f.loss);
      try {
        adam.step();
      } catch (const Error&) {
        diverged = true;
        break;
      }
      loss_sum += loss * static_cast<double>(hi - lo);
    }
    if (diverged) {
      model.params().assign(last_good);
      result.diverged = true;
      break;
    }
    log.train_loss = loss_sum / static_cast<double>(train.num);

    bool improved = false;
    if (have_val) {
      const SplitRun val = run_split(cfg, d, model, d.val, {}, true);
      log.val_loss = val.loss;
      if (classify) {
        log.val_accuracy = accuracy(val.pred, d.val.labels);
        improved = log.val_accuracy > best_acc || (log.val_accuracy == best_acc && log.val_loss < best_loss);
      } else {
        improved = log.val_loss < best_loss;
      }
    } else {
      log.val_loss = log.train_loss;
      improved = true;
    }
    last_good = model.params().flatten();
    if (improved) {
      best = last_good;
      best_loss = log.val_loss;
      best_acc = log.val_accuracy;
      result.best_epoch = epoch + 1;
      stale = 0;
    } else {
      ++stale;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (!improved && stale > oc.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (!result.diverged) model.params().assign(best);
  result.rng_state = rng.state();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

double accuracy(const Predictions& p, std::span<const int> labels) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < p.num; ++i) {
    const auto row = std::span<const double>(p.values).subspan(i * p.width, p.width);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[i]) ++hit;
  }
  return p.num == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(p.num);
}


Metrics forecast_metrics(const PreparedData& d, const Split& s, const Predictions& p) {
  const std::size_t n = d.n, h = d.horizon, c = d.channels, l = n + h;
  if (p.num != s.num || p.values.size() != s.num * l * c) throw Error("forecast_metrics: predictions do not match the split");
  double se = 0.0, ae = 0.0, pse = 0.0, pae = 0.0;
  for (std::size_t i = 0; i < s.num; ++i) {
    for (std::size_t t = n; t < l; ++t) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double y = s.targets[(i * l + t) * c + ch];
        const double e = p.values[(i * l + t) * c + ch] - y;
        const double last = s.inputs[(i * n + n - 1) * c + ch];
        se += e * e;
        ae += std::abs(e);
        pse += (last - y) * (last - y);
        pae += std::abs(last - y);
      }
    }
  }
  const double count = static_cast<double>(s.num * h * c);
  return {{"mse", se / count}, {"mae", ae / count}, {"persistence_mse", pse / count}, {"persistence_mae", pae / count}};
}

Metrics evaluate(const RunConfig& cfg, const PreparedData& d, const NfmModel& model, const std::string& split_name,
                 SamplingRate sr, AnomalyOutcome* anomaly) {
  const Split& s = d.split(split_name);
  if (s.num == 0) throw Error("evaluate: split '" + split_name + "' is empty");
  Metrics m;
  if (d.kind == TaskKind::Classify) {
    const Predictions p = predict(cfg, d, model, s, sr);
    m.emplace_back("accuracy", accuracy(p, s.labels));
    return m;
  }
  if (d.kind == TaskKind::Forecast) return forecast_metrics(d, s, predict(cfg, d, model, s, sr));

  // anomaly
  const auto scores_of = [&](const Split& sp) {
    const Predictions p = predict(cfg, d, model, sp, sr);
    return anomaly_score(sp.targets, p.values, d.channels);
  };
  const std::vector<double> pool = scores_of(d.train_scoring);
  const double threshold = threshold_by_ratio(pool, cfg.task.anomaly_ratio);
  std::vector<double> scores = scores_of(s);
  std::vector<int> raw(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) raw[i] = scores[i] > threshold ? 1 : 0;
  std::vector<int> adjusted = point_adjust(raw, s.labels);
  const DetectionMetrics dm = detection_metrics(adjusted, s.labels);
  m.emplace_back("precision", dm.precision);
  m.emplace_back("recall", dm.recall);
  m.emplace_back("f1", dm.f1);
  m.emplace_back("threshold", threshold);
  if (anomaly != nullptr) {
    anomaly->scores = std::move(scores);
    anomaly->flags = std::move(adjusted);
    anomaly->threshold = threshold;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Filters

std::vector<double> FilterDump::channel_mean(std::size_t block) const {
  std::vector<double> out(bins, 0.0);
  for (std::size_t k = 0; k < bins; ++k) {
    for (std::size_t j = 0; j < hidden; ++j) out[k] += magnitude[(block * bins + k) * hidden + j];
    out[k] /= static_cast<double>(hidden);
  }
  return out;
}

double FilterDump::band_ratio(std::size_t lo, std::size_t hi) const {
  if (blocks == 0) throw Error("band_ratio: model has no mixer blocks");
  double acc = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::vector<double> cm = channel_mean(b);
    double inside = 0.0, total = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      total += cm[k];
      if (k >= lo && k <= hi) inside += cm[k];
    }
    acc += total > 0.0 ? inside / total : 0.0;
  }
  return acc / static_cast<double>(blocks);
}

FilterDump dump_filter(const RunConfig& cfg, const PreparedData& d, const NfmModel& model, std::size_t probes) {
  const Split& s = d.test.num > 0 ? d.test : d.train;
  const std::size_t count = std::min(probes, s.num);
  if (count == 0) throw Error("dump_filter: no probe windows");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  ModelInput in = model_input(cfg, d, s, idx, {});
  ad::Tape tape(false);
  ad::Var x = tape.constant({in.batch, in.n_in, in.channels}, std::move(in.x));
  std::vector<ad::Var> filters;
  model.backbone(tape, x, in.factors, ForwardContext{}, &filters);

  FilterDump dump;
  dump.blocks = filters.size();
  if (dump.blocks == 0) return dump;
  dump.bins = filters[0].dim(1);
  dump.hidden = filters[0].dim(2);
  const std::size_t per = dump.bins * dump.hidden;
  dump.magnitude.assign(dump.blocks * per, 0.0);
  for (std::size_t b = 0; b < dump.blocks; ++b) {
    const auto r = filters[b].value();
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t e = 0; e < per; ++e) {
        const double re = r[(i * per + e) * 2], im = r[(i * per + e) * 2 + 1];
        dump.magnitude[b * per + e] += std::hypot(re, im) / static_cast<double>(count);
      }
  }
  return dump;
}

void write_filter_csv(const std::filesystem::path& path, const FilterDump& dump, std::size_t block) {
  if (block >= dump.blocks) throw Error("dump_filter: block " + std::to_string(block) + " out of range");
  std::ofstream out(path);
  if (!out) throw Error("dump_filter: cannot write " + path.string());
  out.precision(17);
  out << "k";
  for (std::size_t j = 0; j < dump.hidden; ++j) out << ",ch" << j;
  out << ",mean\n";
  const std::vector<double> cm = dump.channel_mean(block);
  for (std::size_t k = 0; k < dump.bins; ++k) {
    out << k;
    for (std::size_t j = 0; j < dump.hidden; ++j) out << ',' << dump.magnitude[(block * dump.bins + k) * dump.hidden + j];
    out << ',' << cm[k] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json model_to_json(const ModelConfig& m) {
  return {{"channels", m.channels},     {"hidden", m.hidden},     {"blocks", m.blocks},
          {"h0", m.h0},                 {"inr_hidden", m.inr_hidden}, {"inr_layers", m.inr_layers},
          {"w0", m.w0},                 {"ff_scale", m.ff_scale}, {"proj_width", m.proj_width},
          {"proj_freq", m.proj_freq},   {"mlp_ratio", m.mlp_ratio}, {"dropout", m.dropout},
          {"head", m.head == HeadKind::Pooled ? "pooled" : "pointwise"}, {"out_dim", m.out_dim}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.channels = j.at("channels").get<std::size_t>();
  m.hidden = j.at("hidden").get<std::size_t>();
  m.blocks = j.at("blocks").get<std::size_t>();
  m.h0 = j.at("h0").get<std::size_t>();
  m.inr_hidden = j.at("inr_hidden").get<std::size_t>();
  m.inr_layers = j.at("inr_layers").get<std::size_t>();
  m.w0 = j.at("w0").get<double>();
  m.ff_scale = j.at("ff_scale").get<double>();
  m.proj_width = j.at("proj_width").get<std::size_t>();
  m.proj_freq = j.at("proj_freq").get<double>();
  m.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  m.dropout = j.at("dropout").get<double>();
  m.head = j.at("head").get<std::string>() == "pooled" ? HeadKind::Pooled : HeadKind::Pointwise;
  m.out_dim = j.at("out_dim").get<std::size_t>();
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const NfmModel& model,
                     const std::string& rng_state, std::size_t epoch) {
  json j;
  j["format"] = "nfm-checkpoint";
  j["version"] = 1;
  j["config"] = config_to_json(cfg);
  j["config_hash"] = hash_hex(config_hash(cfg));
  j["model"] = model_to_json(model.config());
  json names = json::array(), shapes = json::array();
  for (const ad::Parameter* p : model.params().all()) {
    names.push_back(p->name);
    shapes.push_back(p->shape);
  }
  j["param_names"] = names;
  j["param_shapes"] = shapes;
  j["params"] = model.params().flatten();
  j["frozen"] = model.frozen_constants();
  j["rng_state"] = rng_state;
  j["epoch"] = epoch;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("checkpoint: " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "nfm-checkpoint" || j.value("version", 0) != 1) {
    throw Error("checkpoint: unsupported format in " + path.string());
  }
  Checkpoint ck;
  ck.config = config_from_json(j.at("config"));
  ck.hash = config_hash(ck.config);
  if (hash_hex(ck.hash) != j.at("config_hash").get<std::string>()) throw Error("checkpoint: config hash does not match its config");
  ck.model = std::make_unique<NfmModel>(model_from_json(j.at("model")), 0);
  const auto names = j.at("param_names").get<std::vector<std::string>>();
  const auto all = ck.model->params().all();
  if (names.size() != all.size()) throw Error("checkpoint: parameter list does not match the model");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] != all[i]->name) throw Error("checkpoint: parameter '" + names[i] + "' does not match '" + all[i]->name + "'");
  }
  const auto flat = j.at("params").get<std::vector<double>>();
  if (flat.size() != ck.model->params().count()) throw Error("checkpoint: parameter count mismatch");
  ck.model->params().assign(flat);
  ck.model->set_frozen_constants(j.at("frozen").get<std::vector<double>>());
  ck.rng_state = j.at("rng_state").get<std::string>();
  ck.epoch = j.at("epoch").get<std::size_t>();
  return ck;
}

std::string metrics_jsonl(const RunConfig& cfg, const Metrics& metrics) {
  std::string out;
  const std::string hash = hash_hex(config_hash(cfg));
  for (const auto& [name, value] : metrics) {
    json j = {{"task", to_string(cfg.task.kind)}, {"seed", cfg.seed}, {"config_hash", hash}, {"metric", name}, {"value", value}};
    out += j.dump() + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checks

double GradReport::max_error() const {
  double m = 0.0;
  for (const auto& [_, e] : components) m = std::max(m, e);
  return m;
}

ModelConfig toy_model_config() {
  ModelConfig m;
  m.channels = 2;
  m.hidden = 8;
  m.blocks = 1;
  m.h0 = 8;
  m.inr_hidden = 8;
  m.inr_layers = 3;
  m.proj_width = 8;
  m.mlp_ratio = 2;
  m.out_dim = 2;
  return m;
}

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

std::vector<ad::Parameter*> params_with_prefix(NfmModel& model, const std::vector<std::string>& prefixes) {
  std::vector<ad::Parameter*> out;
  for (ad::Parameter* p : model.params().all()) {
    for (const std::string& pre : prefixes) {
      if (p->name.rfind(pre, 0) == 0) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

// scalar probe <out, u> with a fixed random u, so every output element matters
ad::Var probe(ad::Var out, Rng& rng) {
  ad::Var u = out.tape().constant(out.shape(), random_values(out.value().size(), rng));
  return ad::sum(ad::mul(out, u));
}

}  // namespace

GradReport gradcheck_suite(const ModelConfig& toy, std::uint64_t seed) {
  GradReport report;
  const std::size_t batch = 2, n = 8, c = toy.channels;
  Rng rng(seed);
  const std::vector<double> xv = random_values(batch * n * c, rng);
  const std::uint64_t probe_seed = rng.next();

  ModelConfig pointwise = toy;
  pointwise.head = HeadKind::Pointwise;
  pointwise.out_dim = c;
  NfmModel model(pointwise, seed);
  report.params = model.param_count();
  const ExtensionFactors forecast{Rational(3, 2), Rational(1)};  // 8 -> 12
  const ExtensionFactors anomaly{Rational(1), Rational(2)};      // 8 -> 16
  const ForwardContext ctx{};

  const auto check = [&](const std::string& name, const std::function<ad::Var(ad::Tape&)>& f,
                         std::vector<ad::Parameter*> params) {
    if (params.empty()) throw Error("gradcheck: component '" + name + "' has no parameters");
    report.components.emplace_back(name, ad::grad_check(f, params));
  };
  const auto input = [&](ad::Tape& t) { return t.constant({batch, n, c}, xv); };

  check("input_projection",
        [&](ad::Tape& t) {
          Rng r(probe_seed);
          return probe(model.input_projection(t, input(t), ctx), r);
        },
        params_with_prefix(model, {"proj."}));
  check("lft",
        [&](ad::Tape& t) {
          Rng r(probe_seed);
          return probe(model.lft(t, model.input_projection(t, input(t), ctx), forecast).z0, r);
        },
        params_with_prefix(model, {"proj.", "lft."}));
  check("inff",
        [&](ad::Tape& t) {
          Rng r(probe_seed);
          const EmbeddingState st = model.lft(t, model.input_projection(t, input(t), ctx), anomaly);
          return probe(model.inff(t, st.z0, st, 0), r);
        },
        params_with_prefix(model, {"block0.inff."}));
  check("mixer_block",
        [&](ad::Tape& t) {
          Rng r(probe_seed);
          const EmbeddingState st = model.lft(t, model.input_projection(t, input(t), ctx), forecast);
          return probe(model.mixer_block(t, st.z0, st, 0, ctx), r);
        },
        params_with_prefix(model, {"block0."}));
  check("final_block",
        [&](ad::Tape& t) {
          Rng r(probe_seed);
          const EmbeddingState st = model.lft(t, model.input_projection(t, input(t), ctx), forecast);
          return probe(model.final_block(t, st.z0, ctx), r);
        },
        params_with_prefix(model, {"final."}));
  check("head_pointwise",
        [&](ad::Tape& t) {
          Rng r(probe_seed);
          return probe(model.forward(t, input(t), forecast, ctx), r);
        },
        params_with_prefix(model, {"head."}));

  // losses on a free prediction tensor
  const std::size_t l = 12;
  Rng lr(seed + 1);
  const std::vector<double> target = random_values(batch * l * c, lr);
  ad::Parameter yhat{"yhat", {batch, l, c}, random_values(batch * l * c, lr), {}};
  yhat.grad.assign(yhat.value.size(), 0.0);
  std::vector<ad::Parameter*> yp{&yhat};
  check("forecast_loss",
        [&](ad::Tape& t) { return forecast_loss(t.param(yhat), t.constant({batch, l, c}, target), 0.5); }, yp);
  check("anomaly_loss",
        [&](ad::Tape& t) { return anomaly_loss(t.param(yhat), t.constant({batch, l, c}, target), 0.5); }, yp);
  check("focal_freq_loss",
        [&](ad::Tape& t) { return focal_freq_loss(t.param(yhat), t.constant({batch, l, c}, target)); }, yp);

  NormStats stats;
  stats.mode = NormMode::RevIN;
  stats.batch = batch;
  stats.channels = c;
  stats.mean = random_values(batch * c, lr);
  stats.std.assign(batch * c, 1.5);
  check("norm_invert",
        [&](ad::Tape& t) {
          Rng r(probe_seed);
          return probe(norm_invert(t.param(yhat), stats), r);
        },
        yp);

  const std::size_t classes = 3;
  ad::Parameter logits{"logits", {batch, classes}, random_values(batch * classes, lr), {}};
  logits.grad.assign(logits.value.size(), 0.0);
  const std::vector<int> labels{0, 2};
  check("cross_entropy", [&](ad::Tape& t) { return ad::softmax_cross_entropy(t.param(logits), labels); }, {&logits});

  // end-to-end composite objectives through every parameter
  const std::vector<double> yf = random_values(batch * l * c, lr);
  check("model_forecast_objective",
        [&](ad::Tape& t) {
          return forecast_loss(model.forward(t, input(t), forecast, ctx), t.constant({batch, l, c}, yf), 0.5);
        },
        model.params().all());
  const std::vector<double> xa = random_values(batch * 2 * n * c, lr);
  check("model_anomaly_objective",
        [&](ad::Tape& t) {
          return anomaly_loss(model.forward(t, input(t), anomaly, ctx), t.constant({batch, 2 * n, c}, xa), 0.5);
        },
        model.params().all());

  ModelConfig pooled = toy;
  pooled.head = HeadKind::Pooled;
  pooled.out_dim = classes;
  NfmModel cls(pooled, seed + 2);
  check("head_pooled",
        [&](ad::Tape& t) {
          Rng r(probe_seed);
          return probe(cls.forward(t, t.constant({batch, n, c}, xv), ExtensionFactors{}, ctx), r);
        },
        params_with_prefix(cls, {"head."}));
  check("model_classification_objective",
        [&](ad::Tape& t) {
          return ad::softmax_cross_entropy(cls.forward(t, t.constant({batch, n, c}, xv), ExtensionFactors{}, ctx), labels);
        },
        cls.params().all());
  return report;
}

}  // namespace nfm
