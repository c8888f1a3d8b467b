#include "ctgraph/heads.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <tuple>

#include "ctgraph/container.hpp"
#include "ctgraph/error.hpp"
#include "ctgraph/json_io.hpp"

namespace ctgraph {

std::string to_string(TrainMode m) { return m == TrainMode::probe ? "probe" : "gat"; }

TrainMode parse_train_mode(const std::string& s) {
  if (s == "probe") return TrainMode::probe;
  if (s == "gat" || s == "gat-classifier") return TrainMode::gat;
  throw ValidationError("unknown train mode '" + s + "' (expected probe or gat)");
}

TrainConfig TrainConfig::defaults(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  if (mode == TrainMode::gat) c.lr = 5e-5;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0 || epochs == 0) throw ValidationError("train config: batch_size and epochs must be positive");
  if (!(lr > 0.0) || weight_decay < 0.0) throw ValidationError("train config: lr must be positive, weight_decay >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("train config: threshold must lie in (0, 1)");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("train config: val_fraction must lie in (0, 1)");
  if (gat_input_norm != "none" && gat_input_norm != "channel" && gat_input_norm != "region")
    throw ValidationError("train config: gat_input_norm must be none, channel or region");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"mode", to_string(mode)}, {"batch_size", batch_size}, {"epochs", epochs},
          {"lr", lr},                {"weight_decay", weight_decay}, {"seed", seed},
          {"threshold", threshold},  {"val_fraction", val_fraction}, {"standardize", standardize},
          {"gat_input_norm", gat_input_norm}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c = defaults(parse_train_mode(j.value("mode", std::string("probe"))));
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.threshold = j.value("threshold", c.threshold);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.standardize = j.value("standardize", c.standardize);
  c.gat_input_norm = j.value("gat_input_norm", c.gat_input_norm);
  c.validate();
  return c;
}

std::string ProbeFeatureSpec::str() const {
  static const char* names[] = {"global", "coarse", "fine", "all"};
  std::string s = names[static_cast<int>(level)];
  if (layer) s += ":" + std::to_string(layer);
  if (include_global && level != Level::global) s += "+global";
  return s;
}

ProbeFeatureSpec ProbeFeatureSpec::parse(const std::string& text) {
  ProbeFeatureSpec spec;
  std::string s = text;
  const std::string suffix = "+global";
  if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
    spec.include_global = true;
    s.resize(s.size() - suffix.size());
  }
  std::string level = s;
  if (const auto colon = s.find(':'); colon != std::string::npos) {
    level = s.substr(0, colon);
    try {
      spec.layer = std::stoul(s.substr(colon + 1));
    } catch (const std::exception&) {
      throw ValidationError("probe features '" + text + "': bad layer index");
    }
  }
  if (level == "global") spec.level = Level::global;
  else if (level == "coarse") spec.level = Level::coarse;
  else if (level == "fine") spec.level = Level::fine;
  else if (level == "all") spec.level = Level::all;
  else throw ValidationError("probe features '" + text + "': level must be global, coarse, fine or all");
  return spec;
}

std::vector<double> probe_features(const PooledFeatures& f, const ProbeFeatureSpec& spec) {
  const auto& channels = f.fine.layer_channels.empty() ? f.coarse.layer_channels : f.fine.layer_channels;
  if (spec.layer > channels.size())
    throw ValidationError("probe layer " + std::to_string(spec.layer) + " out of range (pyramid has " +
                          std::to_string(channels.size()) + " layers)");
  std::vector<double> out;
  auto append_set = [&](const RegionFeatureSet& s) {
    for (std::size_t r = 0; r < s.regions(); ++r) {
      const auto v = spec.layer ? s.layer_vector(r, spec.layer - 1) : s.region(r);
      out.insert(out.end(), v.begin(), v.end());
    }
  };
  auto append_global = [&] {
    if (spec.layer == 0) {
      out.insert(out.end(), f.global_mean.begin(), f.global_mean.end());
      return;
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < spec.layer; ++l) off += channels[l];
    out.insert(out.end(), f.global_mean.begin() + static_cast<std::ptrdiff_t>(off),
               f.global_mean.begin() + static_cast<std::ptrdiff_t>(off + channels[spec.layer - 1]));
  };
  using L = ProbeFeatureSpec::Level;
  if (spec.level == L::global) {
    append_global();
    return out;
  }
  if (spec.level == L::coarse || spec.level == L::all) append_set(f.coarse);
  if (spec.level == L::fine || spec.level == L::all) append_set(f.fine);
  if (spec.include_global) append_global();
  return out;
}

Split make_split(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (n == 0) throw ValidationError("cannot split an empty dataset");
  Split s;
  if (n == 1) {
    s.train = s.val = {0};
    return s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x5b1170));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))), 1, n - 1);
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

nlohmann::json TrainResult::to_json() const {
  nlohmann::json trace_j = nlohmann::json::array();
  for (const auto& e : trace)
    trace_j.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                       {"precision", e.precision}, {"recall", e.recall}, {"f1", e.f1}});
  return {{"trace", trace_j}, {"degenerate_classes", degenerate_classes}, {"first_batch_loss", first_batch_loss}};
}

namespace {

Tensor rows_of(const Tensor& m, std::span<const std::size_t> rows) {
  const std::size_t d = m.cols();
  Tensor out({rows.size(), d}, 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(rows[k] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * d));
  return out;
}

LabelMatrix threshold_logits(const Tensor& logits, double threshold) {
  LabelMatrix out(logits.rows(), std::vector<int>(logits.cols()));
  for (std::size_t r = 0; r < logits.rows(); ++r)
    for (std::size_t c = 0; c < logits.cols(); ++c)
      out[r][c] = 1.0 / (1.0 + std::exp(-logits.at(r, c))) > threshold;
  return out;
}

LabelMatrix to_labels(const Tensor& y) { return threshold_logits(y, 0.5); }

double bce_value(const Tensor& logits, const Tensor& y) {
  double s = 0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double z = logits[i];
    s += std::max(z, 0.0) - z * y[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return s / static_cast<double>(logits.numel());
}

// Every epoch visits the training rows in a fresh seeded order.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& train, std::size_t batch,
                                                    std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order = train;
  std::mt19937_64 rng(mix_seed(seed, 0xe90c0000 + epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch)));
  return out;
}

void fill_val_metrics(EpochMetrics& e, const Tensor& val_logits, const Tensor& val_y, double threshold,
                      std::vector<std::size_t>* degenerate) {
  e.val_loss = bce_value(val_logits, val_y);
  const PRF1 m = macro_prf1(threshold_logits(val_logits, threshold), to_labels(val_y));
  e.precision = m.precision;
  e.recall = m.recall;
  e.f1 = m.f1;
  if (degenerate) *degenerate = m.degenerate;
}

void check_targets(const Tensor& y, std::size_t n) {
  if (y.rank() != 2 || y.rows() != n) throw DimensionError("targets must be an n x classes matrix");
  for (double v : y.storage())
    if (v != 0.0 && v != 1.0) throw ValidationError("targets must be 0/1");
}

}  // namespace

ProbeModel ProbeModel::zeros(std::size_t in, std::size_t classes) {
  ProbeModel m;
  m.layer.weight = Parameter("probe.weight", Tensor({in, classes}, 0.0));
  m.layer.bias = Parameter("probe.bias", Tensor({1, classes}, 0.0));
  m.mean.assign(in, 0.0);
  m.inv_std.assign(in, 1.0);
  return m;
}

namespace {

Tensor standardize(const Tensor& x, const ProbeModel& m) {
  Tensor out = x;
  const std::size_t d = x.cols();
  if (d != m.mean.size())
    throw DimensionError("probe expects " + std::to_string(m.mean.size()) + " features, got " + std::to_string(d));
  auto& s = out.storage();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = (s[i] - m.mean[i % d]) * m.inv_std[i % d];
  return out;
}

}  // namespace

Tensor ProbeModel::logits(const Tensor& x) const {
  Tensor z = matmul(standardize(x, *this), layer.weight.value);
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t c = 0; c < z.cols(); ++c) z.at(r, c) += layer.bias.value[c];
  return z;
}

LabelMatrix ProbeModel::predict(const Tensor& x) const { return threshold_logits(logits(x), threshold); }

void ProbeModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "probe.json", {{"features", features.str()}, {"threshold", threshold},
                                       {"in_dim", in_dim()}, {"classes", classes()}});
  Container c;
  c.add("weight", layer.weight.value);
  c.add("bias", layer.bias.value);
  c.add("mean", Tensor::vector(mean));
  c.add("inv_std", Tensor::vector(inv_std));
  write_container(dir / "params.bin", c);
}

ProbeModel ProbeModel::load(const std::filesystem::path& dir) {
  const auto j = read_json_file(dir / "probe.json", "probe config");
  const Container c = read_container(dir / "params.bin");
  const auto in = j.at("in_dim").get<std::size_t>(), classes = j.at("classes").get<std::size_t>();
  ProbeModel m = zeros(in, classes);
  m.layer.weight.value = c.get("weight").tensor();
  m.layer.bias.value = c.get("bias").tensor();
  m.mean = c.get("mean").reals;
  m.inv_std = c.get("inv_std").reals;
  m.threshold = j.value("threshold", 0.5);
  m.features = ProbeFeatureSpec::parse(j.value("features", std::string("fine")));
  if (m.layer.weight.value.shape() != Shape{in, classes} || m.layer.bias.value.numel() != classes ||
      m.mean.size() != in || m.inv_std.size() != in)
    throw FormatError("probe checkpoint '" + dir.string() + "' is inconsistent");
  return m;
}

ProbeRun train_probe(const ProbeDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.size(), d = data.x.cols(), classes = data.y.cols();
  check_targets(data.y, n);
  const Split split = data.split ? *data.split : make_split(n, cfg.val_fraction, cfg.seed);

  ProbeRun run;
  run.model = ProbeModel::zeros(d, classes);
  run.model.threshold = cfg.threshold;
  if (cfg.standardize) {
    for (std::size_t c = 0; c < d; ++c) {
      double mu = 0, var = 0;
      for (auto r : split.train) mu += data.x.at(r, c);
      mu /= static_cast<double>(split.train.size());
      for (auto r : split.train) var += (data.x.at(r, c) - mu) * (data.x.at(r, c) - mu);
      var /= static_cast<double>(split.train.size());
      run.model.mean[c] = mu;
      run.model.inv_std[c] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
  }
  const Tensor xs = standardize(data.x, run.model);
  const Tensor val_x = rows_of(data.x, split.val), val_y = rows_of(data.y, split.val);

  AdamWConfig opt{cfg.lr, cfg.weight_decay};
  AdamWState state;
  std::vector<Parameter*> params{&run.model.layer.weight, &run.model.layer.bias};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0;
    const auto batches = epoch_batches(split.train, cfg.batch_size, cfg.seed, epoch);
    for (const auto& b : batches) {
      for (auto* p : params) p->zero_grad();
      ad::Tape tape;
      const ad::Var x = tape.constant(rows_of(xs, b));
      const ad::Var loss = ad::bce_with_logits(linear_forward(tape, x, run.model.layer), rows_of(data.y, b));
      tape.backward(loss);
      if (epoch == 0 && &b == &batches.front()) run.result.first_batch_loss = loss.value()[0];
      loss_sum += loss.value()[0];
      adamw_step(params, state, opt);
    }
    EpochMetrics e;
    e.epoch = epoch + 1;
    e.train_loss = loss_sum / static_cast<double>(batches.size());
    fill_val_metrics(e, run.model.logits(val_x), val_y, cfg.threshold, &run.result.degenerate_classes);
    run.result.trace.push_back(e);
  }
  return run;
}

namespace {

// Column statistics over the stacked rows of `mats`; `per_row` keeps one
// statistic per (row, column) instead of pooling rows together.
std::pair<Tensor, Tensor> fit_stats(const std::vector<const Tensor*>& mats, bool per_row) {
  const Tensor& first = *mats.front();
  const std::size_t R = first.rows(), C = first.cols();
  const std::size_t out_rows = per_row ? R : 1;
  Tensor mean({out_rows, C}, 0.0), scale({out_rows, C}, 1.0);
  Tensor sq({out_rows, C}, 0.0);
  const double n = static_cast<double>(mats.size() * (per_row ? 1 : R));
  for (const Tensor* m : mats)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) mean.at(per_row ? r : 0, c) += m->at(r, c) / n;
  for (const Tensor* m : mats)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double dv = m->at(r, c) - mean.at(per_row ? r : 0, c);
        sq.at(per_row ? r : 0, c) += dv * dv / n;
      }
  for (std::size_t i = 0; i < sq.numel(); ++i) scale[i] = sq[i] > 1e-24 ? 1.0 / std::sqrt(sq[i]) : 1.0;
  if (per_row) return {mean, scale};
  // Broadcast the pooled statistics back to every row.
  Tensor bm({R, C}, 0.0), bs({R, C}, 1.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      bm.at(r, c) = mean.at(0, c);
      bs.at(r, c) = scale.at(0, c);
    }
  return {bm, bs};
}

Tensor affine(const Tensor& x, const Tensor& mean, const Tensor& scale) {
  if (mean.numel() == 0) return x;
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (x[i] - mean[i]) * scale[i];
  return out;
}

}  // namespace

InputNorm InputNorm::fit(const std::string& mode, const std::vector<PooledFeatures>& feats,
                         std::span<const std::size_t> rows) {
  InputNorm n;
  n.mode = mode;
  if (mode == "none" || rows.empty()) return n;
  const bool per_row = mode == "region";
  std::vector<const Tensor*> fine, coarse, global;
  std::vector<Tensor> global_rows;
  global_rows.reserve(rows.size());
  for (auto r : rows) {
    fine.push_back(&feats[r].fine.fused);
    coarse.push_back(&feats[r].coarse.fused);
    global_rows.push_back(feats[r].global.grid.reshaped({1, feats[r].global.grid.numel()}));
  }
  for (const auto& g : global_rows) global.push_back(&g);
  std::tie(n.fine_mean, n.fine_scale) = fit_stats(fine, per_row);
  std::tie(n.coarse_mean, n.coarse_scale) = fit_stats(coarse, per_row);
  std::tie(n.global_mean, n.global_scale) = fit_stats(global, true);
  return n;
}

PooledFeatures InputNorm::apply(const PooledFeatures& f) const {
  if (mode == "none") return f;
  PooledFeatures out = f;
  out.fine.fused = affine(f.fine.fused, fine_mean, fine_scale);
  out.coarse.fused = affine(f.coarse.fused, coarse_mean, coarse_scale);
  out.global.grid = affine(f.global.grid, global_mean.reshaped(f.global.grid.shape()),
                           global_scale.reshaped(f.global.grid.shape()));
  return out;
}

GatClassifier GatClassifier::init(const GatConfig& cfg, std::size_t classes) {
  GatClassifier m;
  m.gat = GatModel::init(cfg);
  m.head = Linear::init("head", cfg.export_dim, classes, mix_seed(cfg.seed, 7));
  return m;
}

std::vector<Parameter*> GatClassifier::parameters() {
  auto p = gat.parameters();
  p.push_back(&head.weight);
  p.push_back(&head.bias);
  return p;
}

ad::Var GatClassifier::logits(ad::Tape& tape, const PooledVars& pooled, const RegionGraph& graph) {
  const GatOutputs out = gat_forward(tape, pooled, graph, gat);
  const std::size_t first[] = {0};
  return linear_forward(tape, ad::gather_rows(out.tokens, first), head);
}

Tensor GatClassifier::logits(const PooledFeatures& feats, const RegionGraph& graph) {
  ad::Tape tape;
  return logits(tape, as_constants(tape, norm.apply(feats)), graph).value();
}

void GatClassifier::save(const std::filesystem::path& dir) const {
  gat.save(dir);
  write_json_file(dir / "classifier.json",
                  {{"threshold", threshold}, {"classes", head.out_dim()}, {"input_norm", norm.mode}});
  Container c;
  c.add("head.weight", head.weight.value);
  c.add("head.bias", head.bias.value);
  if (norm.mode != "none") {
    c.add("norm.fine_mean", norm.fine_mean);
    c.add("norm.fine_scale", norm.fine_scale);
    c.add("norm.coarse_mean", norm.coarse_mean);
    c.add("norm.coarse_scale", norm.coarse_scale);
    c.add("norm.global_mean", norm.global_mean);
    c.add("norm.global_scale", norm.global_scale);
  }
  write_container(dir / "head.bin", c);
}

GatClassifier GatClassifier::load(const std::filesystem::path& dir) {
  GatClassifier m;
  m.gat = GatModel::load(dir);
  const auto j = read_json_file(dir / "classifier.json", "classifier config");
  const Container c = read_container(dir / "head.bin");
  m.threshold = j.value("threshold", 0.5);
  m.head.weight = Parameter("head.weight", c.get("head.weight").tensor());
  m.head.bias = Parameter("head.bias", c.get("head.bias").tensor());
  m.norm.mode = j.value("input_norm", std::string("none"));
  if (m.norm.mode != "none") {
    m.norm.fine_mean = c.get("norm.fine_mean").tensor();
    m.norm.fine_scale = c.get("norm.fine_scale").tensor();
    m.norm.coarse_mean = c.get("norm.coarse_mean").tensor();
    m.norm.coarse_scale = c.get("norm.coarse_scale").tensor();
    m.norm.global_mean = c.get("norm.global_mean").tensor();
    m.norm.global_scale = c.get("norm.global_scale").tensor();
  }
  if (m.head.in_dim() != m.gat.config().export_dim)
    throw FormatError("classifier head does not match the model's export dim");
  return m;
}

double gat_batch_loss(GatClassifier& model, const GatDataset& data, const RegionGraph& graph,
                      std::span<const std::size_t> samples) {
  for (auto* p : model.parameters()) p->zero_grad();
  double total = 0;
  const double w = 1.0 / static_cast<double>(samples.size());
  const std::size_t classes = data.y.cols();
  for (auto s : samples) {
    ad::Tape tape;
    const ad::Var z = model.logits(tape, as_constants(tape, model.norm.apply(data.features[s])), graph);
    const std::size_t row[] = {s};
    const ad::Var loss = ad::scale(ad::bce_with_logits(z, rows_of(data.y, row).reshaped({1, classes})), w);
    tape.backward(loss);
    total += loss.value()[0];
  }
  return total;
}

GatRun train_gat_classifier(const GatDataset& data, const RegionGraph& graph, const GatConfig& gat_cfg,
                            const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.size(), classes = data.y.cols();
  check_targets(data.y, n);
  const Split split = data.split ? *data.split : make_split(n, cfg.val_fraction, cfg.seed);
  GatConfig gc = gat_cfg;
  gc.seed = mix_seed(cfg.seed, 0x6a7);
  GatRun run{GatClassifier::init(gc, classes), {}};
  run.model.threshold = cfg.threshold;
  run.model.norm = InputNorm::fit(cfg.gat_input_norm, data.features, split.train);
  auto params = run.model.parameters();
  AdamWConfig opt{cfg.lr, cfg.weight_decay};
  AdamWState state;
  const Tensor val_y = rows_of(data.y, split.val);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0;
    const auto batches = epoch_batches(split.train, cfg.batch_size, cfg.seed, epoch);
    for (const auto& b : batches) {
      const double loss = gat_batch_loss(run.model, data, graph, b);
      if (epoch == 0 && &b == &batches.front()) run.result.first_batch_loss = loss;
      loss_sum += loss;
      adamw_step(params, state, opt);
    }
    Tensor val_logits({split.val.size(), classes}, 0.0);
    for (std::size_t k = 0; k < split.val.size(); ++k) {
      const Tensor z = run.model.logits(data.features[split.val[k]], graph);
      for (std::size_t c = 0; c < classes; ++c) val_logits.at(k, c) = z[c];
    }
    EpochMetrics e;
    e.epoch = epoch + 1;
    e.train_loss = loss_sum / static_cast<double>(batches.size());
    fill_val_metrics(e, val_logits, val_y, cfg.threshold, &run.result.degenerate_classes);
    run.result.trace.push_back(e);
  }
  return run;
}

void TokenExport::save(const std::filesystem::path& path) const {
  Container c;
  c.add("tokens", tokens, DType::f64,
        {{"prompt", prompt}, {"order", {"global", "coarse", "fine"}}, {"node_names", node_names}});
  write_container(path, c);
}

TokenExport TokenExport::load(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const auto& r = c.get("tokens");
  TokenExport t;
  t.tokens = r.tensor();
  t.prompt = r.meta.value("prompt", std::string(kDefaultPrompt));
  t.node_names = r.meta.value("node_names", std::vector<std::string>{});
  return t;
}

TokenExport export_tokens(const Tensor& tokens, const RegionGraph& graph, std::string prompt) {
  TokenExport t;
  t.tokens = tokens;
  t.prompt = std::move(prompt);
  t.node_names.push_back(graph.nodes.back().name);
  for (const auto& n : graph.nodes)
    if (n.level == NodeLevel::coarse) t.node_names.push_back(n.name);
  for (const auto& n : graph.nodes)
    if (n.level == NodeLevel::fine) t.node_names.push_back(n.name);
  if (t.node_names.size() != tokens.rows())
    throw DimensionError("token matrix has " + std::to_string(tokens.rows()) + " rows, graph has " +
                         std::to_string(t.node_names.size()) + " nodes");
  return t;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.value("id", std::to_string(out.size()));
      e.features = j.at("features").get<std::string>();
      if (e.features.is_relative()) e.features = path.parent_path() / e.features;
      e.labels = j.at("labels").get<std::vector<int>>();
      e.split = j.value("split", std::string());
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("manifest '" + path.string() + "' line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  if (out.empty()) throw FormatError("manifest '" + path.string() + "' has no records");
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest '" + path.string() + "'");
  for (const auto& e : entries) {
    nlohmann::json j{{"id", e.id}, {"features", e.features.string()}, {"labels", e.labels}};
    if (!e.split.empty()) j["split"] = e.split;
    out << j.dump() << '\n';
  }
}

std::optional<Split> manifest_split(const std::vector<ManifestEntry>& entries) {
  Split s;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == "train") s.train.push_back(i);
    else if (entries[i].split == "val") s.val.push_back(i);
    else return std::nullopt;
  }
  if (s.train.empty() || s.val.empty()) return std::nullopt;
  return s;
}

}  // namespace ctgraph
