// Experiment commands: config parsing, the runs themselves and the files they
// write. The CLI in tools/ is a thin argument parser over these functions.
#pragma once

#include "serialize.hpp"

#include <chrono>
#include <ctime>
#include <iostream>

namespace ncgen {

enum ExitCode : int { kExitOk = 0, kExitInvalidConfig = 2, kExitExperimentFailure = 3, kExitIo = 4 };

/// The experiment ran but its result breaks the run contract (divergence,
/// training accuracy target missed).
class ExperimentFailure : public Error {
 public:
  using Error::Error;
};

struct CommandOptions {
  std::filesystem::path output = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  /// Directory relative paths inside the config are resolved against.
  std::filesystem::path config_dir = ".";
  std::string config_path;
};

/// Maps library exceptions to exit codes, printing the message to `err`.
template <typename F>
int run_guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ExperimentFailure& e) {
    err << "experiment failed: " << e.what() << "\n";
    return kExitExperimentFailure;
  } catch (const NumericalError& e) {
    err << "experiment failed: " << e.what() << "\n";
    return kExitExperimentFailure;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InvalidArgument& e) {
    err << "invalid config: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const Json::exception& e) {
    err << "invalid config: " << e.what() << "\n";
    return kExitInvalidConfig;
  }
}

inline Json load_config(const std::filesystem::path& path) {
  return parse_json(read_file(path), "config " + path.string());
}

/// The only file whose content may differ between identical runs.
inline void write_meta(const CommandOptions& opts, const std::string& command) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  Json meta = {{"command", command},
               {"timestamp", stamp},
               {"output_dir", opts.output.string()},
               {"config_path", opts.config_path}};
  write_file(opts.output / "meta.json", dump(meta));
}

namespace detail {

inline std::uint64_t master_seed(const Json& cfg, const CommandOptions& opts, std::uint64_t fallback = 0) {
  std::uint64_t seed = fallback;
  read_opt(cfg, "seed", seed, "config");
  return opts.seed.value_or(seed);
}

/// Explicit `key` from `j`, else the substream `tag` of the master seed.
inline std::uint64_t sub_seed(const Json& j, const char* key, std::uint64_t master, std::uint64_t tag) {
  if (j.is_object() && j.contains(key)) {
    std::uint64_t s = 0;
    read_opt(j, key, s, "config");
    return s;
  }
  return substream_seed(master, {tag});
}

inline Json section(const Json& cfg, const char* key) {
  if (!cfg.contains(key)) return Json::object();
  require(cfg.at(key).is_object(), std::string("config: '") + key + "' must be an object");
  return cfg.at(key);
}

inline std::filesystem::path resolve(const CommandOptions& opts, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : opts.config_dir / path;
}

/// An inline object or a path to a JSON file.
inline Json inline_or_file(const Json& v, const CommandOptions& opts, const std::string& what) {
  if (v.is_string()) return parse_json(read_file(resolve(opts, v.get<std::string>())), what);
  require(v.is_object(), what + ": expected an object or a file path");
  return v;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// train-ufm

struct UfmExperiment {
  int C = 4;
  int d = 8;
  int per_class = 10;
  /// Scale of the frozen ETF when ufm.freeze_classifier is set.
  double alpha = 1.0;
  std::uint64_t seed = 0;
  UfmConfig ufm;
};

inline UfmExperiment parse_ufm_experiment(const Json& cfg, const CommandOptions& opts) {
  check_keys(cfg, {"C", "d", "per_class", "alpha", "seed", "ufm"}, "train-ufm");
  UfmExperiment e;
  read_opt(cfg, "C", e.C, "train-ufm");
  read_opt(cfg, "d", e.d, "train-ufm");
  read_opt(cfg, "per_class", e.per_class, "train-ufm");
  read_opt(cfg, "alpha", e.alpha, "train-ufm");
  e.seed = detail::master_seed(cfg, opts);
  const Json u = detail::section(cfg, "ufm");
  e.ufm = ufm_config_from_json(u);
  if (!u.contains("seed")) e.ufm.seed = e.seed;
  require(e.C >= 2, "train-ufm: C must be >= 2");
  require(e.d >= 1 && e.per_class >= 1, "train-ufm: d and per_class must be >= 1");
  return e;
}

inline Json ufm_experiment_to_json(const UfmExperiment& e) {
  return {{"C", e.C}, {"d", e.d}, {"per_class", e.per_class}, {"alpha", e.alpha}, {"seed", e.seed},
          {"ufm", ufm_config_to_json(e.ufm)}};
}

inline UfmResult run_ufm_experiment(const UfmExperiment& e) {
  auto init = random_ufm_init(e.d, e.C, e.per_class, e.ufm.init_scale, e.ufm.seed);
  if (e.ufm.freeze_classifier)
    init.M = make_etf(e.C, e.d, e.alpha, substream_seed(e.ufm.seed, {0x657466ULL})).matrix;
  return train_ufm(init.Z, init.M, e.ufm);
}

inline int cmd_train_ufm(const Json& cfg, const CommandOptions& opts) {
  const auto e = parse_ufm_experiment(cfg, opts);
  const auto res = run_ufm_experiment(e);
  const auto& cps = res.trace.checkpoints;
  Json result = {{"diverged", res.diverged}, {"checkpoints", cps.size()}};
  if (res.diverged) result["diverged_at_step"] = res.diverged_at_step;
  if (!cps.empty()) result["final"] = checkpoint_to_json(cps.back());
  result["final_classifier"] = matrix_to_json(res.final_M);
  if (!res.diverged) result["final_nc"] = nc_report_to_json(nc_report(res.final_M, res.final_Z));

  write_file(opts.output / "trace.jsonl", trace_to_jsonl(res.trace));
  write_file(opts.output / "summary.csv", trace_summary_csv(res.trace));
  write_file(opts.output / "run.json",
             dump({{"command", "train-ufm"}, {"config", ufm_experiment_to_json(e)}, {"result", result}}));
  write_meta(opts, "train-ufm");
  if (res.diverged)
    throw ExperimentFailure("gradient descent diverged at step " + std::to_string(res.diverged_at_step));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// shared network setup for sweep and bounds

struct NetSetup {
  SyntheticSpec data;
  FitConfig fit;
  IntVector hidden{64, 64};
  Activation activation = Activation::ReLU;
  int d = 8;
  double alpha = 1.0;
  std::uint64_t etf_seed = 0;
  std::uint64_t init_seed = 0;

  [[nodiscard]] IntVector widths() const {
    IntVector w{data.d_in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(d);
    return w;
  }
};

inline NetSetup parse_net_setup(const Json& cfg, std::uint64_t master, const SyntheticSpec& data_defaults,
                                const FitConfig& fit_defaults = {}) {
  NetSetup s;
  const Json data = detail::section(cfg, "data");
  s.data = spec_from_json(data, data_defaults);
  if (!data.contains("seed")) s.data.seed = substream_seed(master, {1});
  const Json fit = detail::section(cfg, "fit");
  s.fit = fit_config_from_json(fit, fit_defaults);
  if (!fit.contains("seed")) s.fit.seed = substream_seed(master, {4});
  read_opt(cfg, "hidden", s.hidden, "config");
  for (int w : s.hidden) require(w >= 1, "config: hidden widths must be positive");
  if (cfg.contains("activation")) s.activation = activation_from_string(cfg.at("activation").get<std::string>());
  const Json etf = detail::section(cfg, "etf");
  check_keys(etf, {"d", "alpha", "seed"}, "etf");
  read_opt(etf, "d", s.d, "etf");
  read_opt(etf, "alpha", s.alpha, "etf");
  s.etf_seed = detail::sub_seed(etf, "seed", master, 2);
  s.init_seed = detail::sub_seed(cfg, "init_seed", master, 3);
  return s;
}

inline Json net_setup_to_json(const NetSetup& s) {
  return {{"data", spec_to_json(s.data)},
          {"fit", fit_config_to_json(s.fit)},
          {"hidden", s.hidden},
          {"activation", to_string(s.activation)},
          {"etf", {{"d", s.d}, {"alpha", s.alpha}, {"seed", s.etf_seed}}},
          {"init_seed", s.init_seed}};
}

// ---------------------------------------------------------------------------
// sweep

/// Desk-scale default: six classes with one tight, elongated pair.
inline SyntheticSpec default_sweep_data() {
  SyntheticSpec s;
  s.family = Family::AnisotropicBlobs;
  s.C = 6;
  s.d_in = 2;
  s.per_class = 200;
  s.support_radius.assign(6, 2.0);
  s.class_std = 1.0;
  s.anisotropy = 8.0;
  s.center_distance = 5.0;
  s.tight_similarity = 0.85;
  return s;
}

/// Lower than the generic default: at 0.05 the train accuracy oscillates
/// during the terminal phase and some runs end one sample short.
inline FitConfig default_sweep_fit() {
  FitConfig f;
  f.learning_rate = 0.01;
  return f;
}

inline constexpr std::uint64_t kDefaultSweepSeed = 1;

struct SweepConfig {
  std::uint64_t seed = kDefaultSweepSeed;
  int trials = 10;
  TransformKind kind = TransformKind::Permutation;
  NetSetup net;
  /// Trial t uses substream (transform_base, t) unless transforms are given.
  std::uint64_t transform_base = 0;
  std::optional<std::vector<EtfTransform>> transforms;
};

inline TransformKind kind_from_string(const std::string& s) {
  if (s == "perm") return TransformKind::Permutation;
  if (s == "rot") return TransformKind::Rotation;
  throw InvalidArgument("kind must be 'perm' or 'rot', got '" + s + "'");
}

inline const char* to_string(TransformKind k) { return k == TransformKind::Permutation ? "perm" : "rot"; }

inline SweepConfig parse_sweep_config(const Json& cfg, const CommandOptions& opts,
                                      std::optional<TransformKind> kind = std::nullopt) {
  check_keys(cfg, {"seed", "trials", "kind", "data", "fit", "hidden", "activation", "etf", "init_seed",
                   "transform_seed", "transforms"}, "sweep");
  SweepConfig s;
  s.seed = detail::master_seed(cfg, opts, kDefaultSweepSeed);
  read_opt(cfg, "trials", s.trials, "sweep");
  if (opts.trials) s.trials = *opts.trials;
  if (cfg.contains("kind")) s.kind = kind_from_string(cfg.at("kind").get<std::string>());
  if (kind) s.kind = *kind;
  s.net = parse_net_setup(cfg, s.seed, default_sweep_data(), default_sweep_fit());
  s.transform_base = detail::sub_seed(cfg, "transform_seed", s.seed, 5);
  if (cfg.contains("transforms")) {
    require(cfg.at("transforms").is_array(), "sweep: transforms must be an array");
    std::vector<EtfTransform> ts;
    for (const auto& t : cfg.at("transforms")) ts.push_back(transform_from_json(t));
    require(!ts.empty(), "sweep: transforms must not be empty");
    s.trials = static_cast<int>(ts.size());
    s.transforms = std::move(ts);
  }
  require(s.trials >= 1, "sweep: trials must be >= 1");
  require(s.net.data.C >= 2 && s.net.data.C <= s.net.d, "sweep: need 2 <= C <= d for a simplex ETF");
  return s;
}

inline Json sweep_config_to_json(const SweepConfig& s) {
  Json j = net_setup_to_json(s.net);
  j["seed"] = s.seed;
  j["trials"] = s.trials;
  j["kind"] = to_string(s.kind);
  j["transform_seed"] = s.transform_base;
  if (s.transforms) {
    Json ts = Json::array();
    for (const auto& t : *s.transforms) ts.push_back(transform_to_json(t));
    j["transforms"] = ts;
  }
  return j;
}

/// One sweep trial. Values are NaN where the trial produced none.
struct SweepRow {
  int trial_id = 0;
  std::string transform_kind;
  std::uint64_t transform_seed = 0;
  bool included = false;
  int tpt_epoch = 0;
  double final_train_acc = 0.0;
  double test_acc = 0.0;
  double test_ce = 0.0;
  double p_min = 0.0;
  double margin_std = 0.0;
  double nc1 = 0.0;
  double nc2 = 0.0;
  double nc3 = 0.0;
  double nc4 = 0.0;
  int best_epoch = 0;
  double best_test_acc = 0.0;
  double best_test_ce = 0.0;
  double best_margin_std = 0.0;
};

struct Stats {
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct SweepSummary {
  std::vector<SweepRow> rows;
  /// Over included rows only; population standard deviation.
  std::map<std::string, Stats> aggregate;
};

using RowMetric = double SweepRow::*;

inline const std::vector<std::pair<const char*, RowMetric>>& sweep_metrics() {
  static const std::vector<std::pair<const char*, RowMetric>> m = {
      {"final_train_acc", &SweepRow::final_train_acc}, {"test_acc", &SweepRow::test_acc},
      {"test_ce", &SweepRow::test_ce},                 {"p_min", &SweepRow::p_min},
      {"margin_std", &SweepRow::margin_std},           {"nc1", &SweepRow::nc1},
      {"nc2", &SweepRow::nc2},                         {"nc3", &SweepRow::nc3},
      {"nc4", &SweepRow::nc4},                         {"best_test_acc", &SweepRow::best_test_acc},
      {"best_test_ce", &SweepRow::best_test_ce},       {"best_margin_std", &SweepRow::best_margin_std}};
  return m;
}

inline Stats stats_of(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan, nan};
  }
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  s.mean = detail::mean_of(v);
  // Identical values give exactly zero spread, not a rounding residue.
  if (s.min == s.max) return {s.min, 0.0, s.min, s.max};
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(v.size()));
  return s;
}

inline std::map<std::string, Stats> aggregate_rows(const std::vector<SweepRow>& rows) {
  std::map<std::string, Stats> agg;
  for (const auto& [name, member] : sweep_metrics()) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.included) v.push_back(r.*member);
    agg[name] = stats_of(v);
  }
  return agg;
}

inline std::string sweep_rows_csv(const std::vector<SweepRow>& rows) {
  std::string out =
      "trial_id,transform_kind,transform_seed,included,tpt_epoch,final_train_acc,test_acc,test_ce,p_min,"
      "margin_std,nc1,nc2,nc3,nc4,best_epoch,best_test_acc,best_test_ce,best_margin_std\n";
  for (const auto& r : rows) {
    out += std::to_string(r.trial_id) + "," + r.transform_kind + "," + std::to_string(r.transform_seed) + "," +
           (r.included ? "1" : "0") + "," + std::to_string(r.tpt_epoch);
    for (double v : {r.final_train_acc, r.test_acc, r.test_ce, r.p_min, r.margin_std, r.nc1, r.nc2, r.nc3, r.nc4})
      out += "," + format_double(v);
    out += "," + std::to_string(r.best_epoch);
    for (double v : {r.best_test_acc, r.best_test_ce, r.best_margin_std}) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

inline std::vector<SweepRow> sweep_rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 18) throw IoError("sweep csv: expected 18 fields");
    SweepRow r;
    r.trial_id = std::stoi(f[0]);
    r.transform_kind = f[1];
    r.transform_seed = std::stoull(f[2]);
    r.included = f[3] == "1";
    r.tpt_epoch = std::stoi(f[4]);
    double* dst[] = {&r.final_train_acc, &r.test_acc, &r.test_ce, &r.p_min, &r.margin_std,
                     &r.nc1,             &r.nc2,      &r.nc3,     &r.nc4};
    for (std::size_t k = 0; k < 9; ++k) *dst[k] = parse_double(f[5 + k]);
    r.best_epoch = std::stoi(f[14]);
    r.best_test_acc = parse_double(f[15]);
    r.best_test_ce = parse_double(f[16]);
    r.best_margin_std = parse_double(f[17]);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Json aggregate_to_json(const std::map<std::string, Stats>& agg) {
  Json j = Json::object();
  for (const auto& [name, s] : agg) j[name] = {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}};
  return j;
}

inline std::map<std::string, Stats> aggregate_from_json(const Json& j) {
  std::map<std::string, Stats> agg;
  auto num = [](const Json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  for (const auto& item : j.items()) {
    const auto& v = item.value();
    agg[item.key()] = {num(v.at("mean")), num(v.at("std")), num(v.at("min")), num(v.at("max"))};
  }
  return agg;
}

struct SweepOutcome {
  SweepSummary summary;
  SimplexEtf base;
  std::vector<EtfTransform> transforms;
  std::vector<TrainTrace> traces;
};

inline EtfTransform sweep_transform(const SweepConfig& s, int trial, std::uint64_t& seed_out) {
  if (s.transforms) {
    seed_out = 0;
    return (*s.transforms)[static_cast<std::size_t>(trial)];
  }
  seed_out = substream_seed(s.transform_base, {static_cast<std::uint64_t>(trial)});
  if (s.kind == TransformKind::Permutation)
    return EtfTransform::permute(random_permutation(s.net.data.C, seed_out));
  return EtfTransform::rotate(random_rotation(s.net.d, seed_out));
}

/// One base ETF, `trials` transforms of it, and one fit per transform with the
/// identical initialization and batch-order seed. Trials run in order; each
/// owns its parameters and random stream.
inline SweepOutcome run_sweep(const SweepConfig& s) {
  const auto& net = s.net;
  const auto data = generate(net.data);
  SweepOutcome out;
  out.base = make_etf(net.data.C, net.d, net.alpha, net.etf_seed);
  const MlpParams p0 = init_mlp(net.widths(), net.activation, net.init_seed);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (int t = 0; t < s.trials; ++t) {
    SweepRow row;
    const EtfTransform tr = sweep_transform(s, t, row.transform_seed);
    row.trial_id = t;
    row.transform_kind = to_string(tr.kind);
    const auto res = fit(p0, apply_transform(out.base, tr), data.train, net.fit, &data.test);

    row.tpt_epoch = res.tpt_epoch;
    const auto& cps = res.trace.checkpoints;
    if (!cps.empty() && !res.diverged) {
      const auto& last = cps.back();
      row.final_train_acc = last.train_acc.value_or(nan);
      row.test_acc = last.test_acc.value_or(nan);
      row.test_ce = last.test_ce.value_or(nan);
      row.p_min = last.p_min;
      row.margin_std = last.margin_std.value_or(nan);
      row.nc1 = last.nc1;
      row.nc2 = last.nc2;
      row.nc3 = last.nc3_deviation;
      row.nc4 = last.nc4_agreement;
    } else {
      row.final_train_acc = row.test_acc = row.test_ce = row.p_min = row.margin_std = nan;
      row.nc1 = row.nc2 = row.nc3 = row.nc4 = nan;
    }
    if (auto best = res.best_test_checkpoint()) {
      const auto& b = cps[*best];
      row.best_epoch = b.step;
      row.best_test_acc = *b.test_acc;
      row.best_test_ce = *b.test_ce;
      row.best_margin_std = b.margin_std.value_or(nan);
    } else {
      row.best_test_acc = row.best_test_ce = row.best_margin_std = nan;
    }
    row.included = res.reached_tpt && !res.diverged && row.final_train_acc >= net.fit.target_train_acc;
    out.summary.rows.push_back(row);
    out.transforms.push_back(tr);
    out.traces.push_back(res.trace);
  }
  out.summary.aggregate = aggregate_rows(out.summary.rows);
  return out;
}

inline int cmd_sweep(const Json& cfg, const CommandOptions& opts, std::optional<TransformKind> kind) {
  const auto s = parse_sweep_config(cfg, opts, kind);
  const auto out = run_sweep(s);

  std::string trace;
  for (std::size_t t = 0; t < out.traces.size(); ++t)
    trace += trace_to_jsonl(out.traces[t], {{"trial_id", t}});
  Json excluded = Json::array();
  for (const auto& r : out.summary.rows)
    if (!r.included) excluded.push_back(r.trial_id);
  Json transforms = Json::array();
  for (const auto& t : out.transforms) transforms.push_back(transform_to_json(t));
  const auto& acc = out.summary.aggregate.at("test_acc");
  Json result = {{"aggregate", aggregate_to_json(out.summary.aggregate)},
                 {"test_acc_gap", acc.max - acc.min},
                 {"excluded_trials", excluded},
                 {"all_reached_tpt", excluded.empty()}};

  write_file(opts.output / "summary.csv", sweep_rows_csv(out.summary.rows));
  write_file(opts.output / "trace.jsonl", trace);
  write_file(opts.output / "run.json", dump({{"command", "sweep"},
                                             {"config", sweep_config_to_json(s)},
                                             {"base_etf", etf_to_json(out.base)},
                                             {"transforms", transforms},
                                             {"result", result}}));
  write_meta(opts, "sweep");
  if (!excluded.empty())
    throw ExperimentFailure(std::to_string(excluded.size()) + " trial(s) did not reach the train accuracy target");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bounds

struct BoundsOptions {
  double delta = 0.05;
  /// Use the spectral-norm product (true) or the probe-pair estimate for L.
  bool lipschitz_upper = true;
};

struct BoundsEvaluation {
  MarginReport margins;
  LipschitzEstimate lipschitz;
  double lipschitz_used = 0.0;
  Vector rho;
  double K = 0.0;
  double B = 0.0;
  double rademacher = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  IntVector covers;
  std::optional<BoundReport> margin;
  std::optional<BoundReport> covering;
  BoundReport hoeffding;
  /// theorem name -> reason, for bounds that were not evaluated.
  std::map<std::string, std::string> skipped;
};

/// Evaluates all three bounds for features f(x; params) under classifier M.
/// K, rho and the covering supports use train and test together; margins,
/// L01 and N come from the train split.
inline BoundsEvaluation evaluate_bounds(const MlpParams& params, const Matrix& M, const LabeledDataset& train,
                                        const LabeledDataset& test, const BoundsOptions& o = {}) {
  const int C = static_cast<int>(M.cols());
  const auto z = features_of(params, train, C);
  const auto zt = features_of(params, test, C);
  BoundsEvaluation ev;
  ev.margins = compute_margins(M, z);
  ev.train_acc = accuracy(M, z);
  ev.test_acc = accuracy(M, zt);

  ev.rho = Vector::Zero(C);
  for (const auto* batch : {&z, &zt})
    for (int i = 0; i < batch->num_samples(); ++i) {
      const int y = batch->labels[static_cast<std::size_t>(i)];
      ev.rho[y] = std::max(ev.rho[y], batch->features.col(i).norm());
    }
  for (int y = 0; y < C; ++y)
    for (int k = 0; k < C; ++k)
      if (k != y) {
        const Vector diff = M.col(y) - M.col(k);
        ev.B = std::max(ev.B, diff.norm());
        for (const auto* batch : {&z, &zt})
          ev.K = std::max(ev.K, (diff.transpose() * batch->features).cwiseAbs().maxCoeff());
      }
  for (int y = 0; y < C; ++y) {
    Matrix fy(z.dim(), z.class_counts[static_cast<std::size_t>(y)]);
    Eigen::Index k = 0;
    for (int i = 0; i < z.num_samples(); ++i)
      if (z.labels[static_cast<std::size_t>(i)] == y) fy.col(k++) = z.features.col(i);
    ev.rademacher = std::max(ev.rademacher, analytic_rademacher_linear(fy, ev.B));
  }

  Matrix probe(train.inputs.rows(), train.inputs.cols() + test.inputs.cols());
  probe << train.inputs, test.inputs;
  ev.lipschitz = lipschitz_estimate(params, probe);
  ev.lipschitz_used = o.lipschitz_upper ? ev.lipschitz.upper : ev.lipschitz.lower;

  HoeffdingBoundInputs h;
  h.d = z.dim();
  h.C = C;
  h.N = z.num_samples();
  h.rho = ev.rho;
  h.normalized_margins.resize(C);
  for (int y = 0; y < C; ++y) h.normalized_margins[y] = ev.margins.min_normalized(y);
  ev.hoeffding = hoeffding_bound(h);

  if (!ev.margins.separable) {
    const std::string why = "not separable: p_min = " + format_double(ev.margins.p_min) + " <= 0";
    ev.skipped["MarginBound"] = why;
    ev.skipped["CoveringBound"] = why;
    return ev;
  }

  MarginBoundInputs mb;
  mb.gammas = ev.margins.pairwise;
  mb.class_sizes = z.class_counts;
  mb.class_priors.resize(C);
  for (int y = 0; y < C; ++y) mb.class_priors[y] = static_cast<double>(z.class_counts[static_cast<std::size_t>(y)]) / z.num_samples();
  mb.rademacher = ev.rademacher;
  mb.K = ev.K;
  mb.delta = o.delta;
  mb.l01 = empirical_margin_loss(M, z, ev.margins.pairwise);
  ev.margin = margin_bound(mb);

  if (!(ev.lipschitz_used > 0.0)) {
    ev.skipped["CoveringBound"] = "Lipschitz estimate is zero";
    return ev;
  }
  const Vector radii = covering_radii(ev.margins, ev.lipschitz_used);
  LabeledDataset both = train;
  both.inputs = probe;
  both.labels.insert(both.labels.end(), test.labels.begin(), test.labels.end());
  for (int y = 0; y < C; ++y) ev.covers.push_back(greedy_cover(class_support_points(both, y), radii[y]).count);
  ev.covering = covering_bound(ev.margins, ev.covers, z.num_samples(), C, ev.lipschitz_used);
  return ev;
}

inline SyntheticSpec default_bounds_data() {
  SyntheticSpec s;
  s.family = Family::TruncatedGaussianBlobs;
  s.C = 3;
  s.d_in = 2;
  s.per_class = 50;
  s.support_radius.assign(3, 1.5);
  s.class_std = 0.5;
  s.center_distance = 4.0;
  return s;
}

inline FitConfig default_bounds_fit() {
  FitConfig f;
  f.epochs = 200;
  f.max_extra_epochs = 50;
  f.batch_size = 32;
  return f;
}

struct BoundsConfig {
  std::uint64_t seed = 0;
  NetSetup net;
  BoundsOptions options;
  /// Pre-trained parameters; the network is fitted when absent.
  std::optional<std::string> params_path;
};

inline BoundsConfig parse_bounds_config(const Json& cfg, const CommandOptions& opts) {
  check_keys(cfg, {"seed", "data", "fit", "hidden", "activation", "etf", "init_seed", "params", "delta", "lipschitz"},
             "bounds");
  BoundsConfig b;
  b.seed = detail::master_seed(cfg, opts);
  Json c = cfg;
  if (!c.contains("hidden")) c["hidden"] = IntVector{32, 32};
  if (!c.contains("etf")) c["etf"] = Json::object();
  if (c["etf"].is_object() && !c["etf"].contains("d")) c["etf"]["d"] = 4;
  b.net = parse_net_setup(c, b.seed, default_bounds_data(), default_bounds_fit());
  read_opt(cfg, "delta", b.options.delta, "bounds");
  require(b.options.delta > 0.0 && b.options.delta < 1.0, "bounds: delta must lie in (0, 1)");
  const std::string lip = cfg.value("lipschitz", "upper");
  require(lip == "upper" || lip == "lower", "bounds: lipschitz must be 'upper' or 'lower'");
  b.options.lipschitz_upper = lip == "upper";
  if (cfg.contains("params")) b.params_path = cfg.at("params").get<std::string>();
  require(b.net.data.C >= 2 && b.net.data.C <= b.net.d, "bounds: need 2 <= C <= d for a simplex ETF");
  return b;
}

inline Json bounds_evaluation_to_json(const BoundsEvaluation& ev) {
  Json skipped = Json::object();
  for (const auto& [k, v] : ev.skipped) skipped[k] = v;
  return {{"margins", margin_report_to_json(ev.margins)},
          {"lipschitz", {{"upper", ev.lipschitz.upper}, {"lower", ev.lipschitz.lower}, {"used", ev.lipschitz_used}}},
          {"rho", vector_to_json(ev.rho)},
          {"K", ev.K},
          {"B", ev.B},
          {"rademacher", ev.rademacher},
          {"train_acc", ev.train_acc},
          {"test_acc", ev.test_acc},
          {"test_error", 1.0 - ev.test_acc},
          {"covers", ev.covers},
          {"skipped", skipped}};
}

inline constexpr const char* kRademacherNote =
    "rademacher: B * sqrt(sum ||z||^2) / N_y for the linear class {z -> <v, z> : ||v|| <= B} on frozen "
    "features, B = max ||M_y - M_y'||, maximized over classes";

inline int cmd_bounds(const Json& cfg, const CommandOptions& opts) {
  const auto b = parse_bounds_config(cfg, opts);
  const auto data = generate(b.net.data);
  const auto etf = make_etf(b.net.data.C, b.net.d, b.net.alpha, b.net.etf_seed);
  MlpParams params;
  std::optional<FitResult> fitted;
  if (b.params_path) {
    params = mlp_from_json(parse_json(read_file(detail::resolve(opts, *b.params_path)), "params"));
  } else {
    fitted = fit(init_mlp(b.net.widths(), b.net.activation, b.net.init_seed), etf, data.train, b.net.fit, &data.test);
    if (fitted->diverged) throw ExperimentFailure("feature network training diverged");
    params = fitted->params;
  }
  require(params.input_dim() == b.net.data.d_in && params.output_dim() == b.net.d,
          "bounds: parameter shapes do not match data and classifier");
  const auto ev = evaluate_bounds(params, etf.matrix, data.train, data.test, b.options);

  const auto bdir = opts.output / "bounds";
  std::filesystem::remove_all(bdir);
  std::string csv = "theorem,status,value\n";
  auto emit = [&](const std::optional<BoundReport>& r, const char* name, const char* file) {
    if (r) {
      Json j = bound_report_to_json(*r);
      if (r->theorem == BoundKind::MarginBound) j["notes"] = kRademacherNote;
      write_file(bdir / file, dump(j));
      csv += std::string(name) + ",evaluated," + format_double(r->value) + "\n";
    } else {
      csv += std::string(name) + ",skipped,nan\n";
    }
  };
  emit(ev.margin, "MarginBound", "margin_bound.json");
  emit(ev.covering, "CoveringBound", "covering_bound.json");
  emit(ev.hoeffding, "HoeffdingBound", "hoeffding_bound.json");
  if (!ev.skipped.empty()) {
    Json records = Json::array();
    for (const auto& [k, v] : ev.skipped) records.push_back({{"theorem", k}, {"skipped", true}, {"reason", v}});
    write_file(bdir / "skipped.json", dump(records));
  }

  Json config = net_setup_to_json(b.net);
  config["seed"] = b.seed;
  config["delta"] = b.options.delta;
  config["lipschitz"] = b.options.lipschitz_upper ? "upper" : "lower";
  if (b.params_path) config["params"] = *b.params_path;
  Json result = bounds_evaluation_to_json(ev);
  if (fitted) {
    result["reached_tpt"] = fitted->reached_tpt;
    result["tpt_epoch"] = fitted->tpt_epoch;
    write_file(opts.output / "trace.jsonl", trace_to_jsonl(fitted->trace));
    write_file(opts.output / "params.json", dump(mlp_to_json(params)));
  }
  write_file(opts.output / "summary.csv", csv);
  write_file(opts.output / "run.json", dump({{"command", "bounds"}, {"config", config}, {"result", result}}));
  write_meta(opts, "bounds");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// check-lemmas

struct NearestSampleGrid {
  std::vector<double> epsilons{0.2, 0.3};
  IntVector N{200, 500};
  int trials = 100;
  int repeats = 100;
  /// Fraction of repeats that must pass for the row to pass.
  double pass_fraction = 0.99;
  /// The cover count is taken from a greedy cover of a resolution^2 grid.
  int grid_resolution = 100;
};

struct HoeffdingGrid {
  IntVector D{1, 2, 5};
  IntVector n{10, 100};
  std::vector<double> epsilons{0.3, 0.5, 1.0};
  double rho = 1.0;
  int trials = 10000;
};

struct LemmaConfig {
  std::uint64_t seed = 0;
  double bound_scale = 1.0;
  NearestSampleGrid nearest;
  HoeffdingGrid hoeffding;
};

inline LemmaConfig parse_lemma_config(const Json& cfg, const CommandOptions& opts) {
  check_keys(cfg, {"seed", "bound_scale", "nearest_sample", "hoeffding"}, "check-lemmas");
  LemmaConfig c;
  c.seed = detail::master_seed(cfg, opts);
  read_opt(cfg, "bound_scale", c.bound_scale, "check-lemmas");
  require(c.bound_scale > 0.0, "check-lemmas: bound_scale must be positive");
  const Json ns = detail::section(cfg, "nearest_sample");
  check_keys(ns, {"epsilons", "N", "trials", "repeats", "pass_fraction", "grid_resolution"}, "nearest_sample");
  read_opt(ns, "epsilons", c.nearest.epsilons, "nearest_sample");
  read_opt(ns, "N", c.nearest.N, "nearest_sample");
  read_opt(ns, "trials", c.nearest.trials, "nearest_sample");
  read_opt(ns, "repeats", c.nearest.repeats, "nearest_sample");
  read_opt(ns, "pass_fraction", c.nearest.pass_fraction, "nearest_sample");
  read_opt(ns, "grid_resolution", c.nearest.grid_resolution, "nearest_sample");
  const Json hs = detail::section(cfg, "hoeffding");
  check_keys(hs, {"D", "n", "epsilons", "rho", "trials"}, "hoeffding");
  read_opt(hs, "D", c.hoeffding.D, "hoeffding");
  read_opt(hs, "n", c.hoeffding.n, "hoeffding");
  read_opt(hs, "epsilons", c.hoeffding.epsilons, "hoeffding");
  read_opt(hs, "rho", c.hoeffding.rho, "hoeffding");
  read_opt(hs, "trials", c.hoeffding.trials, "hoeffding");
  if (opts.trials) c.nearest.trials = c.hoeffding.trials = *opts.trials;
  require(c.nearest.trials >= 1 && c.hoeffding.trials >= 1, "check-lemmas: trials must be >= 1");
  require(c.nearest.repeats >= 1, "check-lemmas: repeats must be >= 1");
  require(c.nearest.pass_fraction > 0.0 && c.nearest.pass_fraction <= 1.0,
          "check-lemmas: pass_fraction must lie in (0, 1]");
  require(c.nearest.grid_resolution >= 2, "check-lemmas: grid_resolution must be >= 2");
  for (double e : c.nearest.epsilons) require(e > 0.0, "check-lemmas: epsilons must be positive");
  return c;
}

inline Json lemma_config_to_json(const LemmaConfig& c) {
  return {{"seed", c.seed},
          {"bound_scale", c.bound_scale},
          {"nearest_sample",
           {{"epsilons", c.nearest.epsilons}, {"N", c.nearest.N}, {"trials", c.nearest.trials},
            {"repeats", c.nearest.repeats}, {"pass_fraction", c.nearest.pass_fraction},
            {"grid_resolution", c.nearest.grid_resolution}}},
          {"hoeffding",
           {{"D", c.hoeffding.D}, {"n", c.hoeffding.n}, {"epsilons", c.hoeffding.epsilons},
            {"rho", c.hoeffding.rho}, {"trials", c.hoeffding.trials}}}};
}

struct LemmaRow {
  std::string lemma;  // nearest_sample | hoeffding
  int D = 0;
  int n = 0;  // N reference samples for nearest_sample
  double epsilon = 0.0;
  int trials = 0;
  int repeats = 1;
  double violation_rate = 0.0;  // mean over repeats
  double bound = 0.0;
  int passes = 0;
  bool passed = false;
};

/// Greedy cover count of a regular res x res grid on the unit square.
inline int unit_square_cover_count(double epsilon, int res) {
  Matrix grid(2, static_cast<Eigen::Index>(res) * res);
  Eigen::Index k = 0;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) grid.col(k++) << i / (res - 1.0), j / (res - 1.0);
  return greedy_cover(grid, epsilon).count;
}

inline std::vector<LemmaRow> run_lemma_checks(const LemmaConfig& c) {
  std::vector<LemmaRow> rows;
  auto sampler = [](Rng& rng) {
    Vector v(2);
    v << rng.uniform(), rng.uniform();
    return v;
  };
  for (double eps : c.nearest.epsilons) {
    const int cover = unit_square_cover_count(eps, c.nearest.grid_resolution);
    for (int N : c.nearest.N) {
      LemmaRow r;
      r.lemma = "nearest_sample";
      r.D = 2;
      r.n = N;
      r.epsilon = eps;
      r.trials = c.nearest.trials;
      r.repeats = c.nearest.repeats;
      std::vector<double> rates;
      for (int rep = 0; rep < c.nearest.repeats; ++rep) {
        const auto chk = check_nearest_sample_lemma(sampler, N, eps, cover, c.nearest.trials,
                                                    substream_seed(c.seed, {0x6e, static_cast<std::uint64_t>(N),
                                                                            static_cast<std::uint64_t>(rep)}),
                                                    c.bound_scale);
        rates.push_back(chk.violation_rate);
        r.bound = chk.bound;
        r.passes += chk.passed;
      }
      r.violation_rate = detail::mean_of(rates);
      r.passed = r.passes >= static_cast<int>(std::ceil(c.nearest.pass_fraction * c.nearest.repeats - 1e-9));
      rows.push_back(r);
    }
  }
  for (int D : c.hoeffding.D)
    for (int n : c.hoeffding.n)
      for (double eps : c.hoeffding.epsilons) {
        const auto chk = check_highdim_hoeffding(D, c.hoeffding.rho, n, eps, c.hoeffding.trials,
                                                 substream_seed(c.seed, {0x68}), c.bound_scale);
        LemmaRow r;
        r.lemma = "hoeffding";
        r.D = D;
        r.n = n;
        r.epsilon = eps;
        r.trials = c.hoeffding.trials;
        r.violation_rate = chk.violation_rate;
        r.bound = chk.bound;
        r.passes = chk.passed;
        r.passed = chk.passed;
        rows.push_back(r);
      }
  return rows;
}

inline std::string lemma_rows_csv(const std::vector<LemmaRow>& rows) {
  std::string out = "lemma,D,n,epsilon,trials,repeats,violation_rate,bound,passes,passed\n";
  for (const auto& r : rows)
    out += r.lemma + "," + std::to_string(r.D) + "," + std::to_string(r.n) + "," + format_double(r.epsilon) + "," +
           std::to_string(r.trials) + "," + std::to_string(r.repeats) + "," + format_double(r.violation_rate) + "," +
           format_double(r.bound) + "," + std::to_string(r.passes) + "," + (r.passed ? "1" : "0") + "\n";
  return out;
}

inline int cmd_check_lemmas(const Json& cfg, const CommandOptions& opts) {
  const auto c = parse_lemma_config(cfg, opts);
  const auto rows = run_lemma_checks(c);
  int failed = 0;
  for (const auto& r : rows) failed += !r.passed;
  write_file(opts.output / "summary.csv", lemma_rows_csv(rows));
  write_file(opts.output / "run.json", dump({{"command", "check-lemmas"},
                                             {"config", lemma_config_to_json(c)},
                                             {"result", {{"rows", rows.size()}, {"failed", failed}}}}));
  write_meta(opts, "check-lemmas");
  if (failed > 0) throw ExperimentFailure(std::to_string(failed) + " lemma check row(s) failed");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-data

inline int cmd_gen_data(const Json& cfg, const CommandOptions& opts) {
  check_keys(cfg, {"seed", "data"}, "gen-data");
  const std::uint64_t master = detail::master_seed(cfg, opts);
  const Json data = detail::section(cfg, "data");
  SyntheticSpec spec = spec_from_json(data);
  if (!data.contains("seed")) spec.seed = substream_seed(master, {1});
  const auto pair = generate(spec);
  write_file(opts.output / "dataset.csv", dataset_to_csv(pair));
  write_file(opts.output / "run.json",
             dump({{"command", "gen-data"},
                   {"config", {{"seed", master}, {"data", spec_to_json(spec)}}},
                   {"result", {{"train", pair.train.num_samples()}, {"test", pair.test.num_samples()}}}}));
  write_meta(opts, "gen-data");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// etf make | transform | check

inline Json deviation_to_json(const EtfDeviation& d) {
  return {{"norm_spread", d.norm_spread}, {"angle_spread", d.angle_spread}, {"max_cosine_error", d.max_cosine_error}};
}

inline int cmd_etf_make(const Json& cfg, const CommandOptions& opts) {
  check_keys(cfg, {"C", "d", "alpha", "seed"}, "etf make");
  int C = 4, d = 8;
  double alpha = 1.0;
  read_opt(cfg, "C", C, "etf make");
  read_opt(cfg, "d", d, "etf make");
  read_opt(cfg, "alpha", alpha, "etf make");
  const std::uint64_t seed = detail::master_seed(cfg, opts);
  const auto etf = make_etf(C, d, alpha, seed);
  write_file(opts.output / "etf.json", dump(etf_to_json(etf)));
  write_file(opts.output / "run.json",
             dump({{"command", "etf make"},
                   {"config", {{"C", C}, {"d", d}, {"alpha", alpha}, {"seed", seed}}},
                   {"result", {{"deviation", deviation_to_json(etf_deviation(etf.matrix))}}}}));
  write_meta(opts, "etf make");
  return kExitOk;
}

inline int cmd_etf_transform(const Json& cfg, const CommandOptions& opts) {
  check_keys(cfg, {"etf", "kind", "seed", "transform"}, "etf transform");
  require(cfg.contains("etf"), "etf transform: missing 'etf' (object or path)");
  const auto etf = etf_from_json(detail::inline_or_file(cfg.at("etf"), opts, "etf"));
  const std::uint64_t seed = detail::master_seed(cfg, opts);
  EtfTransform t;
  if (cfg.contains("transform")) {
    t = transform_from_json(cfg.at("transform"));
  } else {
    const auto kind = kind_from_string(cfg.value("kind", "perm"));
    t = kind == TransformKind::Permutation ? EtfTransform::permute(random_permutation(etf.num_classes, seed))
                                           : EtfTransform::rotate(random_rotation(etf.dim, seed));
  }
  const auto out = apply_transform(etf, t);
  write_file(opts.output / "etf.json", dump(etf_to_json(out)));
  write_file(opts.output / "transform.json", dump(transform_to_json(t)));
  write_file(opts.output / "run.json",
             dump({{"command", "etf transform"},
                   {"config", {{"seed", seed}, {"kind", to_string(t.kind)}}},
                   {"result", {{"equivalence", to_string(check_equivalence(etf, out))},
                               {"deviation", deviation_to_json(etf_deviation(out.matrix))}}}}));
  write_meta(opts, "etf transform");
  return kExitOk;
}

inline int cmd_etf_check(const Json& cfg, const CommandOptions& opts, std::ostream& log = std::cout) {
  check_keys(cfg, {"a", "b", "tol"}, "etf check");
  require(cfg.contains("a") && cfg.contains("b"), "etf check: need 'a' and 'b' (objects or paths)");
  const auto a = etf_from_json(detail::inline_or_file(cfg.at("a"), opts, "a"));
  const auto b = etf_from_json(detail::inline_or_file(cfg.at("b"), opts, "b"));
  double tol = kEtfTolerance;
  read_opt(cfg, "tol", tol, "etf check");
  require(tol > 0.0, "etf check: tol must be positive");
  const auto eq = check_equivalence(a, b, tol);
  log << to_string(eq) << "\n";
  write_file(opts.output / "run.json", dump({{"command", "etf check"},
                                             {"config", {{"tol", tol}}},
                                             {"result", {{"equivalence", to_string(eq)}}}}));
  write_meta(opts, "etf check");
  return kExitOk;
}

}  // namespace ncgen
