#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ace/attack.hpp"
#include "ace/config.hpp"
#include "ace/confidence.hpp"
#include "ace/dataset.hpp"
#include "ace/errors.hpp"
#include "ace/format.hpp"
#include "ace/metrics.hpp"
#include "ace/model_io.hpp"
#include "ace/parallel.hpp"
#include "ace/report.hpp"
#include "ace/selnet.hpp"
#include "ace/svg.hpp"
#include "ace/train.hpp"

namespace ace {

// ---------------------------------------------------------------------------
// Configuration

struct VictimSpec {
  std::vector<std::size_t> hidden{32, 32};
  double mc_dropout = 0.1;  // dropout rate of the MC-dropout victim
  SgdConfig sgd{0.05, 30, 32, 0, 0.9};
};

struct ProxySpec {
  std::size_t size = 5;
  // Architectures cycled through by the "foreign" proxy members.
  std::vector<std::vector<std::size_t>> foreign_hidden{{64}, {16, 16}, {48, 24}};
  // false: proxies are trained on the validation split instead of the victim's data.
  bool shared_data = true;
};

struct ScorerSpec {
  ScorerKind kind = ScorerKind::softmax_response;
  std::size_t passes = 10;
};

struct AttackSpec {
  std::vector<double> epsilons{0.01, 0.05, 0.2};
  double decay = 0.5;
  int max_iterations = 15;
  AttackMode mode = AttackMode::white_box;
  AttackTarget target = AttackTarget::direct;
  std::optional<std::pair<double, double>> clamp;
  // Use the gradient source's own prediction in place of the true label.
  bool proxy_truth = false;
};

struct SelNetSpec {
  double coverage = 0.7;
  double lambda = 32.0;
  double alpha = 0.5;
  std::vector<std::size_t> selector_hidden{16};
};

struct BenchSpec {
  std::vector<std::size_t> ensemble_sizes{1, 3, 5};
  std::vector<std::size_t> mc_passes{10, 30};
  std::size_t variance_passes = 10;
  std::size_t histogram_bins = 20;
  double trend_slack = 0.1;
};

struct ExperimentConfig {
  std::uint64_t seed = 2024;
  std::size_t threads = 0;
  std::string out_dir = "ace_run";
  DatasetSpec dataset;
  VictimSpec victim;
  ProxySpec proxy;
  ScorerSpec scorer;
  AttackSpec attack;
  SelNetSpec selnet;
  BenchSpec bench;
};

namespace detail {

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_exact(v[i]);
  return s;
}

inline std::vector<std::vector<std::size_t>> parse_architectures(const std::string& text) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& part : split(text, ';')) {
    if (part.empty()) continue;
    out.push_back(parse_size_list(part));
  }
  return out;
}

inline std::string join_architectures(const std::vector<std::vector<std::size_t>>& archs) {
  std::string s;
  for (std::size_t i = 0; i < archs.size(); ++i) s += (i ? ";" : "") + join(archs[i]);
  return s;
}

}  // namespace detail

/// Reads an experiment config. Unknown keys are rejected. The `seed` and
/// `out` keys of [experiment] may be overridden by the caller afterwards.
inline ExperimentConfig parse_experiment_config(const ConfigFile& f) {
  ExperimentConfig c;
  c.seed = f.get_unsigned("experiment.seed", c.seed);
  c.threads = f.get_unsigned("experiment.threads", c.threads);
  c.out_dir = f.get("experiment.out", c.out_dir);

  auto& d = c.dataset;
  const std::string kind = f.get("dataset.kind", "blobs");
  if (kind == "blobs") {
    d.kind = Generator::blobs;
  } else if (kind == "rings") {
    d.kind = Generator::rings;
  } else {
    throw ConfigError("unknown dataset kind '" + kind + "'");
  }
  d.n_train = f.get_unsigned("dataset.n_train", d.n_train);
  d.n_validation = f.get_unsigned("dataset.n_validation", d.n_validation);
  d.n_test = f.get_unsigned("dataset.n_test", d.n_test);
  d.dim = f.get_unsigned("dataset.dim", d.dim);
  d.classes = f.get_unsigned("dataset.classes", d.classes);
  d.margin = f.get_double("dataset.margin", d.margin);
  d.noise = f.get_double("dataset.noise", d.noise);
  d.standardize = f.get_bool("dataset.standardize", d.standardize);
  validate(d);

  auto& v = c.victim;
  v.hidden = f.get_sizes("victim.hidden", v.hidden);
  v.mc_dropout = f.get_double("victim.mc_dropout", v.mc_dropout);
  v.sgd.learning_rate = f.get_double("victim.lr", v.sgd.learning_rate);
  v.sgd.epochs = static_cast<int>(f.get_unsigned("victim.epochs", v.sgd.epochs));
  v.sgd.batch = f.get_unsigned("victim.batch", v.sgd.batch);
  v.sgd.momentum = f.get_double("victim.momentum", v.sgd.momentum);

  auto& p = c.proxy;
  p.size = f.get_unsigned("proxy.size", p.size);
  if (f.has("proxy.foreign_hidden")) p.foreign_hidden = detail::parse_architectures(f.get("proxy.foreign_hidden", ""));
  p.shared_data = f.get_bool("proxy.shared_data", p.shared_data);
  if (p.size < 1) throw ConfigError("proxy.size must be >= 1");
  if (p.foreign_hidden.empty()) throw ConfigError("proxy.foreign_hidden needs at least one architecture");

  c.scorer.kind = parse_scorer_kind(f.get("scorer.kind", to_string(c.scorer.kind)));
  c.scorer.passes = f.get_unsigned("scorer.passes", c.scorer.passes);

  auto& a = c.attack;
  a.epsilons = f.get_doubles("attack.epsilons", a.epsilons);
  a.decay = f.get_double("attack.decay", a.decay);
  a.max_iterations = static_cast<int>(f.get_unsigned("attack.max_iterations", a.max_iterations));
  a.mode = parse_attack_mode(f.get("attack.mode", to_string(a.mode)));
  a.target = parse_attack_target(f.get("attack.target", to_string(a.target)));
  const std::string clamp = f.get("attack.clamp", "none");
  if (clamp != "none") {
    const auto bounds = parse_double_list(clamp);
    if (bounds.size() != 2 || !(bounds[0] < bounds[1])) throw ConfigError("attack.clamp expects 'lo,hi' or 'none'");
    a.clamp = std::make_pair(bounds[0], bounds[1]);
  }
  a.proxy_truth = f.get_bool("attack.proxy_truth", a.proxy_truth);
  for (double e : a.epsilons) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw ConfigError("epsilons must be finite and >= 0");
  }

  auto& s = c.selnet;
  s.coverage = f.get_double("selnet.coverage", s.coverage);
  s.lambda = f.get_double("selnet.lambda", s.lambda);
  s.alpha = f.get_double("selnet.alpha", s.alpha);
  s.selector_hidden = f.get_sizes("selnet.selector_hidden", s.selector_hidden);

  auto& b = c.bench;
  b.ensemble_sizes = f.get_sizes("bench.ensemble_sizes", b.ensemble_sizes);
  b.mc_passes = f.get_sizes("bench.mc_passes", b.mc_passes);
  b.variance_passes = f.get_unsigned("bench.variance_passes", b.variance_passes);
  b.histogram_bins = f.get_unsigned("bench.histogram_bins", b.histogram_bins);
  b.trend_slack = f.get_double("bench.trend_slack", b.trend_slack);
  for (auto m : b.ensemble_sizes) {
    if (m < 1) throw ConfigError("ensemble sizes must be >= 1");
  }

  f.reject_unknown();
  return c;
}

// Canonical text form; hashing it identifies a configuration. The output
// location and thread count do not affect results and are left out.
inline std::string canonical_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[experiment]\nseed = " << c.seed << "\n\n";
  const auto& d = c.dataset;
  os << "[dataset]\nkind = " << (d.kind == Generator::blobs ? "blobs" : "rings") << "\nn_train = " << d.n_train
     << "\nn_validation = " << d.n_validation << "\nn_test = " << d.n_test << "\ndim = " << d.dim
     << "\nclasses = " << d.classes << "\nmargin = " << format_exact(d.margin)
     << "\nnoise = " << format_exact(d.noise) << "\nstandardize = " << (d.standardize ? "true" : "false") << "\n\n";
  const auto& v = c.victim;
  os << "[victim]\nhidden = " << detail::join(v.hidden) << "\nmc_dropout = " << format_exact(v.mc_dropout)
     << "\nlr = " << format_exact(v.sgd.learning_rate) << "\nepochs = " << v.sgd.epochs
     << "\nbatch = " << v.sgd.batch << "\nmomentum = " << format_exact(v.sgd.momentum) << "\n\n";
  os << "[proxy]\nsize = " << c.proxy.size << "\nforeign_hidden = " << detail::join_architectures(c.proxy.foreign_hidden)
     << "\nshared_data = " << (c.proxy.shared_data ? "true" : "false") << "\n\n";
  os << "[scorer]\nkind = " << to_string(c.scorer.kind) << "\npasses = " << c.scorer.passes << "\n\n";
  const auto& a = c.attack;
  os << "[attack]\nepsilons = " << detail::join(a.epsilons) << "\ndecay = " << format_exact(a.decay)
     << "\nmax_iterations = " << a.max_iterations << "\nmode = " << to_string(a.mode)
     << "\ntarget = " << to_string(a.target) << "\nclamp = "
     << (a.clamp ? format_exact(a.clamp->first) + "," + format_exact(a.clamp->second) : std::string("none"))
     << "\nproxy_truth = " << (a.proxy_truth ? "true" : "false") << "\n\n";
  const auto& s = c.selnet;
  os << "[selnet]\ncoverage = " << format_exact(s.coverage) << "\nlambda = " << format_exact(s.lambda)
     << "\nalpha = " << format_exact(s.alpha) << "\nselector_hidden = " << detail::join(s.selector_hidden) << "\n\n";
  const auto& b = c.bench;
  os << "[bench]\nensemble_sizes = " << detail::join(b.ensemble_sizes) << "\nmc_passes = " << detail::join(b.mc_passes)
     << "\nvariance_passes = " << b.variance_passes << "\nhistogram_bins = " << b.histogram_bins
     << "\ntrend_slack = " << format_exact(b.trend_slack) << "\n";
  return os.str();
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(canonical_config(c)); }

// ---------------------------------------------------------------------------
// Failures tagged with the stage they happened in.

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, int exit_code)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)), exit_code_(exit_code) {}

  const std::string& stage() const noexcept { return stage_; }
  int exit_code() const noexcept { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitCheckFailed = 4;

template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const NumericError& e) {
    throw StageError(stage, e.what(), kExitNumeric);
  } catch (const Error& e) {
    throw StageError(stage, e.what(), kExitConfig);
  }
}

// ---------------------------------------------------------------------------
// Scoring and one epsilon sweep.

// Per-sample evaluation stream: identical for the clean and every attacked
// copy of sample i, so MC scorers compare like with like.
inline Rng eval_rng(std::uint64_t seed, std::size_t index) {
  return Rng(derive_seed(seed, {fnv1a("eval"), index}));
}

inline std::vector<ScoredItem> score_dataset(const ConfidenceScorer& scorer, const LabeledDataset& data,
                                             std::uint64_t seed, std::size_t threads = 0) {
  std::vector<ScoredItem> items(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    Rng rng = eval_rng(seed, i);
    items[i] = score_item(scorer, data.features[i], data.labels[i], rng, i);
  });
  return items;
}

// Risk of the most confident fraction `coverage` (the RC point with the
// largest coverage not above it); NaN if no point qualifies.
inline double selective_risk_at_coverage(std::span<const ScoredItem> items, double coverage) {
  const RCCurve curve = rc_curve(items);
  double risk = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : curve.points) {
    if (p.coverage <= coverage + 1e-12) risk = p.risk;
  }
  return risk;
}

struct SweepRow {
  EvalReport report;
  AttackSummary attack;
  RCCurve curve;
  ConfidenceHistograms histograms;
  std::vector<AttackOutcome> outcomes;
  std::vector<ScoredItem> items;
};

struct Sweep {
  std::string name;
  std::string title;
  std::vector<SweepRow> rows;  // clean row first, then ascending epsilon

  ResultTable table() const {
    ResultTable t{name, title, {}};
    for (const auto& r : rows) t.rows.push_back(r.report);
    return t;
  }
};

struct SweepSettings {
  std::vector<double> epsilons;  // the clean (0) row is added automatically
  double decay = 0.5;
  int max_iterations = 15;
  std::optional<ClampDomain> clamp;
  bool proxy_truth = false;
  std::size_t histogram_bins = 20;
  // When set, each row also reports the selective risk at this coverage.
  std::optional<double> selective_coverage;
  bool keep_details = false;  // retain per-sample outcomes/items
};

/// Attacks `test` at every epsilon (plus the clean baseline) and evaluates
/// the victim scorer on each attacked copy. The victim is touched by the
/// attack only through a counting label oracle.
inline Sweep run_sweep(const std::string& name, const std::string& title, const ConfidenceScorer& victim,
                       const ConfidenceScorer& grad_source, const LabeledDataset& test,
                       const SweepSettings& settings, std::uint64_t seed, std::size_t threads = 0) {
  victim.validate();
  grad_source.validate();
  Sweep sweep{name, title, {}};
  std::vector<double> grid{0.0};
  for (double e : settings.epsilons) {
    if (e > 0.0) grid.push_back(e);
  }
  std::sort(grid.begin() + 1, grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  LabeledDataset attack_targets = test;
  if (settings.proxy_truth) {
    for (std::size_t i = 0; i < test.size(); ++i) attack_targets.labels[i] = predict(grad_source, test.features[i]);
  }

  const std::uint64_t sweep_seed = derive_seed(seed, {fnv1a(name)});
  for (std::size_t k = 0; k < grid.size(); ++k) {
    AttackConfig cfg;
    cfg.epsilon = grid[k];
    cfg.epsilon_decay = settings.decay;
    cfg.max_iterations = settings.max_iterations;
    cfg.clamp = settings.clamp;
    const LabelOracle oracle = label_oracle(victim);
    AttackRun run = attack_dataset(oracle, grad_source, attack_targets, cfg, derive_seed(sweep_seed, {k}), threads);
    const LabeledDataset attacked = apply_outcomes(test, run.outcomes);

    SweepRow row;
    row.items = score_dataset(victim, attacked, seed, threads);
    row.report = evaluate_items(row.items, grid[k], run.summary.mean_effective_epsilon);
    if (settings.selective_coverage) {
      row.report.selective_risk = selective_risk_at_coverage(row.items, *settings.selective_coverage);
    }
    row.attack = run.summary;
    row.curve = rc_curve(row.items);
    row.histograms = confidence_histograms(row.items, settings.histogram_bins);
    if (settings.keep_details) {
      row.outcomes = std::move(run.outcomes);
    } else {
      row.items.clear();
      row.items.shrink_to_fit();
    }
    sweep.rows.push_back(std::move(row));
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// Output bookkeeping.

/// Writes files below a root directory and remembers them; `discard()`
/// removes everything written so far.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  void write(const std::string& relative, const std::string& content) {
    const auto path = root_ / relative;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write '" + path.string() + "'");
    os << content;
    if (!os) throw ConfigError("failed writing '" + path.string() + "'");
    files_.push_back(relative);
  }

  const std::vector<std::string>& files() const { return files_; }

  void discard() noexcept {
    std::error_code ec;
    for (const auto& f : files_) std::filesystem::remove(root_ / f, ec);
    files_.clear();
  }

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

template <typename Fn>
std::string to_text(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

inline void write_histograms_csv(std::ostream& os, const Sweep& sweep) {
  os << "epsilon,bin,lo,hi,correct,incorrect\n";
  for (const auto& row : sweep.rows) {
    const auto& h = row.histograms;
    const std::size_t bins = h.correct.size();
    const double width = bins ? (h.hi - h.lo) / static_cast<double>(bins) : 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      os << format_exact(row.report.epsilon) << ',' << b << ',' << format_exact(h.lo + width * static_cast<double>(b))
         << ',' << format_exact(h.lo + width * static_cast<double>(b + 1)) << ',' << h.correct[b] << ','
         << h.incorrect[b] << '\n';
    }
  }
}

inline std::vector<NamedCurve> sweep_curves(const Sweep& sweep) {
  std::vector<NamedCurve> curves;
  const auto& clean = sweep.rows.front();
  const std::size_t n = clean.histograms.correct.empty()
                            ? 0
                            : std::accumulate(clean.histograms.correct.begin(), clean.histograms.correct.end(),
                                              std::size_t{0}) +
                                  std::accumulate(clean.histograms.incorrect.begin(),
                                                  clean.histograms.incorrect.end(), std::size_t{0});
  const std::size_t n_incorrect =
      std::accumulate(clean.histograms.incorrect.begin(), clean.histograms.incorrect.end(), std::size_t{0});
  for (const auto& row : sweep.rows) {
    curves.push_back({row.report.epsilon == 0.0 ? "clean" : "eps=" + format_epsilon(row.report.epsilon),
                      row.curve, row.report.aurc_x1000, false});
  }
  if (n > 0) {
    RCCurve worst = worst_case_rc(n - n_incorrect, n_incorrect);
    const double area = 1000.0 * curve_area(worst, n);
    curves.push_back({"worst case", std::move(worst), area, true});
  }
  return curves;
}

inline void write_sweep(OutputDir& out, const Sweep& sweep) {
  const ResultTable table = sweep.table();
  out.write(sweep.name + ".csv", to_text([&](std::ostream& os) { write_report_csv(os, table); }));
  for (std::size_t k = 0; k < sweep.rows.size(); ++k) {
    out.write(sweep.name + "_rc_" + std::to_string(k) + ".csv",
              to_text([&](std::ostream& os) { write_rc_csv(os, sweep.rows[k].curve); }));
  }
  out.write(sweep.name + "_hist.csv", to_text([&](std::ostream& os) { write_histograms_csv(os, sweep); }));
  out.write(sweep.name + "_rc.svg",
            to_text([&](std::ostream& os) { render_rc_svg(os, sweep_curves(sweep), sweep.title); }));
}

// ---------------------------------------------------------------------------
// The experiment matrix.

struct TrendCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::vector<Sweep> sweeps;
  std::vector<TrendCheck> trends;
  std::vector<std::string> files;
  double selnet_calibrated_threshold = 0.0;
  double selnet_test_coverage = 0.0;

  const Sweep* find(const std::string& name) const {
    for (const auto& s : sweeps) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
};

inline std::string manifest_text(const RunManifest& m) {
  std::ostringstream os;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(m.config_hash));
  os << "config_hash " << hash << '\n';
  for (const auto& s : m.sweeps) {
    os << "table " << s.name << " rows " << s.rows.size() << '\n';
    for (const auto& r : s.rows) {
      os << "  epsilon " << format_exact(r.report.epsilon) << " queries " << r.attack.query_count
         << " perturbed " << format_exact(r.attack.fraction_perturbed) << '\n';
    }
  }
  os << "selnet_threshold " << format_exact(m.selnet_calibrated_threshold) << '\n'
     << "selnet_test_coverage " << format_exact(m.selnet_test_coverage) << '\n';
  for (const auto& t : m.trends) os << "trend " << t.name << ' ' << (t.pass ? "pass" : "warn") << '\n';
  for (const auto& f : m.files) os << "file " << f << '\n';
  return os.str();
}

// Reads the table names listed in a manifest.
inline std::vector<std::string> manifest_tables(std::istream& is) {
  std::vector<std::string> names;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    std::string key, name;
    ss >> key >> name;
    if (key == "table") names.push_back(name);
  }
  return names;
}

struct TrainedModels {
  NetworkHandle victim;
  std::vector<NetworkHandle> ensemble;  // max(ensemble_sizes) members
  std::vector<NetworkHandle> proxy;     // same architecture as the victim
  std::vector<NetworkHandle> foreign;   // different architectures
  NetworkHandle mc;
  SelNetHandle selnet;
};

inline TrainedModels train_models(const ExperimentConfig& cfg, const DatasetSplits& data) {
  const auto& train = data.train;
  const auto& proxy_data = cfg.proxy.shared_data ? data.train : data.validation;
  if (proxy_data.empty()) throw ConfigError("proxy training split is empty");
  const std::size_t d = cfg.dataset.dim;
  const std::size_t k = cfg.dataset.classes;
  const std::size_t max_ensemble =
      *std::max_element(cfg.bench.ensemble_sizes.begin(), cfg.bench.ensemble_sizes.end());

  struct Job {
    std::vector<LayerSpec> specs;
    const LabeledDataset* data;
    std::uint64_t seed;
  };
  auto sgd_seed = [&](const char* family, std::size_t j) { return derive_seed(cfg.seed, {fnv1a(family), j}); };
  std::vector<Job> jobs;
  jobs.push_back({mlp_specs(d, cfg.victim.hidden, k), &train, sgd_seed("victim", 0)});
  for (std::size_t j = 0; j < max_ensemble; ++j) {
    jobs.push_back({mlp_specs(d, cfg.victim.hidden, k), &train, sgd_seed("ensemble", j)});
  }
  for (std::size_t j = 0; j < cfg.proxy.size; ++j) {
    jobs.push_back({mlp_specs(d, cfg.victim.hidden, k), &proxy_data, sgd_seed("proxy", j)});
  }
  for (std::size_t j = 0; j < cfg.proxy.size; ++j) {
    const auto& arch = cfg.proxy.foreign_hidden[j % cfg.proxy.foreign_hidden.size()];
    jobs.push_back({mlp_specs(d, arch, k), &proxy_data, sgd_seed("foreign", j)});
  }
  jobs.push_back({mlp_specs(d, cfg.victim.hidden, k, cfg.victim.mc_dropout), &train, sgd_seed("mc", 0)});

  // One extra slot for the selnet so it trains alongside the MLPs.
  std::vector<NetworkHandle> nets(jobs.size());
  SelNetHandle selnet;
  parallel_for(jobs.size() + 1, cfg.threads, [&](std::size_t i) {
    if (i == jobs.size()) {
      SelNetArchitecture arch{d, cfg.victim.hidden, cfg.selnet.selector_hidden, k};
      SelNetTrainConfig sc;
      sc.target_coverage = cfg.selnet.coverage;
      sc.constraint_weight = cfg.selnet.lambda;
      sc.aux_mix = cfg.selnet.alpha;
      sc.sgd = cfg.victim.sgd;
      sc.sgd.seed = sgd_seed("selnet", 0);
      selnet = std::make_shared<const SelNetParams>(selnet_train(arch, train, sc).params);
      return;
    }
    SgdConfig sgd = cfg.victim.sgd;
    sgd.seed = jobs[i].seed;
    nets[i] = std::make_shared<const Network>(train_sgd(jobs[i].specs, *jobs[i].data, sgd).params);
  });

  TrainedModels m;
  std::size_t at = 0;
  m.victim = nets[at++];
  for (std::size_t j = 0; j < max_ensemble; ++j) m.ensemble.push_back(nets[at++]);
  for (std::size_t j = 0; j < cfg.proxy.size; ++j) m.proxy.push_back(nets[at++]);
  for (std::size_t j = 0; j < cfg.proxy.size; ++j) m.foreign.push_back(nets[at++]);
  m.mc = nets[at++];
  m.selnet = selnet;
  return m;
}

inline ConfidenceScorer ensemble_or_single(std::vector<NetworkHandle> members) {
  if (members.size() == 1) return softmax_scorer(members.front());
  return ensemble_scorer(std::move(members));
}

inline SweepSettings sweep_settings(const ExperimentConfig& cfg) {
  SweepSettings s;
  s.epsilons = cfg.attack.epsilons;
  s.decay = cfg.attack.decay;
  s.max_iterations = cfg.attack.max_iterations;
  if (cfg.attack.clamp) s.clamp = ClampDomain::uniform(cfg.dataset.dim, cfg.attack.clamp->first, cfg.attack.clamp->second);
  s.proxy_truth = cfg.attack.proxy_truth;
  s.histogram_bins = cfg.bench.histogram_bins;
  return s;
}

inline double degradation(const Sweep& s) { return s.rows.back().report.aurc_x1000 - s.rows.front().report.aurc_x1000; }

// Soft trend checks on the largest epsilon of each sweep.
inline std::vector<TrendCheck> trend_checks(const RunManifest& m, const ExperimentConfig& cfg) {
  std::vector<TrendCheck> out;
  const double slack = 1.0 + cfg.bench.trend_slack;
  auto sizes = cfg.bench.ensemble_sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    const Sweep* small = m.find("ensemble_whitebox_m" + std::to_string(sizes[i - 1]));
    const Sweep* large = m.find("ensemble_whitebox_m" + std::to_string(sizes[i]));
    if (!small || !large || small->rows.size() < 2) continue;
    const double ds = degradation(*small), dl = degradation(*large);
    out.push_back({"ensemble_resilience_m" + std::to_string(sizes[i]) + "_vs_m" + std::to_string(sizes[i - 1]),
                   dl <= ds * slack + 1e-12,
                   "AURC degradation x1e3: m" + std::to_string(sizes[i]) + "=" + format_fixed(dl, 2) + ", m" +
                       std::to_string(sizes[i - 1]) + "=" + format_fixed(ds, 2)});
  }
  for (auto n : cfg.bench.mc_passes) {
    const Sweep* direct = m.find("mc_entropy_direct_n" + std::to_string(n));
    const Sweep* indirect = m.find("mc_entropy_indirect_n" + std::to_string(n));
    if (!direct || !indirect || direct->rows.size() < 2) continue;
    const double dd = degradation(*direct), di = degradation(*indirect);
    out.push_back({"mc_indirect_vs_direct_n" + std::to_string(n), di * slack + 1e-12 >= dd,
                   "AURC degradation x1e3: indirect=" + format_fixed(di, 2) + ", direct=" + format_fixed(dd, 2)});
  }
  return out;
}

struct ExperimentOptions {
  bool write_files = true;
};

/// Runs the full matrix: softmax white/black-box, ensembles of several sizes
/// white-box and black-box with matching/foreign proxies, MC dropout
/// (entropy and variance, direct and indirect), and SelNet selector vs
/// softmax targeting. Any failure aborts with a stage-tagged error and the
/// files written so far are removed.
inline RunManifest run_experiment(const ExperimentConfig& cfg, const ExperimentOptions& options = {}) {
  OutputDir out(cfg.out_dir);
  try {
    RunManifest m;
    m.config_hash = config_hash(cfg);
    const DatasetSplits data = run_stage("gen-data", [&] { return gen_dataset(cfg.dataset, derive_seed(cfg.seed, {fnv1a("data")})); });
    const TrainedModels models = run_stage("train", [&] { return train_models(cfg, data); });

    const SweepSettings base = sweep_settings(cfg);
    const std::uint64_t seed = derive_seed(cfg.seed, {fnv1a("attack")});
    const std::size_t threads = cfg.threads;
    auto sweep = [&](const std::string& name, const std::string& title, const ConfidenceScorer& victim,
                     const ConfidenceScorer& grad, const SweepSettings& settings) {
      m.sweeps.push_back(run_stage("attack:" + name, [&] {
        return run_sweep(name, title, victim, grad, data.test, settings, seed, threads);
      }));
    };

    // Softmax response.
    const auto softmax_victim = softmax_scorer(models.victim);
    const auto proxy = ensemble_or_single(models.proxy);
    sweep("softmax_whitebox", "Softmax response, white-box", softmax_victim, softmax_victim, base);
    sweep("softmax_blackbox", "Softmax response, black-box (ensemble proxy)", softmax_victim, proxy, base);

    // Ensembles.
    auto sizes = cfg.bench.ensemble_sizes;
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    for (auto size : sizes) {
      const auto victim = ensemble_or_single({models.ensemble.begin(), models.ensemble.begin() + static_cast<std::ptrdiff_t>(size)});
      sweep("ensemble_whitebox_m" + std::to_string(size), "Ensemble of " + std::to_string(size) + ", white-box",
            victim, victim, base);
    }
    const auto big_ensemble = ensemble_or_single(models.ensemble);
    sweep("ensemble_blackbox_matching", "Ensemble victim, black-box, matching-architecture proxy", big_ensemble,
          proxy, base);
    sweep("ensemble_blackbox_foreign", "Ensemble victim, black-box, foreign-architecture proxy", big_ensemble,
          ensemble_or_single(models.foreign), base);

    // MC dropout.
    for (auto n : cfg.bench.mc_passes) {
      const auto victim = mc_scorer(ScorerKind::mc_entropy, models.mc, n);
      const std::string suffix = "_n" + std::to_string(n);
      sweep("mc_entropy_indirect" + suffix, "MC-dropout entropy (N=" + std::to_string(n) + "), indirect softmax attack",
            victim, softmax_view(victim), base);
      sweep("mc_entropy_direct" + suffix, "MC-dropout entropy (N=" + std::to_string(n) + "), direct attack", victim,
            victim, base);
    }
    {
      const std::size_t n = cfg.bench.variance_passes;
      const auto victim = mc_scorer(ScorerKind::mc_variance, models.mc, n);
      const std::string suffix = "_n" + std::to_string(n);
      sweep("mc_variance_indirect" + suffix, "MC-dropout variance (N=" + std::to_string(n) + "), indirect softmax attack",
            victim, softmax_view(victim), base);
      sweep("mc_variance_direct" + suffix, "MC-dropout variance (N=" + std::to_string(n) + "), direct attack", victim,
            victim, base);
    }

    // SelNet: selector head confidence, evaluated at the coverage the
    // calibrated threshold achieves on the clean test split.
    {
      const auto victim = selector_scorer(models.selnet);
      const Calibration cal = run_stage("calibrate", [&] {
        return calibrate_threshold(*models.selnet, data.validation.empty() ? data.train : data.validation,
                                   cfg.selnet.coverage);
      });
      const auto clean = score_dataset(victim, data.test, seed, threads);
      m.selnet_calibrated_threshold = cal.threshold;
      m.selnet_test_coverage = empirical_coverage(clean, cal.threshold);
      SweepSettings s = base;
      s.selective_coverage = m.selnet_test_coverage;
      sweep("selnet_selector_direct", "SelNet selector, direct attack", victim, victim, s);
      sweep("selnet_softmax_indirect", "SelNet selector, indirect softmax attack", victim, softmax_view(victim), s);
    }

    m.trends = trend_checks(m, cfg);

    if (options.write_files) {
      run_stage("write", [&] {
        out.write("config.ini", canonical_config(cfg));
        out.write("data/train.csv", to_text([&](std::ostream& os) { write_dataset_csv(os, data.train); }));
        out.write("data/validation.csv", to_text([&](std::ostream& os) { write_dataset_csv(os, data.validation); }));
        out.write("data/test.csv", to_text([&](std::ostream& os) { write_dataset_csv(os, data.test); }));
        auto save = [&](const std::string& rel, const auto& params) {
          out.write(rel, to_text([&](std::ostream& os) { write_model(os, params); }));
        };
        save("models/victim.model", *models.victim);
        save("models/mc_dropout.model", *models.mc);
        save("models/selnet.model", *models.selnet);
        for (std::size_t j = 0; j < models.ensemble.size(); ++j) save("models/ensemble_" + std::to_string(j) + ".model", *models.ensemble[j]);
        for (std::size_t j = 0; j < models.proxy.size(); ++j) save("models/proxy_" + std::to_string(j) + ".model", *models.proxy[j]);
        for (std::size_t j = 0; j < models.foreign.size(); ++j) save("models/foreign_" + std::to_string(j) + ".model", *models.foreign[j]);
        std::string report;
        for (const auto& s : m.sweeps) {
          write_sweep(out, s);
          report += report_table(s.table()) + '\n';
        }
        for (const auto& t : m.trends) report += std::string(t.pass ? "PASS " : "WARN ") + t.name + ": " + t.detail + '\n';
        out.write("report.txt", report);
        m.files = out.files();
        m.files.push_back("manifest.txt");
        std::sort(m.files.begin(), m.files.end());
        out.write("manifest.txt", manifest_text(m));
        return 0;
      });
    }
    return m;
  } catch (...) {
    out.discard();
    throw;
  }
}

// ---------------------------------------------------------------------------
// Helpers for working with saved models and score files.

/// Builds a scorer of `kind` from loaded models. Ensembles take every model;
/// the other kinds use the first. Softmax over a SelNet uses its prediction head.
inline ConfidenceScorer make_scorer(ScorerKind kind, const std::vector<Model>& models, std::size_t passes) {
  if (models.empty()) throw ConfigError("no model given");
  auto network = [&](std::size_t i) -> NetworkHandle {
    if (const auto* n = std::get_if<Network>(&models[i])) return std::make_shared<const Network>(*n);
    throw ConfigError("scorer '" + std::string(to_string(kind)) + "' needs a plain network model");
  };
  ConfidenceScorer s;
  switch (kind) {
    case ScorerKind::softmax_response:
      if (const auto* p = std::get_if<SelNetParams>(&models[0])) {
        s = softmax_scorer(std::make_shared<const SelNetParams>(*p));
      } else {
        s = softmax_scorer(network(0));
      }
      break;
    case ScorerKind::ensemble_mean_softmax: {
      std::vector<NetworkHandle> members;
      for (std::size_t i = 0; i < models.size(); ++i) members.push_back(network(i));
      s = ensemble_scorer(std::move(members));
      break;
    }
    case ScorerKind::mc_entropy:
    case ScorerKind::mc_variance:
      s = mc_scorer(kind, network(0), passes);
      break;
    case ScorerKind::selector_head: {
      const auto* p = std::get_if<SelNetParams>(&models[0]);
      if (!p) throw ConfigError("selector scorer needs a SelNet model");
      s = selector_scorer(std::make_shared<const SelNetParams>(*p));
      break;
    }
  }
  s.validate();
  return s;
}

inline std::vector<Model> load_models(const std::vector<std::string>& paths) {
  std::vector<Model> models;
  for (const auto& p : paths) models.push_back(load_model(p));
  return models;
}

inline void write_scores_csv(std::ostream& os, std::span<const ScoredItem> items) {
  os << "index,label,predicted,kappa,loss01\n";
  for (const auto& it : items) {
    os << it.index << ',' << it.label << ',' << it.predicted << ',' << format_exact(it.kappa) << ',' << it.loss01
       << '\n';
  }
}

// Probabilities are not stored; items read back carry an empty `probs`.
inline std::vector<ScoredItem> read_scores_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != "index,label,predicted,kappa,loss01") {
    throw ConfigError("unexpected score CSV header");
  }
  std::vector<ScoredItem> items;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw ConfigError("score CSV row has wrong field count");
    ScoredItem it;
    it.index = parse_unsigned(f[0]);
    it.label = parse_unsigned(f[1]);
    it.predicted = parse_unsigned(f[2]);
    it.kappa = parse_double(f[3]);
    const auto loss = parse_unsigned(f[4]);
    if (loss > 1) throw ConfigError("loss01 must be 0 or 1");
    it.loss01 = static_cast<int>(loss);
    items.push_back(std::move(it));
  }
  return items;
}

}  // namespace ace
