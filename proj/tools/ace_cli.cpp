// Command-line front end for data generation, training, attacks and reports.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure,
// 4 acceptance check failed (bench --check).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ace/ace.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<unsigned long long> seed;
  std::string out;
  std::string epsilons;
};

void add_common(CLI::App* cmd, Common& c, bool with_epsilons) {
  cmd->add_option("--config", c.config, "Experiment config file");
  cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory");
  if (with_epsilons) cmd->add_option("--epsilons", c.epsilons, "Comma-separated epsilon list");
}

ace::ExperimentConfig load_config(const Common& c) {
  ace::ConfigFile file = c.config.empty() ? ace::ConfigFile{} : ace::ConfigFile::load(c.config);
  if (c.seed) file.set("experiment.seed", std::to_string(*c.seed));
  if (!c.out.empty()) file.set("experiment.out", c.out);
  if (!c.epsilons.empty()) file.set("attack.epsilons", c.epsilons);
  return ace::parse_experiment_config(file);
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ace::ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ace::LabeledDataset read_dataset(const std::string& path, ace::Split split) {
  std::ifstream is(path);
  if (!is) throw ace::ConfigError("cannot open dataset '" + path + "'");
  return ace::read_dataset_csv(is, 0, split);
}

std::vector<std::string> split_paths(const std::string& list) {
  std::vector<std::string> out;
  for (const auto& p : ace::split(list, ',')) {
    if (!p.empty()) out.emplace_back(p);
  }
  return out;
}

int cmd_gen_data(const Common& c) {
  const auto cfg = load_config(c);
  const auto splits = ace::gen_dataset(cfg.dataset, ace::derive_seed(cfg.seed, {ace::fnv1a("data")}));
  ace::OutputDir out(cfg.out_dir);
  try {
    out.write("train.csv", ace::to_text([&](std::ostream& os) { ace::write_dataset_csv(os, splits.train); }));
    out.write("validation.csv",
              ace::to_text([&](std::ostream& os) { ace::write_dataset_csv(os, splits.validation); }));
    out.write("test.csv", ace::to_text([&](std::ostream& os) { ace::write_dataset_csv(os, splits.test); }));
  } catch (...) {
    out.discard();
    throw;
  }
  std::cout << "wrote " << splits.train.size() << '/' << splits.validation.size() << '/' << splits.test.size()
            << " samples to " << cfg.out_dir << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir) {
  const auto cfg = load_config(c);
  ace::DatasetSplits splits;
  if (data_dir.empty()) {
    splits = ace::gen_dataset(cfg.dataset, ace::derive_seed(cfg.seed, {ace::fnv1a("data")}));
  } else {
    splits.train = read_dataset(data_dir + "/train.csv", ace::Split::train);
    splits.validation = read_dataset(data_dir + "/validation.csv", ace::Split::validation);
    splits.test = read_dataset(data_dir + "/test.csv", ace::Split::test);
  }
  auto run_cfg = cfg;
  run_cfg.dataset.dim = splits.train.dim();
  run_cfg.dataset.classes = splits.train.class_count;
  const auto models = ace::run_stage("train", [&] { return ace::train_models(run_cfg, splits); });

  ace::OutputDir out(cfg.out_dir);
  try {
    auto save = [&](const std::string& rel, const auto& params) {
      out.write(rel, ace::to_text([&](std::ostream& os) { ace::write_model(os, params); }));
    };
    save("victim.model", *models.victim);
    save("mc_dropout.model", *models.mc);
    save("selnet.model", *models.selnet);
    for (std::size_t j = 0; j < models.ensemble.size(); ++j) save("ensemble_" + std::to_string(j) + ".model", *models.ensemble[j]);
    for (std::size_t j = 0; j < models.proxy.size(); ++j) save("proxy_" + std::to_string(j) + ".model", *models.proxy[j]);
    for (std::size_t j = 0; j < models.foreign.size(); ++j) save("foreign_" + std::to_string(j) + ".model", *models.foreign[j]);
  } catch (...) {
    out.discard();
    throw;
  }
  std::cout << "victim test accuracy " << ace::format_fixed(100.0 * ace::accuracy(*models.victim, splits.test), 2)
            << "%; models written to " << cfg.out_dir << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& model_list, const std::string& data_path) {
  const auto cfg = load_config(c);
  const auto scorer = ace::make_scorer(cfg.scorer.kind, ace::load_models(split_paths(model_list)), cfg.scorer.passes);
  const auto data = read_dataset(data_path, ace::Split::test);
  const auto items = ace::score_dataset(scorer, data, ace::derive_seed(cfg.seed, {ace::fnv1a("attack")}), cfg.threads);
  const auto report = ace::evaluate_items(items, 0.0, 0.0);
  ace::ResultTable table{"eval", "Clean evaluation (" + std::string(ace::to_string(cfg.scorer.kind)) + ")", {report}};
  ace::OutputDir out(cfg.out_dir);
  try {
    out.write("scores.csv", ace::to_text([&](std::ostream& os) { ace::write_scores_csv(os, items); }));
    out.write("report.csv", ace::to_text([&](std::ostream& os) { ace::write_report_csv(os, table); }));
  } catch (...) {
    out.discard();
    throw;
  }
  std::cout << ace::report_table(table);
  return 0;
}

int cmd_attack(const Common& c, const std::string& model_list, const std::string& proxy_list,
               const std::string& data_path, const std::string& mode_text, const std::string& target_text) {
  ace::ConfigFile file = c.config.empty() ? ace::ConfigFile{} : ace::ConfigFile::load(c.config);
  if (!mode_text.empty()) file.set("attack.mode", mode_text);
  if (!target_text.empty()) file.set("attack.target", target_text);
  if (c.seed) file.set("experiment.seed", std::to_string(*c.seed));
  if (!c.out.empty()) file.set("experiment.out", c.out);
  if (!c.epsilons.empty()) file.set("attack.epsilons", c.epsilons);
  const auto cfg = ace::parse_experiment_config(file);

  const auto victim = ace::make_scorer(cfg.scorer.kind, ace::load_models(split_paths(model_list)), cfg.scorer.passes);
  std::optional<ace::ConfidenceScorer> proxy;
  if (!proxy_list.empty()) {
    const auto proxies = ace::load_models(split_paths(proxy_list));
    proxy = ace::make_scorer(proxies.size() > 1 ? ace::ScorerKind::ensemble_mean_softmax
                                                : ace::ScorerKind::softmax_response,
                             proxies, cfg.scorer.passes);
  }
  ace::AttackConfig attack;
  attack.mode = cfg.attack.mode;
  attack.target = cfg.attack.target;
  const auto grad = ace::gradient_source(victim, attack, proxy ? &*proxy : nullptr);

  const auto data = read_dataset(data_path, ace::Split::test);
  ace::SweepSettings settings = ace::sweep_settings(cfg);
  if (cfg.attack.clamp) settings.clamp = ace::ClampDomain::uniform(data.dim(), cfg.attack.clamp->first, cfg.attack.clamp->second);
  settings.keep_details = true;
  const std::string name = std::string("attack_") + ace::to_string(cfg.attack.mode) + "_" + ace::to_string(cfg.attack.target);
  const std::string title = std::string(ace::to_string(cfg.scorer.kind)) + ", " + ace::to_string(cfg.attack.mode) +
                            ", " + ace::to_string(cfg.attack.target);
  const auto sweep = ace::run_stage("attack", [&] {
    return ace::run_sweep(name, title, victim, grad, data, settings, ace::derive_seed(cfg.seed, {ace::fnv1a("attack")}),
                          cfg.threads);
  });

  ace::OutputDir out(cfg.out_dir);
  try {
    ace::write_sweep(out, sweep);
    std::string queries = "epsilon,queries,fraction_perturbed\n";
    for (std::size_t k = 0; k < sweep.rows.size(); ++k) {
      const auto& row = sweep.rows[k];
      queries += ace::format_exact(row.report.epsilon) + ',' + std::to_string(row.attack.query_count) + ',' +
                 ace::format_exact(row.attack.fraction_perturbed) + '\n';
      out.write("attacked_" + std::to_string(k) + ".csv", ace::to_text([&](std::ostream& os) {
                  ace::write_dataset_csv(os, ace::apply_outcomes(data, row.outcomes));
                }));
      out.write("outcomes_" + std::to_string(k) + ".csv", ace::to_text([&](std::ostream& os) {
                  os << "index,effective_epsilon,iterations,perturbed,victim_label\n";
                  for (std::size_t i = 0; i < row.outcomes.size(); ++i) {
                    const auto& o = row.outcomes[i];
                    os << i << ',' << ace::format_exact(o.effective_epsilon) << ',' << o.iterations_used << ','
                       << (o.perturbed ? 1 : 0) << ',' << o.victim_label << '\n';
                  }
                }));
      out.write("scores_" + std::to_string(k) + ".csv",
                ace::to_text([&](std::ostream& os) { ace::write_scores_csv(os, row.items); }));
    }
    out.write("queries.csv", queries);
  } catch (...) {
    out.discard();
    throw;
  }
  std::cout << ace::report_table(sweep.table());
  return 0;
}

int cmd_rc_curve(const std::string& scores_path, const std::string& out_dir) {
  std::ifstream is(scores_path);
  if (!is) throw ace::ConfigError("cannot open '" + scores_path + "'");
  const auto items = ace::read_scores_csv(is);
  if (items.empty()) throw ace::ConfigError("score file is empty");
  const auto curve = ace::rc_curve(items);
  const double area = 1000.0 * ace::aurc(items);
  std::size_t wrong = 0;
  for (const auto& it : items) wrong += static_cast<std::size_t>(it.loss01);
  const auto worst = ace::worst_case_rc(items.size() - wrong, wrong);
  const std::vector<ace::NamedCurve> curves{
      {"observed", curve, area, false},
      {"worst case", worst, 1000.0 * ace::curve_area(worst, items.size()), true}};
  ace::OutputDir out(out_dir.empty() ? "." : out_dir);
  try {
    out.write("rc.csv", ace::to_text([&](std::ostream& os) { ace::write_rc_csv(os, curve); }));
    out.write("rc.svg", ace::to_text([&](std::ostream& os) { ace::render_rc_svg(os, curves, "Risk-coverage"); }));
  } catch (...) {
    out.discard();
    throw;
  }
  std::cout << "AURC x1e3 " << ace::format_fixed(area, 2) << " over " << curve.points.size() << " points\n";
  return 0;
}

int cmd_report(const std::string& run_dir, const std::vector<std::string>& csvs) {
  std::vector<std::string> paths = csvs;
  if (!run_dir.empty()) {
    std::ifstream manifest(run_dir + "/manifest.txt");
    if (!manifest) throw ace::ConfigError("no manifest.txt in '" + run_dir + "'");
    for (const auto& name : ace::manifest_tables(manifest)) paths.push_back(run_dir + "/" + name + ".csv");
  }
  if (paths.empty()) throw ace::ConfigError("report needs --run or CSV files");
  for (const auto& p : paths) {
    std::istringstream is(read_text(p));
    const auto table = ace::read_report_csv(is, fs::path(p).stem().string());
    std::cout << table.name << '\n' << ace::report_table(table) << '\n';
  }
  return 0;
}

int cmd_bench(const Common& c, bool check) {
  const auto cfg = load_config(c);
  const auto m = ace::run_experiment(cfg);
  std::cout << read_text(cfg.out_dir + "/report.txt");
  if (!check) return 0;

  bool ok = true;
  for (const auto& s : m.sweeps) {
    const double clean_acc = s.rows.front().report.accuracy_percent;
    for (const auto& r : s.rows) {
      if (r.report.accuracy_percent != clean_acc) {
        std::cout << "FAIL accuracy changed under attack in " << s.name << '\n';
        ok = false;
      }
    }
    for (std::size_t k = 1; k < s.rows.size(); ++k) {
      if (s.rows[k].report.aurc_x1000 < s.rows.front().report.aurc_x1000) {
        std::cout << "FAIL attack lowered AURC in " << s.name << " at eps " << ace::format_epsilon(s.rows[k].report.epsilon)
                  << '\n';
        ok = false;
      }
    }
  }
  if (const auto* s = m.find("softmax_whitebox"); s && s->rows.size() > 1) {
    const double ratio = s->rows.back().report.aurc_x1000 / s->rows.front().report.aurc_x1000;
    const bool pass = ratio >= 3.0;
    std::cout << (pass ? "PASS" : "FAIL") << " softmax white-box AURC ratio at largest eps: "
              << ace::format_fixed(ratio, 3) << " (need >= 3)\n";
    ok = ok && pass;
  }
  std::cout << (ok ? "bench check passed\n" : "bench check failed\n");
  return ok ? 0 : ace::kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attacks on confidence estimation: data, training, attacks and reports"};
  app.require_subcommand(1);

  Common common;
  std::string data_dir, model_list, proxy_list, data_path, mode, target, scores_path, run_dir;
  std::vector<std::string> csvs;
  bool check = false;

  auto* gen = app.add_subcommand("gen-data", "Generate train/validation/test CSV files");
  add_common(gen, common, false);

  auto* train = app.add_subcommand("train", "Train every model family used by the benchmark");
  add_common(train, common, false);
  train->add_option("--data", data_dir, "Directory with train/validation/test CSVs (default: generate)");

  auto* eval = app.add_subcommand("eval", "Score a dataset with a confidence scorer");
  add_common(eval, common, false);
  eval->add_option("--model", model_list, "Model file(s), comma separated")->required();
  eval->add_option("--data", data_path, "Dataset CSV")->required();

  auto* attack = app.add_subcommand("attack", "Run the confidence attack over an epsilon sweep");
  add_common(attack, common, true);
  attack->add_option("--model", model_list, "Victim model file(s), comma separated")->required();
  attack->add_option("--proxy", proxy_list, "Proxy model file(s) for black-box mode");
  attack->add_option("--data", data_path, "Dataset CSV")->required();
  attack->add_option("--mode", mode, "whitebox or blackbox")->check(CLI::IsMember({"whitebox", "blackbox"}));
  attack->add_option("--target", target, "direct or indirect")->check(CLI::IsMember({"direct", "indirect"}));

  auto* rc = app.add_subcommand("rc-curve", "Risk-coverage curve and chart from a score CSV");
  rc->add_option("--scores", scores_path, "Score CSV written by eval or attack")->required();
  rc->add_option("--out", common.out, "Output directory");

  auto* report = app.add_subcommand("report", "Print result tables");
  report->add_option("--run", run_dir, "Benchmark output directory");
  report->add_option("csv", csvs, "Report CSV files");

  auto* bench = app.add_subcommand("bench", "Run the full benchmark matrix");
  add_common(bench, common, true);
  bench->add_flag("--check", check, "Verify the benchmark outcome; exit 4 on failure");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ace::kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common, data_dir);
    if (*eval) return cmd_eval(common, model_list, data_path);
    if (*attack) return cmd_attack(common, model_list, proxy_list, data_path, mode, target);
    if (*rc) return cmd_rc_curve(scores_path, common.out);
    if (*report) return cmd_report(run_dir, csvs);
    if (*bench) return cmd_bench(common, check);
  } catch (const ace::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const ace::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return ace::kExitNumeric;
  } catch (const ace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ace::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ace::kExitConfig;
  }
  return 0;
}
