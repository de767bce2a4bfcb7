// Command-line front end: run one experiment, sweep an ablation knob, or
// export the synthetic dataset.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fedil/config.hpp"
#include "fedil/data.hpp"
#include "fedil/errors.hpp"
#include "fedil/experiment.hpp"

namespace {

struct Overrides {
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<double> tau;
  std::optional<std::size_t> promote_t;
  std::optional<double> gate_threshold;
  std::optional<std::size_t> clients_per_round;
  std::optional<std::size_t> local_epochs;
  std::vector<std::string> sets;

  void add_to(CLI::App* app) {
    app->add_option("--mode", mode, "fedil | fedavg | server-only");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--rounds", rounds, "total rounds");
    app->add_option("--tau", tau, "confidence threshold");
    app->add_option("--promote-t", promote_t, "consecutive hits required for promotion (0 disables)");
    app->add_option("--gate-threshold", gate_threshold, "cosine gate threshold");
    app->add_option("--clients-per-round", clients_per_round, "clients selected per round");
    app->add_option("--local-epochs", local_epochs, "local epochs per participation");
    app->add_option("--set", sets, "extra key=value override (repeatable)");
  }

  void apply(fedil::ExperimentConfig& cfg) const {
    if (mode) cfg.mode = fedil::parse_mode(*mode);
    if (seed) cfg.seed = *seed;
    if (rounds) cfg.total_rounds = *rounds;
    if (tau) cfg.tau = *tau;
    if (promote_t) cfg.promote_t = *promote_t;
    if (gate_threshold) cfg.gate_threshold = *gate_threshold;
    if (clients_per_round) cfg.clients_per_round = *clients_per_round;
    if (local_epochs) cfg.local_epochs = *local_epochs;
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw fedil::ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
  }
};

fedil::ExperimentConfig load(const std::string& path, const Overrides& o) {
  fedil::ExperimentConfig cfg = path.empty() ? fedil::ExperimentConfig{} : fedil::load_config(path);
  o.apply(cfg);
  cfg.validate();
  return cfg;
}

void run_one(const fedil::ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
  const fedil::ExperimentData data = fedil::load_data(cfg);
  fedil::RoundObserver progress;
  if (!quiet) {
    progress = [](const fedil::RoundRecord& r, const fedil::ParamVector&) {
      if (!r.test_accuracy) return;
      std::fprintf(stderr, "round %4zu  |dtheta| %.6g  included %zu  pseudo %zu  acc %.4f\n", r.round,
                   r.aggregation.delta_norm, r.aggregation.included_count, r.pseudo_total, *r.test_accuracy);
    };
  }
  const fedil::ExperimentResult result = fedil::run_experiment(cfg, data, progress);
  const auto manifest = fedil::persist(result, out_dir);
  std::cout << "mode " << fedil::to_string(cfg.mode) << "  config_hash " << cfg.hash() << "  final_accuracy "
            << result.final_accuracy << '\n';
  for (const auto& entry : manifest) std::cout << "  " << entry.path << "  " << entry.bytes << " bytes\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated semi-supervised learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "fedil_out";
  bool quiet = false;

  Overrides run_over;
  auto* run = app.add_subcommand("run", "run one experiment and write its artifacts");
  run->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory");
  run->add_flag("--quiet", quiet, "no per-round progress");
  run_over.add_to(run);

  Overrides sweep_over;
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "run one experiment per value of a knob");
  sweep->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  sweep->add_option("--out", out_dir, "parent output directory; one subdirectory per value");
  sweep->add_option("--param", sweep_key, "config key to sweep (e.g. promote_t, gate_threshold)")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required()->delimiter(',');
  sweep->add_flag("--quiet", quiet, "no per-round progress");
  sweep_over.add_to(sweep);

  std::string csv_path = "synthetic.csv";
  auto* gen = app.add_subcommand("gen-data", "export the configured synthetic training set as CSV");
  gen->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  gen->add_option("--csv", csv_path, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      run_one(load(config_path, run_over), out_dir, quiet);
    } else if (*sweep) {
      const fedil::ExperimentConfig base = load(config_path, sweep_over);
      std::string key = sweep_key;
      for (char& c : key) if (c == '-') c = '_';
      for (const std::string& value : sweep_values) {
        fedil::ExperimentConfig cfg = base;
        cfg.set(key, value);
        cfg.validate();
        run_one(cfg, out_dir + "/" + key + "=" + value, quiet);
      }
    } else if (*gen) {
      fedil::ExperimentConfig cfg = load(config_path, Overrides{});
      fedil::export_csv(fedil::load_data(cfg).train, csv_path);
      std::cout << "wrote " << csv_path << '\n';
    }
  } catch (const fedil::Error& e) {
    std::cerr << "fedil: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fedil: unexpected error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
