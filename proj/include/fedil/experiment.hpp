#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedil/client.hpp"
#include "fedil/config.hpp"
#include "fedil/convergence.hpp"
#include "fedil/data.hpp"
#include "fedil/model.hpp"
#include "fedil/server.hpp"

namespace fedil {

/// Test data behind an access audit: reads are refused while a training
/// phase is open.
class HeldOutSet {
 public:
  explicit HeldOutSet(Dataset data) : data_(std::move(data)) {}

  const Dataset& read() const;
  void begin_training() noexcept { training_ = true; }
  void end_training() noexcept { training_ = false; }
  bool training() const noexcept { return training_; }
  std::size_t reads() const noexcept { return reads_; }
  std::size_t refused_reads() const noexcept { return refused_; }

 private:
  Dataset data_;
  bool training_ = false;
  mutable std::size_t reads_ = 0;
  mutable std::size_t refused_ = 0;
};

struct ExperimentData {
  Dataset train;
  Dataset test;
};

/// Synthetic draw or MNIST files, as selected by the config.
ExperimentData load_data(const ExperimentConfig& cfg);

/// Fraction of argmax-correct predictions. Throws ConfigError on an empty set.
double evaluate(const ParamVector& params, const ModelArch& arch, const Dataset& test);

/// counts[true][predicted].
std::vector<std::vector<std::size_t>> confusion_matrix(const ParamVector& params, const ModelArch& arch,
                                                       const Dataset& test);

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> selected;
  AggregationReport aggregation;
  std::vector<std::size_t> pseudo_sizes;  // per selected client, after the round
  std::size_t pseudo_total = 0;           // across all clients
  std::size_t pseudo_correct = 0;         // evaluation-only audit against true labels
  std::size_t promoted = 0;               // promotions made this round
  std::optional<double> test_accuracy;
  double wall_ms = 0.0;
};

struct ExperimentResult {
  ExperimentConfig config;
  ModelArch arch;
  std::vector<RoundRecord> records;
  ConvergenceTrace trace;
  ParamVector initial_global;
  ParamVector final_global;
  ParamVector final_server;
  double initial_accuracy = 0.0;
  double final_accuracy = 0.0;
  std::vector<ClientState> clients;
  std::size_t labeled_size = 0;
  std::size_t refused_test_reads = 0;
};

/// Called after every round with the record and the new global weights.
using RoundObserver = std::function<void(const RoundRecord&, const ParamVector& global)>;

/// The round loop: select, broadcast (theta', theta_0), client rounds,
/// cosine-gated aggregation, server supervised refinement, record.
/// Errors from a client are rethrown with the round and client named.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                                const RoundObserver& observer = {});
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Stand-alone supervised training with the exact schedule server-only mode uses.
ParamVector train_supervised_baseline(const ExperimentConfig& cfg, const ExperimentData& data);

struct ManifestEntry {
  std::string path;
  std::uintmax_t bytes = 0;
};

/// Writes metrics.csv, aggregation.csv, convergence.csv, timing.csv,
/// config.json, checkpoint.bin, checkpoint.json, clients.json, summary.json
/// and manifest.json into out_dir. Throws IoError naming the path.
std::vector<ManifestEntry> persist(const ExperimentResult& result, const std::filesystem::path& out_dir);

std::string metrics_csv(const ExperimentResult& result);
std::string aggregation_csv(const ExperimentResult& result);
std::string convergence_csv(const ExperimentResult& result);

}  // namespace fedil
