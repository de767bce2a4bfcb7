#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedil/client.hpp"
#include "fedil/model.hpp"

namespace fedil {

enum class DatasetKind { kSynthetic, kMnist };
enum class Regime { kIid, kNonIid };
enum class Mode { kFedIL, kFedAvg, kServerOnly };

std::string to_string(DatasetKind k);
std::string to_string(Regime r);
std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct ExperimentConfig {
  // data
  DatasetKind dataset = DatasetKind::kSynthetic;
  std::size_t num_classes = 3;
  std::size_t synthetic_dim = 40;
  std::size_t synthetic_per_class = 100;
  std::size_t synthetic_test_per_class = 500;
  double synthetic_separation = 3.5;
  std::string mnist_dir;
  std::size_t mnist_limit = 0;  // 0 = all training images

  // federation
  double gamma = 0.1;
  std::size_t num_clients = 10;
  std::size_t clients_per_round = 5;
  std::size_t total_rounds = 200;
  Regime regime = Regime::kIid;
  double class_fraction = 0.2;

  // learning
  std::vector<std::size_t> hidden_dims{32};
  Activation activation = Activation::kTanh;
  double tau = 0.95;
  std::size_t promote_t = 7;    // 0 disables promotion
  std::size_t agreement_t = 0;  // 0 = same as promote_t
  std::size_t local_epochs = 5;
  std::size_t server_epochs = 1;
  double lr = 0.3;
  std::size_t batch_size = 32;
  double gate_threshold = 0.0;
  double weight_unsup_ce = 1.0;
  double weight_kl = 1.0;
  double weight_pseudo_ce = 1.0;

  // augmentation
  double weak_noise = 0.1;
  double strong_noise = 0.3;
  double mask_fraction = 0.0;
  std::size_t shift_pixels = 0;

  // run control
  std::uint64_t seed = 1;
  Mode mode = Mode::kFedIL;
  std::size_t eval_every = 5;
  std::size_t window = 20;
  std::size_t threads = 1;

  /// Throws ConfigError naming the offending key.
  void validate() const;

  /// Canonical `key = value` text, one line per key in sorted order.
  std::string to_text() const;
  /// Hex FNV-1a 64 of to_text().
  std::string hash() const;

  /// Applies one `key`/`value` pair; throws ConfigError on an unknown key or bad value.
  void set(const std::string& key, const std::string& value);

  std::map<std::string, std::string> to_map() const;

  ClientHyper client_hyper(std::size_t image_side) const;
};

/// Flat key-value file: `key = value`, '#' starts a comment, blank lines ignored.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// config.json body (all keys plus "config_hash").
std::string config_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& json_text);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace fedil
