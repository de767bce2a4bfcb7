#include "fedil/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "fedil/errors.hpp"
#include "json.hpp"

namespace fedil {

std::string to_string(DatasetKind k) { return k == DatasetKind::kSynthetic ? "synthetic" : "mnist"; }
std::string to_string(Regime r) { return r == Regime::kIid ? "iid" : "noniid"; }

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kFedIL: return "fedil";
    case Mode::kFedAvg: return "fedavg";
    case Mode::kServerOnly: return "server-only";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "fedil") return Mode::kFedIL;
  if (s == "fedavg") return Mode::kFedAvg;
  if (s == "server-only" || s == "server_only") return Mode::kServerOnly;
  throw ConfigError("unknown mode '" + s + "' (expected fedil, fedavg or server-only)");
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': expected a real number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty() || trim(v) == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  return out;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field size_field(T ExperimentConfig::*m) {
  return {[m](const ExperimentConfig& c) { return std::to_string(c.*m); },
          [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*m = static_cast<T>(parse_uint(k, v));
          }};
}

Field real_field(double ExperimentConfig::*m) {
  return {[m](const ExperimentConfig& c) { return fmt_double(c.*m); },
          [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"dataset",
       {[](const ExperimentConfig& c) { return to_string(c.dataset); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "synthetic") c.dataset = DatasetKind::kSynthetic;
          else if (v == "mnist") c.dataset = DatasetKind::kMnist;
          else throw ConfigError("config key '" + k + "': expected synthetic or mnist, got '" + v + "'");
        }}},
      {"num_classes", size_field(&ExperimentConfig::num_classes)},
      {"synthetic_dim", size_field(&ExperimentConfig::synthetic_dim)},
      {"synthetic_per_class", size_field(&ExperimentConfig::synthetic_per_class)},
      {"synthetic_test_per_class", size_field(&ExperimentConfig::synthetic_test_per_class)},
      {"synthetic_separation", real_field(&ExperimentConfig::synthetic_separation)},
      {"mnist_dir",
       {[](const ExperimentConfig& c) { return c.mnist_dir; },
        [](ExperimentConfig& c, const std::string&, const std::string& v) { c.mnist_dir = v; }}},
      {"mnist_limit", size_field(&ExperimentConfig::mnist_limit)},
      {"gamma", real_field(&ExperimentConfig::gamma)},
      {"num_clients", size_field(&ExperimentConfig::num_clients)},
      {"clients_per_round", size_field(&ExperimentConfig::clients_per_round)},
      {"total_rounds", size_field(&ExperimentConfig::total_rounds)},
      {"regime",
       {[](const ExperimentConfig& c) { return to_string(c.regime); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "iid") c.regime = Regime::kIid;
          else if (v == "noniid" || v == "non-iid") c.regime = Regime::kNonIid;
          else throw ConfigError("config key '" + k + "': expected iid or noniid, got '" + v + "'");
        }}},
      {"class_fraction", real_field(&ExperimentConfig::class_fraction)},
      {"hidden_dims",
       {[](const ExperimentConfig& c) { return fmt_list(c.hidden_dims); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.hidden_dims = parse_list(k, v); }}},
      {"activation",
       {[](const ExperimentConfig& c) { return to_string(c.activation); },
        [](ExperimentConfig& c, const std::string&, const std::string& v) { c.activation = parse_activation(v); }}},
      {"tau", real_field(&ExperimentConfig::tau)},
      {"promote_t", size_field(&ExperimentConfig::promote_t)},
      {"agreement_t", size_field(&ExperimentConfig::agreement_t)},
      {"local_epochs", size_field(&ExperimentConfig::local_epochs)},
      {"server_epochs", size_field(&ExperimentConfig::server_epochs)},
      {"lr", real_field(&ExperimentConfig::lr)},
      {"batch_size", size_field(&ExperimentConfig::batch_size)},
      {"gate_threshold", real_field(&ExperimentConfig::gate_threshold)},
      {"weight_unsup_ce", real_field(&ExperimentConfig::weight_unsup_ce)},
      {"weight_kl", real_field(&ExperimentConfig::weight_kl)},
      {"weight_pseudo_ce", real_field(&ExperimentConfig::weight_pseudo_ce)},
      {"weak_noise", real_field(&ExperimentConfig::weak_noise)},
      {"strong_noise", real_field(&ExperimentConfig::strong_noise)},
      {"mask_fraction", real_field(&ExperimentConfig::mask_fraction)},
      {"shift_pixels", size_field(&ExperimentConfig::shift_pixels)},
      {"seed", size_field(&ExperimentConfig::seed)},
      {"mode",
       {[](const ExperimentConfig& c) { return to_string(c.mode); },
        [](ExperimentConfig& c, const std::string&, const std::string& v) { c.mode = parse_mode(v); }}},
      {"eval_every", size_field(&ExperimentConfig::eval_every)},
      {"window", size_field(&ExperimentConfig::window)},
      {"threads", size_field(&ExperimentConfig::threads)},
  };
  return table;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "': " + what);
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) out[key] = field.get(*this);
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [key, value] : to_map()) out += key + " = " + value + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << fnv1a64(to_text());
  return ss.str();
}

void ExperimentConfig::validate() const {
  require(num_classes >= 2, "num_classes", "must be >= 2");
  require(synthetic_dim >= 2, "synthetic_dim", "must be >= 2");
  require(synthetic_per_class >= 1, "synthetic_per_class", "must be positive");
  require(synthetic_test_per_class >= 1, "synthetic_test_per_class", "must be positive");
  require(synthetic_separation >= 0.0, "synthetic_separation", "must be >= 0");
  require(dataset != DatasetKind::kMnist || !mnist_dir.empty(), "mnist_dir", "required for dataset = mnist");
  require(gamma > 0.0 && gamma < 1.0, "gamma", "must lie in (0,1)");
  require(num_clients >= 1, "num_clients", "must be positive");
  require(clients_per_round >= 1 && clients_per_round <= num_clients, "clients_per_round",
          "must lie in [1, num_clients]");
  require(class_fraction > 0.0 && class_fraction <= 1.0, "class_fraction", "must lie in (0,1]");
  for (std::size_t h : hidden_dims) require(h > 0, "hidden_dims", "widths must be positive");
  require(tau > 0.0 && tau < 1.0, "tau", "must lie in (0,1)");
  require(lr >= 0.0, "lr", "must be >= 0");
  require(batch_size >= 1, "batch_size", "must be positive");
  require(weight_unsup_ce >= 0.0 && weight_kl >= 0.0 && weight_pseudo_ce >= 0.0, "weight_*",
          "loss weights must be >= 0");
  require(eval_every >= 1, "eval_every", "must be positive");
  require(window >= 2, "window", "must be >= 2");
  require(threads >= 1, "threads", "must be positive");
  AugmentParams aug{weak_noise, strong_noise, mask_fraction, shift_pixels, 0};
  aug.validate();
}

ClientHyper ExperimentConfig::client_hyper(std::size_t image_side) const {
  ClientHyper h;
  h.local_epochs = local_epochs;
  h.batch_size = batch_size;
  h.lr = lr;
  h.rule = CredibilityRule{tau, promote_t, agreement_t};
  h.weights = LossWeights{weight_unsup_ce, weight_kl, weight_pseudo_ce};
  h.augment = AugmentParams{weak_noise, strong_noise, mask_fraction, shift_pixels, image_side};
  h.credibility = true;
  if (mode == Mode::kFedAvg) {
    h.weights.consistency_kl = 0.0;
    h.credibility = false;
  }
  return h;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["config_hash"] = cfg.hash();
  j["config"] = cfg.to_map();
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ExperimentConfig cfg;
  for (const auto& [key, value] : j.at("config").items()) cfg.set(key, value.get<std::string>());
  return cfg;
}

}  // namespace fedil
