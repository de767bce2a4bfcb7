#include "fedil/experiment.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "fedil/checkpoint.hpp"
#include "fedil/errors.hpp"
#include "fedil/rng.hpp"
#include "json.hpp"

namespace fedil {

const Dataset& HeldOutSet::read() const {
  if (training_) {
    ++refused_;
    throw InvariantError("test set read during a training phase");
  }
  ++reads_;
  return data_;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Dataset take_prefix(Dataset d, std::size_t limit) {
  if (limit > 0 && limit < d.examples.size()) d.examples.resize(limit);
  return d;
}

std::uint64_t server_seed(const ExperimentConfig& cfg, std::size_t round) {
  return derive_seed(cfg.seed, {tag(Stream::kServerShuffle), round});
}

ModelArch make_arch(const ExperimentConfig& cfg, const Dataset& train) {
  ModelArch arch{train.input_dim, cfg.hidden_dims, train.num_classes, cfg.activation};
  arch.validate();
  return arch;
}

SupervisedSchedule schedule(const ExperimentConfig& cfg) {
  return {cfg.server_epochs, cfg.batch_size, cfg.lr};
}

// Deterministic split of the training data shared by every mode.
SplitResult split_for(const ExperimentConfig& cfg, const Dataset& train) {
  return split_by_label_rate(train, cfg.gamma, derive_seed(cfg.seed, {tag(Stream::kSplit)}));
}

}  // namespace

ExperimentData load_data(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentData data;
  if (cfg.dataset == DatasetKind::kSynthetic) {
    data.train = gen_synthetic(cfg.num_classes, cfg.synthetic_per_class, cfg.synthetic_dim,
                               cfg.synthetic_separation, derive_seed(cfg.seed, {tag(Stream::kSynthetic)}));
    data.test = gen_synthetic(cfg.num_classes, cfg.synthetic_test_per_class, cfg.synthetic_dim,
                              cfg.synthetic_separation, derive_seed(cfg.seed, {tag(Stream::kTestSet)}),
                              static_cast<ExampleId>(cfg.num_classes * cfg.synthetic_per_class));
  } else {
    const std::filesystem::path dir(cfg.mnist_dir);
    data.train = take_prefix(load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
                             cfg.mnist_limit);
    data.test = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", 10'000'000);
  }
  return data;
}

std::vector<std::vector<std::size_t>> confusion_matrix(const ParamVector& params, const ModelArch& arch,
                                                       const Dataset& test) {
  std::vector<std::vector<std::size_t>> counts(arch.num_classes, std::vector<std::size_t>(arch.num_classes, 0));
  for (const Example& e : test.examples) {
    ++counts.at(e.true_label).at(forward(params, arch, e.features).argmax());
  }
  return counts;
}

double evaluate(const ParamVector& params, const ModelArch& arch, const Dataset& test) {
  if (test.examples.empty()) throw ConfigError("evaluation set is empty");
  std::size_t correct = 0;
  for (const Example& e : test.examples) {
    if (forward(params, arch, e.features).argmax() == e.true_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.examples.size());
}

ParamVector train_supervised_baseline(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  const ModelArch arch = make_arch(cfg, data.train);
  const SplitResult split = split_for(cfg, data.train);
  ParamVector params = init_params(arch, cfg.seed);
  for (std::size_t r = 0; r < cfg.total_rounds; ++r) {
    params = server_supervised_update(params, arch, split.labeled, schedule(cfg), server_seed(cfg, r));
  }
  return params;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                                const RoundObserver& observer) {
  cfg.validate();
  if (data.train.num_classes != data.test.num_classes || data.train.input_dim != data.test.input_dim) {
    throw ConfigError("train and test data disagree on shape");
  }
  ExperimentResult res;
  res.config = cfg;
  res.arch = make_arch(cfg, data.train);
  res.trace = ConvergenceTrace(cfg.window);
  const ModelArch& arch = res.arch;

  HeldOutSet test(data.test);
  const SplitResult split = split_for(cfg, data.train);
  res.labeled_size = split.labeled.size();

  std::vector<UnlabeledShard> shards =
      cfg.regime == Regime::kIid
          ? partition_iid(split.unlabeled, cfg.num_clients, cfg.seed)
          : partition_noniid(split.unlabeled, data.train.num_classes, cfg.num_clients, cfg.class_fraction, cfg.seed);
  for (UnlabeledShard& s : shards) res.clients.emplace_back(std::move(s), cfg.seed);

  // Ground truth of client examples, used only for the pseudo-label audit column.
  std::unordered_map<ExampleId, std::size_t> truth;
  for (const Example& e : split.unlabeled) truth.emplace(e.id, e.true_label);

  const ClientHyper hyper = cfg.client_hyper(data.train.image_side);
  const double gate_threshold =
      cfg.mode == Mode::kFedAvg ? -std::numeric_limits<double>::infinity() : cfg.gate_threshold;

  ParamVector global = init_params(arch, cfg.seed);
  res.initial_global = global;
  res.initial_accuracy = evaluate(global, arch, test.read());

  test.begin_training();
  ParamVector server = server_supervised_update(global, arch, split.labeled, schedule(cfg), server_seed(cfg, 0));
  test.end_training();

  for (std::size_t round = 1; round <= cfg.total_rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    test.begin_training();
    RoundRecord rec;
    rec.round = round;
    ParamVector next;
    ParamVector delta;

    if (cfg.mode == Mode::kServerOnly) {
      next = server;
      delta = ParamVector(global.size());
      for (std::size_t k = 0; k < global.size(); ++k) delta.values[k] = next.values[k] - global.values[k];
      rec.aggregation.delta_norm = l2_norm(delta.values);
    } else {
      rec.selected = select_clients(cfg.num_clients, cfg.clients_per_round, cfg.seed, round);
      std::vector<Upload> uploads(rec.selected.size());
      auto train_one = [&](std::size_t slot) {
        const std::size_t id = rec.selected[slot];
        try {
          ClientUpdate u = client_round(res.clients[id], global, server, arch, hyper, round);
          uploads[slot] = {id, std::move(u.params)};
          return u.promoted.size();
        } catch (const Error& e) {
          throw TrainingError("round " + std::to_string(round) + ", client " + std::to_string(id) + ": " + e.what());
        }
      };
      if (cfg.threads > 1 && rec.selected.size() > 1) {
        std::vector<std::future<std::size_t>> jobs;
        for (std::size_t slot = 0; slot < rec.selected.size(); ++slot) {
          jobs.push_back(std::async(std::launch::async, train_one, slot));
        }
        for (auto& j : jobs) rec.promoted += j.get();
      } else {
        for (std::size_t slot = 0; slot < rec.selected.size(); ++slot) rec.promoted += train_one(slot);
      }
      AggregationResult agg = aggregate(global, server, uploads, gate_threshold);
      rec.aggregation = std::move(agg.report);
      next = std::move(agg.next_global);
      delta = std::move(agg.delta);
      for (std::size_t id : rec.selected) rec.pseudo_sizes.push_back(res.clients[id].pseudo_set.size());
    }

    res.trace.record(delta.values);
    global = std::move(next);
    server = server_supervised_update(global, arch, split.labeled, schedule(cfg), server_seed(cfg, round));
    test.end_training();

    for (const ClientState& c : res.clients) {
      rec.pseudo_total += c.pseudo_set.size();
      for (const auto& [id, p] : c.pseudo_set.entries()) {
        if (truth.at(id) == p.label) ++rec.pseudo_correct;
      }
    }
    if (round % cfg.eval_every == 0 || round == cfg.total_rounds) {
      rec.test_accuracy = evaluate(global, arch, test.read());
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (observer) observer(rec, global);
    res.records.push_back(std::move(rec));
  }

  res.final_global = global;
  res.final_server = server;
  res.final_accuracy = evaluate(global, arch, test.read());
  res.refused_test_reads = test.refused_reads();
  return res;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, load_data(cfg));
}

std::string metrics_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "# config_hash=" << r.config.hash() << '\n';
  out << "round,selected,included_count,delta_norm,pseudo_total,pseudo_correct,promoted,test_accuracy\n";
  for (const RoundRecord& rec : r.records) {
    out << rec.round << ',';
    for (std::size_t k = 0; k < rec.selected.size(); ++k) out << (k ? ";" : "") << rec.selected[k];
    out << ',' << rec.aggregation.included_count << ',' << fmt(rec.aggregation.delta_norm) << ','
        << rec.pseudo_total << ',' << rec.pseudo_correct << ',' << rec.promoted << ','
        << (rec.test_accuracy ? fmt(*rec.test_accuracy) : "") << '\n';
  }
  return out.str();
}

std::string aggregation_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "# config_hash=" << r.config.hash() << '\n';
  out << "round,client_id,S,gate,delta_norm\n";
  for (const RoundRecord& rec : r.records) {
    for (const ClientGate& g : rec.aggregation.clients) {
      out << rec.round << ',' << g.client_id << ',' << fmt(g.similarity) << ',' << (g.gate ? 1 : 0) << ','
          << fmt(rec.aggregation.delta_norm) << '\n';
    }
  }
  return out.str();
}

std::string convergence_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "# config_hash=" << r.config.hash() << '\n';
  out << "round,delta_norm,moving_avg,q_hat\n";
  const auto& norms = r.trace.norms();
  for (std::size_t k = 0; k < norms.size(); ++k) {
    const auto& q = r.trace.ratios()[k];
    out << (k + 1) << ',' << fmt(norms[k]) << ',' << fmt(r.trace.moving_average()[k]) << ','
        << (q ? fmt(*q) : "") << '\n';
  }
  return out.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << body;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::vector<ManifestEntry> persist(const ExperimentResult& result, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  const std::string hash = result.config.hash();

  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& body) {
    write_file(out_dir / name, body);
    written.push_back(name);
  };

  emit("metrics.csv", metrics_csv(result));
  emit("aggregation.csv", aggregation_csv(result));
  emit("convergence.csv", convergence_csv(result));
  {
    std::ostringstream timing;
    timing << "# config_hash=" << hash << "\nround,wall_ms\n";
    for (const RoundRecord& rec : result.records) timing << rec.round << ',' << fmt(rec.wall_ms) << '\n';
    emit("timing.csv", timing.str());
  }
  emit("config.json", config_json(result.config));
  save_checkpoint(out_dir / "checkpoint.bin", result.final_global);
  written.push_back("checkpoint.bin");
  emit("checkpoint.json", checkpoint_json(result.final_global, result.arch, hash));
  {
    nlohmann::json clients = nlohmann::json::array();
    for (const ClientState& c : result.clients) clients.push_back(nlohmann::json::parse(client_state_json(c)));
    emit("clients.json", nlohmann::json{{"config_hash", hash}, {"clients", clients}}.dump(2));
  }
  {
    nlohmann::json s;
    s["config_hash"] = hash;
    s["mode"] = to_string(result.config.mode);
    s["rounds"] = result.records.size();
    s["labeled_size"] = result.labeled_size;
    s["initial_accuracy"] = result.initial_accuracy;
    s["final_accuracy"] = result.final_accuracy;
    s["param_count"] = result.final_global.size();
    std::size_t pseudo = 0;
    for (const ClientState& c : result.clients) pseudo += c.pseudo_set.size();
    s["pseudo_labels"] = pseudo;
    if (auto v = contraction_verdict(result.trace, result.config.window)) {
      s["contracting"] = v->contracting;
      s["q_max"] = v->q_max ? nlohmann::json(*v->q_max) : nlohmann::json();
    }
    emit("summary.json", s.dump(2));
  }

  std::vector<ManifestEntry> manifest;
  nlohmann::json mj;
  mj["config_hash"] = hash;
  mj["files"] = nlohmann::json::array();
  for (const std::string& name : written) {
    const auto bytes = std::filesystem::file_size(out_dir / name, ec);
    if (ec) throw IoError("cannot stat " + (out_dir / name).string());
    manifest.push_back({(out_dir / name).string(), bytes});
    mj["files"].push_back({{"path", name}, {"bytes", bytes}});
  }
  write_file(out_dir / "manifest.json", mj.dump(2));
  manifest.push_back({(out_dir / "manifest.json").string(),
                      std::filesystem::file_size(out_dir / "manifest.json")});
  return manifest;
}

}  // namespace fedil
