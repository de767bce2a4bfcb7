#include "fedil/server.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedil/errors.hpp"
#include "fedil/rng.hpp"

namespace fedil {

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ParamVector server_supervised_update(const ParamVector& global, const ModelArch& arch,
                                     const LabeledSet& labeled, const SupervisedSchedule& schedule,
                                     std::uint64_t seed) {
  if (labeled.empty()) throw ConfigError("server labeled set is empty");
  if (schedule.batch_size == 0) throw ConfigError("batch_size must be positive");
  ParamVector params = global;
  std::vector<std::size_t> order(labeled.size());
  std::vector<LossTerm> terms;
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {tag(Stream::kServerShuffle), epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), start + schedule.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      terms.clear();
      for (std::size_t j = start; j < end; ++j) {
        const Example& e = labeled.examples[order[j]];
        terms.push_back(LossTerm::ce(e.features, labeled.label(order[j]), w));
      }
      LossAndGrad lg = loss_and_gradient(params, arch, terms);
      if (!std::isfinite(lg.loss)) throw TrainingError("server supervised update: non-finite loss");
      sgd_step_inplace(params, lg.grad, schedule.lr);
    }
  }
  return params;
}

GateResult cosine_gate(const ParamVector& client, const ParamVector& global, const ParamVector& server,
                       double threshold) {
  if (client.size() != global.size() || server.size() != global.size()) {
    throw ProtocolError("cosine gate on vectors of different length");
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t k = 0; k < global.size(); ++k) {
    const double u = client.values[k] - global.values[k];
    const double v = server.values[k] - global.values[k];
    dot += u * v;
    uu += u * u;
    vv += v * v;
  }
  if (vv == 0.0) return {0.0, true};
  if (uu == 0.0) return {1.0, true};
  const double s = std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
  return {s, s >= threshold};
}

AggregationResult aggregate(const ParamVector& global, const ParamVector& server,
                            std::span<const Upload> uploads, double gate_threshold) {
  if (uploads.empty()) throw ProtocolError("aggregate called without uploads");
  if (server.size() != global.size()) throw ProtocolError("server weights have the wrong length");
  for (const Upload& u : uploads) {
    if (u.params.size() != global.size()) {
      throw ProtocolError("client " + std::to_string(u.client_id) + " uploaded " +
                          std::to_string(u.params.size()) + " parameters, expected " +
                          std::to_string(global.size()));
    }
  }

  // theta'(t+1) = theta' + mean(theta*_i - theta') is evaluated as the mean of
  // the gated uploads so that a single gated upload is reproduced exactly.
  AggregationResult out;
  std::vector<double> sum(global.size(), 0.0);
  for (const Upload& u : uploads) {
    const GateResult g = cosine_gate(u.params, global, server, gate_threshold);
    out.report.clients.push_back({u.client_id, g.similarity, g.open});
    if (!g.open) continue;
    ++out.report.included_count;
    for (std::size_t k = 0; k < global.size(); ++k) sum[k] += u.params.values[k];
  }
  if (out.report.included_count == 0) {
    out.next_global = global;
    out.delta = ParamVector(global.size(), 0.0);
    return out;
  }
  const auto n = static_cast<double>(out.report.included_count);
  out.next_global = ParamVector(global.size());
  out.delta = ParamVector(global.size());
  for (std::size_t k = 0; k < global.size(); ++k) {
    out.next_global.values[k] = sum[k] / n;
    out.delta.values[k] = out.next_global.values[k] - global.values[k];
  }
  out.report.delta_norm = l2_norm(out.delta.values);
  return out;
}

std::vector<std::size_t> select_clients(std::size_t num_clients, std::size_t per_round,
                                        std::uint64_t seed, std::size_t round) {
  if (per_round > num_clients) {
    throw ConfigError("cannot select " + std::to_string(per_round) + " clients out of " +
                      std::to_string(num_clients));
  }
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  if (per_round == num_clients) return ids;
  Rng rng(derive_seed(seed, {tag(Stream::kSelect), round}));
  for (std::size_t k = 0; k < per_round; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, num_clients - 1);
    std::swap(ids[k], ids[pick(rng)]);
  }
  ids.resize(per_round);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace fedil
