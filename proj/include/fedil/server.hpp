#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedil/data.hpp"
#include "fedil/model.hpp"

namespace fedil {

struct SupervisedSchedule {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double lr = 0.05;
};

/// theta_0: `epochs` passes of minibatch SGD on the labeled set's
/// cross-entropy, starting from `global`. Throws ConfigError on an empty set.
ParamVector server_supervised_update(const ParamVector& global, const ModelArch& arch,
                                     const LabeledSet& labeled, const SupervisedSchedule& schedule,
                                     std::uint64_t seed);

struct GateResult {
  double similarity = 0.0;
  bool open = false;
};

/// cos(client - global, server - global) and the gate bit (similarity >= threshold).
/// A zero server direction opens the gate with similarity 0; a zero client
/// delta opens it with similarity 1.
GateResult cosine_gate(const ParamVector& client, const ParamVector& global, const ParamVector& server,
                       double threshold = 0.0);

struct Upload {
  std::size_t client_id = 0;
  ParamVector params;
};

struct ClientGate {
  std::size_t client_id = 0;
  double similarity = 0.0;
  bool gate = false;
};

struct AggregationReport {
  std::vector<ClientGate> clients;
  double delta_norm = 0.0;
  std::size_t included_count = 0;
};

struct AggregationResult {
  ParamVector next_global;
  ParamVector delta;
  AggregationReport report;
};

/// Mean of the gated client deltas added to `global`. If no upload passes
/// the gate the delta is zero and `global` is returned unchanged.
/// Throws ProtocolError naming the client on a length mismatch.
AggregationResult aggregate(const ParamVector& global, const ParamVector& server,
                            std::span<const Upload> uploads, double gate_threshold = 0.0);

/// m distinct ids from [0, K), uniform without replacement, sorted.
/// Deterministic in (seed, round).
std::vector<std::size_t> select_clients(std::size_t num_clients, std::size_t per_round,
                                        std::uint64_t seed, std::size_t round);

double l2_norm(std::span<const double> v);

}  // namespace fedil
