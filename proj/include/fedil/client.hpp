#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedil/augment.hpp"
#include "fedil/data.hpp"
#include "fedil/model.hpp"

namespace fedil {

/// Weak-branch diagnostics for one unlabeled example in one round.
struct Observation {
  ExampleId id = 0;
  double confidence = 0.0;       // max of the client prediction on the weak view
  std::size_t weak_label = 0;    // argmax of the client prediction
  std::size_t server_label = 0;  // argmax of the server-model prediction
  bool gate = false;             // confidence >= tau

  bool agrees() const noexcept { return weak_label == server_label; }
};

struct CredibilityEntry {
  std::size_t consecutive_hits = 0;
  std::optional<std::size_t> candidate_label;
  std::size_t agreement_count = 0;
};

/// Per-example credibility counters of one client. Only rounds in which
/// the client participated ever touch them.
class CredibilityTracker {
 public:
  const CredibilityEntry* find(ExampleId id) const;
  CredibilityEntry& entry(ExampleId id) { return entries_[id]; }
  const std::map<ExampleId, CredibilityEntry>& entries() const noexcept { return entries_; }

 private:
  std::map<ExampleId, CredibilityEntry> entries_;
};

struct PseudoLabel {
  std::size_t label = 0;
  std::size_t round = 0;
};

/// Append-only set of promoted examples with frozen labels.
class PseudoLabelSet {
 public:
  /// Throws InvariantError if the id is already enrolled.
  void insert(ExampleId id, std::size_t label, std::size_t round);

  bool contains(ExampleId id) const { return entries_.count(id) != 0; }
  std::optional<std::size_t> label(ExampleId id) const;
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::map<ExampleId, PseudoLabel>& entries() const noexcept { return entries_; }

 private:
  std::map<ExampleId, PseudoLabel> entries_;
};

struct Promotion {
  ExampleId id = 0;
  std::size_t label = 0;
};

struct CredibilityRule {
  double tau = 0.95;
  /// Consecutive qualifying participations required; 0 disables promotion.
  std::size_t promote_t = 7;
  /// Agreement events required; 0 means "same as promote_t".
  std::size_t agreement_t = 0;

  std::size_t agreement_threshold() const noexcept { return agreement_t == 0 ? promote_t : agreement_t; }
};

/// Advances the counters of every observed, not yet promoted example and
/// returns the examples that now satisfy both promotion thresholds.
///
/// An observation qualifies when it is confident (>= tau), the client and
/// server argmaxes agree, and the argmax matches the current candidate label
/// (or there is none). A qualifying observation extends the run; anything
/// else resets the run and clears the candidate. Agreement events are
/// counted whenever the two argmaxes match and never reset.
std::vector<Promotion> update_credibility(CredibilityTracker& tracker,
                                          std::span<const Observation> observations,
                                          const CredibilityRule& rule,
                                          const PseudoLabelSet& already_promoted);

/// Enrolls promoted examples (resolved against the shard) with frozen labels.
void promote_into(PseudoLabelSet& set, std::span<const Promotion> promotions,
                  const UnlabeledShard& shard, std::size_t round);

PseudoLabelSet promote(PseudoLabelSet set, std::span<const Promotion> promotions,
                       const UnlabeledShard& shard, std::size_t round);

struct ViewPair {
  AugmentedView weak;
  AugmentedView strong;
};

struct LossWeights {
  double unsup_ce = 1.0;        // confidence-gated weak->strong cross-entropy
  double consistency_kl = 1.0;  // KL(server || client) on the weak view
  double pseudo_ce = 1.0;       // cross-entropy on the frozen pseudo-label set
};

struct UnsupLosses {
  double xi_a = 0.0;  // mean over gated examples; 0 when none is gated
  double xi_b = 0.0;  // mean over the batch
  std::size_t gated = 0;
  std::vector<Observation> diagnostics;
};

/// Losses of one unlabeled batch evaluated at `client` with reference `server`.
UnsupLosses compute_unsup_losses(const ParamVector& client, const ParamVector& server,
                                 const ModelArch& arch, std::span<const ViewPair> batch, double tau);

/// Mean cross-entropy of the model on the original features of every
/// pseudo-set entry against its frozen label (0 for an empty set).
double compute_pseudo_loss(const ParamVector& params, const ModelArch& arch,
                           const UnlabeledShard& shard, const PseudoLabelSet& set);

struct ClientState {
  std::size_t client_id = 0;
  UnlabeledShard shard;
  CredibilityTracker tracker;
  PseudoLabelSet pseudo_set;
  std::uint64_t seed = 0;
  std::size_t participations = 0;

  ClientState() = default;
  ClientState(UnlabeledShard s, std::uint64_t run_seed);
};

struct ClientHyper {
  std::size_t local_epochs = 5;
  std::size_t batch_size = 32;
  double lr = 0.05;
  CredibilityRule rule;
  LossWeights weights;
  AugmentParams augment;
  /// When false the inference pass and promotion are skipped entirely.
  bool credibility = true;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  ParamVector params;
  std::vector<Observation> observations;
  std::vector<Promotion> promoted;
  std::size_t steps = 0;
  double last_loss = 0.0;
};

/// One participation: E epochs of SGD from `global` on the summed losses,
/// then a credibility update driven by an inference pass made with the
/// start-of-round weights. Neither `global` nor `server` is modified.
/// Throws TrainingError naming the client on a non-finite loss.
ClientUpdate client_round(ClientState& state, const ParamVector& global, const ParamVector& server,
                          const ModelArch& arch, const ClientHyper& hyper, std::size_t round);

/// Weak-view inference over the not-yet-promoted part of the shard.
std::vector<Observation> infer_observations(const ClientState& state, const ParamVector& global,
                                            const ParamVector& server, const ModelArch& arch,
                                            const ClientHyper& hyper, std::size_t round);

/// JSON dump of counters and pseudo-set contents.
std::string client_state_json(const ClientState& state);

}  // namespace fedil
