#include "fedil/client.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedil/errors.hpp"
#include "fedil/rng.hpp"
#include "json.hpp"

namespace fedil {

const CredibilityEntry* CredibilityTracker::find(ExampleId id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

void PseudoLabelSet::insert(ExampleId id, std::size_t label, std::size_t round) {
  auto [it, inserted] = entries_.try_emplace(id, PseudoLabel{label, round});
  if (!inserted) {
    throw InvariantError("example " + std::to_string(id) + " promoted twice (frozen label " +
                         std::to_string(it->second.label) + " since round " +
                         std::to_string(it->second.round) + ")");
  }
}

std::optional<std::size_t> PseudoLabelSet::label(ExampleId id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second.label;
}

std::vector<Promotion> update_credibility(CredibilityTracker& tracker,
                                          std::span<const Observation> observations,
                                          const CredibilityRule& rule,
                                          const PseudoLabelSet& already_promoted) {
  std::vector<Promotion> promoted;
  for (const Observation& obs : observations) {
    if (already_promoted.contains(obs.id)) continue;
    CredibilityEntry& e = tracker.entry(obs.id);
    const bool agree = obs.agrees();
    const bool stable = !e.candidate_label || *e.candidate_label == obs.weak_label;
    if (agree) ++e.agreement_count;
    if (obs.confidence >= rule.tau && agree && stable) {
      ++e.consecutive_hits;
      e.candidate_label = obs.weak_label;
    } else {
      e.consecutive_hits = 0;
      e.candidate_label.reset();
    }
    if (rule.promote_t > 0 && e.consecutive_hits >= rule.promote_t &&
        e.agreement_count >= rule.agreement_threshold()) {
      promoted.push_back({obs.id, *e.candidate_label});
    }
  }
  return promoted;
}

void promote_into(PseudoLabelSet& set, std::span<const Promotion> promotions,
                  const UnlabeledShard& shard, std::size_t round) {
  for (const Promotion& p : promotions) {
    // Enrolment goes through the provenance lookup; unknown ids are rejected.
    const UnlabeledExample& source = shard.find(p.id);
    set.insert(source.id, p.label, round);
  }
}

PseudoLabelSet promote(PseudoLabelSet set, std::span<const Promotion> promotions,
                       const UnlabeledShard& shard, std::size_t round) {
  promote_into(set, promotions, shard, round);
  return set;
}

namespace {

// Loss terms of one unlabeled batch. The spans inside `terms` point into
// `pairs` and `server_probs`, which must outlive them.
struct UnsupTerms {
  UnsupLosses losses;
  std::vector<std::vector<double>> server_probs;
  std::vector<LossTerm> terms;
};

void build_unsup_terms(const ParamVector& client, const ParamVector& server, const ModelArch& arch,
                       std::span<const ViewPair> pairs, double tau, const LossWeights& w,
                       UnsupTerms& out) {
  out.losses = {};
  out.terms.clear();
  out.server_probs.assign(pairs.size(), {});
  if (pairs.empty()) return;

  std::vector<std::size_t> gated_idx;
  std::vector<std::size_t> pseudo_labels(pairs.size());
  double kl_sum = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const ViewPair& pair = pairs[k];
    const ProbDist weak = forward(client, arch, pair.weak.view);
    ProbDist ref = forward(server, arch, pair.weak.view);
    Observation obs;
    obs.id = pair.weak.source_id;
    obs.confidence = weak.max();
    obs.weak_label = weak.argmax();
    obs.server_label = ref.argmax();
    obs.gate = obs.confidence >= tau;
    if (obs.gate) gated_idx.push_back(k);
    pseudo_labels[k] = obs.weak_label;
    kl_sum += kl_divergence(ref, weak);
    out.server_probs[k] = std::move(ref.probs);
    out.losses.diagnostics.push_back(obs);
  }
  out.losses.gated = gated_idx.size();
  out.losses.xi_b = kl_sum / static_cast<double>(pairs.size());

  double ce_sum = 0.0;
  for (std::size_t k : gated_idx) {
    ce_sum += cross_entropy(forward(client, arch, pairs[k].strong.view), pseudo_labels[k]);
  }
  out.losses.xi_a = gated_idx.empty() ? 0.0 : ce_sum / static_cast<double>(gated_idx.size());

  if (w.unsup_ce != 0.0 && !gated_idx.empty()) {
    const double wa = w.unsup_ce / static_cast<double>(gated_idx.size());
    for (std::size_t k : gated_idx) out.terms.push_back(LossTerm::ce(pairs[k].strong.view, pseudo_labels[k], wa));
  }
  if (w.consistency_kl != 0.0) {
    const double wb = w.consistency_kl / static_cast<double>(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      out.terms.push_back(LossTerm::kl(pairs[k].weak.view, out.server_probs[k], wb));
    }
  }
}

std::uint64_t round_seed(const ClientState& s, Stream stream, std::size_t round, std::size_t epoch) {
  return derive_seed(s.seed, {tag(stream), round, epoch});
}

// Shard indices of examples that are still unlabeled.
std::vector<std::size_t> unsup_pool(const ClientState& s) {
  std::vector<std::size_t> pool;
  pool.reserve(s.shard.size());
  for (std::size_t k = 0; k < s.shard.size(); ++k) {
    if (!s.pseudo_set.contains(s.shard.examples[k].id)) pool.push_back(k);
  }
  return pool;
}

}  // namespace

UnsupLosses compute_unsup_losses(const ParamVector& client, const ParamVector& server,
                                 const ModelArch& arch, std::span<const ViewPair> batch, double tau) {
  UnsupTerms t;
  build_unsup_terms(client, server, arch, batch, tau, LossWeights{}, t);
  return std::move(t.losses);
}

double compute_pseudo_loss(const ParamVector& params, const ModelArch& arch,
                           const UnlabeledShard& shard, const PseudoLabelSet& set) {
  if (set.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [id, entry] : set.entries()) {
    sum += cross_entropy(forward(params, arch, shard.find(id).features), entry.label);
  }
  return sum / static_cast<double>(set.size());
}

ClientState::ClientState(UnlabeledShard s, std::uint64_t run_seed)
    : client_id(s.client_id), shard(std::move(s)), seed(derive_seed(run_seed, {0xC11E47ULL, client_id})) {}

std::vector<Observation> infer_observations(const ClientState& state, const ParamVector& global,
                                            const ParamVector& server, const ModelArch& arch,
                                            const ClientHyper& hyper, std::size_t round) {
  const std::uint64_t seed = round_seed(state, Stream::kInference, round, 0);
  const WeakAugment weak = hyper.augment.weak();
  std::vector<Observation> out;
  for (std::size_t k : unsup_pool(state)) {
    const AugmentedView v = weak_augment(state.shard.examples[k], weak, seed);
    const ProbDist p = forward(global, arch, v.view);
    const ProbDist ref = forward(server, arch, v.view);
    Observation obs;
    obs.id = v.source_id;
    obs.confidence = p.max();
    obs.weak_label = p.argmax();
    obs.server_label = ref.argmax();
    obs.gate = obs.confidence >= hyper.rule.tau;
    out.push_back(obs);
  }
  return out;
}

ClientUpdate client_round(ClientState& state, const ParamVector& global, const ParamVector& server,
                          const ModelArch& arch, const ClientHyper& hyper, std::size_t round) {
  if (global.size() != arch.param_count() || server.size() != arch.param_count()) {
    throw ConfigError("client " + std::to_string(state.client_id) + ": broadcast weights do not match the model");
  }
  if (hyper.batch_size == 0) throw ConfigError("batch_size must be positive");

  ClientUpdate update;
  update.client_id = state.client_id;
  update.params = global;
  ++state.participations;

  if (hyper.credibility) update.observations = infer_observations(state, global, server, arch, hyper, round);

  const std::vector<std::size_t> pool = unsup_pool(state);
  std::vector<std::pair<std::size_t, std::size_t>> pseudo;  // (shard index, frozen label)
  for (std::size_t k = 0; k < state.shard.size(); ++k) {
    if (auto l = state.pseudo_set.label(state.shard.examples[k].id)) pseudo.emplace_back(k, *l);
  }
  const bool use_pseudo = hyper.weights.pseudo_ce != 0.0 && !pseudo.empty();
  const std::size_t bs = hyper.batch_size;
  const WeakAugment weak = hyper.augment.weak();
  const StrongAugment strong = hyper.augment.strong();

  UnsupTerms unsup;
  std::vector<ViewPair> pairs;
  for (std::size_t epoch = 0; epoch < hyper.local_epochs; ++epoch) {
    std::vector<std::size_t> order = pool;
    Rng shuffle_rng(round_seed(state, Stream::kClientShuffle, round, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::vector<std::size_t> porder(pseudo.size());
    std::iota(porder.begin(), porder.end(), std::size_t{0});
    Rng pseudo_rng(round_seed(state, Stream::kPseudoShuffle, round, epoch));
    std::shuffle(porder.begin(), porder.end(), pseudo_rng);

    const std::uint64_t weak_seed = round_seed(state, Stream::kAugmentWeak, round, epoch);
    const std::uint64_t strong_seed = round_seed(state, Stream::kAugmentStrong, round, epoch);
    const std::size_t driver = !order.empty() ? order.size() : (use_pseudo ? pseudo.size() : 0);
    const std::size_t steps = (driver + bs - 1) / bs;

    for (std::size_t step = 0; step < steps; ++step) {
      pairs.clear();
      for (std::size_t j = step * bs; j < std::min(order.size(), (step + 1) * bs); ++j) {
        const UnlabeledExample& x = state.shard.examples[order[j]];
        pairs.push_back({weak_augment(x, weak, weak_seed), strong_augment(x, strong, strong_seed)});
      }
      build_unsup_terms(update.params, server, arch, pairs, hyper.rule.tau, hyper.weights, unsup);
      std::vector<LossTerm> terms = unsup.terms;
      if (use_pseudo) {
        const std::size_t nb = std::min(bs, pseudo.size());
        const double wc = hyper.weights.pseudo_ce / static_cast<double>(nb);
        for (std::size_t j = 0; j < nb; ++j) {
          const auto& [idx, label] = pseudo[porder[(step * bs + j) % pseudo.size()]];
          terms.push_back(LossTerm::ce(state.shard.examples[idx].features, label, wc));
        }
      }
      if (terms.empty()) continue;
      LossAndGrad lg = loss_and_gradient(update.params, arch, terms);
      if (!std::isfinite(lg.loss) || !lg.grad.all_finite()) {
        throw TrainingError("client " + std::to_string(state.client_id) + " round " +
                            std::to_string(round) + ": non-finite loss");
      }
      sgd_step_inplace(update.params, lg.grad, hyper.lr);
      update.last_loss = lg.loss;
      ++update.steps;
    }
  }
  if (!update.params.all_finite()) {
    throw TrainingError("client " + std::to_string(state.client_id) + " round " +
                        std::to_string(round) + ": weights became non-finite");
  }

  if (hyper.credibility) {
    update.promoted = update_credibility(state.tracker, update.observations, hyper.rule, state.pseudo_set);
    promote_into(state.pseudo_set, update.promoted, state.shard, round);
  }
  return update;
}

std::string client_state_json(const ClientState& state) {
  nlohmann::json j;
  j["client_id"] = state.client_id;
  j["shard_size"] = state.shard.size();
  j["participations"] = state.participations;
  nlohmann::json tracker = nlohmann::json::array();
  for (const auto& [id, e] : state.tracker.entries()) {
    tracker.push_back({{"id", id},
                       {"consecutive_hits", e.consecutive_hits},
                       {"candidate_label", e.candidate_label ? nlohmann::json(*e.candidate_label) : nlohmann::json()},
                       {"agreement_count", e.agreement_count}});
  }
  j["tracker"] = std::move(tracker);
  nlohmann::json pseudo = nlohmann::json::array();
  for (const auto& [id, p] : state.pseudo_set.entries()) {
    pseudo.push_back({{"id", id}, {"label", p.label}, {"round", p.round}});
  }
  j["pseudo_set"] = std::move(pseudo);
  return j.dump(2);
}

}  // namespace fedil
