#include "fedil/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedil/errors.hpp"
#include "fedil/rng.hpp"

namespace fedil {

void AugmentParams::validate() const {
  if (weak_noise < 0.0 || strong_noise < 0.0) throw ConfigError("augmentation noise must be >= 0");
  if (mask_fraction < 0.0 || mask_fraction > 1.0) throw ConfigError("mask_fraction must lie in [0,1]");
  const bool both_off = weak_noise == 0.0 && strong_noise == 0.0;
  if (!both_off && !(strong_noise > weak_noise)) {
    throw ConfigError("strong_noise must exceed weak_noise");
  }
}

namespace {

// Shifts a row-major square image by (dx, dy), filling with zeros.
void shift_image(std::vector<double>& v, std::size_t side, long dx, long dy) {
  std::vector<double> out(v.size(), 0.0);
  const long s = static_cast<long>(side);
  for (long r = 0; r < s; ++r) {
    for (long c = 0; c < s; ++c) {
      const long sr = r - dy;
      const long sc = c - dx;
      if (sr >= 0 && sr < s && sc >= 0 && sc < s) out[r * s + c] = v[sr * s + sc];
    }
  }
  v.swap(out);
}

void maybe_shift(std::vector<double>& v, std::size_t shift, std::size_t side, Rng& rng) {
  if (shift == 0 || side == 0 || side * side != v.size()) return;
  std::uniform_int_distribution<long> d(-static_cast<long>(shift), static_cast<long>(shift));
  const long dx = d(rng);
  const long dy = d(rng);
  if (dx != 0 || dy != 0) shift_image(v, side, dx, dy);
}

void add_noise(std::vector<double>& v, double scale, Rng& rng) {
  if (scale == 0.0) return;
  std::normal_distribution<double> n(0.0, scale);
  for (double& x : v) x += n(rng);
}

void apply_mask(std::vector<double>& v, double fraction, std::size_t side, Rng& rng) {
  if (fraction <= 0.0 || v.empty()) return;
  if (side > 0 && side * side == v.size()) {
    const auto block = std::min<std::size_t>(
        side, static_cast<std::size_t>(std::lround(std::sqrt(fraction) * static_cast<double>(side))));
    if (block == 0) return;
    std::uniform_int_distribution<std::size_t> pos(0, side - block);
    const std::size_t r0 = pos(rng);
    const std::size_t c0 = pos(rng);
    for (std::size_t r = r0; r < r0 + block; ++r) {
      for (std::size_t c = c0; c < c0 + block; ++c) v[r * side + c] = 0.0;
    }
    return;
  }
  const auto count = std::min<std::size_t>(
      v.size(), static_cast<std::size_t>(std::lround(fraction * static_cast<double>(v.size()))));
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
    std::swap(idx[k], idx[pick(rng)]);
    v[idx[k]] = 0.0;
  }
}

}  // namespace

AugmentedView weak_augment(const UnlabeledExample& x, const WeakAugment& params, std::uint64_t seed) {
  AugmentedView out{x.id, x.features, ViewKind::kWeak, seed};
  Rng rng(derive_seed(seed, {tag(Stream::kAugmentWeak), static_cast<std::uint64_t>(x.id)}));
  maybe_shift(out.view, params.shift_pixels, params.image_side, rng);
  add_noise(out.view, params.noise, rng);
  return out;
}

AugmentedView strong_augment(const UnlabeledExample& x, const StrongAugment& params, std::uint64_t seed) {
  AugmentedView out{x.id, x.features, ViewKind::kStrong, seed};
  Rng rng(derive_seed(seed, {tag(Stream::kAugmentStrong), static_cast<std::uint64_t>(x.id)}));
  maybe_shift(out.view, params.shift_pixels, params.image_side, rng);
  add_noise(out.view, params.noise, rng);
  apply_mask(out.view, params.mask_fraction, params.image_side, rng);
  return out;
}

AugmentedView augment(const UnlabeledExample& x, ViewKind kind, const AugmentParams& params,
                      std::uint64_t seed) {
  return kind == ViewKind::kWeak ? weak_augment(x, params.weak(), seed)
                                 : strong_augment(x, params.strong(), seed);
}

const UnlabeledExample& resolve(const UnlabeledShard& shard, const AugmentedView& view) {
  return shard.find(view.source_id);
}

AugmentedView reproduce(const UnlabeledShard& shard, const AugmentedView& view,
                        const AugmentParams& params) {
  return augment(resolve(shard, view), view.kind, params, view.aug_seed);
}

double distortion(std::span<const double> original, std::span<const double> view) {
  if (original.size() != view.size()) throw InputError("distortion of vectors of different length");
  double s = 0.0;
  for (std::size_t k = 0; k < original.size(); ++k) {
    const double d = view[k] - original[k];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace fedil
