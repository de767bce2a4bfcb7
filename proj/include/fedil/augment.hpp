#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedil/data.hpp"

namespace fedil {

enum class ViewKind { kWeak, kStrong };

/// A perturbed copy of an unlabeled example. source_id is the provenance
/// link back to the original; re-augmenting the original with aug_seed and
/// the same parameters reproduces `view` exactly.
struct AugmentedView {
  ExampleId source_id = 0;
  std::vector<double> view;
  ViewKind kind = ViewKind::kWeak;
  std::uint64_t aug_seed = 0;
};

/// Weak branch: Gaussian noise, plus a random shift of up to shift_pixels
/// in each direction when the data are square images.
struct WeakAugment {
  double noise = 0.05;
  std::size_t shift_pixels = 0;
  std::size_t image_side = 0;
};

/// Strong branch: larger noise and feature masking (a contiguous square
/// block for images, random coordinates otherwise).
struct StrongAugment {
  double noise = 0.3;
  double mask_fraction = 0.2;
  std::size_t shift_pixels = 0;
  std::size_t image_side = 0;
};

struct AugmentParams {
  double weak_noise = 0.05;
  double strong_noise = 0.3;
  double mask_fraction = 0.2;
  std::size_t shift_pixels = 0;
  std::size_t image_side = 0;

  /// Throws ConfigError on negative scales, mask_fraction outside [0,1], or
  /// strong noise not exceeding weak noise (both zero is allowed).
  void validate() const;

  WeakAugment weak() const { return {weak_noise, shift_pixels, image_side}; }
  StrongAugment strong() const { return {strong_noise, mask_fraction, shift_pixels, image_side}; }
};

AugmentedView weak_augment(const UnlabeledExample& x, const WeakAugment& params, std::uint64_t seed);
AugmentedView strong_augment(const UnlabeledExample& x, const StrongAugment& params, std::uint64_t seed);

AugmentedView augment(const UnlabeledExample& x, ViewKind kind, const AugmentParams& params,
                      std::uint64_t seed);

/// Provenance lookup: the un-augmented example a view was derived from.
const UnlabeledExample& resolve(const UnlabeledShard& shard, const AugmentedView& view);

/// Re-derives a view from its source and stored seed.
AugmentedView reproduce(const UnlabeledShard& shard, const AugmentedView& view,
                        const AugmentParams& params);

/// Euclidean distance between a view and its source features.
double distortion(std::span<const double> original, std::span<const double> view);

}  // namespace fedil
