#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fedil {

using ExampleId = std::int64_t;

/// A row of the full dataset. true_label is for splitting and evaluation;
/// client-facing types never carry it.
struct Example {
  ExampleId id = 0;
  std::vector<double> features;
  std::size_t true_label = 0;
};

struct Dataset {
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  /// Side length for square images (0 for non-image data).
  std::size_t image_side = 0;
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  std::vector<std::size_t> class_counts() const;
};

/// Server-held labeled data. The visible label of each entry is its true label.
struct LabeledSet {
  std::size_t num_classes = 0;
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  std::size_t label(std::size_t i) const { return examples[i].true_label; }
};

/// What a client sees of one of its examples.
struct UnlabeledExample {
  ExampleId id = 0;
  std::vector<double> features;
};

struct UnlabeledShard {
  std::size_t client_id = 0;
  std::vector<UnlabeledExample> examples;

  std::size_t size() const noexcept { return examples.size(); }
  /// Throws InputError when the id is not part of this shard.
  const UnlabeledExample& find(ExampleId id) const;
  bool contains(ExampleId id) const noexcept;
};

struct SplitResult {
  LabeledSet labeled;
  std::vector<Example> unlabeled;
};

/// Stratified split: round(gamma * |D|) labeled examples, allocated to
/// classes by largest remainder, with every class represented when the
/// labeled budget allows it.
SplitResult split_by_label_rate(const Dataset& dataset, double gamma, std::uint64_t seed);

/// K shards whose sizes differ by at most one.
std::vector<UnlabeledShard> partition_iid(std::span<const Example> pool, std::size_t num_clients,
                                          std::uint64_t seed);

/// Each shard holds exactly ceil(class_fraction * C) classes. Classes are
/// dealt round-robin over a seeded shuffle; each class's examples are split
/// evenly among the shards holding it.
std::vector<UnlabeledShard> partition_noniid(std::span<const Example> pool, std::size_t num_classes,
                                             std::size_t num_clients, double class_fraction,
                                             std::uint64_t seed);

/// Number of classes per shard under the non-IID rule.
std::size_t classes_per_shard(std::size_t num_classes, double class_fraction);

/// Gaussian clusters with identity covariance. The class means depend only
/// on (C, dim, separation): pairwise distance `separation` on a simplex
/// when C <= dim, otherwise adjacent points on a circle in the first two
/// coordinates. Ids start at id_offset.
Dataset gen_synthetic(std::size_t num_classes, std::size_t n_per_class, std::size_t dim,
                      double separation, std::uint64_t seed, ExampleId id_offset = 0);

std::vector<std::vector<double>> synthetic_means(std::size_t num_classes, std::size_t dim,
                                                 double separation);

/// MNIST IDX pair; pixels scaled to [0,1].
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path, ExampleId id_offset = 0);

/// CSV with columns id,label,f0..f{d-1}.
void export_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace fedil
