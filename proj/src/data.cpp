#include "fedil/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fedil/errors.hpp"
#include "fedil/rng.hpp"

namespace fedil {

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const Example& e : examples) ++counts.at(e.true_label);
  return counts;
}

const UnlabeledExample& UnlabeledShard::find(ExampleId id) const {
  auto it = std::lower_bound(examples.begin(), examples.end(), id,
                             [](const UnlabeledExample& e, ExampleId v) { return e.id < v; });
  if (it == examples.end() || it->id != id) {
    throw InputError("example " + std::to_string(id) + " is not in shard of client " +
                     std::to_string(client_id));
  }
  return *it;
}

bool UnlabeledShard::contains(ExampleId id) const noexcept {
  auto it = std::lower_bound(examples.begin(), examples.end(), id,
                             [](const UnlabeledExample& e, ExampleId v) { return e.id < v; });
  return it != examples.end() && it->id == id;
}

namespace {

UnlabeledShard make_shard(std::size_t client_id, std::span<const Example> pool,
                          std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pool[a].id < pool[b].id; });
  UnlabeledShard shard;
  shard.client_id = client_id;
  shard.examples.reserve(idx.size());
  for (std::size_t i : idx) shard.examples.push_back({pool[i].id, pool[i].features});
  return shard;
}

}  // namespace

SplitResult split_by_label_rate(const Dataset& dataset, double gamma, std::uint64_t seed) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("label rate gamma must lie in (0,1)");
  const std::size_t n = dataset.size();
  if (gamma * static_cast<double>(n) < 1.0) {
    throw ConfigError("gamma * |D| < 1: no labeled example would be drawn");
  }
  const auto n_labeled = static_cast<std::size_t>(std::llround(gamma * static_cast<double>(n)));
  const std::size_t C = dataset.num_classes;

  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < n; ++i) by_class.at(dataset.examples[i].true_label).push_back(i);
  for (std::size_t c = 0; c < C; ++c) {
    Rng rng(derive_seed(seed, {tag(Stream::kSplit), c}));
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
  }

  // Largest-remainder allocation proportional to class frequency.
  std::vector<std::size_t> quota(C, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const double exact = static_cast<double>(n_labeled) * static_cast<double>(by_class[c].size()) /
                         static_cast<double>(n);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n_labeled && k < remainders.size(); ++k) {
    const std::size_t c = remainders[k].second;
    if (quota[c] < by_class[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  // Cover every present class when the budget has room for it.
  const auto present = static_cast<std::size_t>(
      std::count_if(by_class.begin(), by_class.end(), [](const auto& v) { return !v.empty(); }));
  if (n_labeled >= present) {
    for (std::size_t c = 0; c < C; ++c) {
      if (quota[c] != 0 || by_class[c].empty()) continue;
      const auto donor = static_cast<std::size_t>(std::max_element(quota.begin(), quota.end()) - quota.begin());
      if (quota[donor] <= 1) break;
      --quota[donor];
      quota[c] = 1;
    }
  }

  std::vector<bool> is_labeled(n, false);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < quota[c]; ++k) is_labeled[by_class[c][k]] = true;
  }
  SplitResult out;
  out.labeled.num_classes = C;
  for (std::size_t i = 0; i < n; ++i) {
    (is_labeled[i] ? out.labeled.examples : out.unlabeled).push_back(dataset.examples[i]);
  }
  return out;
}

std::vector<UnlabeledShard> partition_iid(std::span<const Example> pool, std::size_t num_clients,
                                          std::uint64_t seed) {
  if (num_clients == 0) throw ConfigError("client count must be positive");
  if (num_clients > pool.size()) {
    throw ConfigError("cannot split " + std::to_string(pool.size()) + " examples over " +
                      std::to_string(num_clients) + " clients");
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {tag(Stream::kPartition)}));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t base = pool.size() / num_clients;
  const std::size_t extra = pool.size() % num_clients;
  std::vector<UnlabeledShard> shards;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < num_clients; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    shards.push_back(make_shard(k, pool, {order.begin() + pos, order.begin() + pos + len}));
    pos += len;
  }
  return shards;
}

std::size_t classes_per_shard(std::size_t num_classes, double class_fraction) {
  if (!(class_fraction > 0.0 && class_fraction <= 1.0)) {
    throw ConfigError("class_fraction must lie in (0,1]");
  }
  const double raw = class_fraction * static_cast<double>(num_classes);
  // Guard against 0.2 * 10 landing a hair above 2.
  const auto c = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(c, 1, num_classes);
}

std::vector<UnlabeledShard> partition_noniid(std::span<const Example> pool, std::size_t num_classes,
                                             std::size_t num_clients, double class_fraction,
                                             std::uint64_t seed) {
  if (num_clients == 0) throw ConfigError("client count must be positive");
  const std::size_t per_shard = classes_per_shard(num_classes, class_fraction);

  std::vector<std::size_t> class_order(num_classes);
  std::iota(class_order.begin(), class_order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {tag(Stream::kPartition)}));
  std::shuffle(class_order.begin(), class_order.end(), rng);

  std::vector<std::vector<std::size_t>> holders(num_classes);
  for (std::size_t k = 0; k < num_clients; ++k) {
    for (std::size_t j = 0; j < per_shard; ++j) {
      holders[class_order[(k * per_shard + j) % num_classes]].push_back(k);
    }
  }

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].true_label >= num_classes) throw ConfigError("pool label out of range");
    by_class[pool[i].true_label].push_back(i);
  }

  std::vector<std::vector<std::size_t>> members(num_clients);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!by_class[c].empty() && holders[c].empty()) {
      throw ConfigError("class " + std::to_string(c) + " cannot be placed: " +
                        std::to_string(num_clients) + " clients x " + std::to_string(per_shard) +
                        " classes each do not cover " + std::to_string(num_classes) + " classes");
    }
    if (by_class[c].size() < holders[c].size()) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                        " examples but " + std::to_string(holders[c].size()) + " shards need it");
    }
    Rng crng(derive_seed(seed, {tag(Stream::kPartition), c + 1}));
    std::shuffle(by_class[c].begin(), by_class[c].end(), crng);
    const std::size_t h = holders[c].size();
    if (h == 0) continue;
    const std::size_t base = by_class[c].size() / h;
    const std::size_t extra = by_class[c].size() % h;
    std::size_t pos = 0;
    for (std::size_t r = 0; r < h; ++r) {
      const std::size_t len = base + (r < extra ? 1 : 0);
      auto& dst = members[holders[c][r]];
      dst.insert(dst.end(), by_class[c].begin() + pos, by_class[c].begin() + pos + len);
      pos += len;
    }
  }

  std::vector<UnlabeledShard> shards;
  shards.reserve(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) shards.push_back(make_shard(k, pool, std::move(members[k])));
  return shards;
}

std::vector<std::vector<double>> synthetic_means(std::size_t num_classes, std::size_t dim,
                                                 double separation) {
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
  if (num_classes <= dim) {
    const double scale = separation / std::numbers::sqrt2;
    for (std::size_t c = 0; c < num_classes; ++c) means[c][c] = scale;
  } else {
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(num_classes)));
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
      means[c][0] = radius * std::cos(angle);
      means[c][1] = radius * std::sin(angle);
    }
  }
  return means;
}

Dataset gen_synthetic(std::size_t num_classes, std::size_t n_per_class, std::size_t dim,
                      double separation, std::uint64_t seed, ExampleId id_offset) {
  if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (dim < 2) throw ConfigError("synthetic data needs dim >= 2");
  const auto means = synthetic_means(num_classes, dim, separation);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.input_dim = dim;
  ds.examples.reserve(num_classes * n_per_class);
  Rng rng(derive_seed(seed, {tag(Stream::kSynthetic)}));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      Example e;
      e.id = id_offset + static_cast<ExampleId>(i * num_classes + c);
      e.true_label = c;
      e.features.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) e.features[d] = means[c][d] + noise(rng);
      ds.examples.push_back(std::move(e));
    }
  }
  return ds;
}

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::filesystem::path& path) {
  if (off + 4 > b.size()) {
    throw FormatError(path.string() + ": truncated header at byte offset " + std::to_string(off) +
                      " (file has " + std::to_string(b.size()) + " bytes)");
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path, ExampleId id_offset) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);

  if (const auto m = be32(img, 0, images_path); m != 0x00000803) {
    std::ostringstream msg;
    msg << images_path.string() << ": bad IDX image magic 0x" << std::hex << m << " at byte offset 0";
    throw FormatError(msg.str());
  }
  if (const auto m = be32(lab, 0, labels_path); m != 0x00000801) {
    std::ostringstream msg;
    msg << labels_path.string() << ": bad IDX label magic 0x" << std::hex << m << " at byte offset 0";
    throw FormatError(msg.str());
  }
  const std::size_t n_img = be32(img, 4, images_path);
  const std::size_t rows = be32(img, 8, images_path);
  const std::size_t cols = be32(img, 12, images_path);
  const std::size_t n_lab = be32(lab, 4, labels_path);
  if (n_img != n_lab) {
    throw FormatError("image count " + std::to_string(n_img) + " does not match label count " +
                      std::to_string(n_lab));
  }
  const std::size_t pixels = rows * cols;
  const std::size_t img_expected = 16 + n_img * pixels;
  if (img.size() < img_expected) {
    const std::size_t bad = (img.size() - 16) / std::max<std::size_t>(pixels, 1);
    throw FormatError(images_path.string() + ": truncated in image " + std::to_string(bad) +
                      " at byte offset " + std::to_string(img.size()) + ": expected " +
                      std::to_string(img_expected) + " bytes, got " + std::to_string(img.size()));
  }
  const std::size_t lab_expected = 8 + n_lab;
  if (lab.size() < lab_expected) {
    throw FormatError(labels_path.string() + ": truncated at byte offset " + std::to_string(lab.size()) +
                      ": expected " + std::to_string(lab_expected) + " bytes, got " +
                      std::to_string(lab.size()));
  }

  Dataset ds;
  ds.num_classes = 10;
  ds.input_dim = pixels;
  ds.image_side = rows == cols ? rows : 0;
  ds.examples.reserve(n_img);
  for (std::size_t i = 0; i < n_img; ++i) {
    Example e;
    e.id = id_offset + static_cast<ExampleId>(i);
    e.true_label = lab[8 + i];
    if (e.true_label > 9) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(e.true_label) +
                        " out of range at byte offset " + std::to_string(8 + i));
    }
    e.features.resize(pixels);
    const std::uint8_t* px = img.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) e.features[p] = px[p] / 255.0;
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

void export_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "id,label";
  for (std::size_t d = 0; d < dataset.input_dim; ++d) out << ",f" << d;
  out << '\n' << std::setprecision(17);
  for (const Example& e : dataset.examples) {
    out << e.id << ',' << e.true_label;
    for (double v : e.features) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fedil
