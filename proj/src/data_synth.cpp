#include "gbe/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gbe/layers.hpp"
#include "gbe/serialize.hpp"

namespace gbe {

namespace {

// Independent RNG streams derived from the benchmark seed.
constexpr std::uint64_t kEmbeddingStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kProjectionStream = 0xbf58476d1ce4e5b9ULL;
constexpr std::uint64_t kImageStream = 0x94d049bb133111ebULL;

std::vector<int> sample_distinct(std::vector<int> pool, int count, Rng& rng) {
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

}  // namespace

void BenchmarkSpec::validate() const {
  std::vector<std::string> bad;
  if (num_seen < 2) bad.emplace_back("num_seen must be >= 2");
  if (num_unseen < 1) bad.emplace_back("num_unseen must be >= 1");
  if (embed_dim < 4) bad.emplace_back("embed_dim must be >= 4");
  if (grid < 1 || image_size < grid || image_size % grid) bad.emplace_back("image_size must be a multiple of grid");
  if (max_labels_per_image < 1) bad.emplace_back("max_labels_per_image must be >= 1");
  if (max_labels_per_image > num_seen) bad.emplace_back("max_labels_per_image exceeds num_seen");
  if (train_count < 1 || test_count < 1) bad.emplace_back("train_count and test_count must be positive");
  if (noise_std < 0) bad.emplace_back("noise_std must be non-negative");
  if (!bad.empty()) {
    std::string msg = "invalid benchmark spec:";
    for (auto& b : bad) msg += " " + b + ";";
    throw ConfigError(msg);
  }
  if (max_labels_per_image > grid * grid)
    throw ConfigError("impossible placement: " + std::to_string(max_labels_per_image) + " labels in " +
                      std::to_string(grid * grid) + " cells");
}

void to_json(nlohmann::json& j, const BenchmarkSpec& s) {
  j = {{"seed", s.seed},
       {"num_seen", s.num_seen},
       {"num_unseen", s.num_unseen},
       {"embed_dim", s.embed_dim},
       {"image_size", s.image_size},
       {"grid", s.grid},
       {"max_labels_per_image", s.max_labels_per_image},
       {"train_count", s.train_count},
       {"test_count", s.test_count},
       {"noise_std", s.noise_std},
       {"projection_std", s.projection_std}};
}

void from_json(const nlohmann::json& j, BenchmarkSpec& s) {
  BenchmarkSpec d;
  s.seed = j.value("seed", d.seed);
  s.num_seen = j.value("num_seen", d.num_seen);
  s.num_unseen = j.value("num_unseen", d.num_unseen);
  s.embed_dim = j.value("embed_dim", d.embed_dim);
  s.image_size = j.value("image_size", d.image_size);
  s.grid = j.value("grid", d.grid);
  s.max_labels_per_image = j.value("max_labels_per_image", d.max_labels_per_image);
  s.train_count = j.value("train_count", d.train_count);
  s.test_count = j.value("test_count", d.test_count);
  s.noise_std = j.value("noise_std", d.noise_std);
  s.projection_std = j.value("projection_std", d.projection_std);
}

Tensor<float> Dataset::image(int i) const {
  const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  std::vector<float> data(images.data().begin() + static_cast<std::ptrdiff_t>(n * i),
                          images.data().begin() + static_cast<std::ptrdiff_t>(n * (i + 1)));
  return Tensor<float>({c, h, w}, std::move(data));
}

LabelVector Dataset::labels_over(int i, const std::vector<int>& ids) const {
  LabelVector y(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) y[k] = has_label(i, ids[k]) ? 1 : 0;
  return y;
}

ClassEmbeddingTable gen_embeddings(const BenchmarkSpec& spec) {
  spec.validate();
  Rng rng(spec.seed ^ kEmbeddingStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = spec.num_classes(), d = spec.embed_dim;
  ClassEmbeddingTable table;
  table.vectors = Tensor<float>({n, d});
  auto v = table.vectors.matrix();
  for (int c = 0; c < n; ++c) {
    for (;;) {
      Eigen::VectorXd e(d);
      for (int j = 0; j < d; ++j) e(j) = normal(rng);
      e.normalize();
      bool collides = false;
      for (int prev = 0; prev < c && !collides; ++prev)
        collides = std::abs(v.row(prev).cast<double>().dot(e)) >= 0.99;
      if (collides) continue;
      v.row(c) = e.cast<float>().transpose();
      break;
    }
  }
  for (int c = 0; c < spec.num_seen; ++c) table.seen_ids.push_back(c);
  for (int c = spec.num_seen; c < n; ++c) table.unseen_ids.push_back(c);
  return table;
}

Tensor<float> appearance_projection(const BenchmarkSpec& spec) {
  Rng rng(spec.seed ^ kProjectionStream);
  std::normal_distribution<double> normal(0.0, spec.projection_std);
  const int p = spec.cell_size();
  Tensor<float> proj({3 * p * p, spec.embed_dim});
  for (auto& x : proj.data()) x = static_cast<float>(normal(rng));
  return proj;
}

Tensor<float> class_prototype(std::span<const float> embedding, const Tensor<float>& projection, int cell_size) {
  if (embedding.size() != static_cast<std::size_t>(projection.dim(1)) || projection.dim(0) != 3 * cell_size * cell_size)
    throw DimensionError("class_prototype: projection " + shape_str(projection.shape()) + " incompatible with embedding");
  Eigen::Map<const Eigen::VectorXf> e(embedding.data(), static_cast<Eigen::Index>(embedding.size()));
  Tensor<float> proto({3, cell_size, cell_size});
  proto.vec() = ((projection.matrix() * e).array() + 0.5f).cwiseMax(0.0f).cwiseMin(1.0f).matrix();
  return proto;
}

Dataset gen_dataset(const BenchmarkSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  d.table = gen_embeddings(spec);
  d.train_count = spec.train_count;
  d.test_count = spec.test_count;

  const int p = spec.cell_size(), s = spec.image_size, nc = spec.num_classes();
  const auto proj = appearance_projection(spec);
  std::vector<Tensor<float>> protos;
  for (int c = 0; c < nc; ++c) {
    auto row = d.table.vectors.data().subspan(static_cast<std::size_t>(c) * spec.embed_dim, spec.embed_dim);
    protos.push_back(class_prototype(row, proj, p));
  }

  const int n = spec.train_count + spec.test_count;
  d.images = Tensor<float>({n, 3, s, s}, 0.5f);
  d.labels = Tensor<float>({n, nc});
  Rng rng(spec.seed ^ kImageStream);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  std::uniform_int_distribution<int> count_dist(1, spec.max_labels_per_image);

  std::vector<int> all_ids = d.table.all_ids();
  std::vector<int> cells(static_cast<std::size_t>(spec.grid * spec.grid));
  std::iota(cells.begin(), cells.end(), 0);
  const std::size_t image_len = static_cast<std::size_t>(3) * s * s;

  for (int i = 0; i < n; ++i) {
    const bool train = i < spec.train_count;
    const int count = count_dist(rng);
    std::vector<int> classes;
    if (train) {
      classes = sample_distinct(d.table.seen_ids, count, rng);
    } else {
      classes = sample_distinct(d.table.unseen_ids, 1, rng);
      std::vector<int> rest;
      for (int c : all_ids)
        if (c != classes[0]) rest.push_back(c);
      auto more = sample_distinct(rest, count - 1, rng);
      classes.insert(classes.end(), more.begin(), more.end());
    }
    const auto placed = sample_distinct(cells, count, rng);
    float* img = d.images.ptr() + image_len * static_cast<std::size_t>(i);
    for (int k = 0; k < count; ++k) {
      const int cls = classes[static_cast<std::size_t>(k)];
      const int cy = placed[static_cast<std::size_t>(k)] / spec.grid, cx = placed[static_cast<std::size_t>(k)] % spec.grid;
      const auto& proto = protos[static_cast<std::size_t>(cls)];
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            img[(static_cast<std::size_t>(ch) * s + cy * p + y) * s + cx * p + x] = proto.at({ch, y, x});
      d.labels.matrix()(i, cls) = 1.0f;
    }
    if (spec.noise_std > 0)
      for (std::size_t j = 0; j < image_len; ++j)
        img[j] = std::clamp(static_cast<float>(img[j] + noise(rng)), 0.0f, 1.0f);
  }
  return d;
}

namespace {

constexpr const char* kImagesFile = "images.gbet";
constexpr const char* kLabelsFile = "labels.gbet";
constexpr const char* kEmbeddingsFile = "embeddings.gbet";

std::string combined_checksum(const std::string& a, const std::string& b, const std::string& c) {
  const std::string joined = a + b + c;
  return sha256_hex(std::vector<std::uint8_t>(joined.begin(), joined.end()));
}

}  // namespace

void write_dataset(Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto images = encode_tensor(d.images);
  const auto labels = encode_tensor(d.labels);
  const auto embeddings = encode_tensor(d.table.vectors);
  write_bytes(dir / kImagesFile, images);
  write_bytes(dir / kLabelsFile, labels);
  write_bytes(dir / kEmbeddingsFile, embeddings);
  const auto hi = sha256_hex(images), hl = sha256_hex(labels), he = sha256_hex(embeddings);
  d.checksum = combined_checksum(hi, hl, he);

  nlohmann::ordered_json m;
  m["format"] = "gbe-dataset";
  m["version"] = 1;
  m["spec"] = nlohmann::json(d.spec);
  m["seen_ids"] = d.table.seen_ids;
  m["unseen_ids"] = d.table.unseen_ids;
  m["train_count"] = d.train_count;
  m["test_count"] = d.test_count;
  m["files"] = {{"images", {{"name", kImagesFile}, {"sha256", hi}}},
                {"labels", {{"name", kLabelsFile}, {"sha256", hl}}},
                {"embeddings", {{"name", kEmbeddingsFile}, {"sha256", he}}}};
  m["checksum"] = d.checksum;
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw CorruptFileError(manifest_path.string() + ": cannot open");
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(manifest_path.string() + ": " + e.what());
  }

  Dataset d;
  std::string hashes[3];
  Tensor<float>* targets[3] = {&d.images, &d.labels, &d.table.vectors};
  const char* keys[3] = {"images", "labels", "embeddings"};
  try {
    d.spec = m.at("spec").get<BenchmarkSpec>();
    d.table.seen_ids = m.at("seen_ids").get<std::vector<int>>();
    d.table.unseen_ids = m.at("unseen_ids").get<std::vector<int>>();
    d.train_count = m.at("train_count").get<int>();
    d.test_count = m.at("test_count").get<int>();
    for (int k = 0; k < 3; ++k) {
      const auto& entry = m.at("files").at(keys[k]);
      const auto path = dir / entry.at("name").get<std::string>();
      const auto bytes = read_bytes(path);
      hashes[k] = sha256_hex(bytes);
      if (hashes[k] != entry.at("sha256").get<std::string>())
        throw CorruptFileError(path.string() + ": checksum mismatch");
      std::size_t off = 0;
      *targets[k] = decode_tensor(bytes, off, path.string());
      if (off != bytes.size()) throw CorruptFileError(path.string() + ": trailing bytes after tensor");
    }
    d.checksum = m.at("checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(manifest_path.string() + ": " + e.what());
  }
  if (d.checksum != combined_checksum(hashes[0], hashes[1], hashes[2]))
    throw CorruptFileError(manifest_path.string() + ": dataset checksum mismatch");
  const int n = d.train_count + d.test_count;
  if (d.images.rank() != 4 || d.images.dim(0) != n || d.labels.rank() != 2 || d.labels.dim(0) != n ||
      d.labels.dim(1) != d.table.num_classes())
    throw CorruptFileError(dir.string() + ": tensor shapes disagree with manifest");
  return d;
}

}  // namespace gbe
