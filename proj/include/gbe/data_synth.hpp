#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbe/objective.hpp"

namespace gbe {

struct BenchmarkSpec {
  std::uint64_t seed = 7;
  int num_seen = 40;
  int num_unseen = 10;
  int embed_dim = 16;
  int image_size = 32;
  int grid = 4;  // image is grid x grid cells; one prototype per cell
  int max_labels_per_image = 4;
  int train_count = 2000;
  int test_count = 400;
  double noise_std = 0.05;
  double projection_std = 0.3;

  int num_classes() const { return num_seen + num_unseen; }
  int cell_size() const { return image_size / grid; }
  void validate() const;

  friend bool operator==(const BenchmarkSpec&, const BenchmarkSpec&) = default;
};

void to_json(nlohmann::json& j, const BenchmarkSpec& s);
void from_json(const nlohmann::json& j, BenchmarkSpec& s);

// Rows [0, train_count) are training images (labels only from seen
// classes); the remaining test_count rows each carry an unseen label.
struct Dataset {
  BenchmarkSpec spec;
  Tensor<float> images;  // N x 3 x S x S, values in [0, 1]
  Tensor<float> labels;  // N x |C|, entries 0 / 1
  ClassEmbeddingTable table;
  int train_count = 0;
  int test_count = 0;
  std::string checksum;  // set by write_dataset / read_dataset

  int size() const { return images.dim(0); }
  Tensor<float> image(int i) const;
  bool has_label(int i, int class_id) const { return labels.matrix()(i, class_id) > 0.5f; }
  LabelVector labels_over(int i, const std::vector<int>& ids) const;
};

ClassEmbeddingTable gen_embeddings(const BenchmarkSpec& spec);

// Fixed (3 p p) x d_w appearance projection shared by all classes.
Tensor<float> appearance_projection(const BenchmarkSpec& spec);

// 3 x p x p prototype: clamp01(P e + 0.5).
Tensor<float> class_prototype(std::span<const float> embedding, const Tensor<float>& projection, int cell_size);

Dataset gen_dataset(const BenchmarkSpec& spec);

// Layout: manifest.json, images.gbet, labels.gbet, embeddings.gbet.
void write_dataset(Dataset& d, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace gbe
