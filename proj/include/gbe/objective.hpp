#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gbe/model_config.hpp"
#include "gbe/ops.hpp"

namespace gbe {

// Class word vectors (|C| x d_w) with a disjoint seen / unseen partition.
struct ClassEmbeddingTable {
  Tensor<float> vectors;
  std::vector<int> seen_ids;
  std::vector<int> unseen_ids;

  int num_classes() const { return vectors.dim(0); }
  int dim() const { return vectors.dim(1); }
  std::vector<int> all_ids() const {
    std::vector<int> ids(static_cast<std::size_t>(num_classes()));
    for (int i = 0; i < num_classes(); ++i) ids[static_cast<std::size_t>(i)] = i;
    return ids;
  }

  template <typename Scalar>
  Var<Scalar> rows(const std::vector<int>& ids) const {
    if (ids.empty()) throw UsageError("class id set is empty");
    const int d = dim();
    Tensor<Scalar> out({static_cast<int>(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= num_classes()) throw UsageError("class id " + std::to_string(ids[i]) + " out of range");
      for (int j = 0; j < d; ++j) out.matrix()(static_cast<Eigen::Index>(i), j) = static_cast<Scalar>(vectors.matrix()(ids[i], j));
    }
    return constant(std::move(out));
  }
};

// Binary label vector; index i refers to the i-th id of the label set in use.
using LabelVector = std::vector<std::uint8_t>;

// score(c) = max over groups m of <class_vectors[c], s[m]>; ties go to the
// lowest group index.
template <typename Scalar>
Var<Scalar> class_scores(const Var<Scalar>& s, const Var<Scalar>& class_vectors) {
  return row_max(matmul(class_vectors, transpose(s)));
}

template <typename Scalar>
Var<Scalar> class_scores(const Var<Scalar>& s, const ClassEmbeddingTable& table, const std::vector<int>& ids) {
  return class_scores(s, table.rows<Scalar>(ids));
}

// Pairwise ranknet loss over seen classes, normalised by |T| |T-bar|.
// Returns nullopt when the sample has no positives or no negatives.
template <typename Scalar>
std::optional<Var<Scalar>> rank_loss(const Var<Scalar>& s, const LabelVector& y, const Var<Scalar>& seen_vectors) {
  if (y.size() != static_cast<std::size_t>(seen_vectors.dim(0)))
    throw DimensionError("rank_loss: " + std::to_string(y.size()) + " labels for " +
                         std::to_string(seen_vectors.dim(0)) + " classes");
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(static_cast<int>(i));
  if (pos.empty() || neg.empty()) return std::nullopt;
  return ranknet_pairs(class_scores(s, seen_vectors), pos, neg);
}

// 1 + population variance of the binary label vector, in [1, 1.25].
inline double sample_weight(const LabelVector& y) {
  if (y.empty()) return 1.0;
  double p = 0;
  for (auto v : y) p += v ? 1.0 : 0.0;
  p /= static_cast<double>(y.size());
  return 1.0 + p * (1.0 - p);
}

// |sum_m var(s[m])| with var taken within each row (over the d_w
// components), or across groups per dimension in AcrossGroups mode.
template <typename Scalar>
Var<Scalar> reg_loss(const Var<Scalar>& s, RegMode mode = RegMode::WithinRows) {
  const auto& src = mode == RegMode::WithinRows ? s : transpose(s);
  std::vector<Var<Scalar>> terms;
  for (int m = 0; m < src.dim(0); ++m) terms.push_back(variance(row(src, m)));
  return abs(add_n(terms));
}

template <typename Scalar>
struct TotalLoss {
  Var<Scalar> loss;
  int used = 0;
  int skipped = 0;
  double rank_mean = 0;  // unweighted mean rank loss over used samples
  double reg_mean = 0;
};

// (1/N) sum_i ( w_i (1 - lambda) rank_i + lambda reg_i ) over samples with at
// least one positive and one negative seen label.
template <typename Scalar>
TotalLoss<Scalar> total_loss(const std::vector<Var<Scalar>>& groups, const std::vector<LabelVector>& labels,
                             double lambda, const Var<Scalar>& seen_vectors, RegMode mode = RegMode::WithinRows) {
  if (groups.size() != labels.size()) throw DimensionError("total_loss: batch size mismatch");
  if (lambda < 0 || lambda > 1) throw UsageError("total_loss: lambda must lie in [0, 1]");
  TotalLoss<Scalar> out;
  std::vector<Var<Scalar>> terms;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto rank = rank_loss(groups[i], labels[i], seen_vectors);
    if (!rank) {
      ++out.skipped;
      continue;
    }
    ++out.used;
    out.rank_mean += rank->item();
    if (lambda < 1) terms.push_back(scale(*rank, static_cast<Scalar>(sample_weight(labels[i]) * (1 - lambda))));
    if (lambda > 0) {
      auto reg = reg_loss(groups[i], mode);
      out.reg_mean += reg.item();
      terms.push_back(scale(reg, static_cast<Scalar>(lambda)));
    }
  }
  if (out.used == 0) throw UsageError("total_loss: no sample in the batch has both positive and negative labels");
  out.rank_mean /= out.used;
  out.reg_mean /= out.used;
  out.loss = scale(add_n(terms), static_cast<Scalar>(1.0 / out.used));
  return out;
}

}  // namespace gbe
