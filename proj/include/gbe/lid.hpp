#pragma once

#include <cmath>

#include "gbe/layers.hpp"
#include "gbe/model_config.hpp"

namespace gbe {

// Splits a fused map (n*d_w x H x W) into n contiguous d_w-channel groups.
template <typename Scalar>
std::vector<Var<Scalar>> split_groups(const Var<Scalar>& fused, int n, int d_w) {
  if (n <= 0 || d_w <= 0 || fused.dim(0) != n * d_w)
    throw ConfigError("split_groups: " + std::to_string(fused.dim(0)) + " channels cannot form " + std::to_string(n) +
                      " groups of " + std::to_string(d_w));
  std::vector<Var<Scalar>> groups;
  groups.reserve(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) groups.push_back(slice_channels(fused, m * d_w, d_w));
  return groups;
}

template <typename Scalar>
struct AttentionOutput {
  Var<Scalar> out;        // HW x d_w
  Var<Scalar> attention;  // HW x HW, rows are distributions
};

// Weights of one local-information-distinguishing branch.
template <typename Scalar>
struct LidWeights {
  Linear<Scalar> embed;  // d_w -> d_w, per-token patch embedding
  Linear<Scalar> wq, wk, wv;
  Linear<Scalar> ffn1, ffn2;  // d_w -> 2 d_w -> d_w

  LidWeights(int d_w, Rng& rng)
      : embed(d_w, d_w, true, rng),
        wq(d_w, d_w, false, rng),
        wk(d_w, d_w, false, rng),
        wv(d_w, d_w, false, rng),
        ffn1(d_w, 2 * d_w, true, rng),
        ffn2(2 * d_w, d_w, true, rng) {}

  void collect(ParamList<Scalar>& out, const std::string& prefix) const {
    embed.collect(out, prefix + ".embed");
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    ffn1.collect(out, prefix + ".ffn1");
    ffn2.collect(out, prefix + ".ffn2");
  }
};

// Local Information Distinguishing: per-pixel tokens, residual
// self-attention over the group's spatial positions, a residual
// feed-forward layer, then a per-dimension max over tokens.
template <typename Scalar>
class Lid {
 public:
  Lid(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int sets = cfg.per_group_weights ? cfg.groups : 1;
    for (int i = 0; i < sets; ++i) weights_.emplace_back(cfg.embed_dim, rng);
  }

  // group: d_w x H x W -> HW x d_w tokens after the shared embedding.
  Var<Scalar> tokenize(const Var<Scalar>& group, int m = 0) const {
    const int d = group.dim(0);
    const int hw = group.dim(1) * group.dim(2);
    auto tokens = transpose(reshape(group, Shape{d, hw}));
    return set(m).embed(tokens);
  }

  AttentionOutput<Scalar> attention_enhance(const Var<Scalar>& tokens, int m = 0) const {
    const auto& w = set(m);
    auto q = w.wq(tokens);
    auto k = w.wk(tokens);
    auto v = w.wv(tokens);
    auto logits = matmul(k, transpose(q));
    if (cfg_.attention_scale) logits = scale(logits, static_cast<Scalar>(1.0 / std::sqrt(double(tokens.dim(1)))));
    auto attn = softmax_rows(logits);
    return {add(tokens, matmul(attn, v)), attn};
  }

  Var<Scalar> feed_forward_refine(const Var<Scalar>& x, int m = 0) const {
    const auto& w = set(m);
    return add(x, w.ffn2(leaky_relu(w.ffn1(x), static_cast<Scalar>(cfg_.slope))));
  }

  // Enhanced tokens of group m pooled to a d_w vector.
  Var<Scalar> enhance_group(const Var<Scalar>& group, int m) const {
    auto t = tokenize(group, m);
    return column_max(feed_forward_refine(attention_enhance(t, m).out, m));
  }

  // n x d_w matrix of local semantic vectors.
  Var<Scalar> local_semantics(const std::vector<Var<Scalar>>& groups) const {
    std::vector<Var<Scalar>> rows;
    rows.reserve(groups.size());
    for (std::size_t m = 0; m < groups.size(); ++m) rows.push_back(enhance_group(groups[m], static_cast<int>(m)));
    return stack_rows(rows);
  }

  // Ablation bypass: plain spatial max-pool of each group.
  static Var<Scalar> pooled_only(const std::vector<Var<Scalar>>& groups) {
    std::vector<Var<Scalar>> rows;
    for (const auto& g : groups) rows.push_back(spatial_pool(g, PoolMode::Max));
    return stack_rows(rows);
  }

  void collect(ParamList<Scalar>& out) const {
    for (std::size_t i = 0; i < weights_.size(); ++i)
      weights_[i].collect(out, weights_.size() == 1 ? std::string("lid") : "lid.group" + std::to_string(i));
  }

  const LidWeights<Scalar>& set(int m) const {
    return weights_[weights_.size() == 1 ? 0 : static_cast<std::size_t>(m)];
  }

 private:
  ModelConfig cfg_;
  std::vector<LidWeights<Scalar>> weights_;
};

}  // namespace gbe
