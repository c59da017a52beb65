#pragma once

#include "gbe/layers.hpp"
#include "gbe/model_config.hpp"

namespace gbe {

// Fully connected static graph with self-loops: every entry 1/n.
template <typename Scalar>
Tensor<Scalar> build_affinity(int n) {
  if (n < 1) throw ConfigError("build_affinity: need at least one node, got " + std::to_string(n));
  return Tensor<Scalar>({n, n}, Scalar(1) / static_cast<Scalar>(n));
}

// Single-layer static graph over the n group nodes. Node m carries
// [local_m ; gf]; S = leaky_relu(A V W_s).
template <typename Scalar>
class GlaGraph {
 public:
  GlaGraph(const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        state_(parameter(he_uniform<Scalar>({2 * cfg.embed_dim, cfg.embed_dim}, 2 * cfg.embed_dim, rng))),
        affinity_(Var<Scalar>(build_affinity<Scalar>(cfg.groups), cfg.learnable_affinity)) {}

  Var<Scalar> node_features(const Var<Scalar>& locals, const Var<Scalar>& gf) const {
    if (locals.value().rank() != 2 || gf.size() != static_cast<std::size_t>(locals.dim(1)))
      throw DimensionError("gla_graph: locals " + shape_str(locals.shape()) + " incompatible with gf " +
                           shape_str(gf.shape()));
    return concat_cols(locals, repeat_rows(gf, locals.dim(0)));
  }

  Var<Scalar> graph_forward(const Var<Scalar>& locals, const Var<Scalar>& gf, const Var<Scalar>& a) const {
    auto v = node_features(locals, gf);
    if (a.value().rank() != 2 || a.dim(0) != locals.dim(0) || a.dim(1) != locals.dim(0))
      throw DimensionError("gla_graph: affinity " + shape_str(a.shape()) + " for " + std::to_string(locals.dim(0)) +
                           " nodes");
    return leaky_relu(matmul(matmul(a, v), state_), static_cast<Scalar>(cfg_.slope));
  }

  Var<Scalar> graph_forward(const Var<Scalar>& locals, const Var<Scalar>& gf) const {
    return graph_forward(locals, gf, affinity_);
  }

  // Ablation bypass: locals through W_s alone, no mixing and no gf.
  Var<Scalar> unmixed(const Var<Scalar>& locals) const {
    auto v = concat_cols(locals, constant(Tensor<Scalar>(locals.shape())));
    return leaky_relu(matmul(v, state_), static_cast<Scalar>(cfg_.slope));
  }

  void collect(ParamList<Scalar>& out) const {
    out.emplace_back("gla.state", state_);
    if (cfg_.learnable_affinity) out.emplace_back("gla.affinity", affinity_);
  }

  const Var<Scalar>& state_weights() const { return state_; }
  const Var<Scalar>& affinity() const { return affinity_; }

 private:
  ModelConfig cfg_;
  Var<Scalar> state_;     // 2 d_w x d_w
  Var<Scalar> affinity_;  // n x n
};

}  // namespace gbe
