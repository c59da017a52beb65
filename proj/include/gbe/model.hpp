#pragma once

#include "gbe/backbone.hpp"
#include "gbe/fusion.hpp"
#include "gbe/gem.hpp"
#include "gbe/gla_graph.hpp"
#include "gbe/lid.hpp"

namespace gbe {

// Full image -> semantic-vector-group pipeline (n x d_w per image).
template <typename Scalar>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : Model(cfg, seeded(seed)) {}

  const ModelConfig& config() const { return cfg_; }

  Var<Scalar> forward(const Var<Scalar>& image) const {
    const auto& sw = cfg_.switches;
    auto pyramid = backbone_.forward(image);
    auto fused = sw.mlfef ? fusion_.fuse_all(pyramid) : fusion_.mid_only(pyramid);
    auto groups = split_groups(fused, cfg_.groups, cfg_.embed_dim);
    auto locals = sw.lid ? lid_.local_semantics(groups) : Lid<Scalar>::pooled_only(groups);
    if (!sw.gla) return gla_.unmixed(locals);
    auto gf = sw.gem ? gem_.forward(pyramid.lo) : gem_.ungated(pyramid.lo);
    return gla_.graph_forward(locals, gf);
  }

  ParamList<Scalar> params() const {
    ParamList<Scalar> out;
    backbone_.collect(out);
    fusion_.collect(out);
    lid_.collect(out);
    gem_.collect(out);
    gla_.collect(out);
    return out;
  }

  std::vector<Var<Scalar>> param_vars() const {
    std::vector<Var<Scalar>> out;
    for (auto& [_, v] : params()) out.push_back(v);
    return out;
  }

  void load(const NamedTensors& values) const { load_params(params(), values); }

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> m(cfg_, 0);
    auto dst = m.params();
    auto src = params();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].second.mutable_value() = src[i].second.value().template cast<Other>();
    return m;
  }

  const Backbone<Scalar>& backbone() const { return backbone_; }
  const Fusion<Scalar>& fusion() const { return fusion_; }
  const Lid<Scalar>& lid() const { return lid_; }
  const Gem<Scalar>& gem() const { return gem_; }
  const GlaGraph<Scalar>& gla() const { return gla_; }

 private:
  static Rng seeded(std::uint64_t seed) { return Rng(seed); }

  Model(const ModelConfig& cfg, Rng rng)
      : cfg_(cfg), backbone_(cfg, rng), fusion_(cfg, rng), lid_(cfg, rng), gem_(cfg, rng), gla_(cfg, rng) {}

  ModelConfig cfg_;
  Backbone<Scalar> backbone_;
  Fusion<Scalar> fusion_;
  Lid<Scalar> lid_;
  Gem<Scalar> gem_;
  GlaGraph<Scalar> gla_;
};

}  // namespace gbe
