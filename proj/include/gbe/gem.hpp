#pragma once

#include "gbe/layers.hpp"
#include "gbe/model_config.hpp"

namespace gbe {

template <typename Scalar>
struct ChannelDescriptor {
  Var<Scalar> avg;  // C3
  Var<Scalar> max;  // C3
};

template <typename Scalar>
ChannelDescriptor<Scalar> channel_descriptor(const Var<Scalar>& f_lo) {
  return {spatial_pool(f_lo, PoolMode::Avg), spatial_pool(f_lo, PoolMode::Max)};
}

// Global Enhancement Module: channel gating of the deepest map from its
// pooled statistics, 1x1 screening conv to d_w, global max-pool.
template <typename Scalar>
class Gem {
 public:
  Gem(const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        hidden_(cfg.c3, std::max(1, cfg.c3 / 4), true, rng),
        out_(std::max(1, cfg.c3 / 4), cfg.c3, true, rng),
        screen_(cfg.c3, cfg.embed_dim, 1, 1, 0, rng) {}

  Var<Scalar> mlp(const Var<Scalar>& v) const {
    auto x = reshape(v, Shape{1, static_cast<int>(v.size())});
    auto y = out_(leaky_relu(hidden_(x), static_cast<Scalar>(cfg_.slope)));
    return reshape(y, Shape{static_cast<int>(v.size())});
  }

  // Per-channel gate CE; squashed through a sigmoid when gate_sigmoid is set.
  Var<Scalar> gate(const ChannelDescriptor<Scalar>& d) const {
    auto ce = add(mlp(d.avg), mlp(d.max));
    return cfg_.gate_sigmoid ? sigmoid(ce) : ce;
  }

  Var<Scalar> channel_enhance(const ChannelDescriptor<Scalar>& d, const Var<Scalar>& f_lo) const {
    return channel_scale(f_lo, gate(d));
  }

  Var<Scalar> global_semantic(const Var<Scalar>& enhanced) const {
    return spatial_pool(screen_(enhanced), PoolMode::Max);
  }

  Var<Scalar> forward(const Var<Scalar>& f_lo) const {
    return global_semantic(channel_enhance(channel_descriptor(f_lo), f_lo));
  }

  // Ablation bypass: screened max-pool of the raw map, no gating.
  Var<Scalar> ungated(const Var<Scalar>& f_lo) const { return global_semantic(f_lo); }

  void collect(ParamList<Scalar>& out) const {
    hidden_.collect(out, "gem.mlp_hidden");
    out_.collect(out, "gem.mlp_out");
    screen_.collect(out, "gem.screen");
  }

  const Linear<Scalar>& mlp_hidden() const { return hidden_; }
  const Linear<Scalar>& mlp_out() const { return out_; }
  const Conv2d<Scalar>& screen() const { return screen_; }

 private:
  ModelConfig cfg_;
  Linear<Scalar> hidden_, out_;
  Conv2d<Scalar> screen_;
};

}  // namespace gbe
