#pragma once

#include <array>

#include "gbe/layers.hpp"
#include "gbe/model_config.hpp"

namespace gbe {

// Three backbone scales: hi (C1 x H x W), mid (C2 x H/2 x W/2),
// lo (C3 x H/4 x W/4).
template <typename Scalar>
struct FeaturePyramid {
  Var<Scalar> hi;
  Var<Scalar> mid;
  Var<Scalar> lo;
};

// Small trainable CNN: the image is 2x2 average-pooled, then passes three
// stages of two (3x3 conv, leaky_relu) blocks with 2x2 max-pools between
// stages. Taps are the stage outputs before each pool and at the end.
template <typename Scalar>
class Backbone {
 public:
  Backbone(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    stage1_ = {Conv2d<Scalar>(cfg.in_channels, cfg.c1, 3, 1, 1, rng), Conv2d<Scalar>(cfg.c1, cfg.c1, 3, 1, 1, rng)};
    stage2_ = {Conv2d<Scalar>(cfg.c1, cfg.c2, 3, 1, 1, rng), Conv2d<Scalar>(cfg.c2, cfg.c2, 3, 1, 1, rng)};
    stage3_ = {Conv2d<Scalar>(cfg.c2, cfg.c3, 3, 1, 1, rng), Conv2d<Scalar>(cfg.c3, cfg.c3, 3, 1, 1, rng)};
  }

  FeaturePyramid<Scalar> forward(const Var<Scalar>& image) const {
    const auto& s = image.shape();
    if (s.size() != 3 || s[0] != cfg_.in_channels || s[1] % 8 != 0 || s[2] % 8 != 0)
      throw DimensionError("backbone: expected " + std::to_string(cfg_.in_channels) +
                           " x S x S' image with S, S' divisible by 8, got " + shape_str(s));
    const auto slope = static_cast<Scalar>(cfg_.slope);
    auto block = [&](const Conv2d<Scalar>& conv, const Var<Scalar>& x) { return leaky_relu(conv(x), slope); };

    FeaturePyramid<Scalar> p;
    const auto stem = spatial_pool(image, PoolMode::Avg, 2, 2);
    p.hi = block(stage1_[1], block(stage1_[0], stem));
    auto x = spatial_pool(p.hi, PoolMode::Max, 2, 2);
    p.mid = block(stage2_[1], block(stage2_[0], x));
    x = spatial_pool(p.mid, PoolMode::Max, 2, 2);
    p.lo = block(stage3_[1], block(stage3_[0], x));
    return p;
  }

  void collect(ParamList<Scalar>& out) const {
    for (int i = 0; i < 2; ++i) {
      stage1_[i].collect(out, "backbone.stage1." + std::to_string(i));
      stage2_[i].collect(out, "backbone.stage2." + std::to_string(i));
      stage3_[i].collect(out, "backbone.stage3." + std::to_string(i));
    }
  }

  const Conv2d<Scalar>& first_conv() const { return stage1_[0]; }

 private:
  ModelConfig cfg_;
  std::array<Conv2d<Scalar>, 2> stage1_, stage2_, stage3_;
};

}  // namespace gbe
