#pragma once

#include <bit>

#include "gbe/backbone.hpp"

namespace gbe {

// Brings x (C x H x W) to target_h x target_w by 2^k average pooling (down)
// or 2^k nearest-neighbour repetition (up).
template <typename Scalar>
Var<Scalar> resample_to(const Var<Scalar>& x, int target_h, int target_w) {
  const int h = x.dim(1), w = x.dim(2);
  if (h == target_h && w == target_w) return x;
  if (h > target_h) {
    const int r = h / target_h;
    if (h % target_h || !std::has_single_bit(static_cast<unsigned>(r)) || w != target_w * r)
      throw ConfigError("resample: ratio " + std::to_string(h) + "/" + std::to_string(target_h) +
                        " is not a power of 2");
    return spatial_pool(x, PoolMode::Avg, r, r);
  }
  const int r = target_h / h;
  if (target_h % h || !std::has_single_bit(static_cast<unsigned>(r)) || target_w != w * r)
    throw ConfigError("resample: ratio " + std::to_string(target_h) + "/" + std::to_string(h) +
                      " is not a power of 2");
  return upsample_nearest(x, r);
}

// Multi-layer feature enhancement fusion. The fusion operator aligns the
// secondary scale to the mid scale (1x1 conv to C2, then resample) and gates
// the mid map with it elementwise. The concatenation
// [mid, mid*lo, mid*hi] is projected to groups * embed_dim channels.
template <typename Scalar>
class Fusion {
 public:
  Fusion(const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        proj_hi_(cfg.c1, cfg.c2, 1, 1, 0, rng),
        proj_lo_(cfg.c3, cfg.c2, 1, 1, 0, rng),
        out_(3 * cfg.c2, cfg.fused_channels(), 1, 1, 0, rng) {}

  // a: mid-scale map; b: hi or lo map; proj aligns b's channels to a's.
  static Var<Scalar> fuse_pair(const Var<Scalar>& a, const Var<Scalar>& b, const Conv2d<Scalar>& proj) {
    auto aligned = resample_to(proj(b), a.dim(1), a.dim(2));
    return mul(a, aligned);
  }

  Var<Scalar> fuse_all(const FeaturePyramid<Scalar>& p) const {
    auto cat = concat_channels<Scalar>({p.mid, fuse_pair(p.mid, p.lo, proj_lo_), fuse_pair(p.mid, p.hi, proj_hi_)});
    return leaky_relu(out_(cat), static_cast<Scalar>(cfg_.slope));
  }

  // Ablation bypass: the mid-scale map alone through the same projection.
  Var<Scalar> mid_only(const FeaturePyramid<Scalar>& p) const {
    auto zeros = constant(Tensor<Scalar>(p.mid.shape()));
    auto cat = concat_channels<Scalar>({p.mid, zeros, zeros});
    return leaky_relu(out_(cat), static_cast<Scalar>(cfg_.slope));
  }

  void collect(ParamList<Scalar>& out) const {
    proj_hi_.collect(out, "fusion.proj_hi");
    proj_lo_.collect(out, "fusion.proj_lo");
    out_.collect(out, "fusion.out");
  }

  const Conv2d<Scalar>& proj_hi() const { return proj_hi_; }
  const Conv2d<Scalar>& proj_lo() const { return proj_lo_; }
  const Conv2d<Scalar>& out_proj() const { return out_; }

 private:
  ModelConfig cfg_;
  Conv2d<Scalar> proj_hi_, proj_lo_, out_;
};

}  // namespace gbe
