#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gbe/tensor.hpp"

namespace gbe {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 4e-3;
};

// Adam with decoupled weight decay (applied to the parameters directly,
// scaled by the learning rate). Gradients are zeroed after each step.
template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Var<Scalar>> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  void step() {
    for (const auto& p : params_)
      if (!p.has_grad()) throw UsageError("adam_step: parameter " + shape_str(p.shape()) + " has no gradient");
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(opts_.beta1), b2 = static_cast<Scalar>(opts_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& w = params_[i].mutable_value();
      auto& g = params_[i].grad_mut();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (Scalar(1) - b1) * g[j];
        v[j] = b2 * v[j] + (Scalar(1) - b2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        const double update = mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * w[j];
        w[j] = static_cast<Scalar>(w[j] - opts_.lr * update);
      }
      g.fill(Scalar(0));
    }
  }

  void zero_grad() {
    for (const auto& p : params_) p.zero_grad();
  }

  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  long step_count() const { return t_; }
  const AdamOptions& options() const { return opts_; }

 private:
  std::vector<Var<Scalar>> params_;
  AdamOptions opts_;
  std::vector<Tensor<Scalar>> m_, v_;
  long t_ = 0;
};

}  // namespace gbe
