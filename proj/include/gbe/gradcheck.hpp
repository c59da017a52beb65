#pragma once

// Finite-difference verification of backward rules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gbe/layers.hpp"

namespace gbe {

struct GradcheckOptions {
  double step = 1e-6;
  int max_coords = 8;  // checked coordinates per tensor; <= 0 checks all
  std::uint64_t seed = 0;
  // Drop coordinates whose forward and backward one-sided slopes disagree,
  // i.e. where the +-h interval straddles a max/leaky_relu kink.
  bool skip_kinks = false;
};

struct TensorCheck {
  std::string name;
  double rel_error = 0;  // ||excess|| / max(||fd||, ||bp||)
  int coords = 0;        // coordinates compared
  int kinks = 0;         // coordinates dropped as kink crossings
};

namespace detail {

// Relative error after discounting, per coordinate, the rounding resolution
// of the finite difference itself (zero for exact arithmetic).
inline double vector_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                               const std::vector<double>& resolution = {}) {
  double diff = 0, na = 0, nb = 0, res = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = resolution.empty() ? 0.0 : resolution[i];
    const double e = std::max(0.0, std::abs(a[i] - b[i]) - r);
    diff += e * e;
    na += a[i] * a[i];
    nb += b[i] * b[i];
    res += r * r;
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom <= std::max(1e-12, std::sqrt(res))) return std::sqrt(diff) <= 1e-12 ? 0.0 : 1.0;
  return std::sqrt(diff) / denom;
}

}  // namespace detail

// Central differences of `loss_fn` for each listed tensor, compared with
// `analytic` (one gradient tensor per entry of `params`, possibly computed
// at another precision).
template <typename Scalar, typename G>
std::vector<TensorCheck> compare_gradients(const ParamList<Scalar>& params, const std::function<Var<Scalar>()>& loss_fn,
                                           const std::vector<Tensor<G>>& analytic, const GradcheckOptions& opts = {}) {
  if (analytic.size() != params.size()) throw DimensionError("compare_gradients: one gradient per parameter expected");
  std::vector<TensorCheck> out;
  constexpr double eps = std::numeric_limits<Scalar>::epsilon();
  Rng rng(opts.seed);
  const double center = opts.skip_kinks && !params.empty() ? static_cast<double>(loss_fn().item()) : 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto& [name, p] = params[t];
    const auto& grad = analytic[t];
    if (grad.size() != p.size()) throw DimensionError("compare_gradients: gradient shape mismatch for " + name);
    const std::size_t n = p.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    const bool sampled = opts.max_coords > 0 && n > static_cast<std::size_t>(opts.max_coords);
    if (sampled) std::shuffle(coords.begin(), coords.end(), rng);

    auto& value = p.mutable_value();
    const auto h = static_cast<Scalar>(opts.step);
    auto eval_at = [&](std::size_t i, Scalar x) {
      value[i] = x;
      return static_cast<double>(loss_fn().item());
    };

    TensorCheck check{name, 0, 0, 0};
    std::vector<double> fd, bp, res;
    for (auto i : coords) {
      if (sampled && fd.size() >= static_cast<std::size_t>(opts.max_coords)) break;
      const Scalar orig = value[i];
      const double up = eval_at(i, orig + h), down = eval_at(i, orig - h);
      const double step = static_cast<double>((orig + h) - (orig - h));
      const double r = 4 * eps * (std::abs(up) + std::abs(down)) / step;
      bool kink = false;
      if (opts.skip_kinks) {
        // A kink inside [x - h, x + h] shows up as disagreeing one-sided
        // slopes, or as a central difference that moves when h is halved.
        const double half_up = eval_at(i, orig + h / 2), half_down = eval_at(i, orig - h / 2);
        const double half_step = static_cast<double>((orig + h / 2) - (orig - h / 2));
        const double fwd = (up - center) / (step / 2), bwd = (center - down) / (step / 2);
        const double c1 = (up - down) / step, c2 = (half_up - half_down) / half_step;
        const double slack = r + 4 * eps * (std::abs(half_up) + std::abs(half_down)) / half_step;
        kink = std::abs(fwd - bwd) > 0.005 * std::max(std::abs(fwd), std::abs(bwd)) + slack ||
               std::abs(c1 - c2) > 0.003 * std::max(std::abs(c1), std::abs(c2)) + slack;
      }
      value[i] = orig;
      if (kink) {
        ++check.kinks;
        continue;
      }
      fd.push_back((up - down) / step);
      res.push_back(r);
      bp.push_back(static_cast<double>(grad[i]));
    }
    check.coords = static_cast<int>(fd.size());
    check.rel_error = detail::vector_rel_error(fd, bp, res);
    out.push_back(check);
  }
  return out;
}

// Reverse-mode gradients of `loss_fn` (built on the active tape) for every
// listed tensor.
template <typename Scalar>
std::vector<Tensor<Scalar>> backprop_gradients(const ParamList<Scalar>& params,
                                               const std::function<Var<Scalar>()>& loss_fn) {
  for (const auto& [_, p] : params) p.zero_grad();
  {
    Tape<Scalar> tape;
    TapeScope<Scalar> scope(tape);
    auto loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<Tensor<Scalar>> grads;
  for (const auto& [_, p] : params) grads.push_back(p.grad());
  return grads;
}

// Compares reverse-mode gradients of `loss_fn` with central differences of
// the same function.
template <typename Scalar>
std::vector<TensorCheck> check_gradients(const ParamList<Scalar>& params, const std::function<Var<Scalar>()>& loss_fn,
                                         const GradcheckOptions& opts = {}) {
  if (params.empty()) return {};
  return compare_gradients(params, loss_fn, backprop_gradients(params, loss_fn), opts);
}

}  // namespace gbe
