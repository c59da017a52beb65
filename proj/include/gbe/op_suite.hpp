#pragma once

// Per-operation finite-difference battery. Each case builds random inputs
// (spread apart so max/abs/leaky_relu stay off their kinks), contracts the
// op output with fixed random weights and checks every input gradient.

#include <numeric>

#include "gbe/gradcheck.hpp"
#include "gbe/ops.hpp"

namespace gbe {

struct OpCheck {
  std::string op;
  double rel_error = 0;
  int coords = 0;
};

namespace detail {

template <typename Scalar>
Var<Scalar> random_param(Shape shape, Rng& rng, bool spread = false) {
  Tensor<Scalar> t(std::move(shape));
  if (spread) {
    // distinct values on a grid with spacing 2/n, shuffled, sign-balanced
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[idx[i]] = static_cast<Scalar>(-1.0 + (2.0 * i + 1.0) / n);
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : t.data()) v = static_cast<Scalar>(normal(rng));
  }
  return parameter(std::move(t));
}

template <typename Scalar>
Var<Scalar> contract(const Var<Scalar>& y, const Tensor<Scalar>& w) {
  return sum(mul(y, constant(w)));
}

}  // namespace detail

template <typename Scalar>
std::vector<OpCheck> op_gradcheck_suite(std::uint64_t seed = 1, double step = 1e-3) {
  Rng rng(seed);
  std::vector<OpCheck> out;
  auto run = [&](const std::string& op, ParamList<Scalar> inputs, std::function<Var<Scalar>()> f) {
    // fixed projection weights so the check covers the full Jacobian
    Tensor<Scalar> w;
    {
      auto probe = f();
      w = Tensor<Scalar>(probe.shape());
      std::normal_distribution<double> normal(0.0, 1.0);
      for (auto& v : w.data()) v = static_cast<Scalar>(normal(rng));
    }
    GradcheckOptions opts;
    opts.step = step;
    opts.max_coords = 0;
    auto checks = check_gradients<Scalar>(inputs, [&] { return detail::contract(f(), w); }, opts);
    double worst = 0;
    int coords = 0;
    for (const auto& c : checks) {
      worst = std::max(worst, c.rel_error);
      coords += c.coords;
    }
    out.push_back({op, worst, coords});
  };
  using detail::random_param;

  {
    auto a = random_param<Scalar>({4, 3}, rng), b = random_param<Scalar>({3, 2}, rng);
    run("matmul", {{"a", a}, {"b", b}}, [=] { return matmul(a, b); });
  }
  {
    auto x = random_param<Scalar>({2, 5, 5}, rng), w = random_param<Scalar>({3, 2, 3, 3}, rng),
         b = random_param<Scalar>({3}, rng);
    run("conv2d", {{"x", x}, {"w", w}, {"b", b}}, [=] { return conv2d(x, w, b, 1, 0); });
    run("conv2d_stride2_pad1", {{"x", x}, {"w", w}}, [=] { return conv2d(x, w, 2, 1); });
    auto w1 = random_param<Scalar>({3, 2, 1, 1}, rng);
    run("conv2d_pointwise", {{"x", x}, {"w", w1}, {"b", b}}, [=] { return conv2d(x, w1, b, 1, 0); });
  }
  {
    auto x = random_param<Scalar>({4, 4}, rng);
    run("softmax_rows", {{"x", x}}, [=] { return softmax_rows(x); });
  }
  {
    auto x = random_param<Scalar>({3, 4}, rng, true);
    run("leaky_relu", {{"x", x}}, [=] { return leaky_relu(x, Scalar(0.01)); });
    run("abs", {{"x", x}}, [=] { return gbe::abs(x); });
    run("sigmoid", {{"x", x}}, [=] { return sigmoid(x); });
    run("column_max", {{"x", x}}, [=] { return column_max(x); });
    run("row_max", {{"x", x}}, [=] { return row_max(x); });
    run("transpose", {{"x", x}}, [=] { return transpose(x); });
    run("reshape", {{"x", x}}, [=] { return reshape(x, Shape{2, 6}); });
    run("scale", {{"x", x}}, [=] { return scale(x, Scalar(-1.5)); });
    run("sum", {{"x", x}}, [=] { return sum(x); });
  }
  {
    auto x = random_param<Scalar>({3, 4, 4}, rng, true);
    run("global_max_pool", {{"x", x}}, [=] { return spatial_pool(x, PoolMode::Max); });
    run("global_avg_pool", {{"x", x}}, [=] { return spatial_pool(x, PoolMode::Avg); });
    run("max_pool", {{"x", x}}, [=] { return spatial_pool(x, PoolMode::Max, 2, 2); });
    run("avg_pool", {{"x", x}}, [=] { return spatial_pool(x, PoolMode::Avg, 2, 2); });
    run("upsample_nearest", {{"x", x}}, [=] { return upsample_nearest(x, 2); });
    run("slice_channels", {{"x", x}}, [=] { return slice_channels(x, 1, 2); });
    auto g = random_param<Scalar>({3}, rng);
    run("channel_scale", {{"x", x}, {"g", g}}, [=] { return channel_scale(x, g); });
  }
  {
    auto a = random_param<Scalar>({1, 2, 2}, rng), b = random_param<Scalar>({2, 2, 2}, rng);
    run("concat_channels", {{"a", a}, {"b", b}}, [=] { return concat_channels<Scalar>({a, b}); });
  }
  {
    auto a = random_param<Scalar>({3, 2}, rng), b = random_param<Scalar>({3, 2}, rng), c = random_param<Scalar>({3, 2}, rng);
    run("add", {{"a", a}, {"b", b}}, [=] { return add(a, b); });
    run("mul", {{"a", a}, {"b", b}}, [=] { return mul(a, b); });
    run("add_n", {{"a", a}, {"b", b}, {"c", c}}, [=] { return add_n<Scalar>({a, b, c}); });
    auto bias = random_param<Scalar>({2}, rng);
    run("add_row_bias", {{"a", a}, {"bias", bias}}, [=] { return add_row_bias(a, bias); });
    auto d = random_param<Scalar>({3, 4}, rng);
    run("concat_cols", {{"a", a}, {"d", d}}, [=] { return concat_cols(a, d); });
    run("repeat_rows", {{"bias", bias}}, [=] { return repeat_rows(bias, 3); });
  }
  {
    auto x = random_param<Scalar>({7}, rng);
    run("variance", {{"x", x}}, [=] { return variance(x); });
  }
  {
    auto s = random_param<Scalar>({7}, rng);
    run("ranknet_pairs", {{"s", s}}, [=] { return ranknet_pairs(s, {0, 2, 5}, {1, 3, 4, 6}); });
  }
  return out;
}

}  // namespace gbe
