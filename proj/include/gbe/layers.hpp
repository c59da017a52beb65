#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gbe/ops.hpp"
#include "gbe/serialize.hpp"

namespace gbe {

template <typename Scalar>
using ParamList = std::vector<std::pair<std::string, Var<Scalar>>>;

using Rng = std::mt19937_64;

// He-style fan-in scaled uniform initialisation, bound sqrt(6 / fan_in).
template <typename Scalar>
Tensor<Scalar> he_uniform(Shape shape, int fan_in, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
struct Conv2d {
  Var<Scalar> weight;  // C_out x C_in x k x k
  Var<Scalar> bias;    // C_out
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
      : weight(parameter(he_uniform<Scalar>({cout, cin, k, k}, cin * k * k, rng))),
        bias(parameter(Tensor<Scalar>({cout}))),
        stride(stride_),
        pad(pad_) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(ParamList<Scalar>& out, const std::string& name) const {
    out.emplace_back(name + ".weight", weight);
    out.emplace_back(name + ".bias", bias);
  }
};

// Row-vector linear map: x (R x in) -> x W + b (R x out).
template <typename Scalar>
struct Linear {
  Var<Scalar> weight;  // in x out
  Var<Scalar> bias;    // out, absent when constructed without bias

  Linear() = default;
  Linear(int in, int out, bool with_bias, Rng& rng)
      : weight(parameter(he_uniform<Scalar>({in, out}, in, rng))) {
    if (with_bias) bias = parameter(Tensor<Scalar>({out}));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    auto y = matmul(x, weight);
    return bias ? add_row_bias(y, bias) : y;
  }

  void collect(ParamList<Scalar>& out, const std::string& name) const {
    out.emplace_back(name + ".weight", weight);
    if (bias) out.emplace_back(name + ".bias", bias);
  }
};

// Copies values from a name -> tensor map into a parameter list; every
// parameter must be present with a matching shape.
template <typename Scalar>
void load_params(const ParamList<Scalar>& params, const NamedTensors& values) {
  for (const auto& [name, var] : params) {
    auto it = values.find(name);
    if (it == values.end()) throw CorruptFileError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != var.shape())
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(var.shape()) + ", checkpoint has " +
                           shape_str(it->second.shape()));
    var.mutable_value() = it->second.template cast<Scalar>();
  }
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<float>>> snapshot_params(const ParamList<Scalar>& params) {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& [name, var] : params) out.emplace_back(name, var.value().template cast<float>());
  return out;
}

}  // namespace gbe
