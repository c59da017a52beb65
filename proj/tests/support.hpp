#pragma once

#include <doctest.h>

#include <random>
#include <vector>

#include "gbe/gradcheck.hpp"
#include "gbe/metrics.hpp"
#include "gbe/tensor.hpp"
#include "oracles.hpp"

namespace testing {

template <typename S = double>
gbe::Tensor<S> tensor(gbe::Shape shape, std::vector<S> values) {
  return gbe::Tensor<S>(std::move(shape), std::move(values));
}

template <typename S = double>
gbe::Tensor<S> random_tensor(gbe::Shape shape, std::mt19937_64& rng, double spread = 1.0) {
  gbe::Tensor<S> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, spread);
  for (auto& v : t.data()) v = static_cast<S>(normal(rng));
  return t;
}

template <typename S>
gbe::Var<S> constant_from(const oracle::Matrix& m) {
  const int r = static_cast<int>(m.size()), c = static_cast<int>(m[0].size());
  gbe::Tensor<S> t({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) t.at({i, j}) = static_cast<S>(m[i][j]);
  return gbe::constant(std::move(t));
}

inline gbe::ScoreMatrix score_matrix(const oracle::Matrix& s, const oracle::Bits& t) {
  gbe::ScoreMatrix m;
  const auto n = static_cast<Eigen::Index>(s.size()), l = static_cast<Eigen::Index>(s[0].size());
  m.scores.resize(n, l);
  m.truth.resize(n, l);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < l; ++j) {
      m.scores(i, j) = s[i][j];
      m.truth(i, j) = static_cast<std::uint8_t>(t[i][j]);
    }
  for (Eigen::Index j = 0; j < l; ++j) m.label_ids.push_back(static_cast<int>(j));
  return m;
}

// Worst relative error of reverse mode against central differences over
// every coordinate of every input (64-bit, h = 1e-3).
inline double max_fd_error(const gbe::ParamList<double>& params, const std::function<gbe::Var<double>()>& loss,
                           double step = 1e-3) {
  gbe::GradcheckOptions opts;
  opts.step = step;
  opts.max_coords = 0;
  double worst = 0;
  for (const auto& c : gbe::check_gradients<double>(params, loss, opts)) worst = std::max(worst, c.rel_error);
  return worst;
}

}  // namespace testing
