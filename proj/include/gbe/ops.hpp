#pragma once

// Differentiable operations over Var<Scalar>. Each op computes its forward
// result eagerly and, when a tape is active and an input needs a gradient,
// records a backward rule that accumulates into the inputs' gradients.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gbe/tensor.hpp"

namespace gbe {

namespace detail {

template <typename Scalar>
void require_rank(const Var<Scalar>& x, int rank, const char* op) {
  if (x.value().rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Unfolds a C x H x W map into (C*k*k) x (Ho*Wo) patch columns.
template <typename Scalar>
RowMatrix<Scalar> im2col(const Tensor<Scalar>& x, int k, int stride, int pad, int ho, int wo) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  RowMatrix<Scalar> cols(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(ho) * wo);
  const Scalar* src = x.ptr();
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.data() + ((static_cast<Eigen::Index>(ci) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? src[(static_cast<std::size_t>(ci) * h + iy) * w + ix]
                                    : Scalar(0);
          }
        }
      }
  return cols;
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Tensor<Scalar>& gx, int k, int stride, int pad, int ho,
                int wo) {
  const int c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  Scalar* dst = gx.ptr();
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.data() + ((static_cast<Eigen::Index>(ci) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            dst[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += src[oy * wo + ox];
          }
        }
      }
}

template <typename Scalar>
Scalar softplus(Scalar t) {
  return std::max(t, Scalar(0)) + std::log1p(std::exp(-std::abs(t)));
}

template <typename Scalar>
Scalar sigmoid(Scalar t) {
  if (t >= 0) return Scalar(1) / (Scalar(1) + std::exp(-t));
  const Scalar e = std::exp(t);
  return e / (Scalar(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return detail::record("matmul", std::move(out), {a, b}, [a, b](Var<Scalar> y) {
    return [a, b, y] {
      const auto g = y.grad().matrix();
      if (a.requires_grad()) a.grad_mut().matrix().noalias() += g * b.value().matrix().transpose();
      if (b.requires_grad()) b.grad_mut().matrix().noalias() += a.value().matrix().transpose() * g;
    };
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& x) {
  detail::require_rank(x, 2, "transpose");
  Tensor<Scalar> out({x.dim(1), x.dim(0)});
  out.matrix() = x.value().matrix().transpose();
  return detail::record("transpose", std::move(out), {x}, [x](Var<Scalar> y) {
    return [x, y] { x.grad_mut().matrix() += y.grad().matrix().transpose(); };
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return detail::record("reshape", x.value().reshaped(std::move(shape)), {x}, [x](Var<Scalar> y) {
    return [x, y] { x.grad_mut().vec() += y.grad().vec(); };
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape());
  out.vec() = a.value().vec() + b.value().vec();
  return detail::record("add", std::move(out), {a, b}, [a, b](Var<Scalar> y) {
    return [a, b, y] {
      if (a.requires_grad()) a.grad_mut().vec() += y.grad().vec();
      if (b.requires_grad()) b.grad_mut().vec() += y.grad().vec();
    };
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape());
  out.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return detail::record("mul", std::move(out), {a, b}, [a, b](Var<Scalar> y) {
    return [a, b, y] {
      if (a.requires_grad()) a.grad_mut().vec() += y.grad().vec().cwiseProduct(b.value().vec());
      if (b.requires_grad()) b.grad_mut().vec() += y.grad().vec().cwiseProduct(a.value().vec());
    };
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar s) {
  Tensor<Scalar> out(x.shape());
  out.vec() = x.value().vec() * s;
  return detail::record("scale", std::move(out), {x}, [x, s](Var<Scalar> y) {
    return [x, s, y] { x.grad_mut().vec() += y.grad().vec() * s; };
  });
}

template <typename Scalar>
Var<Scalar> add_n(const std::vector<Var<Scalar>>& xs) {
  if (xs.empty()) throw UsageError("add_n: empty input list");
  Tensor<Scalar> out(xs.front().shape());
  for (const auto& x : xs) {
    detail::require_same_shape(xs.front(), x, "add_n");
    out.vec() += x.value().vec();
  }
  return detail::record("add_n", std::move(out), xs, [xs](Var<Scalar> y) {
    return [xs, y] {
      for (const auto& x : xs)
        if (x.requires_grad()) x.grad_mut().vec() += y.grad().vec();
    };
  });
}

// y = x for x >= 0, slope * x otherwise; the derivative at exactly 0 is 1.
template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope = Scalar(0.01)) {
  Tensor<Scalar> out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= 0 ? in[i] : slope * in[i];
  return detail::record("leaky_relu", std::move(out), {x}, [x, slope](Var<Scalar> y) {
    return [x, slope, y] {
      auto& gx = x.grad_mut();
      const auto& in = x.value();
      const auto& g = y.grad();
      for (std::size_t i = 0; i < in.size(); ++i) gx[i] += in[i] >= 0 ? g[i] : slope * g[i];
    };
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(x.value()[i]);
  return detail::record("sigmoid", std::move(out), {x}, [x](Var<Scalar> y) {
    return [x, y] {
      auto& gx = x.grad_mut();
      const auto& s = y.value();
      for (std::size_t i = 0; i < s.size(); ++i) gx[i] += y.grad()[i] * s[i] * (Scalar(1) - s[i]);
    };
  });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.vec() = x.value().vec().cwiseAbs();
  return detail::record("abs", std::move(out), {x}, [x](Var<Scalar> y) {
    return [x, y] {
      auto& gx = x.grad_mut();
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += x.value()[i] >= 0 ? y.grad()[i] : -y.grad()[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Broadcasts and reductions

// x: R x C, b: C; adds b to every row.
template <typename Scalar>
Var<Scalar> add_row_bias(const Var<Scalar>& x, const Var<Scalar>& b) {
  detail::require_rank(x, 2, "add_row_bias");
  if (b.size() != static_cast<std::size_t>(x.dim(1)))
    throw DimensionError("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  Tensor<Scalar> out = x.value();
  out.matrix().rowwise() += b.value().vec().transpose();
  return detail::record("add_row_bias", std::move(out), {x, b}, [x, b](Var<Scalar> y) {
    return [x, b, y] {
      if (x.requires_grad()) x.grad_mut().vec() += y.grad().vec();
      if (b.requires_grad()) b.grad_mut().vec() += y.grad().matrix().colwise().sum().transpose();
    };
  });
}

// x: C x H x W (or C x anything), gate: C; scales channel c by gate[c].
template <typename Scalar>
Var<Scalar> channel_scale(const Var<Scalar>& x, const Var<Scalar>& gate) {
  if (gate.size() != static_cast<std::size_t>(x.dim(0)))
    throw DimensionError("channel_scale: " + shape_str(x.shape()) + " * " + shape_str(gate.shape()));
  Tensor<Scalar> out = x.value();
  out.matrix().array().colwise() *= gate.value().vec().array();
  return detail::record("channel_scale", std::move(out), {x, gate}, [x, gate](Var<Scalar> y) {
    return [x, gate, y] {
      const auto g = y.grad().matrix();
      if (x.requires_grad())
        x.grad_mut().matrix().array() += g.array().colwise() * gate.value().vec().array();
      if (gate.requires_grad())
        gate.grad_mut().vec() += g.cwiseProduct(x.value().matrix()).rowwise().sum();
    };
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  return detail::record("sum", Tensor<Scalar>::scalar(x.value().vec().sum()), {x}, [x](Var<Scalar> y) {
    return [x, y] { x.grad_mut().vec().array() += y.grad()[0]; };
  });
}

// Population variance over all elements: mean((x - mean(x))^2).
template <typename Scalar>
Var<Scalar> variance(const Var<Scalar>& x) {
  const auto v = x.value().vec();
  const Scalar n = static_cast<Scalar>(v.size());
  const Scalar mu = v.sum() / n;
  const Scalar var = (v.array() - mu).square().sum() / n;
  return detail::record("variance", Tensor<Scalar>::scalar(var), {x}, [x, mu, n](Var<Scalar> y) {
    return [x, mu, n, y] {
      x.grad_mut().vec().array() += (x.value().vec().array() - mu) * (Scalar(2) * y.grad()[0] / n);
    };
  });
}

// x: R x C -> C; per-column max over rows, ties to the lowest row.
template <typename Scalar>
Var<Scalar> column_max(const Var<Scalar>& x) {
  detail::require_rank(x, 2, "column_max");
  const int r = x.dim(0), c = x.dim(1);
  Tensor<Scalar> out({c});
  std::vector<int> arg(static_cast<std::size_t>(c), 0);
  const auto m = x.value().matrix();
  for (int j = 0; j < c; ++j) {
    Scalar best = m(0, j);
    for (int i = 1; i < r; ++i)
      if (m(i, j) > best) {
        best = m(i, j);
        arg[static_cast<std::size_t>(j)] = i;
      }
    out[static_cast<std::size_t>(j)] = best;
  }
  return detail::record("column_max", std::move(out), {x}, [x, arg](Var<Scalar> y) {
    return [x, arg, y] {
      auto gm = x.grad_mut().matrix();
      for (std::size_t j = 0; j < arg.size(); ++j) gm(arg[j], static_cast<Eigen::Index>(j)) += y.grad()[j];
    };
  });
}

// x: R x C -> R; per-row max over columns, ties to the lowest column.
template <typename Scalar>
Var<Scalar> row_max(const Var<Scalar>& x) {
  detail::require_rank(x, 2, "row_max");
  const int r = x.dim(0), c = x.dim(1);
  Tensor<Scalar> out({r});
  std::vector<int> arg(static_cast<std::size_t>(r), 0);
  const auto m = x.value().matrix();
  for (int i = 0; i < r; ++i) {
    Scalar best = m(i, 0);
    for (int j = 1; j < c; ++j)
      if (m(i, j) > best) {
        best = m(i, j);
        arg[static_cast<std::size_t>(i)] = j;
      }
    out[static_cast<std::size_t>(i)] = best;
  }
  return detail::record("row_max", std::move(out), {x}, [x, arg](Var<Scalar> y) {
    return [x, arg, y] {
      auto gm = x.grad_mut().matrix();
      for (std::size_t i = 0; i < arg.size(); ++i) gm(static_cast<Eigen::Index>(i), arg[i]) += y.grad()[i];
    };
  });
}

// Row-wise softmax with per-row max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
  detail::require_rank(x, 2, "softmax_rows");
  Tensor<Scalar> out(x.shape());
  auto o = out.matrix();
  o = x.value().matrix();
  o.colwise() -= o.rowwise().maxCoeff();
  o = o.array().exp().matrix();
  o.array().colwise() /= o.rowwise().sum().array();
  return detail::record("softmax_rows", std::move(out), {x}, [x](Var<Scalar> y) {
    return [x, y] {
      const auto s = y.value().matrix();
      const auto g = y.grad().matrix();
      const auto dot = g.cwiseProduct(s).rowwise().sum();
      x.grad_mut().matrix().array() += s.array() * (g.colwise() - dot).array();
    };
  });
}

// ---------------------------------------------------------------------------
// Slicing, stacking, concatenation

// Concatenates along dim 0; trailing dims must agree.
template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw UsageError("concat_channels: no parts");
  Shape shape = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    Shape a(p.shape().begin() + 1, p.shape().end());
    Shape b(shape.begin() + 1, shape.end());
    if (p.value().rank() != static_cast<int>(shape.size()) || a != b)
      throw DimensionError("concat_channels: spatial mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    total += p.dim(0);
  }
  shape[0] = total;
  Tensor<Scalar> out(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return detail::record("concat_channels", std::move(out), parts, [parts](Var<Scalar> y) {
    return [parts, y] {
      std::size_t off = 0;
      for (const auto& p : parts) {
        if (p.requires_grad())
          p.grad_mut().vec() += y.grad().vec().segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(p.size()));
        off += p.size();
      }
    };
  });
}

// Slice [begin, begin+count) along dim 0.
template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& x, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > x.dim(0))
    throw DimensionError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[0] = count;
  const std::size_t inner = x.size() / static_cast<std::size_t>(x.dim(0));
  const auto off = static_cast<Eigen::Index>(inner * static_cast<std::size_t>(begin));
  const auto len = static_cast<Eigen::Index>(inner * static_cast<std::size_t>(count));
  Tensor<Scalar> out(shape);
  out.vec() = x.value().vec().segment(off, len);
  return detail::record("slice_channels", std::move(out), {x}, [x, off, len](Var<Scalar> y) {
    return [x, off, len, y] { x.grad_mut().vec().segment(off, len) += y.grad().vec(); };
  });
}

template <typename Scalar>
Var<Scalar> row(const Var<Scalar>& x, int r) {
  detail::require_rank(x, 2, "row");
  return reshape(slice_channels(x, r, 1), Shape{x.dim(1)});
}

// Stacks equal-length vectors into an n x C matrix.
template <typename Scalar>
Var<Scalar> stack_rows(const std::vector<Var<Scalar>>& rows) {
  if (rows.empty()) throw UsageError("stack_rows: no rows");
  std::vector<Var<Scalar>> as_rows;
  as_rows.reserve(rows.size());
  for (const auto& r : rows) as_rows.push_back(reshape(r, Shape{1, static_cast<int>(r.size())}));
  return concat_channels(as_rows);
}

// a: R x C1, b: R x C2 -> R x (C1 + C2).
template <typename Scalar>
Var<Scalar> concat_cols(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_rank(a, 2, "concat_cols");
  detail::require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0))
    throw DimensionError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int c1 = a.dim(1), c2 = b.dim(1);
  Tensor<Scalar> out({a.dim(0), c1 + c2});
  out.matrix().leftCols(c1) = a.value().matrix();
  out.matrix().rightCols(c2) = b.value().matrix();
  return detail::record("concat_cols", std::move(out), {a, b}, [a, b, c1, c2](Var<Scalar> y) {
    return [a, b, c1, c2, y] {
      if (a.requires_grad()) a.grad_mut().matrix() += y.grad().matrix().leftCols(c1);
      if (b.requires_grad()) b.grad_mut().matrix() += y.grad().matrix().rightCols(c2);
    };
  });
}

// v: C -> n x C with every row equal to v.
template <typename Scalar>
Var<Scalar> repeat_rows(const Var<Scalar>& v, int n) {
  const int c = static_cast<int>(v.size());
  Tensor<Scalar> out({n, c});
  out.matrix().rowwise() = v.value().vec().transpose();
  return detail::record("repeat_rows", std::move(out), {v}, [v](Var<Scalar> y) {
    return [v, y] { v.grad_mut().vec() += y.grad().matrix().colwise().sum().transpose(); };
  });
}

// ---------------------------------------------------------------------------
// Convolution and spatial ops

// Cross-correlation of x (C_in x H x W) with w (C_out x C_in x k x k) plus an
// optional per-output-channel bias.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& bias, int stride, int pad) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k)
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(w.shape()));
  if (stride <= 0 || pad < 0) throw ConfigError("conv2d: stride must be positive and pad non-negative");
  const int span_h = h + 2 * pad - k, span_w = wd + 2 * pad - k;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0)
    throw ConfigError("conv2d: non-integral output size for input " + shape_str(x.shape()) + ", k=" +
                      std::to_string(k) + ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(pad));
  const int ho = span_h / stride + 1, wo = span_w / stride + 1;
  if (bias && bias.size() != static_cast<std::size_t>(cout))
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) + " outputs");

  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  auto cols = std::make_shared<RowMatrix<Scalar>>();
  if (!pointwise) *cols = detail::im2col(x.value(), k, stride, pad, ho, wo);
  const ConstMatrixMap<Scalar> wm(w.value().ptr(), cout, static_cast<Eigen::Index>(cin) * k * k);

  Tensor<Scalar> out({cout, ho, wo});
  if (pointwise)
    out.matrix().noalias() = wm * x.value().matrix();
  else
    out.matrix().noalias() = wm * *cols;
  if (bias) out.matrix().colwise() += bias.value().vec();

  std::vector<Var<Scalar>> inputs{x, w};
  if (bias) inputs.push_back(bias);
  return detail::record("conv2d", std::move(out), inputs,
                        [x, w, bias, cols, pointwise, cin, cout, k, stride, pad, ho, wo](Var<Scalar> y) {
    return [x, w, bias, cols, pointwise, cin, cout, k, stride, pad, ho, wo, y] {
      const auto g = y.grad().matrix();
      const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;
      if (w.requires_grad()) {
        MatrixMap<Scalar> gw(w.grad_mut().ptr(), cout, kk);
        if (pointwise)
          gw.noalias() += g * x.value().matrix().transpose();
        else
          gw.noalias() += g * cols->transpose();
      }
      if (bias && bias.requires_grad()) bias.grad_mut().vec() += g.rowwise().sum();
      if (x.requires_grad()) {
        const ConstMatrixMap<Scalar> wm(w.value().ptr(), cout, kk);
        if (pointwise) {
          x.grad_mut().matrix().noalias() += wm.transpose() * g;
        } else {
          RowMatrix<Scalar> gcols = wm.transpose() * g;
          detail::col2im_add(gcols, x.grad_mut(), k, stride, pad, ho, wo);
        }
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, int stride, int pad) {
  return conv2d(x, w, Var<Scalar>{}, stride, pad);
}

enum class PoolMode { Max, Avg };

// Global spatial pooling: C x H x W -> C.
template <typename Scalar>
Var<Scalar> spatial_pool(const Var<Scalar>& x, PoolMode mode) {
  detail::require_rank(x, 3, "spatial_pool");
  const int c = x.dim(0);
  const auto m = x.value().matrix();
  Tensor<Scalar> out({c});
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(c), 0);
  for (int i = 0; i < c; ++i) {
    if (mode == PoolMode::Avg) {
      out[static_cast<std::size_t>(i)] = m.row(i).mean();
    } else {
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < m.cols(); ++j)
        if (m(i, j) > m(i, best)) best = j;
      arg[static_cast<std::size_t>(i)] = best;
      out[static_cast<std::size_t>(i)] = m(i, best);
    }
  }
  return detail::record(mode == PoolMode::Max ? "global_max_pool" : "global_avg_pool", std::move(out), {x},
                        [x, mode, arg](Var<Scalar> y) {
    return [x, mode, arg, y] {
      auto gm = x.grad_mut().matrix();
      const auto& g = y.grad();
      for (Eigen::Index i = 0; i < gm.rows(); ++i) {
        if (mode == PoolMode::Avg)
          gm.row(i).array() += g[static_cast<std::size_t>(i)] / static_cast<Scalar>(gm.cols());
        else
          gm(i, arg[static_cast<std::size_t>(i)]) += g[static_cast<std::size_t>(i)];
      }
    };
  });
}

// Windowed pooling: C x H x W -> C x Ho x Wo. Max ties go to the first
// element in row-major window order.
template <typename Scalar>
Var<Scalar> spatial_pool(const Var<Scalar>& x, PoolMode mode, int window, int stride) {
  detail::require_rank(x, 3, "spatial_pool");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window <= 0 || stride <= 0 || window > h || window > w || (h - window) % stride || (w - window) % stride)
    throw ConfigError("spatial_pool: window " + std::to_string(window) + "/stride " + std::to_string(stride) +
                      " does not tile " + shape_str(x.shape()));
  const int ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  Tensor<Scalar> out({c, ho, wo});
  std::vector<std::size_t> arg(mode == PoolMode::Max ? out.size() : 0);
  const auto& in = x.value();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(window * window);
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const std::size_t o = (static_cast<std::size_t>(ci) * ho + oy) * wo + ox;
        Scalar acc = 0;
        std::size_t best = 0;
        bool first = true;
        for (int ky = 0; ky < window; ++ky)
          for (int kx = 0; kx < window; ++kx) {
            const std::size_t idx = (static_cast<std::size_t>(ci) * h + oy * stride + ky) * w + ox * stride + kx;
            if (mode == PoolMode::Avg) {
              acc += in[idx];
            } else if (first || in[idx] > in[best]) {
              best = idx;
              first = false;
            }
          }
        if (mode == PoolMode::Avg) {
          out[o] = acc * inv;
        } else {
          out[o] = in[best];
          arg[o] = best;
        }
      }
  return detail::record(mode == PoolMode::Max ? "max_pool" : "avg_pool", std::move(out), {x},
                        [x, mode, arg, window, stride, ho, wo, inv](Var<Scalar> y) {
    return [x, mode, arg, window, stride, ho, wo, inv, y] {
      auto& gx = x.grad_mut();
      const auto& g = y.grad();
      if (mode == PoolMode::Max) {
        for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += g[o];
        return;
      }
      const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
      for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const Scalar v = g[(static_cast<std::size_t>(ci) * ho + oy) * wo + ox] * inv;
            for (int ky = 0; ky < window; ++ky)
              for (int kx = 0; kx < window; ++kx)
                gx[(static_cast<std::size_t>(ci) * h + oy * stride + ky) * w + ox * stride + kx] += v;
          }
    };
  });
}

// Nearest-neighbour upsampling by an integer factor: C x H x W -> C x fH x fW.
template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, int factor) {
  detail::require_rank(x, 3, "upsample_nearest");
  if (factor <= 0) throw ConfigError("upsample_nearest: factor must be positive");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = h * factor, wo = w * factor;
  Tensor<Scalar> out({c, ho, wo});
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        out[(static_cast<std::size_t>(ci) * ho + oy) * wo + ox] =
            x.value()[(static_cast<std::size_t>(ci) * h + oy / factor) * w + ox / factor];
  return detail::record("upsample_nearest", std::move(out), {x}, [x, factor, ho, wo](Var<Scalar> y) {
    return [x, factor, ho, wo, y] {
      auto& gx = x.grad_mut();
      const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
      for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox)
            gx[(static_cast<std::size_t>(ci) * h + oy / factor) * w + ox / factor] +=
                y.grad()[(static_cast<std::size_t>(ci) * ho + oy) * wo + ox];
    };
  });
}

// ---------------------------------------------------------------------------
// Ranking

// Mean over all (negative, positive) pairs of softplus(s_neg - s_pos).
template <typename Scalar>
Var<Scalar> ranknet_pairs(const Var<Scalar>& scores, const std::vector<int>& pos, const std::vector<int>& neg) {
  if (pos.empty() || neg.empty()) throw UsageError("ranknet_pairs: needs at least one positive and one negative");
  const auto& s = scores.value();
  const Scalar alpha = Scalar(1) / static_cast<Scalar>(pos.size() * neg.size());
  Scalar total = 0;
  for (int j : neg)
    for (int k : pos) total += detail::softplus(s[static_cast<std::size_t>(j)] - s[static_cast<std::size_t>(k)]);
  return detail::record("ranknet_pairs", Tensor<Scalar>::scalar(alpha * total), {scores},
                        [scores, pos, neg, alpha](Var<Scalar> y) {
    return [scores, pos, neg, alpha, y] {
      auto& g = scores.grad_mut();
      const auto& s = scores.value();
      const Scalar up = y.grad()[0] * alpha;
      for (int j : neg)
        for (int k : pos) {
          const Scalar d = up * detail::sigmoid(s[static_cast<std::size_t>(j)] - s[static_cast<std::size_t>(k)]);
          g[static_cast<std::size_t>(j)] += d;
          g[static_cast<std::size_t>(k)] -= d;
        }
    };
  });
}

}  // namespace gbe
