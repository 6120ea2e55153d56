#include "mda/ops.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <map>

namespace mda {

namespace {

template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

template <typename S>
ConstMatMap<S> view(const Array<S>& a, Index rows, Index cols) {
  return {a.data(), rows, cols};
}

template <typename S>
MatMap<S> view(Array<S>& a, Index rows, Index cols) {
  return {a.data(), rows, cols};
}

template <typename S, std::size_t N, typename Fn>
Tensor<S> emit(std::string_view kind,
               const std::array<const Tensor<S>*, N>& operands, Shape shape,
               Array<S> values, Fn&& fn) {
  if (Tape<S>* tape = Tape<S>::active()) {
    return tape->record(kind, std::span<const Tensor<S>* const>(operands),
                        std::move(shape), std::move(values),
                        std::forward<Fn>(fn));
  }
  if (!values.allFinite()) {
    throw NonFiniteError(std::string(kind) + ": non-finite output");
  }
  return Tensor<S>(std::move(shape), std::move(values));
}

template <typename S>
void require_rank2(std::string_view op, const Tensor<S>& x) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 operand, got " +
                     shape_string(x.shape()));
  }
}

template <typename S>
void require_same_shape(std::string_view op, const Tensor<S>& a,
                        const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= 0) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const Index m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " +
                     shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Array<S> out(m * n);
  view(out, m, n).noalias() = a.matrix() * b.matrix();
  return emit<S, 2>("matmul", {&a, &b}, {m, n}, std::move(out),
                    [a, b, m, k, n](const Array<S>& g, const Array<S>&,
                                    typename Tape<S>::GradientSink& sink) {
                      const auto G = view(g, m, n);
                      if (sink.wants(0)) {
                        Array<S> ga(m * k);
                        view(ga, m, k).noalias() = G * b.matrix().transpose();
                        sink.add(0, ga);
                      }
                      if (sink.wants(1)) {
                        Array<S> gb(k * n);
                        view(gb, k, n).noalias() = a.matrix().transpose() * G;
                        sink.add(1, gb);
                      }
                    });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() == b.shape()) {
    return emit<S, 2>("add", {&a, &b}, a.shape(), a.values() + b.values(),
                      [](const Array<S>& g, const Array<S>&,
                         typename Tape<S>::GradientSink& sink) {
                        sink.add(0, g);
                        sink.add(1, g);
                      });
  }
  if (a.rank() == 2 && b.rank() == 1 && b.size() == a.cols()) {
    const Index r = a.rows(), c = a.cols();
    Array<S> out(r * c);
    view(out, r, c) = a.matrix().rowwise() + b.matrix().row(0);
    return emit<S, 2>("add", {&a, &b}, a.shape(), std::move(out),
                      [r, c](const Array<S>& g, const Array<S>&,
                             typename Tape<S>::GradientSink& sink) {
                        sink.add(0, g);
                        if (sink.wants(1)) {
                          Array<S> gb = view(g, r, c).colwise().sum().transpose().array();
                          sink.add(1, gb);
                        }
                      });
  }
  throw ShapeError("add: incompatible shapes " + shape_string(a.shape()) +
                   " and " + shape_string(b.shape()));
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape("mul", a, b);
  return emit<S, 2>("mul", {&a, &b}, a.shape(), a.values() * b.values(),
                    [a, b](const Array<S>& g, const Array<S>&,
                           typename Tape<S>::GradientSink& sink) {
                      if (sink.wants(0)) sink.add(0, g * b.values());
                      if (sink.wants(1)) sink.add(1, g * a.values());
                    });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  return emit<S, 1>("scale", {&a}, a.shape(), a.values() * factor,
                    [factor](const Array<S>& g, const Array<S>&,
                             typename Tape<S>::GradientSink& sink) {
                      sink.add(0, g * factor);
                    });
}

template <typename S>
Tensor<S> concat(std::span<const Tensor<S>> parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  std::vector<Index> offsets;
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    require_rank2("concat", p);
    if (axis == 1) {
      if (!offsets.empty() && p.rows() != rows) {
        throw ShapeError("concat: row counts differ");
      }
      rows = p.rows();
      offsets.push_back(cols);
      cols += p.cols();
    } else {
      if (!offsets.empty() && p.cols() != cols) {
        throw ShapeError("concat: column counts differ");
      }
      cols = p.cols();
      offsets.push_back(rows);
      rows += p.rows();
    }
  }
  Array<S> out(rows * cols);
  auto O = view(out, rows, cols);
  std::vector<std::pair<Index, Index>> extents;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (axis == 1) {
      O.middleCols(offsets[i], p.cols()) = p.matrix();
    } else {
      O.middleRows(offsets[i], p.rows()) = p.matrix();
    }
    extents.emplace_back(p.rows(), p.cols());
  }
  std::vector<const Tensor<S>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  auto fn = [offsets, extents, rows, cols, axis](
                const Array<S>& g, const Array<S>&,
                typename Tape<S>::GradientSink& sink) {
    const auto G = view(g, rows, cols);
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      if (!sink.wants(i)) continue;
      const auto [r, c] = extents[i];
      Array<S> gi(r * c);
      if (axis == 1) {
        view(gi, r, c) = G.middleCols(offsets[i], c);
      } else {
        view(gi, r, c) = G.middleRows(offsets[i], r);
      }
      sink.add(i, gi);
    }
  };
  if (Tape<S>* tape = Tape<S>::active()) {
    return tape->record("concat", std::span<const Tensor<S>* const>(ptrs),
                        {rows, cols}, std::move(out), fn);
  }
  if (!out.allFinite()) throw NonFiniteError("concat: non-finite output");
  return Tensor<S>({rows, cols}, std::move(out));
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, Index axis, Index begin, Index end) {
  require_rank2("slice", x);
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  const Index extent = axis == 0 ? x.rows() : x.cols();
  if (begin < 0 || end < begin || end > extent) {
    throw ShapeError("slice: range out of bounds");
  }
  const Index r = axis == 0 ? end - begin : x.rows();
  const Index c = axis == 1 ? end - begin : x.cols();
  Array<S> out(r * c);
  if (axis == 0) {
    view(out, r, c) = x.matrix().middleRows(begin, r);
  } else {
    view(out, r, c) = x.matrix().middleCols(begin, c);
  }
  const Index xr = x.rows(), xc = x.cols();
  return emit<S, 1>("slice", {&x}, {r, c}, std::move(out),
                    [=](const Array<S>& g, const Array<S>&,
                        typename Tape<S>::GradientSink& sink) {
                      Array<S> gx = Array<S>::Zero(xr * xc);
                      if (axis == 0) {
                        view(gx, xr, xc).middleRows(begin, r) = view(g, r, c);
                      } else {
                        view(gx, xr, xc).middleCols(begin, c) = view(g, r, c);
                      }
                      sink.add(0, gx);
                    });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  require_rank2("transpose", x);
  const Index r = x.rows(), c = x.cols();
  Array<S> out(r * c);
  view(out, c, r) = x.matrix().transpose();
  return emit<S, 1>("transpose", {&x}, {c, r}, std::move(out),
                    [r, c](const Array<S>& g, const Array<S>&,
                           typename Tape<S>::GradientSink& sink) {
                      Array<S> gx(r * c);
                      view(gx, r, c) = view(g, c, r).transpose();
                      sink.add(0, gx);
                    });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " +
                     shape_string(shape));
  }
  return emit<S, 1>("reshape", {&x}, std::move(shape), x.values(),
                    [](const Array<S>& g, const Array<S>&,
                       typename Tape<S>::GradientSink& sink) { sink.add(0, g); });
}

template <typename S>
Tensor<S> gather(const Tensor<S>& x, std::span<const Index> indices,
                 Shape shape) {
  if (numel(shape) != static_cast<Index>(indices.size())) {
    throw ShapeError("gather: index count does not match shape");
  }
  const Index n = x.size();
  Array<S> out(static_cast<Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= n) throw ShapeError("gather: index out of range");
    out[static_cast<Index>(i)] = x.values()[indices[i]];
  }
  std::vector<Index> idx(indices.begin(), indices.end());
  return emit<S, 1>("gather", {&x}, std::move(shape), std::move(out),
                    [idx = std::move(idx), n](const Array<S>& g, const Array<S>&,
                                             typename Tape<S>::GradientSink& sink) {
                      Array<S> gx = Array<S>::Zero(n);
                      for (std::size_t i = 0; i < idx.size(); ++i) {
                        gx[idx[i]] += g[static_cast<Index>(i)];
                      }
                      sink.add(0, gx);
                    });
}

template <typename S>
Tensor<S> embedding(const Tensor<S>& table, std::span<const int> ids) {
  require_rank2("embedding", table);
  const Index v = table.rows(), e = table.cols();
  const Index n = static_cast<Index>(ids.size());
  Array<S> out(n * e);
  auto O = view(out, n, e);
  for (Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(id) +
                              " outside [0, " + std::to_string(v) + ")");
    }
    O.row(i) = table.matrix().row(id);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return emit<S, 1>("embedding", {&table}, {n, e}, std::move(out),
                    [rows = std::move(rows), v, e](
                        const Array<S>& g, const Array<S>&,
                        typename Tape<S>::GradientSink& sink) {
                      Array<S> gt = Array<S>::Zero(v * e);
                      auto GT = view(gt, v, e);
                      const auto G = view(g, static_cast<Index>(rows.size()), e);
                      for (std::size_t i = 0; i < rows.size(); ++i) {
                        GT.row(rows[i]) += G.row(static_cast<Index>(i));
                      }
                      sink.add(0, gt);
                    });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, Index groups, S eps) {
  require_rank2("layer_norm", x);
  const Index r = x.rows(), c = x.cols();
  if (groups < 1 || c % groups != 0) {
    throw ShapeError("layer_norm: channels not divisible into groups");
  }
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("layer_norm: affine parameters must have length " +
                     std::to_string(c));
  }
  const Index w = c / groups;
  Array<S> xhat(r * c);
  Array<S> inv_std(r * groups);
  const auto X = x.matrix();
  auto XH = view(xhat, r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index gi = 0; gi < groups; ++gi) {
      const auto seg = X.row(i).segment(gi * w, w).array();
      const S mean = seg.mean();
      const S var = (seg - mean).square().mean();
      const S is = S(1) / std::sqrt(var + eps);
      inv_std[i * groups + gi] = is;
      XH.row(i).segment(gi * w, w) = ((seg - mean) * is).matrix();
    }
  }
  Array<S> out(r * c);
  view(out, r, c) =
      (XH.array().rowwise() * gamma.values().transpose()).rowwise() +
      beta.values().transpose();
  return emit<S, 3>(
      "layer_norm", {&x, &gamma, &beta}, {r, c}, std::move(out),
      [xhat, inv_std, gamma, r, c, w, groups](
          const Array<S>& g, const Array<S>&,
          typename Tape<S>::GradientSink& sink) {
        const auto G = view(g, r, c).array();
        const auto XH = view(xhat, r, c).array();
        if (sink.wants(1)) {
          Array<S> gg = (G * XH).colwise().sum().transpose();
          sink.add(1, gg);
        }
        if (sink.wants(2)) {
          Array<S> gb = G.colwise().sum().transpose();
          sink.add(2, gb);
        }
        if (sink.wants(0)) {
          Array<S> gx(r * c);
          auto GX = view(gx, r, c);
          const RowMatrix<S> dxhat =
              (G.rowwise() * gamma.values().transpose()).matrix();
          for (Index i = 0; i < r; ++i) {
            for (Index gi = 0; gi < groups; ++gi) {
              const auto d = dxhat.row(i).segment(gi * w, w).array();
              const auto xh = XH.row(i).segment(gi * w, w);
              const S mean_d = d.mean();
              const S mean_dx = (d * xh).mean();
              GX.row(i).segment(gi * w, w) =
                  ((d - mean_d - xh * mean_dx) * inv_std[i * groups + gi])
                      .matrix();
            }
          }
          sink.add(0, gx);
        }
      });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  const Index r = x.rows(), c = x.cols();
  Array<S> out(r * c);
  auto O = view(out, r, c);
  const auto X = x.matrix();
  for (Index i = 0; i < r; ++i) {
    const S m = X.row(i).maxCoeff();
    O.row(i) = (X.row(i).array() - m).exp().matrix();
    O.row(i) /= O.row(i).sum();
  }
  return emit<S, 1>("softmax", {&x}, x.shape(), std::move(out),
                    [r, c](const Array<S>& g, const Array<S>& y,
                           typename Tape<S>::GradientSink& sink) {
                      const auto G = view(g, r, c).array();
                      const auto Y = view(y, r, c).array();
                      Array<S> gx(r * c);
                      const Eigen::Array<S, Eigen::Dynamic, 1> dot =
                          (G * Y).rowwise().sum();
                      view(gx, r, c) = (Y * (G.colwise() - dot)).matrix();
                      sink.add(0, gx);
                    });
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  const Index r = x.rows(), c = x.cols();
  Array<S> out(r * c);
  auto O = view(out, r, c);
  const auto X = x.matrix();
  for (Index i = 0; i < r; ++i) {
    const S m = X.row(i).maxCoeff();
    const S lse = m + std::log((X.row(i).array() - m).exp().sum());
    O.row(i) = (X.row(i).array() - lse).matrix();
  }
  return emit<S, 1>("log_softmax", {&x}, x.shape(), std::move(out),
                    [r, c](const Array<S>& g, const Array<S>& y,
                           typename Tape<S>::GradientSink& sink) {
                      const auto G = view(g, r, c).array();
                      const auto P = view(y, r, c).array().exp();
                      Array<S> gx(r * c);
                      const Eigen::Array<S, Eigen::Dynamic, 1> total =
                          G.rowwise().sum();
                      view(gx, r, c) = (G - P.colwise() * total).matrix();
                      sink.add(0, gx);
                    });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Array<S> out = x.values().unaryExpr([](S v) { return stable_sigmoid(v); });
  return emit<S, 1>("sigmoid", {&x}, x.shape(), std::move(out),
                    [](const Array<S>& g, const Array<S>& y,
                       typename Tape<S>::GradientSink& sink) {
                      sink.add(0, g * y * (S(1) - y));
                    });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  Array<S> out = x.values().tanh();
  return emit<S, 1>("tanh", {&x}, x.shape(), std::move(out),
                    [](const Array<S>& g, const Array<S>& y,
                       typename Tape<S>::GradientSink& sink) {
                      sink.add(0, g * (S(1) - y.square()));
                    });
}

template <typename S>
Tensor<S> swish(const Tensor<S>& x) {
  Array<S> sig = x.values().unaryExpr([](S v) { return stable_sigmoid(v); });
  Array<S> out = x.values() * sig;
  return emit<S, 1>("swish", {&x}, x.shape(), std::move(out),
                    [x, sig = std::move(sig)](const Array<S>& g, const Array<S>&,
                                              typename Tape<S>::GradientSink& sink) {
                      sink.add(0, g * (sig + x.values() * sig * (S(1) - sig)));
                    });
}

template <typename S>
Tensor<S> glu(const Tensor<S>& x) {
  require_rank2("glu", x);
  const Index r = x.rows(), c2 = x.cols();
  if (c2 % 2 != 0) throw ShapeError("glu: odd channel count");
  const Index c = c2 / 2;
  const auto X = x.matrix().array();
  const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gate =
      X.rightCols(c).unaryExpr([](S v) { return stable_sigmoid(v); });
  Array<S> out(r * c);
  view(out, r, c) = (X.leftCols(c) * gate).matrix();
  return emit<S, 1>(
      "glu", {&x}, {r, c}, std::move(out),
      [x, gate, r, c](const Array<S>& g, const Array<S>&,
                      typename Tape<S>::GradientSink& sink) {
        const auto G = view(g, r, c).array();
        const auto A = x.matrix().array().leftCols(c);
        Array<S> gx(r * 2 * c);
        auto GX = view(gx, r, 2 * c);
        GX.leftCols(c) = (G * gate).matrix();
        GX.rightCols(c) = (G * A * gate * (S(1) - gate)).matrix();
        sink.add(0, gx);
      });
}

template <typename S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& kernel,
                           Index left, Index right) {
  require_rank2("depthwise_conv1d", x);
  require_rank2("depthwise_conv1d", kernel);
  if (left < 0 || right < 0) throw ShapeError("depthwise_conv1d: negative context");
  const Index t_len = x.rows(), c = x.cols(), k = kernel.rows();
  if (kernel.cols() != c) throw ShapeError("depthwise_conv1d: channel mismatch");
  if (k != left + right + 1) {
    throw ShapeError("depthwise_conv1d: kernel size " + std::to_string(k) +
                     " != left + right + 1");
  }
  Array<S> out = Array<S>::Zero(t_len * c);
  auto O = view(out, t_len, c);
  const auto X = x.matrix();
  const auto W = kernel.matrix();
  for (Index t = 0; t < t_len; ++t) {
    for (Index j = 0; j < k; ++j) {
      const Index s = t - left + j;
      if (s < 0 || s >= t_len) continue;
      O.row(t).array() += W.row(j).array() * X.row(s).array();
    }
  }
  return emit<S, 2>(
      "depthwise_conv1d", {&x, &kernel}, {t_len, c}, std::move(out),
      [x, kernel, left, t_len, c, k](const Array<S>& g, const Array<S>&,
                                     typename Tape<S>::GradientSink& sink) {
        const auto G = view(g, t_len, c);
        const auto X = x.matrix();
        const auto W = kernel.matrix();
        Array<S> gx = Array<S>::Zero(t_len * c);
        Array<S> gw = Array<S>::Zero(k * c);
        auto GX = view(gx, t_len, c);
        auto GW = view(gw, k, c);
        for (Index t = 0; t < t_len; ++t) {
          for (Index j = 0; j < k; ++j) {
            const Index s = t - left + j;
            if (s < 0 || s >= t_len) continue;
            GX.row(s).array() += G.row(t).array() * W.row(j).array();
            GW.row(j).array() += G.row(t).array() * X.row(s).array();
          }
        }
        sink.add(0, gx);
        sink.add(1, gw);
      });
}

template <typename S>
Tensor<S> masked_fill(const Tensor<S>& x, const Mask& mask, S value) {
  if (mask.size() != x.size()) throw ShapeError("masked_fill: mask size mismatch");
  Array<S> out = mask.select(Array<S>::Constant(x.size(), value), x.values());
  return emit<S, 1>("masked_fill", {&x}, x.shape(), std::move(out),
                    [mask](const Array<S>& g, const Array<S>&,
                           typename Tape<S>::GradientSink& sink) {
                      sink.add(0, mask.select(Array<S>::Zero(g.size()), g));
                    });
}

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& x) {
  Array<S> out(1);
  out[0] = x.values().sum();
  const Index n = x.size();
  return emit<S, 1>("reduce_sum", {&x}, Shape{}, std::move(out),
                    [n](const Array<S>& g, const Array<S>&,
                        typename Tape<S>::GradientSink& sink) {
                      sink.add(0, Array<S>::Constant(n, g[0]));
                    });
}

template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& x) {
  const Index n = x.size();
  if (n == 0) throw ShapeError("reduce_mean: empty tensor");
  Array<S> out(1);
  out[0] = x.values().mean();
  return emit<S, 1>("reduce_mean", {&x}, Shape{}, std::move(out),
                    [n](const Array<S>& g, const Array<S>&,
                        typename Tape<S>::GradientSink& sink) {
                      sink.add(0, Array<S>::Constant(n, g[0] / S(n)));
                    });
}

const std::vector<std::string_view>& primitive_kinds() {
  static const std::vector<std::string_view> kinds = {
      "matmul",    "add",        "mul",        "scale",       "concat",
      "slice",     "transpose",  "reshape",    "gather",      "embedding",
      "layer_norm", "softmax",   "log_softmax", "sigmoid",    "tanh",
      "swish",     "glu",        "depthwise_conv1d", "masked_fill",
      "reduce_sum", "reduce_mean"};
  return kinds;
}

template <typename S>
Tensor<S> apply_primitive(std::string_view kind,
                          std::span<const Tensor<S>> operands,
                          const PrimitiveAttrs<S>& attrs) {
  auto arity = [&](std::size_t n) {
    if (operands.size() != n) {
      throw ShapeError(std::string(kind) + ": expected " + std::to_string(n) +
                       " operands, got " + std::to_string(operands.size()));
    }
  };
  const auto& o = operands;
  if (kind == "concat") return concat<S>(operands, attrs.axis);
  if (kind == "matmul") { arity(2); return matmul(o[0], o[1]); }
  if (kind == "add") { arity(2); return add(o[0], o[1]); }
  if (kind == "mul") { arity(2); return mul(o[0], o[1]); }
  if (kind == "scale") { arity(1); return scale(o[0], attrs.factor); }
  if (kind == "slice") { arity(1); return slice(o[0], attrs.axis, attrs.begin, attrs.end); }
  if (kind == "transpose") { arity(1); return transpose(o[0]); }
  if (kind == "reshape") { arity(1); return reshape(o[0], attrs.shape); }
  if (kind == "gather") {
    arity(1);
    return gather(o[0], std::span<const Index>(attrs.indices), attrs.shape);
  }
  if (kind == "embedding") {
    arity(1);
    return embedding(o[0], std::span<const int>(attrs.ids));
  }
  if (kind == "layer_norm") {
    arity(3);
    return layer_norm(o[0], o[1], o[2], attrs.groups, attrs.eps);
  }
  if (kind == "softmax") { arity(1); return softmax(o[0]); }
  if (kind == "log_softmax") { arity(1); return log_softmax(o[0]); }
  if (kind == "sigmoid") { arity(1); return sigmoid(o[0]); }
  if (kind == "tanh") { arity(1); return tanh(o[0]); }
  if (kind == "swish") { arity(1); return swish(o[0]); }
  if (kind == "glu") { arity(1); return glu(o[0]); }
  if (kind == "depthwise_conv1d") {
    arity(2);
    return depthwise_conv1d(o[0], o[1], attrs.left, attrs.right);
  }
  if (kind == "masked_fill") { arity(1); return masked_fill(o[0], attrs.mask, attrs.value); }
  if (kind == "reduce_sum") { arity(1); return reduce_sum(o[0]); }
  if (kind == "reduce_mean") { arity(1); return reduce_mean(o[0]); }
  throw UnknownPrimitiveError("unknown primitive kind '" + std::string(kind) + "'");
}

#define MDA_INSTANTIATE_OPS(S)                                                  \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                   \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                   \
  template Tensor<S> scale(const Tensor<S>&, S);                                \
  template Tensor<S> concat(std::span<const Tensor<S>>, Index);                 \
  template Tensor<S> slice(const Tensor<S>&, Index, Index, Index);              \
  template Tensor<S> transpose(const Tensor<S>&);                               \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                          \
  template Tensor<S> gather(const Tensor<S>&, std::span<const Index>, Shape);   \
  template Tensor<S> embedding(const Tensor<S>&, std::span<const int>);         \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&,             \
                                const Tensor<S>&, Index, S);                    \
  template Tensor<S> softmax(const Tensor<S>&);                                 \
  template Tensor<S> log_softmax(const Tensor<S>&);                             \
  template Tensor<S> sigmoid(const Tensor<S>&);                                 \
  template Tensor<S> tanh(const Tensor<S>&);                                    \
  template Tensor<S> swish(const Tensor<S>&);                                   \
  template Tensor<S> glu(const Tensor<S>&);                                     \
  template Tensor<S> depthwise_conv1d(const Tensor<S>&, const Tensor<S>&,       \
                                      Index, Index);                            \
  template Tensor<S> masked_fill(const Tensor<S>&, const Mask&, S);             \
  template Tensor<S> reduce_sum(const Tensor<S>&);                              \
  template Tensor<S> reduce_mean(const Tensor<S>&);                             \
  template Tensor<S> apply_primitive(std::string_view,                          \
                                     std::span<const Tensor<S>>,                \
                                     const PrimitiveAttrs<S>&);

MDA_INSTANTIATE_OPS(float)
MDA_INSTANTIATE_OPS(double)

#undef MDA_INSTANTIATE_OPS

}  // namespace mda
