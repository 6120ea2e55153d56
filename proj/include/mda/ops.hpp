#pragma once

#include "mda/tensor.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace mda {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

// Differentiable primitives. Every op checks shapes, rejects non-finite
// results and records itself on the thread's active tape when an operand
// requires grad. Rank-2 tensors are row-major [rows x cols]; the "last axis"
// is cols. Broadcasting exists only for bias-add.

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// Same-shape sum, or rank-2 `a` plus a rank-1 bias over its columns.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

// Concatenation of rank-2 tensors along axis 0 (rows) or 1 (cols).
template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, Index axis);

// Rank-2 slice [begin, end) along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index begin,
                     Index end);

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

// out.flat[i] = x.flat[indices[i]]; gradients scatter-add back.
template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, std::span<const Index> indices,
                      Shape shape);

// Row lookup: table [V x E], ids in [0, V) -> [n x E].
template <typename Scalar>
Tensor<Scalar> embedding(const Tensor<Scalar>& table, std::span<const int> ids);

// Normalizes each row in `groups` contiguous channel groups, then applies the
// per-channel affine gamma/beta. groups == 1 is layer normalization.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Index groups = 1,
                          Scalar eps = Scalar(1e-5));

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x);

// x * sigmoid(x)
template <typename Scalar>
Tensor<Scalar> swish(const Tensor<Scalar>& x);

// [rows x 2C] -> [rows x C]: first half gated by sigmoid of the second half.
template <typename Scalar>
Tensor<Scalar> glu(const Tensor<Scalar>& x);

// Per-channel convolution over time. x [T x C], kernel [K x C] with
// K == left + right + 1; out[t] only reads x[t - left .. t + right], zero
// padded at the edges.
template <typename Scalar>
Tensor<Scalar> depthwise_conv1d(const Tensor<Scalar>& x,
                                const Tensor<Scalar>& kernel, Index left,
                                Index right);

// Positions where mask is true are replaced by `value` and pass no gradient.
template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& x, const Mask& mask,
                           Scalar value);

template <typename Scalar>
Tensor<Scalar> reduce_sum(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> reduce_mean(const Tensor<Scalar>& x);

class UnknownPrimitiveError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
struct PrimitiveAttrs {
  Index axis = 0;
  Index begin = 0;
  Index end = 0;
  Index left = 0;
  Index right = 0;
  Index groups = 1;
  Scalar eps = Scalar(1e-5);
  Scalar value = 0;
  Scalar factor = 1;
  Shape shape;
  std::vector<Index> indices;
  std::vector<int> ids;
  Mask mask;
};

// Name-dispatched entry point over the primitive set above.
template <typename Scalar>
Tensor<Scalar> apply_primitive(std::string_view kind,
                               std::span<const Tensor<Scalar>> operands,
                               const PrimitiveAttrs<Scalar>& attrs = {});

const std::vector<std::string_view>& primitive_kinds();

}  // namespace mda
