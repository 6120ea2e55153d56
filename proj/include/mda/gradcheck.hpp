#pragma once

#include "mda/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <vector>

namespace mda {

class NondeterministicFunctionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Central finite differences (f(p + eps) - f(p - eps)) / 2eps for every scalar
// coordinate of every parameter. Parameters are perturbed in place and
// restored bit-exactly afterwards.
template <typename Scalar>
std::vector<Array<Scalar>> finite_diff_grad(
    const std::function<Scalar()>& f, std::vector<Tensor<Scalar>> params,
    Scalar eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_grad: eps must be > 0");
  const Scalar base = f();
  const Scalar again = f();
  if (std::memcmp(&base, &again, sizeof(Scalar)) != 0) {
    throw NondeterministicFunctionError(
        "finite_diff_grad: repeated evaluation gave different results");
  }
  std::vector<Array<Scalar>> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    Array<Scalar> g(p.size());
    auto& v = p.mutable_values();
    for (Index i = 0; i < p.size(); ++i) {
      const Scalar saved = v[i];
      v[i] = saved + eps;
      const Scalar up = f();
      v[i] = saved - eps;
      const Scalar down = f();
      v[i] = saved;
      g[i] = (up - down) / (Scalar(2) * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// ||a - b|| / max(||a||, ||b||), zero when both vanish.
template <typename Scalar>
Scalar relative_error(const Array<Scalar>& a, const Array<Scalar>& b) {
  const Scalar denom = std::max(a.matrix().norm(), b.matrix().norm());
  const Scalar diff = (a - b).matrix().norm();
  if (denom == Scalar(0)) return diff;
  return diff / denom;
}

}  // namespace mda
