#pragma once

#include "mda/gradcheck.hpp"
#include "mda/ops.hpp"
#include "mda/params.hpp"

#include <cstring>
#include <functional>
#include <random>
#include <vector>

namespace mda::testing {

template <typename S>
Tensor<S> randn(Shape shape, std::mt19937_64& rng, bool requires_grad = true, S stddev = S(1)) {
  std::normal_distribution<double> dist(0.0, double(stddev));
  Array<S> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(dist(rng));
  return Tensor<S>(std::move(shape), std::move(v), requires_grad);
}

// Gradients of f() w.r.t. params via the tape, in params order.
template <typename S>
std::vector<Array<S>> tape_grad(const std::function<Tensor<S>()>& f,
                                const std::vector<Tensor<S>>& params) {
  Tape<S> tape;
  TapeScope<S> scope(tape);
  const Tensor<S> loss = f();
  const auto grads = tape.gradients(loss);
  std::vector<Array<S>> out;
  for (const auto& p : params) {
    Array<S> g = Array<S>::Zero(p.size());
    for (const auto& lg : grads) {
      if (lg.leaf.storage_id() == p.storage_id()) g = lg.grad;
    }
    out.push_back(std::move(g));
  }
  return out;
}

// Largest relative error between tape and central-difference gradients.
template <typename S>
S max_grad_error(const std::function<Tensor<S>()>& f, const std::vector<Tensor<S>>& params,
                 S eps = S(1e-5)) {
  const auto analytic = tape_grad<S>(f, params);
  const auto numeric = finite_diff_grad<S>([&] { return f().item(); }, params, eps);
  S worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    // Structurally zero gradients (e.g. key bias under softmax) only carry
    // difference noise; both sides must then vanish in absolute terms.
    const S an = analytic[i].matrix().norm(), nn = numeric[i].matrix().norm();
    if (an < S(1e-7) && nn < S(1e-7)) continue;
    worst = std::max(worst, relative_error<S>(analytic[i], numeric[i]));
  }
  return worst;
}

// Scalar probe sum(w * x) with fixed random weights, so every output
// coordinate contributes a distinct gradient.
template <typename S>
Tensor<S> probe(const Tensor<S>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return reduce_sum(mul(x, randn<S>(x.shape(), rng, false)));
}

template <typename S>
bool bit_equal(const Array<S>& a, const Array<S>& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(S)) != 0) return false;
  }
  return true;
}

// Backbone parameters with every entry (biases and norms included) drawn at
// random so no gradient path is trivially zero.
template <typename S>
ParameterSet<S> random_params(const std::vector<ParamSpec>& layout, std::uint64_t seed,
                              S stddev = S(0.4)) {
  std::mt19937_64 rng(seed);
  ParameterSet<S> ps = initialize<S>(layout, seed);
  for (auto& [key, t] : ps) {
    auto& v = t.mutable_values();
    const auto noise = randn<S>(t.shape(), rng, false, stddev);
    v += noise.values();
  }
  ps.set_requires_grad(true);
  return ps;
}

}  // namespace mda::testing
