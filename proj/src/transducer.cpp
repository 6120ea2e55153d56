#include "mda/transducer.hpp"

#include <cmath>
#include <limits>

namespace mda {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double logaddexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_tokens(std::span<const int> tokens, int vocab) {
  for (int y : tokens) {
    if (y < 0 || y >= vocab) {
      throw std::out_of_range("token " + std::to_string(y) + " outside [0, " +
                              std::to_string(vocab) + ")");
    }
  }
}

// Per-node log-probabilities of the lattice, in double.
struct Lattice {
  Index frames = 0;
  Index labels = 0;
  RowMatrix<double> lpb;  // log p(blank)
  RowMatrix<double> lpy;  // log p(next target label)
  RowMatrix<double> sigma;
  std::vector<Eigen::ArrayXd> softmax;  // label softmax per node (u < U only)
};

template <typename S>
Lattice build_lattice(const Tensor<S>& logits, Index frames, std::span<const int> targets,
                      bool keep_softmax) {
  Lattice lat;
  lat.frames = frames;
  lat.labels = static_cast<Index>(targets.size());
  const Index width = lat.labels + 1;
  if (logits.rank() != 2 || logits.rows() != frames * width || logits.cols() < 2) {
    throw ShapeError("hat_transducer_loss: logits " + shape_string(logits.shape()) +
                     " do not match a " + std::to_string(frames) + "x" + std::to_string(width) +
                     " lattice");
  }
  check_tokens(targets, static_cast<int>(logits.cols() - 1));
  lat.lpb.resize(frames, width);
  lat.lpy.setConstant(frames, width, kNegInf);
  lat.sigma.resize(frames, width);
  if (keep_softmax) lat.softmax.resize(static_cast<std::size_t>(frames * width));
  const auto m = logits.matrix();
  for (Index t = 0; t < frames; ++t) {
    for (Index u = 0; u < width; ++u) {
      const Index row = t * width + u;
      const double z = double(m(row, 0));
      lat.lpb(t, u) = -softplus(-z);
      lat.sigma(t, u) = 1.0 / (1.0 + std::exp(-z));
      if (u == lat.labels) continue;
      const Eigen::ArrayXd l = m.row(row).tail(m.cols() - 1).transpose().template cast<double>().array();
      const double mx = l.maxCoeff();
      const double lse = mx + std::log((l - mx).exp().sum());
      lat.lpy(t, u) = -softplus(z) + l[targets[static_cast<std::size_t>(u)]] - lse;
      if (keep_softmax) lat.softmax[static_cast<std::size_t>(row)] = (l - lse).exp();
    }
  }
  return lat;
}

RowMatrix<double> forward_alpha(const Lattice& lat) {
  const Index T = lat.frames, U = lat.labels;
  RowMatrix<double> alpha = RowMatrix<double>::Constant(T, U + 1, kNegInf);
  alpha(0, 0) = 0.0;
  for (Index t = 0; t < T; ++t) {
    for (Index u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = alpha(t - 1, u) + lat.lpb(t - 1, u);
      if (u > 0) a = logaddexp(a, alpha(t, u - 1) + lat.lpy(t, u - 1));
      alpha(t, u) = a;
    }
  }
  return alpha;
}

RowMatrix<double> backward_beta(const Lattice& lat) {
  const Index T = lat.frames, U = lat.labels;
  RowMatrix<double> beta = RowMatrix<double>::Constant(T, U + 1, kNegInf);
  for (Index t = T - 1; t >= 0; --t) {
    for (Index u = U; u >= 0; --u) {
      double b = kNegInf;
      if (t + 1 < T) {
        b = lat.lpb(t, u) + beta(t + 1, u);
      } else if (u == U) {
        b = lat.lpb(t, u);
      }
      if (u < U) b = logaddexp(b, lat.lpy(t, u) + beta(t, u + 1));
      beta(t, u) = b;
    }
  }
  return beta;
}

}  // namespace

std::string decoder_prefix(Stack encoder) {
  return std::string(stack_name(is_encoder(encoder) ? decoder_for(encoder) : encoder));
}

template <typename S>
Tensor<S> prediction_rows(std::span<const int> targets, const ParamSource<S>& src,
                          const std::string& prefix, const DecoderConfig& cfg) {
  check_tokens(targets, cfg.vocab_size);
  const int start = start_token(cfg);
  const std::size_t n = targets.size() + 1;
  std::vector<int> prev1(n), prev2(n);
  for (std::size_t u = 0; u < n; ++u) {
    prev1[u] = u >= 1 ? targets[u - 1] : start;
    prev2[u] = u >= 2 ? targets[u - 2] : start;
  }
  const std::string p = prefix + ".prediction.";
  const Tensor<S> e1 = embedding(src.param(p + "embed_prev1"), std::span<const int>(prev1));
  const Tensor<S> e2 = embedding(src.param(p + "embed_prev2"), std::span<const int>(prev2));
  const std::vector<Tensor<S>> parts{e1, e2};
  return add(matmul(concat(std::span<const Tensor<S>>(parts), 1), src.param(p + "proj_w")),
             src.param(p + "proj_b"));
}

template <typename S>
Tensor<S> predict(int prev1, int prev2, const ParamSource<S>& src, const std::string& prefix,
                  const DecoderConfig& cfg) {
  const int start = start_token(cfg);
  for (int y : {prev1, prev2}) {
    if (y != start && (y < 0 || y >= cfg.vocab_size)) {
      throw std::out_of_range("predict: token " + std::to_string(y) + " out of range");
    }
  }
  const std::string p = prefix + ".prediction.";
  const std::vector<int> a{prev1}, b{prev2};
  const std::vector<Tensor<S>> parts{
      embedding(src.param(p + "embed_prev1"), std::span<const int>(a)),
      embedding(src.param(p + "embed_prev2"), std::span<const int>(b))};
  const Tensor<S> h = add(matmul(concat(std::span<const Tensor<S>>(parts), 1),
                                 src.param(p + "proj_w")),
                          src.param(p + "proj_b"));
  return reshape(h, {h.cols()});
}

template <typename S>
Tensor<S> joint_lattice(const Tensor<S>& enc, const Tensor<S>& pred, const ParamSource<S>& src,
                        const std::string& prefix) {
  const std::string p = prefix + ".joint.";
  const Tensor<S>& enc_w = src.param(p + "enc_w");
  if (enc.rank() != 2 || enc.cols() != enc_w.rows()) {
    throw ShapeError("joint: encoder frames " + shape_string(enc.shape()) +
                     " do not match enc_w " + shape_string(enc_w.shape()));
  }
  const Index T = enc.rows(), W = pred.rows();
  const Tensor<S> e = matmul(enc, enc_w);
  const Tensor<S> q = matmul(pred, src.param(p + "pred_w"));
  const Index J = e.cols();
  std::vector<Index> ei(static_cast<std::size_t>(T * W * J)), qi(ei.size());
  std::size_t k = 0;
  for (Index t = 0; t < T; ++t) {
    for (Index u = 0; u < W; ++u) {
      for (Index j = 0; j < J; ++j, ++k) {
        ei[k] = t * J + j;
        qi[k] = u * J + j;
      }
    }
  }
  const Tensor<S> sum = add(gather(e, std::span<const Index>(ei), {T * W, J}),
                            gather(q, std::span<const Index>(qi), {T * W, J}));
  const Tensor<S> h = mda::tanh(add(sum, src.param(p + "b")));
  return add(matmul(h, src.param(p + "out_w")), src.param(p + "out_b"));
}

template <typename S>
HatOutput<S> joint_hat(const Tensor<S>& enc_frame, const Tensor<S>& pred,
                       const ParamSource<S>& src, const std::string& prefix) {
  const Tensor<S> logits = joint_lattice(reshape(enc_frame, {1, enc_frame.size()}),
                                         reshape(pred, {1, pred.size()}), src, prefix);
  const Index V1 = logits.cols();
  return {reshape(slice(logits, 1, 0, 1), {1}), reshape(slice(logits, 1, 1, V1), {V1 - 1})};
}

Eigen::ArrayXd hat_log_probs(const Eigen::Ref<const Eigen::ArrayXd>& logits) {
  const Index V = logits.size() - 1;
  Eigen::ArrayXd out(logits.size());
  const double z = logits[0];
  out[0] = -softplus(-z);
  const Eigen::ArrayXd l = logits.tail(V);
  const double mx = l.maxCoeff();
  const double lse = mx + std::log((l - mx).exp().sum());
  out.tail(V) = -softplus(z) + (l - lse);
  return out;
}

template <typename S>
LossResult<S> hat_transducer_loss(const Tensor<S>& logits, Index frames,
                                  std::span<const int> targets) {
  const Index U = static_cast<Index>(targets.size());
  if (frames == 0) {
    if (U > 0) throw std::invalid_argument("transducer loss: U > 0 labels with T = 0 frames");
    return {Tensor<S>::scalar(S(0)), RowMatrix<double>(0, 1)};
  }
  const bool tracked = Tape<S>::active() != nullptr && logits.requires_grad();
  auto lat = std::make_shared<Lattice>(build_lattice(logits, frames, targets, tracked));
  RowMatrix<double> alpha = forward_alpha(*lat);
  const double log_z = alpha(frames - 1, U) + lat->lpb(frames - 1, U);
  Array<S> value(1);
  value[0] = static_cast<S>(-log_z);
  if (!std::isfinite(log_z)) throw NonFiniteError("hat_transducer_loss: non-finite likelihood");

  std::vector<int> ys(targets.begin(), targets.end());
  auto alpha_ptr = std::make_shared<RowMatrix<double>>(alpha);
  auto fn = [lat, alpha_ptr, ys, log_z, cols = logits.cols()](
                const Array<S>& g, const Array<S>&, typename Tape<S>::GradientSink& sink) {
    if (!sink.wants(0)) return;
    const Index T = lat->frames, U = lat->labels, W = U + 1;
    const RowMatrix<double> beta = backward_beta(*lat);
    const auto& a = *alpha_ptr;
    Array<S> grad = Array<S>::Zero(T * W * cols);
    const double scale = double(g[0]);
    for (Index t = 0; t < T; ++t) {
      for (Index u = 0; u <= U; ++u) {
        const Index row = t * W + u;
        double gb = 0.0, gl = 0.0;
        if (t + 1 < T) {
          gb = std::exp(a(t, u) + lat->lpb(t, u) + beta(t + 1, u) - log_z);
        } else if (u == U) {
          gb = std::exp(a(t, u) + lat->lpb(t, u) - log_z);
        }
        if (u < U) gl = std::exp(a(t, u) + lat->lpy(t, u) + beta(t, u + 1) - log_z);
        if (gb == 0.0 && gl == 0.0) continue;
        const double sig = lat->sigma(t, u);
        grad[row * cols] = static_cast<S>(-scale * (gb * (1.0 - sig) - gl * sig));
        if (u < U) {
          const auto& sm = lat->softmax[static_cast<std::size_t>(row)];
          for (Index k = 0; k + 1 < cols; ++k) {
            const double delta = k == ys[static_cast<std::size_t>(u)] ? 1.0 : 0.0;
            grad[row * cols + 1 + k] = static_cast<S>(-scale * gl * (delta - sm[k]));
          }
        }
      }
    }
    sink.add(0, grad);
  };

  Tensor<S> nll;
  if (Tape<S>* tape = Tape<S>::active()) {
    const std::array<const Tensor<S>*, 1> ops{&logits};
    nll = tape->record("hat_transducer_loss", std::span<const Tensor<S>* const>(ops), Shape{},
                       std::move(value), std::move(fn));
  } else {
    nll = Tensor<S>(Shape{}, std::move(value));
  }
  return {nll, std::move(alpha)};
}

template <typename S>
LossResult<S> transducer_loss(const Tensor<S>& enc, std::span<const int> targets,
                              const ParamSource<S>& src, const std::string& prefix,
                              const DecoderConfig& cfg) {
  if (enc.rows() == 0) return hat_transducer_loss(Tensor<S>::zeros({0, 1}), 0, targets);
  const Tensor<S> pred = prediction_rows(targets, src, prefix, cfg);
  return hat_transducer_loss(joint_lattice(enc, pred, src, prefix), enc.rows(), targets);
}

BruteforceResult loss_bruteforce(const RowMatrix<double>& logits, Index frames,
                                 std::span<const int> targets, long long limit) {
  const int T = static_cast<int>(frames);
  const int U = static_cast<int>(targets.size());
  BruteforceResult r;
  if (T == 0) {
    if (U > 0) throw std::invalid_argument("loss_bruteforce: U > 0 labels with T = 0 frames");
    return r;
  }
  // C(T+U, U) without overflow for the sizes the limit admits.
  double count = 1;
  for (int i = 1; i <= U; ++i) count = count * (T + i) / i;
  if (count > double(limit)) {
    throw InstanceTooLargeError("loss_bruteforce: " + std::to_string(count) +
                                " interleavings exceed the limit");
  }
  const int W = U + 1;
  const int V = static_cast<int>(logits.cols()) - 1;
  auto p_blank = [&](int t, int u) { return 1.0 / (1.0 + std::exp(-logits(t * W + u, 0))); };
  auto p_label = [&](int t, int u, int y) {
    const auto row = logits.row(t * W + u).tail(V).array();
    const double mx = row.maxCoeff();
    return (1.0 - p_blank(t, u)) * std::exp(row[y] - mx) / (row - mx).exp().sum();
  };
  const int n = T + U;
  double total = 0;
  // Each bitmask with U set bits marks label positions.
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != U) continue;
    ++r.interleavings;
    int t = 0, u = 0;
    bool valid = true;
    double p = 1;
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) {
        if (t >= T) {
          valid = false;
          break;
        }
        p *= p_label(t, u, targets[static_cast<std::size_t>(u)]);
        ++u;
      } else {
        p *= p_blank(t, u);
        ++t;
      }
    }
    if (!valid) continue;
    ++r.alignments;
    total += p;
  }
  r.nll = -std::log(total);
  return r;
}

template <typename S>
BruteforceResult loss_bruteforce(const Tensor<S>& enc, std::span<const int> targets,
                                 const ParamSource<S>& src, const std::string& prefix,
                                 const DecoderConfig& cfg, long long limit) {
  if (enc.rows() == 0) return loss_bruteforce(RowMatrix<double>(0, 2), 0, targets, limit);
  const Tensor<S> logits =
      joint_lattice(enc, prediction_rows(targets, src, prefix, cfg), src, prefix);
  return loss_bruteforce(logits.matrix().template cast<double>(), enc.rows(), targets, limit);
}

template <typename S>
std::vector<int> greedy_decode(const Tensor<S>& enc, const ParamSource<S>& src,
                               const std::string& prefix, const DecoderConfig& cfg,
                               int max_symbols_per_frame) {
  std::vector<int> out;
  const Index T = enc.rows();
  if (T == 0) return out;
  const std::string pp = prefix + ".prediction.", jp = prefix + ".joint.";
  const auto e1 = src.param(pp + "embed_prev1").matrix();
  const auto e2 = src.param(pp + "embed_prev2").matrix();
  const auto proj_w = src.param(pp + "proj_w").matrix();
  const auto proj_b = src.param(pp + "proj_b").values().matrix().transpose();
  const auto pred_w = src.param(jp + "pred_w").matrix();
  const auto jb = src.param(jp + "b").values().matrix().transpose();
  const auto out_w = src.param(jp + "out_w").matrix();
  const auto out_b = src.param(jp + "out_b").values().matrix().transpose();
  const Index E = e1.cols();
  const RowMatrix<S> enc_proj = enc.matrix() * src.param(jp + "enc_w").matrix();

  int prev1 = start_token(cfg), prev2 = start_token(cfg);
  auto pred_proj = [&] {
    Eigen::Matrix<S, 1, Eigen::Dynamic> h =
        e1.row(prev1) * proj_w.topRows(E) + e2.row(prev2) * proj_w.bottomRows(E) + proj_b;
    return Eigen::Matrix<S, 1, Eigen::Dynamic>(h * pred_w);
  };
  Eigen::Matrix<S, 1, Eigen::Dynamic> q = pred_proj();
  for (Index t = 0; t < T; ++t) {
    for (int emitted = 0; emitted < max_symbols_per_frame; ++emitted) {
      const Eigen::Matrix<S, 1, Eigen::Dynamic> h =
          (enc_proj.row(t) + q + jb).array().tanh().matrix();
      const Eigen::Matrix<S, 1, Eigen::Dynamic> logits = h * out_w + out_b;
      const double z = double(logits[0]);
      Index best = 0;
      logits.tail(logits.size() - 1).maxCoeff(&best);
      const auto l = logits.tail(logits.size() - 1).array().template cast<double>();
      const double mx = l.maxCoeff();
      const double p_label = (1.0 / (1.0 + std::exp(z))) / (l - mx).exp().sum();
      const double p_blank = 1.0 / (1.0 + std::exp(-z));
      if (p_blank >= p_label) break;
      out.push_back(static_cast<int>(best));
      prev2 = prev1;
      prev1 = static_cast<int>(best);
      q = pred_proj();
    }
  }
  return out;
}

WerStats wer(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  struct Cell {
    long long cost, s, i, d;
  };
  std::vector<Cell> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> Cell& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = {(long long)i, 0, 0, (long long)i};
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = {(long long)j, 0, (long long)j, 0};
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      Cell best = at(i - 1, j - 1);
      const bool sub = ref[i - 1] != hyp[j - 1];
      best.cost += sub;
      best.s += sub;
      Cell del = at(i - 1, j);
      del.cost += 1;
      del.d += 1;
      Cell ins = at(i, j - 1);
      ins.cost += 1;
      ins.i += 1;
      if (del.cost < best.cost) best = del;
      if (ins.cost < best.cost) best = ins;
      at(i, j) = best;
    }
  }
  const Cell& c = at(n, m);
  return {c.s, c.i, c.d, static_cast<long long>(n)};
}

#define MDA_INSTANTIATE_TRANSDUCER(S)                                                         \
  template Tensor<S> predict(int, int, const ParamSource<S>&, const std::string&,            \
                             const DecoderConfig&);                                          \
  template Tensor<S> prediction_rows(std::span<const int>, const ParamSource<S>&,            \
                                     const std::string&, const DecoderConfig&);              \
  template Tensor<S> joint_lattice(const Tensor<S>&, const Tensor<S>&, const ParamSource<S>&, \
                                   const std::string&);                                      \
  template HatOutput<S> joint_hat(const Tensor<S>&, const Tensor<S>&, const ParamSource<S>&,  \
                                  const std::string&);                                       \
  template LossResult<S> hat_transducer_loss(const Tensor<S>&, Index, std::span<const int>); \
  template LossResult<S> transducer_loss(const Tensor<S>&, std::span<const int>,             \
                                         const ParamSource<S>&, const std::string&,          \
                                         const DecoderConfig&);                              \
  template BruteforceResult loss_bruteforce(const Tensor<S>&, std::span<const int>,          \
                                            const ParamSource<S>&, const std::string&,       \
                                            const DecoderConfig&, long long);                \
  template std::vector<int> greedy_decode(const Tensor<S>&, const ParamSource<S>&,           \
                                          const std::string&, const DecoderConfig&, int);

MDA_INSTANTIATE_TRANSDUCER(float)
MDA_INSTANTIATE_TRANSDUCER(double)

#undef MDA_INSTANTIATE_TRANSDUCER

}  // namespace mda
