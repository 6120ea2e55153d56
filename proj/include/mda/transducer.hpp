#pragma once

#include "mda/config.hpp"
#include "mda/module_path.hpp"
#include "mda/ops.hpp"
#include "mda/params.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mda {

// Tokens are ids in [0, vocab). Lattice logits put blank in column 0 and
// token k in column k + 1. The prediction network's start symbol is id vocab.

class InstanceTooLargeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Parameter prefix of the decoder fed by `encoder` ("decoder_causal", ...).
std::string decoder_prefix(Stack encoder);

// Embedding of the two previous tokens projected to joint_dim. prev1 is the
// most recent; use start_token(cfg) before the sequence begins.
template <typename Scalar>
Tensor<Scalar> predict(int prev1, int prev2, const ParamSource<Scalar>& src,
                       const std::string& prefix, const DecoderConfig& cfg);

inline int start_token(const DecoderConfig& cfg) { return cfg.vocab_size; }

// Prediction outputs for every label-history length u = 0..U: [(U+1) x J].
template <typename Scalar>
Tensor<Scalar> prediction_rows(std::span<const int> targets, const ParamSource<Scalar>& src,
                               const std::string& prefix, const DecoderConfig& cfg);

template <typename Scalar>
struct HatOutput {
  Tensor<Scalar> blank_logit;   // [1]
  Tensor<Scalar> label_logits;  // [vocab]
};

template <typename Scalar>
HatOutput<Scalar> joint_hat(const Tensor<Scalar>& enc_frame, const Tensor<Scalar>& pred,
                            const ParamSource<Scalar>& src, const std::string& prefix);

// Logits of every lattice node: enc [T x P], pred [(U+1) x J] ->
// [T*(U+1) x (vocab+1)], row t*(U+1) + u.
template <typename Scalar>
Tensor<Scalar> joint_lattice(const Tensor<Scalar>& enc, const Tensor<Scalar>& pred,
                             const ParamSource<Scalar>& src, const std::string& prefix);

// log p over {blank} U vocab from one row of HAT logits.
Eigen::ArrayXd hat_log_probs(const Eigen::Ref<const Eigen::ArrayXd>& logits);

template <typename Scalar>
struct LossResult {
  Tensor<Scalar> nll;                  // scalar, differentiable
  RowMatrix<double> alpha;             // [T x (U+1)]
};

// Negative log-likelihood of `targets` summed over all monotone alignments of
// the lattice logits, computed in double precision.
template <typename Scalar>
LossResult<Scalar> hat_transducer_loss(const Tensor<Scalar>& logits, Index frames,
                                       std::span<const int> targets);

template <typename Scalar>
LossResult<Scalar> transducer_loss(const Tensor<Scalar>& enc, std::span<const int> targets,
                                   const ParamSource<Scalar>& src, const std::string& prefix,
                                   const DecoderConfig& cfg);

struct BruteforceResult {
  double nll = 0;
  long long interleavings = 0;  // C(T+U, U)
  long long alignments = 0;     // interleavings ending in a blank: C(T+U-1, U)
};

// Explicit enumeration of every interleaving of U labels and T blanks.
// Throws InstanceTooLargeError beyond `limit` interleavings.
BruteforceResult loss_bruteforce(const RowMatrix<double>& logits, Index frames,
                                 std::span<const int> targets, long long limit = 10000);

template <typename Scalar>
BruteforceResult loss_bruteforce(const Tensor<Scalar>& enc, std::span<const int> targets,
                                 const ParamSource<Scalar>& src, const std::string& prefix,
                                 const DecoderConfig& cfg, long long limit = 10000);

template <typename Scalar>
std::vector<int> greedy_decode(const Tensor<Scalar>& enc, const ParamSource<Scalar>& src,
                               const std::string& prefix, const DecoderConfig& cfg,
                               int max_symbols_per_frame = 4);

struct WerStats {
  long long substitutions = 0;
  long long insertions = 0;
  long long deletions = 0;
  long long reference_length = 0;

  long long errors() const { return substitutions + insertions + deletions; }
  double rate() const {
    return double(errors()) / double(std::max<long long>(1, reference_length));
  }
  WerStats& operator+=(const WerStats& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    reference_length += o.reference_length;
    return *this;
  }
};

WerStats wer(std::span<const int> reference, std::span<const int> hypothesis);

}  // namespace mda
