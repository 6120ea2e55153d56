#pragma once

#include "mda/config.hpp"
#include "mda/module_path.hpp"
#include "mda/ops.hpp"
#include "mda/params.hpp"

#include <string>

namespace mda {

// Frames visible around each output frame. Negative left means unbounded.
struct ContextSpec {
  int left_frames = -1;
  int right_frames = 0;
};

// Keys outside [t - left, t + right] are masked (true) for query t.
Mask attention_mask(Index frames, ContextSpec ctx);

// Sinusoidal embeddings of relative distances j - i for j - i in
// [-(T-1), T-1]; row k holds distance k - (T-1).
template <typename Scalar>
RowMatrix<Scalar> relative_position_table(Index frames, Index dim);

// Residual branches. Each site's full module is x + branch(x); the branch
// scale is 0.5 for FFNs when half-step residuals are enabled.
template <typename Scalar>
Tensor<Scalar> ffn_branch(const Tensor<Scalar>& x, const ParamSource<Scalar>& src,
                          const std::string& prefix, const EncoderConfig& cfg);

template <typename Scalar>
Tensor<Scalar> mhsa_branch(const Tensor<Scalar>& x, const ParamSource<Scalar>& src,
                           const std::string& prefix, const EncoderConfig& cfg,
                           ContextSpec ctx, bool relative_position);

// Depthwise taps split as right = min(ctx.right_frames, kernel - 1),
// left = kernel - 1 - right.
template <typename Scalar>
Tensor<Scalar> conv_branch(const Tensor<Scalar>& x, const ParamSource<Scalar>& src,
                           const std::string& prefix, const EncoderConfig& cfg,
                           ContextSpec ctx);

template <typename Scalar>
Tensor<Scalar> ffn_forward(const Tensor<Scalar>& x, const ParamSource<Scalar>& src,
                           const std::string& prefix, const EncoderConfig& cfg) {
  return add(x, ffn_branch(x, src, prefix, cfg));
}

template <typename Scalar>
Tensor<Scalar> mhsa_forward(const Tensor<Scalar>& x, const ParamSource<Scalar>& src,
                            const std::string& prefix, const EncoderConfig& cfg,
                            ContextSpec ctx, bool relative_position) {
  return add(x, mhsa_branch(x, src, prefix, cfg, ctx, relative_position));
}

template <typename Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& x, const ParamSource<Scalar>& src,
                            const std::string& prefix, const EncoderConfig& cfg,
                            ContextSpec ctx) {
  return add(x, conv_branch(x, src, prefix, cfg, ctx));
}

// f(h W_down + b_down) W_up + b_up
template <typename Scalar>
Tensor<Scalar> adapter_delta(const Tensor<Scalar>& h, const AdapterParams<Scalar>& a);

// h + adapter_delta(h)
template <typename Scalar>
Tensor<Scalar> apply_adapter(const Tensor<Scalar>& h, const AdapterParams<Scalar>& a) {
  return add(h, adapter_delta(h, a));
}

// Contexts used by a block's MHSA and Conv modules.
struct BlockContexts {
  ContextSpec mhsa;
  ContextSpec conv;
};
BlockContexts block_contexts(const EncoderConfig& cfg, Stack stack, int block);

// ffn_start -> mhsa (if present) -> conv -> ffn_end -> final LayerNorm. Each
// module site consults src.adapter(site) for a sequential or parallel adapter.
template <typename Scalar>
Tensor<Scalar> conformer_block(const Tensor<Scalar>& x, const ParamSource<Scalar>& src,
                               const EncoderConfig& cfg, Stack stack, int block);

template <typename Scalar>
struct EncoderOutput {
  Tensor<Scalar> causal;
  Tensor<Scalar> noncausal;
};

struct EncodeOptions {
  bool causal = true;
  bool noncausal = true;
};

// features [T x (feature_dim + onehot)] -> projected outputs of both stacks,
// each [T x joint_projection_dim]. Stacks not requested are left undefined.
template <typename Scalar>
EncoderOutput<Scalar> encode(const Tensor<Scalar>& features, const ModelConfig& cfg,
                             const ParamSource<Scalar>& src, EncodeOptions options = {});

}  // namespace mda
