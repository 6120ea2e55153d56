#include "mda/conformer.hpp"

#include <cmath>
#include <vector>

namespace mda {

namespace {

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const ParamSource<S>& src, const std::string& w,
                 const std::string& b) {
  return add(matmul(x, src.param(w)), src.param(b));
}

template <typename S>
Tensor<S> norm(const Tensor<S>& x, const ParamSource<S>& src, const std::string& prefix,
               const char* g = "ln_g", const char* b = "ln_b", Index groups = 1) {
  return layer_norm(x, src.param(prefix + "." + g), src.param(prefix + "." + b), groups);
}

// Columns [h*dh, (h+1)*dh) of a rank-1 vector of length d.
template <typename S>
Tensor<S> head_slice(const Tensor<S>& v, Index h, Index dh) {
  const Index d = v.size();
  return reshape(slice(reshape(v, {1, d}), 1, h * dh, (h + 1) * dh), {dh});
}

template <typename S>
Tensor<S> apply_site(const Tensor<S>& x, const ParamSource<S>& src, const std::string& site,
                     const Tensor<S>& branch) {
  const AdapterParams<S>* a = src.adapter(site);
  Tensor<S> y = add(x, branch);
  if (!a) return y;
  if (a->mode == AdapterMode::Parallel) return add(y, adapter_delta(x, *a));
  return apply_adapter(y, *a);
}

}  // namespace

Mask attention_mask(Index frames, ContextSpec ctx) {
  Mask m(frames * frames);
  for (Index i = 0; i < frames; ++i) {
    for (Index j = 0; j < frames; ++j) {
      const bool future = j > i + ctx.right_frames;
      const bool past = ctx.left_frames >= 0 && j < i - ctx.left_frames;
      m[i * frames + j] = future || past;
    }
  }
  return m;
}

template <typename S>
RowMatrix<S> relative_position_table(Index frames, Index dim) {
  const Index rows = frames > 0 ? 2 * frames - 1 : 0;
  RowMatrix<S> table(rows, dim);
  for (Index k = 0; k < rows; ++k) {
    const double pos = double(k - (frames - 1));
    for (Index m = 0; m < dim; m += 2) {
      const double freq = std::pow(10000.0, -double(m) / double(dim));
      table(k, m) = static_cast<S>(std::sin(pos * freq));
      if (m + 1 < dim) table(k, m + 1) = static_cast<S>(std::cos(pos * freq));
    }
  }
  return table;
}

template <typename S>
Tensor<S> ffn_branch(const Tensor<S>& x, const ParamSource<S>& src, const std::string& prefix,
                     const EncoderConfig& cfg) {
  const Tensor<S> h = swish(linear(norm(x, src, prefix), src, prefix + ".w1", prefix + ".b1"));
  Tensor<S> y = linear(h, src, prefix + ".w2", prefix + ".b2");
  return cfg.half_step_ffn ? scale(y, S(0.5)) : y;
}

template <typename S>
Tensor<S> mhsa_branch(const Tensor<S>& x, const ParamSource<S>& src, const std::string& prefix,
                      const EncoderConfig& cfg, ContextSpec ctx, bool relative_position) {
  const Index t_len = x.rows();
  const Index d = x.cols();
  const Index heads = cfg.num_heads;
  if (d % heads != 0) {
    throw ShapeError("mhsa: model dimension " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  const Index dh = d / heads;
  const S inv_scale = S(1) / std::sqrt(S(dh));
  const Tensor<S> xn = norm(x, src, prefix);
  const Tensor<S> q = linear(xn, src, prefix + ".wq", prefix + ".bq");
  const Tensor<S> k = linear(xn, src, prefix + ".wk", prefix + ".bk");
  const Tensor<S> v = linear(xn, src, prefix + ".wv", prefix + ".bv");
  const Mask mask = attention_mask(t_len, ctx);

  Tensor<S> pos_proj;
  std::vector<Index> rel_index;
  if (relative_position) {
    const Tensor<S> table = Tensor<S>::from_matrix(relative_position_table<S>(t_len, d));
    pos_proj = matmul(table, src.param(prefix + ".wp"));
    const Index width = 2 * t_len - 1;
    rel_index.resize(static_cast<std::size_t>(t_len * t_len));
    for (Index i = 0; i < t_len; ++i) {
      for (Index j = 0; j < t_len; ++j) {
        rel_index[static_cast<std::size_t>(i * t_len + j)] = i * width + (j - i + t_len - 1);
      }
    }
  }

  std::vector<Tensor<S>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    const Tensor<S> qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor<S> kt = transpose(slice(k, 1, h * dh, (h + 1) * dh));
    const Tensor<S> vh = slice(v, 1, h * dh, (h + 1) * dh);
    Tensor<S> logits;
    if (relative_position) {
      const Tensor<S> content =
          matmul(add(qh, head_slice(src.param(prefix + ".pos_bias_u"), h, dh)), kt);
      const Tensor<S> pos_full =
          matmul(add(qh, head_slice(src.param(prefix + ".pos_bias_v"), h, dh)),
                 transpose(slice(pos_proj, 1, h * dh, (h + 1) * dh)));
      const Tensor<S> pos = gather(pos_full, std::span<const Index>(rel_index), {t_len, t_len});
      logits = scale(add(content, pos), inv_scale);
    } else {
      logits = scale(matmul(qh, kt), inv_scale);
    }
    const Tensor<S> attn = softmax(masked_fill(logits, mask, S(-1e9)));
    outs.push_back(matmul(attn, vh));
  }
  const Tensor<S> merged = concat(std::span<const Tensor<S>>(outs), 1);
  return linear(merged, src, prefix + ".wo", prefix + ".bo");
}

template <typename S>
Tensor<S> conv_branch(const Tensor<S>& x, const ParamSource<S>& src, const std::string& prefix,
                      const EncoderConfig& cfg, ContextSpec ctx) {
  const Index kernel = cfg.conv_kernel;
  const Index right = std::min<Index>(std::max(ctx.right_frames, 0), kernel - 1);
  const Index left = kernel - 1 - right;
  const Tensor<S> gated = glu(linear(norm(x, src, prefix), src, prefix + ".pw1_w", prefix + ".pw1_b"));
  const Tensor<S> conv = add(depthwise_conv1d(gated, src.param(prefix + ".dw_w"), left, right),
                             src.param(prefix + ".dw_b"));
  const Tensor<S> normed = norm(conv, src, prefix, "norm_g", "norm_b", cfg.conv_norm_groups);
  return linear(swish(normed), src, prefix + ".pw2_w", prefix + ".pw2_b");
}

template <typename S>
Tensor<S> adapter_delta(const Tensor<S>& h, const AdapterParams<S>& a) {
  Tensor<S> down = add(matmul(h, a.w_down), a.b_down);
  if (a.activation == Activation::Swish) down = swish(down);
  return add(matmul(down, a.w_up), a.b_up);
}

BlockContexts block_contexts(const EncoderConfig& cfg, Stack stack, int block) {
  BlockContexts c;
  c.mhsa.left_frames = cfg.left_context_frames;
  c.conv.left_frames = cfg.conv_kernel - 1;
  if (stack == Stack::Noncausal) {
    const BlockContext bc = noncausal_block_context(cfg, block);
    c.mhsa.right_frames = bc.mhsa_right;
    c.conv.right_frames = bc.conv_right;
    c.conv.left_frames = cfg.conv_kernel - 1 - bc.conv_right;
  }
  return c;
}

template <typename S>
Tensor<S> conformer_block(const Tensor<S>& x, const ParamSource<S>& src, const EncoderConfig& cfg,
                          Stack stack, int block) {
  const std::string prefix = std::string(stack_name(stack)) + ".block" + std::to_string(block);
  const BlockContexts ctx = block_contexts(cfg, stack, block);
  const bool relative = stack == Stack::Causal ? cfg.causal_relative_position
                                               : cfg.noncausal_relative_position;

  std::string site = prefix + ".ffn_start";
  Tensor<S> h = apply_site(x, src, site, ffn_branch(x, src, site, cfg));
  if (block_has_mhsa(cfg, stack, block)) {
    site = prefix + ".mhsa";
    h = apply_site(h, src, site, mhsa_branch(h, src, site, cfg, ctx.mhsa, relative));
  }
  site = prefix + ".conv";
  h = apply_site(h, src, site, conv_branch(h, src, site, cfg, ctx.conv));
  site = prefix + ".ffn_end";
  h = apply_site(h, src, site, ffn_branch(h, src, site, cfg));
  return norm(h, src, prefix + ".final_ln", "g", "b");
}

template <typename S>
EncoderOutput<S> encode(const Tensor<S>& features, const ModelConfig& cfg,
                        const ParamSource<S>& src, EncodeOptions options) {
  const auto& e = cfg.encoder;
  const Index in_dim = e.feature_dim + cfg.domain_onehot_width;
  if (features.rank() != 2 || features.cols() != in_dim) {
    throw ShapeError("encode: expected features [T x " + std::to_string(in_dim) + "], got " +
                     shape_string(features.shape()));
  }
  EncoderOutput<S> out;
  const Index t_len = features.rows();
  if (t_len == 0) {
    if (options.causal) out.causal = Tensor<S>::zeros({0, e.joint_projection_dim});
    if (options.noncausal) out.noncausal = Tensor<S>::zeros({0, e.joint_projection_dim});
    return out;
  }
  Tensor<S> x = linear(features, src, "causal.input_proj.w", "causal.input_proj.b");
  for (int b = 0; b < e.causal_blocks; ++b) x = conformer_block(x, src, e, Stack::Causal, b);
  if (options.causal) {
    out.causal = linear(x, src, "causal.output_proj.w", "causal.output_proj.b");
  }
  if (options.noncausal) {
    Tensor<S> y = linear(x, src, "noncausal.input_proj.w", "noncausal.input_proj.b");
    for (int b = 0; b < e.noncausal_blocks; ++b) {
      y = conformer_block(y, src, e, Stack::Noncausal, b);
    }
    out.noncausal = linear(y, src, "noncausal.output_proj.w", "noncausal.output_proj.b");
  }
  return out;
}

#define MDA_INSTANTIATE_CONFORMER(S)                                                    \
  template RowMatrix<S> relative_position_table<S>(Index, Index);                      \
  template Tensor<S> ffn_branch(const Tensor<S>&, const ParamSource<S>&,               \
                                const std::string&, const EncoderConfig&);             \
  template Tensor<S> mhsa_branch(const Tensor<S>&, const ParamSource<S>&,              \
                                 const std::string&, const EncoderConfig&, ContextSpec, \
                                 bool);                                                 \
  template Tensor<S> conv_branch(const Tensor<S>&, const ParamSource<S>&,              \
                                 const std::string&, const EncoderConfig&, ContextSpec);\
  template Tensor<S> adapter_delta(const Tensor<S>&, const AdapterParams<S>&);         \
  template Tensor<S> conformer_block(const Tensor<S>&, const ParamSource<S>&,          \
                                     const EncoderConfig&, Stack, int);                \
  template EncoderOutput<S> encode(const Tensor<S>&, const ModelConfig&,               \
                                   const ParamSource<S>&, EncodeOptions);

MDA_INSTANTIATE_CONFORMER(float)
MDA_INSTANTIATE_CONFORMER(double)

#undef MDA_INSTANTIATE_CONFORMER

}  // namespace mda
