#include "mda/params.hpp"

#include <cmath>
#include <random>

namespace mda {

namespace {

void push_linear(std::vector<ParamSpec>& out, const std::string& prefix,
                 Index in, Index outdim, bool bias = true,
                 const std::string& w = "w", const std::string& b = "b") {
  out.push_back({prefix + "." + w, {in, outdim}, Init::Xavier});
  if (bias) out.push_back({prefix + "." + b, {outdim}, Init::Zeros});
}

void push_norm(std::vector<ParamSpec>& out, const std::string& prefix, Index d,
               const std::string& g = "ln_g", const std::string& b = "ln_b") {
  out.push_back({prefix + "." + g, {d}, Init::Ones});
  out.push_back({prefix + "." + b, {d}, Init::Zeros});
}

void push_ffn(std::vector<ParamSpec>& out, const std::string& prefix, Index d,
              Index hidden) {
  push_norm(out, prefix, d);
  push_linear(out, prefix, d, hidden, true, "w1", "b1");
  push_linear(out, prefix, hidden, d, true, "w2", "b2");
}

void push_mhsa(std::vector<ParamSpec>& out, const std::string& prefix, Index d,
               bool relative) {
  push_norm(out, prefix, d);
  for (const char* n : {"q", "k", "v", "o"}) {
    push_linear(out, prefix, d, d, true, std::string("w") + n, std::string("b") + n);
  }
  if (relative) {
    push_linear(out, prefix, d, d, false, "wp");
    out.push_back({prefix + ".pos_bias_u", {d}, Init::Zeros});
    out.push_back({prefix + ".pos_bias_v", {d}, Init::Zeros});
  }
}

void push_conv(std::vector<ParamSpec>& out, const std::string& prefix, Index d,
               Index kernel) {
  push_norm(out, prefix, d);
  push_linear(out, prefix, d, 2 * d, true, "pw1_w", "pw1_b");
  ParamSpec dw{prefix + ".dw_w", {kernel, d}, Init::Xavier, kernel, kernel};
  out.push_back(dw);
  out.push_back({prefix + ".dw_b", {d}, Init::Zeros});
  push_norm(out, prefix, d, "norm_g", "norm_b");
  push_linear(out, prefix, d, d, true, "pw2_w", "pw2_b");
}

void push_stack(std::vector<ParamSpec>& out, const ModelConfig& cfg, Stack stack) {
  const auto& e = cfg.encoder;
  const std::string name(stack_name(stack));
  const Index d = stack_dim(e, stack);
  const bool relative = stack == Stack::Causal ? e.causal_relative_position
                                               : e.noncausal_relative_position;
  const Index in = stack == Stack::Causal ? e.feature_dim + cfg.domain_onehot_width
                                          : e.d_causal;
  push_linear(out, name + ".input_proj", in, d);
  for (int b = 0; b < stack_blocks(e, stack); ++b) {
    const std::string block = name + ".block" + std::to_string(b);
    push_ffn(out, block + ".ffn_start", d, Index(e.ffn_multiplier) * d);
    if (block_has_mhsa(e, stack, b)) push_mhsa(out, block + ".mhsa", d, relative);
    push_conv(out, block + ".conv", d, e.conv_kernel);
    push_ffn(out, block + ".ffn_end", d, Index(e.ffn_multiplier) * d);
    push_norm(out, block + ".final_ln", d, "g", "b");
  }
  push_linear(out, name + ".output_proj", d, e.joint_projection_dim);
}

void push_decoder(std::vector<ParamSpec>& out, const ModelConfig& cfg, Stack stack) {
  const auto& dc = cfg.decoder;
  const std::string name(stack_name(stack));
  const Index rows = dc.vocab_size + 1;  // + start symbol
  out.push_back({name + ".prediction.embed_prev1", {rows, dc.embed_dim}, Init::Xavier});
  out.push_back({name + ".prediction.embed_prev2", {rows, dc.embed_dim}, Init::Xavier});
  push_linear(out, name + ".prediction", 2 * Index(dc.embed_dim), dc.joint_dim, true,
              "proj_w", "proj_b");
  out.push_back({name + ".joint.enc_w", {cfg.encoder.joint_projection_dim, dc.joint_dim},
                 Init::Xavier});
  out.push_back({name + ".joint.pred_w", {dc.joint_dim, dc.joint_dim}, Init::Xavier});
  out.push_back({name + ".joint.b", {dc.joint_dim}, Init::Zeros});
  push_linear(out, name + ".joint", dc.joint_dim, Index(dc.vocab_size) + 1, true,
              "out_w", "out_b");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<ParamSpec> backbone_layout(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  push_stack(out, cfg, Stack::Causal);
  push_stack(out, cfg, Stack::Noncausal);
  push_decoder(out, cfg, Stack::DecoderCausal);
  push_decoder(out, cfg, Stack::DecoderNoncausal);
  return out;
}

std::vector<ParamSpec> component_layout(const ModelConfig& cfg,
                                        const ModulePath& path) {
  validate_path(path, cfg);
  std::vector<ParamSpec> out;
  for (auto& spec : backbone_layout(cfg)) {
    if (path.owns_key(spec.key)) out.push_back(std::move(spec));
  }
  return out;
}

std::string_view adapter_mode_name(AdapterMode m) {
  return m == AdapterMode::Sequential ? "sequential" : "parallel";
}

AdapterMode parse_adapter_mode(std::string_view s) {
  if (s == "sequential") return AdapterMode::Sequential;
  if (s == "parallel") return AdapterMode::Parallel;
  throw std::invalid_argument("unknown adapter mode '" + std::string(s) + "'");
}

std::string_view activation_name(Activation a) {
  return a == Activation::Swish ? "swish" : "identity";
}

Activation parse_activation(std::string_view s) {
  if (s == "swish") return Activation::Swish;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

std::string adapter_prefix(const ModulePath& site) { return site.str() + ".adapter"; }

std::vector<ParamSpec> adapter_layout(const ModelConfig& cfg,
                                      const ModulePath& site, int bottleneck) {
  validate_path(site, cfg);
  if (!is_encoder(site.stack) || !site.is_module_site()) {
    throw InvalidPathError("adapters attach to encoder module sites, not '" +
                           site.str() + "'");
  }
  if (bottleneck < 1) throw std::invalid_argument("adapter bottleneck must be >= 1");
  const Index d = stack_dim(cfg.encoder, site.stack);
  const std::string p = adapter_prefix(site);
  return {
      {p + ".w_down", {d, bottleneck}, Init::Xavier},
      {p + ".b_down", {bottleneck}, Init::Zeros},
      {p + ".w_up", {bottleneck, d}, Init::Zeros},
      {p + ".b_up", {d}, Init::Zeros},
  };
}

template <typename Scalar>
Tensor<Scalar> init_param(const ParamSpec& spec, std::uint64_t seed) {
  const Index n = numel(spec.shape);
  switch (spec.init) {
    case Init::Zeros:
      return Tensor<Scalar>(spec.shape, Array<Scalar>::Zero(n));
    case Init::Ones:
      return Tensor<Scalar>(spec.shape, Array<Scalar>::Ones(n));
    case Init::Xavier:
      break;
  }
  Index fan_in = spec.fan_in, fan_out = spec.fan_out;
  if (fan_in == 0 || fan_out == 0) {
    if (spec.shape.size() != 2) {
      throw std::invalid_argument("xavier init needs fans for " + spec.key);
    }
    fan_in = spec.shape[0];
    fan_out = spec.shape[1];
  }
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::mt19937_64 gen(splitmix64(seed ^ splitmix64(fnv1a64(spec.key))));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Array<Scalar> v(n);
  for (Index i = 0; i < n; ++i) v[i] = static_cast<Scalar>(dist(gen));
  return Tensor<Scalar>(spec.shape, std::move(v));
}

template Tensor<float> init_param<float>(const ParamSpec&, std::uint64_t);
template Tensor<double> init_param<double>(const ParamSpec&, std::uint64_t);

}  // namespace mda
