#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace mda {

struct EncoderConfig {
  int feature_dim = 16;
  int causal_blocks = 3;
  int noncausal_blocks = 4;
  int d_causal = 64;
  int d_noncausal = 80;
  int ffn_multiplier = 4;
  int num_heads = 4;
  int conv_kernel = 7;
  int conv_norm_groups = 4;
  int mhsa_skip_first_n = 1;
  // Future frames available to the whole non-causal stack; split evenly over
  // its blocks, and within a block between MHSA and Conv.
  int right_context_frames = 8;
  // Attention history in frames; negative means unbounded.
  int left_context_frames = -1;
  int joint_projection_dim = 48;
  bool causal_relative_position = false;
  bool noncausal_relative_position = true;
  bool half_step_ffn = false;

  bool operator==(const EncoderConfig&) const = default;
};

struct DecoderConfig {
  int vocab_size = 32;  // excluding blank
  int embed_dim = 64;
  int joint_dim = 64;
  int context_order = 2;

  bool operator==(const DecoderConfig&) const = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  // Width of the domain one-hot appended to features (multidomain baseline);
  // zero for single-domain models.
  int domain_onehot_width = 0;

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig paper();
  static ModelConfig desk();
  static ModelConfig preset(const std::string& name);

  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

// Per-block context budget of the non-causal stack.
struct BlockContext {
  int mhsa_right = 0;
  int conv_right = 0;
  int total() const { return mhsa_right + conv_right; }
};
BlockContext noncausal_block_context(const EncoderConfig& cfg, int block);
// Sum of the per-block right contexts.
int noncausal_total_right_context(const EncoderConfig& cfg);

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const DecoderConfig& c);
void from_json(const nlohmann::json& j, DecoderConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

ModelConfig load_model_config(const std::string& path);

// FNV-1a 64 over the canonical (sorted-key, compact) JSON dump.
std::uint64_t fnv1a64(const std::string& bytes);
std::string fingerprint(const nlohmann::json& canonical);

}  // namespace mda
