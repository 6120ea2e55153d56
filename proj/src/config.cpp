#include "mda/config.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mda {

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  auto& e = c.encoder;
  e.feature_dim = 128;
  e.causal_blocks = 7;
  e.noncausal_blocks = 10;
  e.d_causal = 512;
  e.d_noncausal = 640;
  e.ffn_multiplier = 4;
  e.num_heads = 8;
  e.conv_kernel = 15;
  e.conv_norm_groups = 8;
  e.mhsa_skip_first_n = 2;
  // 900 ms at 30 ms frames.
  e.right_context_frames = 30;
  e.joint_projection_dim = 384;
  c.decoder.vocab_size = 4096;
  c.decoder.embed_dim = 640;
  c.decoder.joint_dim = 640;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown preset '" + name + "'");
}

void ModelConfig::validate() const {
  const auto& e = encoder;
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (e.feature_dim < 1 || e.d_causal < 1 || e.d_noncausal < 1) fail("dimensions must be positive");
  if (e.causal_blocks < 0 || e.noncausal_blocks < 0) fail("block counts must be >= 0");
  if (e.num_heads < 1) fail("num_heads must be >= 1");
  if (e.d_causal % e.num_heads || e.d_noncausal % e.num_heads) {
    fail("model dimensions must be divisible by num_heads");
  }
  if (e.conv_kernel < 1) fail("conv_kernel must be >= 1");
  if (e.conv_norm_groups < 1 || e.d_causal % e.conv_norm_groups ||
      e.d_noncausal % e.conv_norm_groups) {
    fail("conv_norm_groups must divide both model dimensions");
  }
  if (e.mhsa_skip_first_n < 0 || e.mhsa_skip_first_n > e.causal_blocks) {
    fail("mhsa_skip_first_n out of range");
  }
  if (e.right_context_frames < 0) fail("right_context_frames must be >= 0");
  if (e.ffn_multiplier < 1 || e.joint_projection_dim < 1) fail("invalid widths");
  for (int b = 0; b < e.noncausal_blocks; ++b) {
    if (noncausal_block_context(e, b).conv_right > e.conv_kernel - 1) {
      fail("conv kernel smaller than its configured right context");
    }
  }
  if (decoder.vocab_size < 1 || decoder.embed_dim < 1 || decoder.joint_dim < 1) {
    fail("decoder dimensions must be positive");
  }
  if (decoder.context_order != 2) fail("prediction network context_order is fixed at 2");
  if (domain_onehot_width < 0) fail("domain_onehot_width must be >= 0");
}

BlockContext noncausal_block_context(const EncoderConfig& cfg, int block) {
  const int n = cfg.noncausal_blocks;
  if (n <= 0) return {};
  // Even split; the first (frames % n) blocks take one extra frame.
  const int per = cfg.right_context_frames / n + (block < cfg.right_context_frames % n ? 1 : 0);
  BlockContext ctx;
  ctx.conv_right = std::min(per / 2, cfg.conv_kernel - 1);
  ctx.mhsa_right = per - ctx.conv_right;
  return ctx;
}

int noncausal_total_right_context(const EncoderConfig& cfg) {
  int total = 0;
  for (int b = 0; b < cfg.noncausal_blocks; ++b) total += noncausal_block_context(cfg, b).total();
  return total;
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"feature_dim", c.feature_dim},
                     {"causal_blocks", c.causal_blocks},
                     {"noncausal_blocks", c.noncausal_blocks},
                     {"d_causal", c.d_causal},
                     {"d_noncausal", c.d_noncausal},
                     {"ffn_multiplier", c.ffn_multiplier},
                     {"num_heads", c.num_heads},
                     {"conv_kernel", c.conv_kernel},
                     {"conv_norm_groups", c.conv_norm_groups},
                     {"mhsa_skip_first_n", c.mhsa_skip_first_n},
                     {"right_context_frames", c.right_context_frames},
                     {"left_context_frames", c.left_context_frames},
                     {"joint_projection_dim", c.joint_projection_dim},
                     {"causal_relative_position", c.causal_relative_position},
                     {"noncausal_relative_position", c.noncausal_relative_position},
                     {"half_step_ffn", c.half_step_ffn}};
}

namespace {
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}
}  // namespace

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  read_opt(j, "feature_dim", c.feature_dim);
  read_opt(j, "causal_blocks", c.causal_blocks);
  read_opt(j, "noncausal_blocks", c.noncausal_blocks);
  read_opt(j, "d_causal", c.d_causal);
  read_opt(j, "d_noncausal", c.d_noncausal);
  read_opt(j, "ffn_multiplier", c.ffn_multiplier);
  read_opt(j, "num_heads", c.num_heads);
  read_opt(j, "conv_kernel", c.conv_kernel);
  read_opt(j, "conv_norm_groups", c.conv_norm_groups);
  read_opt(j, "mhsa_skip_first_n", c.mhsa_skip_first_n);
  read_opt(j, "right_context_frames", c.right_context_frames);
  read_opt(j, "left_context_frames", c.left_context_frames);
  read_opt(j, "joint_projection_dim", c.joint_projection_dim);
  read_opt(j, "causal_relative_position", c.causal_relative_position);
  read_opt(j, "noncausal_relative_position", c.noncausal_relative_position);
  read_opt(j, "half_step_ffn", c.half_step_ffn);
}

void to_json(nlohmann::json& j, const DecoderConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"embed_dim", c.embed_dim},
                     {"joint_dim", c.joint_dim},
                     {"context_order", c.context_order}};
}

void from_json(const nlohmann::json& j, DecoderConfig& c) {
  read_opt(j, "vocab_size", c.vocab_size);
  read_opt(j, "embed_dim", c.embed_dim);
  read_opt(j, "joint_dim", c.joint_dim);
  read_opt(j, "context_order", c.context_order);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"encoder", c.encoder},
                     {"decoder", c.decoder},
                     {"domain_onehot_width", c.domain_onehot_width}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  read_opt(j, "encoder", c.encoder);
  read_opt(j, "decoder", c.decoder);
  read_opt(j, "domain_onehot_width", c.domain_onehot_width);
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  ModelConfig c = nlohmann::json::parse(in).get<ModelConfig>();
  c.validate();
  return c;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fingerprint(const nlohmann::json& canonical) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical.dump())));
  return buf;
}

}  // namespace mda
