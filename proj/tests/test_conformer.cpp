#include "mda/conformer.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace mda;
using mda::testing::bit_equal;
using mda::testing::max_grad_error;
using mda::testing::probe;
using mda::testing::randn;
using mda::testing::random_params;

namespace {

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::desk();
  c.encoder.feature_dim = 5;
  c.encoder.causal_blocks = 2;
  c.encoder.noncausal_blocks = 2;
  c.encoder.d_causal = 8;
  c.encoder.d_noncausal = 8;
  c.encoder.ffn_multiplier = 2;
  c.encoder.num_heads = 2;
  c.encoder.conv_kernel = 3;
  c.encoder.conv_norm_groups = 2;
  c.encoder.mhsa_skip_first_n = 1;
  c.encoder.right_context_frames = 4;
  c.encoder.joint_projection_dim = 6;
  return c;
}

template <typename S>
std::vector<Tensor<S>> leaves(const ParameterSet<S>& ps) {
  std::vector<Tensor<S>> out;
  for (const auto& [k, t] : ps) out.push_back(t);
  return out;
}

template <typename S>
void zero(ParameterSet<S>& ps, const std::string& key) {
  ps.at(key).mutable_values().setZero();
}

Tensor<double> frames(Index t, Index d, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  return randn<double>({t, d}, rng, grad);
}

bool rows_equal(const Tensor<double>& a, const Tensor<double>& b, Index upto) {
  for (Index t = 0; t <= upto; ++t) {
    if (!bit_equal<double>(a.matrix().row(t).transpose().array(),
                           b.matrix().row(t).transpose().array())) {
      return false;
    }
  }
  return true;
}

const std::string kBlock = "noncausal.block0";

}  // namespace

TEST(Conformer, FfnZeroWeightsIsIdentity) {
  const auto cfg = tiny_config();
  auto ps = random_params<double>(backbone_layout(cfg), 1);
  const std::string p = kBlock + ".ffn_start";
  for (auto k : {".w1", ".w2", ".b2"}) zero(ps, p + k);
  const auto x = frames(5, 8, 2);
  EXPECT_TRUE(bit_equal<double>(ffn_forward(x, ps, p, cfg.encoder).values(), x.values()));
}

TEST(Conformer, MhsaZeroOutputProjectionIsIdentity) {
  const auto cfg = tiny_config();
  auto ps = random_params<double>(backbone_layout(cfg), 3);
  const std::string p = kBlock + ".mhsa";
  zero(ps, p + ".wo");
  zero(ps, p + ".bo");
  const auto x = frames(6, 8, 4);
  const auto y = mhsa_forward(x, ps, p, cfg.encoder, ContextSpec{-1, 2}, true);
  EXPECT_TRUE(bit_equal<double>(y.values(), x.values()));
}

TEST(Conformer, ConvZeroFinalPointwiseIsIdentity) {
  const auto cfg = tiny_config();
  auto ps = random_params<double>(backbone_layout(cfg), 5);
  const std::string p = kBlock + ".conv";
  zero(ps, p + ".pw2_w");
  zero(ps, p + ".pw2_b");
  const auto x = frames(6, 8, 6);
  EXPECT_TRUE(bit_equal<double>(conv_forward(x, ps, p, cfg.encoder, ContextSpec{2, 0}).values(),
                                x.values()));
}

TEST(Conformer, ZeroBlockReducesToFinalNorm) {
  const auto cfg = tiny_config();
  auto ps = random_params<double>(backbone_layout(cfg), 7);
  for (auto& [key, t] : ps) {
    if (key.rfind(kBlock + ".", 0) != 0) continue;
    const bool is_norm = key.find("ln_") != std::string::npos ||
                         key.find("norm_") != std::string::npos ||
                         key.find("final_ln") != std::string::npos;
    if (!is_norm) t.mutable_values().setZero();
  }
  const auto x = frames(5, 8, 8);
  const auto y = conformer_block(x, ps, cfg.encoder, Stack::Noncausal, 0);
  const auto expected =
      layer_norm(x, ps.at(kBlock + ".final_ln.g"), ps.at(kBlock + ".final_ln.b"));
  EXPECT_TRUE(bit_equal<double>(y.values(), expected.values()));
}

TEST(Conformer, HeadsMustDivideDimension) {
  auto cfg = tiny_config();
  const auto ps = random_params<double>(backbone_layout(cfg), 9);
  cfg.encoder.num_heads = 3;
  EXPECT_THROW(mhsa_forward(frames(4, 8, 1), ps, kBlock + ".mhsa", cfg.encoder, {}, true),
               ShapeError);
}

TEST(Conformer, UnresolvedParameterThrows) {
  const auto cfg = tiny_config();
  ParameterSet<double> empty;
  EXPECT_THROW(encode(frames(3, 5, 1), cfg, empty), MissingParameterError);
}

TEST(Conformer, MhsaCausalMaskIgnoresFuture) {
  const auto cfg = tiny_config();
  const auto ps = random_params<double>(backbone_layout(cfg), 10);
  for (bool rel : {false, true}) {
    const auto x = frames(7, 8, 11);
    const auto y = mhsa_forward(x, ps, kBlock + ".mhsa", cfg.encoder, ContextSpec{-1, 0}, rel);
    for (Index t = 0; t + 1 < 7; ++t) {
      auto xp = x.clone();
      for (Index c = 0; c < 8; ++c) xp.mutable_values()[(t + 1) * 8 + c] += 5.0;
      const auto yp =
          mhsa_forward(xp, ps, kBlock + ".mhsa", cfg.encoder, ContextSpec{-1, 0}, rel);
      EXPECT_TRUE(rows_equal(y, yp, t)) << "t=" << t << " rel=" << rel;
    }
  }
}

TEST(Conformer, AttentionMaskWindow) {
  const Mask m = attention_mask(5, ContextSpec{1, 2});
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 5; ++j) {
      EXPECT_EQ(m[i * 5 + j], j < i - 1 || j > i + 2) << i << "," << j;
    }
  }
}

TEST(Conformer, BlockContextsSplitBudget) {
  const auto desk = ModelConfig::desk();
  Index total = 0;
  for (int b = 0; b < desk.encoder.noncausal_blocks; ++b) {
    const auto c = block_contexts(desk.encoder, Stack::Noncausal, b);
    EXPECT_EQ(c.conv.left_frames + c.conv.right_frames + 1, desk.encoder.conv_kernel);
    total += c.mhsa.right_frames + c.conv.right_frames;
  }
  EXPECT_EQ(total, desk.encoder.right_context_frames);
  EXPECT_EQ(noncausal_total_right_context(desk.encoder), desk.encoder.right_context_frames);
  const auto causal = block_contexts(desk.encoder, Stack::Causal, 1);
  EXPECT_EQ(causal.mhsa.right_frames, 0);
  EXPECT_EQ(causal.conv.right_frames, 0);
}

TEST(Conformer, EncodeEmptyInput) {
  const auto cfg = tiny_config();
  const auto ps = random_params<double>(backbone_layout(cfg), 12);
  const auto out = encode(Tensor<double>::zeros({0, 5}), cfg, ps);
  EXPECT_EQ(out.causal.rows(), 0);
  EXPECT_EQ(out.noncausal.rows(), 0);
}

TEST(Conformer, EncodeShapes) {
  const auto cfg = ModelConfig::desk();
  const auto ps = initialize<float>(backbone_layout(cfg), 13);
  std::mt19937_64 rng(13);
  const auto out = encode(randn<float>({11, 16}, rng, false), cfg, ps);
  EXPECT_EQ(out.causal.shape(), (Shape{11, 48}));
  EXPECT_EQ(out.noncausal.shape(), (Shape{11, 48}));
}

TEST(Conformer, CausalOutputIgnoresFutureFrames) {
  const auto cfg = ModelConfig::desk();
  const auto ps = random_params<double>(backbone_layout(cfg), 14, 0.1);
  const Index t_len = 20;
  const auto x = frames(t_len, 16, 15);
  const auto y = encode(x, cfg, ps, {true, false}).causal;
  for (Index t : {0, 3, 9, 18}) {
    auto xp = x.clone();
    std::mt19937_64 rng(t);
    std::normal_distribution<double> n;
    for (Index s = t + 1; s < t_len; ++s) {
      for (Index c = 0; c < 16; ++c) xp.mutable_values()[s * 16 + c] = n(rng);
    }
    EXPECT_TRUE(rows_equal(y, encode(xp, cfg, ps, {true, false}).causal, t)) << "t=" << t;
  }
}

TEST(Conformer, NoncausalRespectsRightContextBudget) {
  const auto cfg = ModelConfig::desk();
  const auto ps = random_params<double>(backbone_layout(cfg), 16, 0.1);
  const Index t_len = 30;
  const Index budget = noncausal_total_right_context(cfg.encoder);
  const auto x = frames(t_len, 16, 17);
  const auto y = encode(x, cfg, ps, {false, true}).noncausal;
  for (Index t : {0, 5, 12}) {
    auto xp = x.clone();
    for (Index s = t + budget + 1; s < t_len; ++s) {
      for (Index c = 0; c < 16; ++c) xp.mutable_values()[s * 16 + c] += 2.0;
    }
    EXPECT_TRUE(rows_equal(y, encode(xp, cfg, ps, {false, true}).noncausal, t)) << "t=" << t;
    // The frame right at the budget edge does reach frame t.
    auto xe = x.clone();
    for (Index c = 0; c < 16; ++c) xe.mutable_values()[(t + budget) * 16 + c] += 2.0;
    const auto ye = encode(xe, cfg, ps, {false, true}).noncausal;
    EXPECT_FALSE(bit_equal<double>(y.matrix().row(t).transpose().array(),
                                   ye.matrix().row(t).transpose().array()))
        << "t=" << t;
  }
}

TEST(ConformerGradients, ModulesMatchFiniteDifferences) {
  const auto cfg = tiny_config();
  const auto& e = cfg.encoder;
  const auto layout = backbone_layout(cfg);
  struct ModuleCase {
    const char* name;
    std::function<Tensor<double>(const Tensor<double>&, const ParamSource<double>&)> run;
    std::string prefix;
  };
  const std::vector<ModuleCase> cases = {
      {"ffn", [&](auto& x, auto& s) { return ffn_forward(x, s, kBlock + ".ffn_end", e); },
       kBlock + ".ffn_end."},
      {"mhsa_rel",
       [&](auto& x, auto& s) { return mhsa_forward(x, s, kBlock + ".mhsa", e, {-1, 1}, true); },
       kBlock + ".mhsa."},
      {"mhsa_abs",
       [&](auto& x, auto& s) {
         return mhsa_forward(x, s, "causal.block1.mhsa", e, {2, 0}, false);
       },
       "causal.block1.mhsa."},
      {"conv", [&](auto& x, auto& s) { return conv_forward(x, s, kBlock + ".conv", e, {1, 1}); },
       kBlock + ".conv."},
      {"block",
       [&](auto& x, auto& s) { return conformer_block(x, s, e, Stack::Noncausal, 1); },
       "noncausal.block1."},
  };
  for (const auto& c : cases) {
    for (int seed = 0; seed < 10; ++seed) {
      const auto ps = random_params<double>(layout, 50 + seed);
      const auto x = frames(4, 8, 90 + seed, true);
      std::vector<Tensor<double>> params{x};
      for (const auto& [k, t] : ps) {
        if (k.rfind(c.prefix, 0) == 0) params.push_back(t);
      }
      ASSERT_GT(params.size(), 2u) << c.name;
      const std::function<Tensor<double>()> f = [&] { return probe(c.run(x, ps), 5); };
      EXPECT_LT(max_grad_error<double>(f, params), 1e-4) << c.name << " seed " << seed;
    }
  }
}

TEST(ConformerGradients, EncoderMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  for (int seed = 0; seed < 2; ++seed) {
    const auto ps = random_params<double>(backbone_layout(cfg), 300 + seed, 0.3);
    const auto x = frames(4, 5, 400 + seed, true);
    std::vector<Tensor<double>> params{x};
    for (const auto& [k, t] : ps) {
      if (k.find("block0") != std::string::npos || k.find("proj") != std::string::npos) {
        params.push_back(t);
      }
    }
    const std::function<Tensor<double>()> f = [&] {
      const auto out = encode(x, cfg, ps);
      return add(probe(out.causal, 1), probe(out.noncausal, 2));
    };
    EXPECT_LT(max_grad_error<double>(f, params), 1e-4) << "seed " << seed;
  }
}
