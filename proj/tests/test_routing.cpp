#include "mda/count.hpp"
#include "mda/routing.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace mda;
using mda::testing::bit_equal;
using mda::testing::max_grad_error;
using mda::testing::probe;
using mda::testing::randn;

namespace {

ModelConfig small_config() {
  ModelConfig c = ModelConfig::desk();
  c.encoder.causal_blocks = 2;
  c.encoder.noncausal_blocks = 2;
  c.encoder.d_causal = 16;
  c.encoder.d_noncausal = 24;
  c.encoder.right_context_frames = 4;
  c.encoder.joint_projection_dim = 12;
  return c;
}

template <typename S>
MdaModel<S> make_model(const ModelConfig& cfg, std::uint64_t seed) {
  return MdaModel<S>(cfg, initialize<S>(backbone_layout(cfg), seed), "yt");
}

Tensor<float> features(const ModelConfig& cfg, Index t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return randn<float>({t, cfg.encoder.feature_dim}, rng, false);
}

bool same_outputs(const EncoderOutput<float>& a, const EncoderOutput<float>& b) {
  return bit_equal<float>(a.causal.values(), b.causal.values()) &&
         bit_equal<float>(a.noncausal.values(), b.noncausal.values());
}

void perturb(ParameterSet<float>& ps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [k, t] : ps) t.mutable_values() += randn<float>(t.shape(), rng, false, 0.1f).values();
}

}  // namespace

TEST(Routing, EmptyPlanMatchesBackbone) {
  const auto cfg = small_config();
  auto model = make_model<float>(cfg, 1);
  const auto d = model.register_domain(DomainPlan{"vs", {}, {}, 0});
  const auto x = features(cfg, 9, 2);
  EXPECT_TRUE(same_outputs(model.forward_with_domain(x, d), encode(x, cfg, model.backbone())));
  EXPECT_TRUE(same_outputs(model.forward_with_domain(x, model.domain("yt")),
                           encode(x, cfg, model.backbone())));
}

TEST(Routing, ZeroInitAdaptersMatchBackbone) {
  const auto cfg = small_config();
  for (auto mode : {AdapterMode::Parallel, AdapterMode::Sequential}) {
    auto model = make_model<float>(cfg, 3);
    std::vector<ModulePath> sites;
    for (Stack s : {Stack::Causal, Stack::Noncausal}) {
      for (const auto& p : module_sites(cfg, s)) sites.push_back(p);
    }
    DomainPlan plan = adapter_plan("vs", sites, 4, mode);
    plan.init_seed = 9;
    const auto d = model.register_domain(plan);
    const auto x = features(cfg, 8, 4);
    EXPECT_TRUE(same_outputs(model.forward_with_domain(x, d), encode(x, cfg, model.backbone())))
        << adapter_mode_name(mode);
    // Non-zero W_up makes the adapter visible.
    perturb(model.domain_params(d), 5);
    EXPECT_FALSE(same_outputs(model.forward_with_domain(x, d), encode(x, cfg, model.backbone())));
  }
}

TEST(Routing, FullSizeAdapterAllocation) {
  const auto cfg = ModelConfig::paper();
  const double targets[] = {1.7e6, 3.3e6, 6.6e6};
  const int bs[] = {64, 128, 256};
  for (int i = 0; i < 3; ++i) {
    const auto plan = adapter_plan("vs", ffn_sites(cfg, Stack::Noncausal), bs[i]);
    long long n = 0;
    for (const auto& s : domain_layout(cfg, plan)) n += numel(s.shape);
    EXPECT_EQ(n, 20LL * (2 * 640 * bs[i] + bs[i] + 640));
    EXPECT_LE(std::abs(n - targets[i]), 0.05 * targets[i]);
  }
}

TEST(Routing, RegistrationErrors) {
  const auto cfg = small_config();
  auto model = make_model<float>(cfg, 6);
  model.register_domain(override_plan("vs", {ModulePath::parse("noncausal.block1.ffn_end")}));
  EXPECT_THROW(model.register_domain(DomainPlan{"vs", {}, {}, 0}), DuplicateDomainError);
  EXPECT_THROW(model.register_domain(DomainPlan{"yt", {}, {}, 0}), DuplicateDomainError);
  EXPECT_THROW(model.register_domain(override_plan("a", {ModulePath::parse("noncausal.block7")})),
               InvalidPathError);
  EXPECT_THROW(model.register_domain(override_plan("b", {ModulePath::parse("causal.block0.mhsa")})),
               InvalidPathError);
  EXPECT_THROW(model.register_domain(override_plan(
                   "c", {ModulePath::parse("noncausal.block1"),
                         ModulePath::parse("noncausal.block1.conv")})),
               SiteConflictError);
  DomainPlan both = override_plan("d", {ModulePath::parse("noncausal.block0")});
  both.adapters.push_back({AdapterMode::Parallel, {ModulePath::parse("noncausal.block0.ffn_start")},
                           4, Activation::Swish});
  EXPECT_THROW(model.register_domain(both), SiteConflictError);
  EXPECT_THROW(model.register_domain(adapter_plan("e", {ModulePath::parse("decoder_causal.joint")}, 4)),
               InvalidPathError);
  EXPECT_THROW(model.domain("dt"), UnknownDomainError);
  EXPECT_EQ(model.domains().size(), 2u);
}

TEST(Routing, ResolveOverrides) {
  const auto cfg = small_config();
  auto model = make_model<float>(cfg, 7);
  const auto target = ModulePath::parse("noncausal.block1.ffn_end");
  const auto a = model.register_domain(override_plan("a", {target}));
  for (const auto& p : all_paths(cfg)) {
    Resolution expected = Resolution::Backbone;
    if (p == target) expected = Resolution::DomainOverride;
    else if (p.contains(target)) expected = Resolution::Mixed;
    EXPECT_EQ(model.resolve(p, a), expected) << p.str();
    EXPECT_EQ(model.resolve(p, model.domain("yt")), Resolution::Backbone) << p.str();
  }
  EXPECT_THROW(model.resolve(target, DomainId{42, "zz"}), UnknownDomainError);
}

TEST(Routing, ResolveUnchangedByRemovingOtherDomain) {
  const auto cfg = small_config();
  auto model = make_model<float>(cfg, 8);
  const auto a = model.register_domain(
      override_plan("a", {ModulePath::parse("causal.block1"), ModulePath::parse("decoder_causal")}));
  model.register_domain(override_plan("b", {ModulePath::parse("noncausal")}));
  std::vector<Resolution> before;
  for (const auto& p : all_paths(cfg)) before.push_back(model.resolve(p, a));
  model.remove_domain("b");
  std::size_t i = 0;
  for (const auto& p : all_paths(cfg)) EXPECT_EQ(model.resolve(p, a), before[i++]) << p.str();
  EXPECT_THROW(model.remove_domain("b"), UnknownDomainError);
}

TEST(Routing, OverrideChangesOnlyItsComponent) {
  const auto cfg = small_config();
  auto model = make_model<float>(cfg, 9);
  DomainPlan plan = override_plan("a", {ModulePath::parse("noncausal.block1.ffn_end")});
  plan.init_seed = 123;
  const auto a = model.register_domain(plan);
  const auto x = features(cfg, 7, 10);
  const auto base = encode(x, cfg, model.backbone());
  const auto out = model.forward_with_domain(x, a);
  EXPECT_TRUE(bit_equal<float>(out.causal.values(), base.causal.values()));
  EXPECT_FALSE(bit_equal<float>(out.noncausal.values(), base.noncausal.values()));
  const auto view = model.view(a);
  EXPECT_NE(view.param("noncausal.block1.ffn_end.w1").storage_id(),
            model.backbone().at("noncausal.block1.ffn_end.w1").storage_id());
  EXPECT_EQ(view.param("noncausal.block1.ffn_start.w1").storage_id(),
            model.backbone().at("noncausal.block1.ffn_start.w1").storage_id());
}

TEST(Adapter, HandComputedIdentityActivation) {
  RowMatrix<double> wd = RowMatrix<double>::Zero(3, 1), wu = RowMatrix<double>::Zero(1, 3);
  wd(0, 0) = 1;
  wu(0, 0) = 1;
  AdapterParams<double> a{AdapterMode::Sequential, Activation::Identity,
                          Tensor<double>::from_matrix(wd), Tensor<double>::zeros({1}),
                          Tensor<double>::from_matrix(wu), Tensor<double>::zeros({3})};
  RowMatrix<double> h(1, 3);
  h << 2, 3, 4;
  const auto y = apply_adapter(Tensor<double>::from_matrix(h), a);
  EXPECT_EQ(y.values()[0], 4.0);
  EXPECT_EQ(y.values()[1], 3.0);
  EXPECT_EQ(y.values()[2], 4.0);
}

TEST(Adapter, ZeroUpProjectionIsIdentity) {
  std::mt19937_64 rng(11);
  AdapterParams<double> a{AdapterMode::Sequential, Activation::Swish,
                          randn<double>({5, 2}, rng, false), randn<double>({2}, rng, false),
                          Tensor<double>::zeros({2, 5}), Tensor<double>::zeros({5})};
  const auto h = randn<double>({4, 5}, rng, false);
  EXPECT_TRUE(bit_equal<double>(apply_adapter(h, a).values(), h.values()));
}

TEST(Adapter, PlacementModes) {
  const auto cfg = small_config();
  auto backbone = initialize<double>(backbone_layout(cfg), 12);
  // Silence every branch after ffn_start so the block output is
  // final_ln(ffn_start site output).
  const std::string prefix = "noncausal.block0";
  for (const char* k : {".mhsa.wo", ".mhsa.bo", ".conv.pw2_w", ".conv.pw2_b", ".ffn_end.w2",
                        ".ffn_end.b2"}) {
    backbone.at(prefix + k).mutable_values().setZero();
  }
  MdaModel<double> model(cfg, backbone, "yt");
  const auto site = ModulePath::parse(prefix + ".ffn_start");
  const auto seq = model.register_domain(adapter_plan("seq", {site}, 3, AdapterMode::Sequential));
  const auto par = model.register_domain(adapter_plan("par", {site}, 3, AdapterMode::Parallel));
  std::mt19937_64 rng(12);
  for (auto d : {seq, par}) {
    for (auto& [k, t] : model.domain_params(d)) {
      t.mutable_values() = randn<double>(t.shape(), rng, false, 0.3).values();
    }
  }
  const auto x = randn<double>({5, cfg.encoder.d_noncausal}, rng, false);
  const auto h = add(x, ffn_branch(x, model.backbone(), site.str(), cfg.encoder));
  std::vector<Tensor<double>> outs;
  for (auto d : {seq, par}) {
    const auto view = model.view(d);
    const auto* a = view.adapter(site.str());
    ASSERT_NE(a, nullptr);
    const auto site_out = add(h, adapter_delta(d == seq ? h : x, *a));
    const auto expected = layer_norm(site_out, model.backbone().at(prefix + ".final_ln.g"),
                                     model.backbone().at(prefix + ".final_ln.b"));
    const auto got = conformer_block(x, view, cfg.encoder, Stack::Noncausal, 0);
    EXPECT_LT((got.values() - expected.values()).abs().maxCoeff(), 1e-12);
    outs.push_back(got);
  }
  EXPECT_GT((outs[0].values() - outs[1].values()).abs().maxCoeff(), 1e-6);
}

TEST(Adapter, GradientMatchesFiniteDifferences) {
  for (auto mode : {AdapterMode::Sequential, AdapterMode::Parallel}) {
    for (int seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(200 + seed);
      AdapterParams<double> a{mode, Activation::Swish, randn<double>({6, 3}, rng),
                              randn<double>({3}, rng), randn<double>({3, 6}, rng),
                              randn<double>({6}, rng)};
      const auto x = randn<double>({4, 6}, rng);
      const std::function<Tensor<double>()> f = [&] { return probe(apply_adapter(x, a), 3); };
      EXPECT_LT(max_grad_error<double>(f, {x, a.w_down, a.b_down, a.w_up, a.b_up}), 1e-4);
    }
  }
}

TEST(Mask, BlockOverrideMatchesCount) {
  const auto cfg = ModelConfig::desk();
  auto model = make_model<float>(cfg, 14);
  const auto d = model.register_domain(override_plan("vs", {ModulePath::parse("noncausal.block2")}));
  long long n = 0;
  for (const auto& t : model.trainable_mask(d)) n += t.size();
  EXPECT_EQ(n, count_params(cfg, "block-2", Stack::Noncausal));
  EXPECT_TRUE(model.trainable_mask(model.domain("yt")).empty());
}

TEST(Mask, DisjointOwnership) {
  const auto cfg = small_config();
  auto model = make_model<float>(cfg, 15);
  model.register_domain(override_plan("a", {ModulePath::parse("noncausal.block0.conv")}));
  model.register_domain(adapter_plan("b", ffn_sites(cfg, Stack::Noncausal), 4));
  model.register_domain(override_plan("c", {ModulePath::parse("decoder_noncausal")}));
  std::set<const void*> seen;
  for (const auto& [k, t] : model.backbone()) seen.insert(t.storage_id());
  for (const auto& d : model.domains()) {
    for (const auto& t : model.trainable_mask(d)) {
      EXPECT_TRUE(seen.insert(t.storage_id()).second) << d.name;
    }
  }
}

TEST(Modularity, OtherDomainsDoNotAffectOutputs) {
  const auto cfg = small_config();
  auto model = make_model<float>(cfg, 16);
  DomainPlan pa = adapter_plan("a", ffn_sites(cfg, Stack::Noncausal), 4);
  pa.overrides.push_back(ModulePath::parse("causal.block1.conv"));
  const auto a = model.register_domain(pa);
  perturb(model.domain_params(a), 17);
  const auto x = features(cfg, 10, 18);
  const auto ref = model.forward_with_domain(x, a);

  const auto b = model.register_domain(override_plan("b", {ModulePath::parse("causal.block1.conv")}));
  EXPECT_TRUE(same_outputs(ref, model.forward_with_domain(x, a)));
  perturb(model.domain_params(b), 19);
  EXPECT_TRUE(same_outputs(ref, model.forward_with_domain(x, a)));
  model.register_domain(adapter_plan("c", ffn_sites(cfg, Stack::Noncausal), 8));
  model.remove_domain("b");
  EXPECT_TRUE(same_outputs(ref, model.forward_with_domain(x, a)));
  EXPECT_TRUE(same_outputs(ref, model.forward_with_domain(x, model.domain("a"))));
}

TEST(Plan, JsonRoundTrip) {
  DomainPlan p = override_plan("vs", {ModulePath::parse("noncausal.block3.ffn_end")});
  p.adapters.push_back({AdapterMode::Sequential, {ModulePath::parse("causal.block0.ffn_start")}, 16,
                        Activation::Identity});
  p.init_seed = 77;
  const nlohmann::json j = p;
  const DomainPlan q = j.get<DomainPlan>();
  EXPECT_EQ(nlohmann::json(q), j);
  EXPECT_EQ(q.overrides, p.overrides);
  EXPECT_EQ(q.adapters[0].bottleneck, 16);
  EXPECT_EQ(q.adapters[0].activation, Activation::Identity);
}
