#include "mda/bundle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

using namespace mda;
using mda::testing::bit_equal;
using mda::testing::randn;
namespace fs = std::filesystem;

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

class BundleTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mdab_test_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

std::string read_bytes(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::string& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

void perturb(ParameterSet<float>& ps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [k, t] : ps) t.mutable_values() += randn<float>(t.shape(), rng, false, 0.1f).values();
}

BundleErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const BundleError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no BundleError thrown";
  return BundleErrorCode::Io;
}

Tensor<float> features(const ModelConfig& cfg, Index t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return randn<float>({t, cfg.encoder.feature_dim}, rng, false);
}

}  // namespace

TEST_F(BundleTest, RoundTripIsBitExact) {
  const auto cfg = small_config();
  MdaModel<float> model(cfg, initialize<float>(backbone_layout(cfg), 1), "yt");
  DomainPlan plan = adapter_plan("vs", ffn_sites(cfg, Stack::Noncausal), 4);
  plan.overrides.push_back(ModulePath::parse("decoder_noncausal.joint"));
  const auto d = model.register_domain(plan);
  perturb(model.domain_params(d), 2);
  for (const auto& b : {make_domain_bundle(model, model.domain("yt"), 5),
                        make_domain_bundle(model, d, 7)}) {
    save_bundle(b, path("a.mdab"));
    const auto loaded = load_bundle(path("a.mdab"), cfg);
    EXPECT_EQ(loaded.manifest.domain, b.manifest.domain);
    EXPECT_EQ(loaded.manifest.creation_step, b.manifest.creation_step);
    EXPECT_TRUE(diff_empty(diff(b, loaded)));
    for (const auto& [k, t] : b.params) {
      EXPECT_TRUE(bit_equal<float>(t.values(), loaded.params.at(k).values())) << k;
    }
    save_bundle(loaded, path("b.mdab"));
    EXPECT_EQ(read_bytes(path("a.mdab")), read_bytes(path("b.mdab")));
  }
}

TEST_F(BundleTest, EmptyPlanBundle) {
  const auto cfg = small_config();
  MdaModel<float> model(cfg, initialize<float>(backbone_layout(cfg), 1), "yt");
  const auto d = model.register_domain(DomainPlan{"dt", {}, {}, 0});
  save_bundle(make_domain_bundle(model, d), path("dt.mdab"));
  const auto b = load_bundle(path("dt.mdab"), cfg);
  EXPECT_TRUE(b.manifest.entries.empty());
  EXPECT_FALSE(b.is_backbone());
}

TEST_F(BundleTest, CorruptionAndMismatchErrors) {
  const auto cfg = small_config();
  MdaModel<float> model(cfg, initialize<float>(backbone_layout(cfg), 3), "yt");
  const auto d = model.register_domain(adapter_plan("vs", ffn_sites(cfg, Stack::Causal), 4));
  save_bundle(make_domain_bundle(model, d), path("vs.mdab"));
  const std::string bytes = read_bytes(path("vs.mdab"));

  write_bytes(path("trunc.mdab"), bytes.substr(0, bytes.size() - 3));
  EXPECT_EQ(code_of([&] { load_bundle(path("trunc.mdab"), cfg); }), BundleErrorCode::CorruptHeader);
  write_bytes(path("short.mdab"), bytes.substr(0, 30));
  EXPECT_EQ(code_of([&] { load_bundle(path("short.mdab"), cfg); }), BundleErrorCode::CorruptHeader);
  std::string magic = bytes;
  magic[0] = 'X';
  write_bytes(path("magic.mdab"), magic);
  EXPECT_EQ(code_of([&] { load_bundle(path("magic.mdab"), cfg); }), BundleErrorCode::CorruptHeader);
  std::string version = bytes;
  version[4] = 9;
  write_bytes(path("version.mdab"), version);
  EXPECT_EQ(code_of([&] { load_bundle(path("version.mdab"), cfg); }),
            BundleErrorCode::UnsupportedVersion);
  EXPECT_EQ(code_of([&] { load_bundle(path("missing.mdab"), cfg); }), BundleErrorCode::Io);

  EXPECT_EQ(code_of([&] { load_bundle(path("vs.mdab"), ModelConfig::desk()); }),
            BundleErrorCode::FingerprintMismatch);

  auto wrong_shape = make_domain_bundle(model, d);
  const std::string key = wrong_shape.manifest.entries[0].key;
  wrong_shape.manifest.entries[0].shape = {1, 1};
  wrong_shape.params = ParameterSet<float>();
  for (const auto& e : wrong_shape.manifest.entries) {
    wrong_shape.params.insert(e.key, Tensor<float>::zeros(e.shape));
  }
  save_bundle(wrong_shape, path("shape.mdab"));
  EXPECT_EQ(code_of([&] { load_bundle(path("shape.mdab"), cfg); }), BundleErrorCode::ShapeMismatch);

  auto missing = make_domain_bundle(model, d);
  missing.manifest.entries.pop_back();
  save_bundle(missing, path("keys.mdab"));
  EXPECT_EQ(code_of([&] { load_bundle(path("keys.mdab"), cfg); }), BundleErrorCode::KeyMismatch);
}

TEST_F(BundleTest, FullSizeBundleRejectedByDeskConfig) {
  const auto paper = ModelConfig::paper();
  MdaModel<float> dummy(small_config(), initialize<float>(backbone_layout(small_config()), 1));
  auto b = make_domain_bundle(dummy, dummy.register_domain(DomainPlan{"x", {}, {}, 0}));
  b.manifest.model_config = paper;
  b.manifest.model_fingerprint = model_fingerprint(paper);
  b.manifest.fingerprint = fingerprint(
      nlohmann::json{{"model_config", b.manifest.model_config}, {"plan", b.manifest.plan}});
  save_bundle(b, path("paper.mdab"));
  EXPECT_NO_THROW(load_bundle(path("paper.mdab"), paper));
  EXPECT_EQ(code_of([&] { load_bundle(path("paper.mdab"), ModelConfig::desk()); }),
            BundleErrorCode::FingerprintMismatch);
}

TEST_F(BundleTest, ComposeIsOrderIndependent) {
  const auto cfg = small_config();
  MdaModel<float> model(cfg, initialize<float>(backbone_layout(cfg), 4), "yt");
  const auto a = model.register_domain(adapter_plan("a", ffn_sites(cfg, Stack::Noncausal), 4));
  const auto b = model.register_domain(override_plan("b", {ModulePath::parse("causal.block1")}));
  const auto c = model.register_domain(override_plan("c", {ModulePath::parse("noncausal.block0.mhsa")}));
  perturb(model.domain_params(a), 5);
  perturb(model.domain_params(b), 6);
  const auto bb = make_domain_bundle(model, model.domain("yt"));
  const auto ba = make_domain_bundle(model, a), bbb = make_domain_bundle(model, b),
             bc = make_domain_bundle(model, c);
  const auto m1 = compose(cfg, bb, {ba, bbb, bc});
  const auto m2 = compose(cfg, bb, {bc, bbb, ba});
  const auto x = features(cfg, 9, 7);
  for (const auto& name : {"yt", "a", "b", "c"}) {
    const auto o1 = m1.forward_with_domain(x, m1.domain(name));
    const auto o2 = m2.forward_with_domain(x, m2.domain(name));
    const auto o0 = model.forward_with_domain(x, model.domain(name));
    EXPECT_EQ(m1.domain(name), m2.domain(name));
    EXPECT_TRUE(bit_equal<float>(o1.noncausal.values(), o2.noncausal.values())) << name;
    EXPECT_TRUE(bit_equal<float>(o1.causal.values(), o0.causal.values())) << name;
    EXPECT_TRUE(bit_equal<float>(o1.noncausal.values(), o0.noncausal.values())) << name;
  }
  const auto solo = compose(cfg, bb, {});
  EXPECT_TRUE(bit_equal<float>(solo.forward_with_domain(x, solo.domain("yt")).noncausal.values(),
                               encode(x, cfg, model.backbone()).noncausal.values()));
  EXPECT_EQ(code_of([&] { compose(cfg, bb, {ba, ba}); }), BundleErrorCode::DuplicateDomain);
  EXPECT_EQ(code_of([&] { compose(cfg, bb, {bb}); }), BundleErrorCode::DuplicateDomain);
}

TEST_F(BundleTest, DiffReportsChangedKeys) {
  const auto cfg = small_config();
  MdaModel<float> model(cfg, initialize<float>(backbone_layout(cfg), 8), "yt");
  const auto d = model.register_domain(override_plan("vs", {ModulePath::parse("noncausal.block1")}));
  const auto before = make_domain_bundle(model, d);
  EXPECT_TRUE(diff_empty(diff(before, before)));
  auto& w = model.domain_params(d).at("noncausal.block1.conv.pw1_w");
  w.mutable_values()[3] += 0.5f;
  const auto after = make_domain_bundle(model, d);
  const auto r = diff(before, after);
  ASSERT_EQ(r["changed"].size(), 1u);
  EXPECT_EQ(r["changed"][0]["key"], "noncausal.block1.conv.pw1_w");
  EXPECT_NEAR(r["changed"][0]["max_abs_delta"].get<double>(), 0.5, 1e-6);
  const auto other = make_domain_bundle(model, model.domain("yt"));
  const auto r2 = diff(before, other);
  EXPECT_FALSE(r2["added"].empty());
  EXPECT_TRUE(r2["removed"].empty());
  EXPECT_GT(r2["changed"].size(), 0u);
  EXPECT_LE(r2["changed"].size(), before.manifest.entries.size());
  EXPECT_EQ(diff(other, before)["removed"].size(), r2["added"].size());
  EXPECT_EQ(inspect(before)["num_entries"].get<std::size_t>(), before.manifest.entries.size());
}
