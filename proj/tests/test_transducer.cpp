#include "mda/transducer.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mda;
using mda::testing::max_grad_error;
using mda::testing::randn;

namespace {

ModelConfig tiny(int vocab) {
  ModelConfig c = ModelConfig::desk();
  c.encoder.joint_projection_dim = 5;
  c.decoder.vocab_size = vocab;
  c.decoder.embed_dim = 4;
  c.decoder.joint_dim = 6;
  return c;
}

ParameterSet<double> decoder_params(const ModelConfig& cfg, std::uint64_t seed) {
  const auto layout = component_layout(cfg, ModulePath::parse("decoder_noncausal"));
  auto ps = initialize<double>(layout, seed);
  std::mt19937_64 rng(seed);
  for (auto& [k, t] : ps) t.mutable_values() += randn<double>(t.shape(), rng, false, 0.5).values();
  ps.set_requires_grad(true);
  return ps;
}

std::vector<int> random_targets(std::mt19937_64& rng, int len, int vocab) {
  std::uniform_int_distribution<int> d(0, vocab - 1);
  std::vector<int> y(static_cast<std::size_t>(len));
  for (auto& v : y) v = d(rng);
  return y;
}

const std::string kDec = "decoder_noncausal";

}  // namespace

TEST(Prediction, StatelessAndOrderSensitive) {
  const auto cfg = tiny(7);
  const auto ps = decoder_params(cfg, 1);
  const auto a = predict(3, 5, ps, kDec, cfg.decoder);
  const auto b = predict(3, 5, ps, kDec, cfg.decoder);
  const auto c = predict(5, 3, ps, kDec, cfg.decoder);
  EXPECT_EQ(a.shape(), (Shape{6}));
  EXPECT_TRUE((a.values() == b.values()).all());
  EXPECT_FALSE((a.values() == c.values()).all());
  EXPECT_THROW(predict(7 + 1, 0, ps, kDec, cfg.decoder), std::out_of_range);
  EXPECT_THROW(predict(-1, 0, ps, kDec, cfg.decoder), std::out_of_range);
}

TEST(Prediction, RowsMatchSingleQueries) {
  const auto cfg = tiny(7);
  const auto ps = decoder_params(cfg, 2);
  const std::vector<int> y{4, 1, 6};
  const auto rows = prediction_rows(std::span<const int>(y), ps, kDec, cfg.decoder);
  const int s = start_token(cfg.decoder);
  const int hist[4][2] = {{s, s}, {4, s}, {1, 4}, {6, 1}};
  for (int u = 0; u < 4; ++u) {
    const auto p = predict(hist[u][0], hist[u][1], ps, kDec, cfg.decoder);
    EXPECT_LT((rows.matrix().row(u).transpose().array() - p.values()).abs().maxCoeff(), 1e-12);
  }
}

TEST(Joint, HatNormalizationAtEveryNode) {
  const auto cfg = tiny(9);
  const auto ps = decoder_params(cfg, 3);
  std::mt19937_64 rng(3);
  const auto enc = randn<double>({4, 5}, rng, false);
  const std::vector<int> y{2, 8, 0};
  const auto logits = joint_lattice(
      enc, prediction_rows(std::span<const int>(y), ps, kDec, cfg.decoder), ps, kDec);
  ASSERT_EQ(logits.shape(), (Shape{16, 10}));
  for (Index r = 0; r < logits.rows(); ++r) {
    const Eigen::ArrayXd row = logits.matrix().row(r).transpose().array();
    EXPECT_NEAR(hat_log_probs(row).exp().sum(), 1.0, 1e-6);
  }
  const auto hat = joint_hat(Tensor<double>(Shape{5}, enc.matrix().row(1).transpose().array()),
                             predict(2, start_token(cfg.decoder), ps, kDec, cfg.decoder), ps,
                             kDec);
  EXPECT_EQ(hat.label_logits.size(), 9);
  EXPECT_NEAR(hat.blank_logit.item(), logits.matrix()(1 * 4 + 1, 0), 1e-12);
}

TEST(Joint, BlankSaturation) {
  Eigen::ArrayXd row = Eigen::ArrayXd::Zero(5);
  row[0] = 60.0;
  const auto lp = hat_log_probs(row);
  EXPECT_NEAR(std::exp(lp[0]), 1.0, 1e-12);
  EXPECT_LT(lp.tail(4).exp().maxCoeff(), 1e-25);
}

TEST(Loss, SingleFrameNoLabels) {
  RowMatrix<double> l(1, 3);
  l << 0.3, -1.0, 2.0;
  const auto r = hat_transducer_loss(Tensor<double>::from_matrix(l), 1, std::span<const int>());
  EXPECT_NEAR(r.nll.item(), -std::log(1.0 / (1.0 + std::exp(-0.3))), 1e-12);
  EXPECT_EQ(r.alpha(0, 0), 0.0);
}

TEST(Loss, HandEnumeratedUniformLattice) {
  const RowMatrix<double> l = RowMatrix<double>::Zero(4, 3);
  const std::vector<int> y{1};
  const auto r = hat_transducer_loss(Tensor<double>::from_matrix(l), 2, std::span<const int>(y));
  const double expected = -std::log(2 * 0.25 * 0.5 * 0.5);
  EXPECT_NEAR(r.nll.item(), expected, 1e-12);
  const auto bf = loss_bruteforce(l, 2, std::span<const int>(y));
  EXPECT_NEAR(bf.nll, expected, 1e-12);
  EXPECT_EQ(bf.interleavings, 3);
  EXPECT_EQ(bf.alignments, 2);
}

TEST(Loss, EmptyInstance) {
  const auto r = hat_transducer_loss(Tensor<double>::zeros({0, 3}), 0, std::span<const int>());
  EXPECT_EQ(r.nll.item(), 0.0);
  EXPECT_EQ(loss_bruteforce(RowMatrix<double>(0, 3), 0, std::span<const int>()).nll, 0.0);
  const std::vector<int> y{1};
  EXPECT_THROW(hat_transducer_loss(Tensor<double>::zeros({0, 3}), 0, std::span<const int>(y)),
               std::invalid_argument);
}

TEST(Loss, PathCountIdentity) {
  for (int T = 1; T <= 4; ++T) {
    for (int U = 0; U <= 3; ++U) {
      const RowMatrix<double> l = RowMatrix<double>::Zero(T * (U + 1), 3);
      const std::vector<int> y(static_cast<std::size_t>(U), 0);
      const auto bf = loss_bruteforce(l, T, std::span<const int>(y));
      auto binom = [](int n, int k) {
        long long c = 1;
        for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
        return c;
      };
      EXPECT_EQ(bf.interleavings, binom(T + U, U));
      EXPECT_EQ(bf.alignments, binom(T + U - 1, U));
    }
  }
}

TEST(Loss, BruteforceLimit) {
  const RowMatrix<double> l = RowMatrix<double>::Zero(12 * 9, 3);
  const std::vector<int> y(8, 0);
  EXPECT_THROW(loss_bruteforce(l, 12, std::span<const int>(y)), InstanceTooLargeError);
}

TEST(Loss, MatchesBruteforceOnRandomInstances) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> tdist(1, 4), udist(0, 3);
  for (int i = 0; i < 100; ++i) {
    const int vocab = 2 + i % 4;
    const auto cfg = tiny(vocab);
    const auto ps = decoder_params(cfg, 500 + i);
    const int T = tdist(rng), U = udist(rng);
    const auto enc = randn<double>({T, 5}, rng, false);
    const auto y = random_targets(rng, U, vocab);
    const auto r = transducer_loss(enc, std::span<const int>(y), ps, kDec, cfg.decoder);
    const auto bf = loss_bruteforce(enc, std::span<const int>(y), ps, kDec, cfg.decoder);
    EXPECT_NEAR(r.nll.item(), bf.nll, 1e-8) << "instance " << i;
    EXPECT_GE(r.nll.item(), 0.0);
  }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 12; ++i) {
    const int vocab = 2 + i % 3;
    const int T = 1 + i % 3, U = i % 3;
    const auto cfg = tiny(vocab);
    const auto ps = decoder_params(cfg, 700 + i);
    const auto enc = randn<double>({T, 5}, rng, true);
    const auto y = random_targets(rng, U, vocab);
    std::vector<Tensor<double>> params{enc};
    for (const auto& [k, t] : ps) params.push_back(t);
    const std::function<Tensor<double>()> f = [&] {
      return transducer_loss(enc, std::span<const int>(y), ps, kDec, cfg.decoder).nll;
    };
    EXPECT_LT(max_grad_error<double>(f, params), 1e-4) << "instance " << i;
  }
}

TEST(Loss, LogitGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 10; ++i) {
    const int T = 1 + i % 3, U = i % 3;
    const auto logits = randn<double>({T * (U + 1), 4}, rng, true, 2.0);
    const auto y = random_targets(rng, U, 3);
    const std::function<Tensor<double>()> f = [&] {
      return hat_transducer_loss(logits, T, std::span<const int>(y)).nll;
    };
    EXPECT_LT(max_grad_error<double>(f, {logits}), 1e-4) << "instance " << i;
  }
}

TEST(Decode, BlankEverywhereGivesEmpty) {
  const auto cfg = tiny(5);
  auto ps = decoder_params(cfg, 20);
  auto& ob = ps.at(kDec + ".joint.out_b");
  ob.mutable_values()[0] = 100.0;
  std::mt19937_64 rng(20);
  const auto enc = randn<double>({6, 5}, rng, false);
  EXPECT_TRUE(greedy_decode(enc, ps, kDec, cfg.decoder).empty());
}

TEST(Decode, EmissionCapBoundsOutput) {
  const auto cfg = tiny(5);
  auto ps = decoder_params(cfg, 21);
  ps.at(kDec + ".joint.out_b").mutable_values()[0] = -100.0;
  std::mt19937_64 rng(21);
  const auto enc = randn<double>({6, 5}, rng, false);
  EXPECT_EQ(greedy_decode(enc, ps, kDec, cfg.decoder, 4).size(), 24u);
  EXPECT_EQ(greedy_decode(enc, ps, kDec, cfg.decoder, 2).size(), 12u);
}

TEST(Decode, MatchesTensorJointArgmax) {
  const auto cfg = tiny(6);
  const auto ps = decoder_params(cfg, 22);
  std::mt19937_64 rng(22);
  const auto enc = randn<double>({5, 5}, rng, false);
  const auto hyp = greedy_decode(enc, ps, kDec, cfg.decoder);
  // Replay the greedy walk through the differentiable joint.
  std::vector<int> replay;
  int p1 = start_token(cfg.decoder), p2 = p1;
  for (Index t = 0; t < 5; ++t) {
    for (int k = 0; k < 4; ++k) {
      const auto frame = Tensor<double>(Shape{5}, enc.matrix().row(t).transpose().array());
      const auto hat = joint_hat(frame, predict(p1, p2, ps, kDec, cfg.decoder), ps, kDec);
      Eigen::ArrayXd row(7);
      row[0] = hat.blank_logit.item();
      row.tail(6) = hat.label_logits.values();
      Index best;
      hat_log_probs(row).maxCoeff(&best);
      if (best == 0) break;
      replay.push_back(int(best - 1));
      p2 = p1;
      p1 = int(best - 1);
    }
  }
  EXPECT_EQ(hyp, replay);
}

TEST(Wer, HandCases) {
  const std::vector<int> abc{1, 2, 3}, ac{1, 3}, a{1}, none;
  EXPECT_EQ(wer(abc, abc).errors(), 0);
  const auto del = wer(abc, ac);
  EXPECT_EQ(del.deletions, 1);
  EXPECT_EQ(del.errors(), 1);
  EXPECT_DOUBLE_EQ(del.rate(), 1.0 / 3.0);
  const auto ins = wer(none, a);
  EXPECT_EQ(ins.insertions, 1);
  EXPECT_DOUBLE_EQ(ins.rate(), 1.0);
  const std::vector<int> abd{1, 2, 4};
  EXPECT_EQ(wer(abc, abd).substitutions, 1);
}

TEST(Wer, MetricProperties) {
  std::mt19937_64 rng(30);
  for (int i = 0; i < 200; ++i) {
    const auto x = random_targets(rng, int(rng() % 6), 3);
    const auto y = random_targets(rng, int(rng() % 6), 3);
    const auto z = random_targets(rng, int(rng() % 6), 3);
    EXPECT_EQ(wer(x, y).errors(), wer(y, x).errors());
    EXPECT_EQ(wer(x, y).errors() == 0, x == y);
    EXPECT_LE(wer(x, z).errors(), wer(x, y).errors() + wer(y, z).errors());
  }
}
