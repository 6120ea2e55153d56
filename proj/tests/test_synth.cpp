#include "mda/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace mda;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 77;

DomainStyle plain_style(int f, int vocab) {
  DomainStyle s;
  s.name = "plain";
  s.transform = RowMatrix<double>::Identity(f, f);
  s.bias = Eigen::VectorXd::Zero(f);
  s.frames_per_token = {2, 3};
  s.utterance_length = {3, 6};
  s.token_weights.assign(vocab, 1.0);
  return s;
}

double mean_length(const DomainStyle& s, const RowMatrix<double>& protos, int n) {
  double total = 0;
  for (int i = 0; i < n; ++i) total += gen_utterance(1000 + i, s, protos).targets.size();
  return total / n;
}

}  // namespace

TEST(Synth, SameSeedIsBitIdentical) {
  const auto protos = token_prototypes(32, 16, kSeed);
  for (const auto& name : preset_domains()) {
    const auto style = preset_style(name, 16, 32, kSeed);
    const auto a = gen_utterance(5, style, protos);
    const auto b = gen_utterance(5, style, protos);
    EXPECT_EQ(a.targets, b.targets);
    ASSERT_EQ(a.features.rows(), b.features.rows());
    EXPECT_EQ(std::memcmp(a.features.data(), b.features.data(), a.features.size() * sizeof(float)),
              0);
    EXPECT_NE(gen_utterance(6, style, protos).targets, a.targets);
  }
}

TEST(Synth, CleanStyleRepeatsPrototypes) {
  const auto protos = token_prototypes(8, 5, kSeed);
  const auto style = plain_style(5, 8);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto u = gen_utterance(seed, style, protos);
    EXPECT_EQ(u.distractor_frames, 0);
    Index row = 0;
    for (int tok : u.targets) {
      const RowMatrix<float> expected = protos.row(tok).cast<float>();
      int run = 0;
      while (row < u.frames() && u.features.row(row) == expected.row(0)) {
        ++row;
        ++run;
      }
      EXPECT_GE(run, style.frames_per_token.min);
      EXPECT_LE(run, style.frames_per_token.max);
    }
    EXPECT_EQ(row, u.frames());
  }
}

TEST(Synth, FrameCountIncludesDistractors) {
  const auto protos = token_prototypes(32, 16, kSeed);
  const auto style = preset_style("yt-like", 16, 32, kSeed);
  int with_background = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto u = gen_utterance(seed, style, protos);
    const Index labelled = u.frames() - u.distractor_frames;
    const auto n = static_cast<Index>(u.targets.size());
    EXPECT_GE(labelled, n * style.frames_per_token.min);
    EXPECT_LE(labelled, n * style.frames_per_token.max);
    with_background += u.distractor_frames > 0;
    for (std::size_t i = 1; i < u.targets.size(); ++i) EXPECT_NE(u.targets[i], u.targets[i - 1]);
  }
  EXPECT_GT(with_background, 40);
  EXPECT_LT(with_background, 120);
}

TEST(Synth, ShortQueriesAreShort) {
  const auto protos = token_prototypes(32, 16, kSeed);
  const double vs = mean_length(preset_style("vs-like", 16, 32, kSeed), protos, 1000);
  const double yt = mean_length(preset_style("yt-like", 16, 32, kSeed), protos, 1000);
  EXPECT_LT(vs, 0.5 * yt);
}

TEST(Synth, StyleValidation) {
  auto s = plain_style(4, 6);
  EXPECT_NO_THROW(s.validate());
  EXPECT_DOUBLE_EQ(s.condition_number(), 1.0);
  auto ill = s;
  ill.transform(0, 0) = 1e-3;
  EXPECT_THROW(ill.validate(), std::invalid_argument);
  auto prob = s;
  prob.background_prob = 1.5;
  EXPECT_THROW(prob.validate(), std::invalid_argument);
  auto len = s;
  len.utterance_length = {0, 3};
  EXPECT_THROW(len.validate(), std::invalid_argument);
  auto frames = s;
  frames.frames_per_token = {3, 2};
  EXPECT_THROW(frames.validate(), std::invalid_argument);
  for (const auto& name : preset_domains()) {
    EXPECT_LT(preset_style(name, 16, 32, kSeed).condition_number(), 100.0) << name;
  }
  EXPECT_THROW(preset_style("podcast", 16, 32, kSeed), std::invalid_argument);
}

TEST(CorpusStats, EmptyDataset) {
  EXPECT_TRUE(corpus_stats({}, 32).empty());
  EXPECT_TRUE(stats_json({}).empty());
}

TEST(CorpusStats, PresetSeparation) {
  CorpusSpec spec;
  spec.train_per_domain = 400;
  spec.test_per_domain = 0;
  const auto corpus = generate_corpus(spec);
  const auto stats = corpus_stats(corpus.splits.at("train"), spec.vocab_size);
  ASSERT_EQ(stats.size(), 3u);
  for (const auto& [a, sa] : stats) {
    EXPECT_EQ(sa.count, 400);
    for (const auto& [b, sb] : stats) {
      if (a < b) EXPECT_GT(std::abs(sa.mean_length - sb.mean_length), 0.5) << a << " " << b;
    }
  }
  const auto& vs = stats.at("vs-like");
  const auto boosted = boosted_tokens(corpus.styles.at("vs-like"));
  ASSERT_EQ(boosted.size(), 4u);
  long long mass = 0;
  for (int t : boosted) mass += vs.token_histogram[t];
  const long long total =
      std::accumulate(vs.token_histogram.begin(), vs.token_histogram.end(), 0LL);
  EXPECT_EQ(total, static_cast<long long>(std::llround(vs.mean_length * vs.count)));
  EXPECT_GE(double(mass) / double(total), 0.3);
}

TEST(Corpus, SaveLoadRegeneratesFeatures) {
  CorpusSpec spec;
  spec.train_per_domain = 20;
  spec.test_per_domain = 5;
  const auto corpus = generate_corpus(spec);
  const auto dir = fs::temp_directory_path() / ("mda_corpus_" + std::to_string(::getpid()));
  save_corpus(corpus, dir.string());
  const auto loaded = load_corpus(dir.string());
  EXPECT_EQ(loaded.splits.size(), 2u);
  for (const auto& [split, utts] : corpus.splits) {
    const auto& other = loaded.splits.at(split);
    ASSERT_EQ(utts.size(), other.size());
    for (std::size_t i = 0; i < utts.size(); ++i) {
      EXPECT_EQ(utts[i].seed, other[i].seed);
      EXPECT_EQ(utts[i].targets, other[i].targets);
      EXPECT_TRUE(utts[i].features == other[i].features);
    }
  }
  EXPECT_EQ(loaded.select("test", "vs-like").size(), 5u);
  EXPECT_EQ(loaded.select("test").size(), 15u);
  EXPECT_THROW(loaded.select("dev"), std::invalid_argument);

  // A record whose targets no longer match its seed is rejected.
  std::ifstream in(dir / "test.jsonl");
  std::string first, rest, line;
  std::getline(in, first);
  while (std::getline(in, line)) rest += line + "\n";
  in.close();
  auto rec = nlohmann::json::parse(first);
  rec["targets"].push_back(0);
  std::ofstream(dir / "test.jsonl") << rec.dump() << "\n" << rest;
  EXPECT_THROW(load_corpus(dir.string()), std::runtime_error);
  fs::remove_all(dir);
}
