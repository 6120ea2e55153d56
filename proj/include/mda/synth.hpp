#pragma once

#include "mda/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mda {

struct IntRange {
  int min = 1;
  int max = 1;
  double mean() const { return 0.5 * (min + max); }
};

struct DomainStyle {
  std::string name;
  RowMatrix<double> transform;  // [F x F], frame' = transform * frame + bias
  Eigen::VectorXd bias;         // [F]
  double noise_sigma = 0.0;
  IntRange frames_per_token;
  IntRange utterance_length;    // transcribed tokens
  std::vector<double> token_weights;
  double background_prob = 0.0;
  IntRange background_tokens{2, 4};
  double background_gain = 0.35;

  int feature_dim() const { return static_cast<int>(transform.rows()); }
  int vocab_size() const { return static_cast<int>(token_weights.size()); }
  double condition_number() const;
  // Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

void to_json(nlohmann::json& j, const DomainStyle& s);

struct Utterance {
  std::string domain;
  std::uint64_t seed = 0;
  std::vector<int> targets;
  RowMatrix<float> features;  // [T x F]
  int distractor_frames = 0;

  Index frames() const { return features.rows(); }
};

// Per-token [F] base vectors shared by every domain: [vocab x F]. Tokens
// come in `clusters` groups; members sit `spread` (per dimension) from their
// group centre, so tokens within a group are easy to confuse.
RowMatrix<double> token_prototypes(int vocab, int feature_dim, std::uint64_t global_seed,
                                   int clusters = 8, double spread = 0.25);

// Shipped presets: "yt-like" (long, noisy, background speech), "vs-like"
// (short fast queries, four boosted tokens, mild channel), "dt-like" (clean).
std::vector<std::string> preset_domains();
DomainStyle preset_style(const std::string& name, int feature_dim, int vocab,
                         std::uint64_t global_seed);
// Tokens whose unigram weight is boosted in `style` (empty for flat styles).
std::vector<int> boosted_tokens(const DomainStyle& style);

Utterance gen_utterance(std::uint64_t seed, const DomainStyle& style,
                        const RowMatrix<double>& prototypes);

std::uint64_t utterance_seed(std::uint64_t global_seed, const std::string& domain,
                             const std::string& split, std::uint64_t index);

struct CorpusSpec {
  std::uint64_t global_seed = 20220601;
  int feature_dim = 16;
  int vocab_size = 32;
  int prototype_clusters = 8;
  double prototype_spread = 0.25;
  std::vector<std::string> domains = preset_domains();
  int train_per_domain = 6000;
  int test_per_domain = 500;
};

void to_json(nlohmann::json& j, const CorpusSpec& s);
void from_json(const nlohmann::json& j, CorpusSpec& s);

struct Corpus {
  CorpusSpec spec;
  RowMatrix<double> prototypes;
  std::map<std::string, DomainStyle> styles;
  std::map<std::string, std::vector<Utterance>> splits;  // "train", "test"

  // Utterances of `split` restricted to `domain` (all domains when empty).
  std::vector<Utterance> select(const std::string& split, const std::string& domain = "") const;
};

Corpus generate_corpus(const CorpusSpec& spec);

// dir/corpus.json plus dir/<split>.jsonl with {seed, domain, targets} per line.
void save_corpus(const Corpus& corpus, const std::string& dir);
// Regenerates features from the stored seeds; a record whose regenerated
// targets differ from the stored ones is an error.
Corpus load_corpus(const std::string& dir);

struct DomainStats {
  long long count = 0;
  double mean_length = 0.0;
  double mean_frames = 0.0;
  std::vector<long long> token_histogram;
};

std::map<std::string, DomainStats> corpus_stats(std::span<const Utterance> utterances,
                                                int vocab_size);
nlohmann::json stats_json(const std::map<std::string, DomainStats>& stats);

}  // namespace mda
