#include "mda/synth.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "mda/config.hpp"

namespace mda {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RowMatrix<double> gaussian(Index rows, Index cols, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  RowMatrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

int uniform_int(std::mt19937_64& rng, IntRange r) {
  return std::uniform_int_distribution<int>(r.min, r.max)(rng);
}

void check_range(const IntRange& r, const char* what) {
  if (r.min < 1 || r.max < r.min) {
    throw std::invalid_argument(std::string(what) + " range must satisfy 1 <= min <= max");
  }
}

void check_prob(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + " must be in [0, 1]");
}

// Channel of a domain: identity plus a scaled Gaussian perturbation.
RowMatrix<double> channel(int f, double strength, std::mt19937_64& rng) {
  RowMatrix<double> a = RowMatrix<double>::Identity(f, f);
  a += gaussian(f, f, rng, strength / std::sqrt(double(f)));
  return a;
}

}  // namespace

double DomainStyle::condition_number() const {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(transform);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(s.size() - 1) == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

void DomainStyle::validate() const {
  if (transform.rows() < 1 || transform.rows() != transform.cols()) {
    throw std::invalid_argument("style '" + name + "': transform must be square");
  }
  if (bias.size() != transform.rows()) {
    throw std::invalid_argument("style '" + name + "': bias size differs from feature_dim");
  }
  if (!(condition_number() < 100.0)) {
    throw std::invalid_argument("style '" + name + "': transform condition number >= 100");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("style '" + name + "': negative noise");
  check_range(frames_per_token, "frames_per_token");
  check_range(utterance_length, "utterance_length");
  check_range(background_tokens, "background_tokens");
  check_prob(background_prob, "background_prob");
  if (token_weights.empty()) throw std::invalid_argument("style '" + name + "': empty vocab");
  double total = 0.0;
  for (double w : token_weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("style '" + name + "': negative token weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("style '" + name + "': token weights sum to 0");
  if (token_weights.size() < 2) {
    throw std::invalid_argument("style '" + name + "': need at least two tokens");
  }
}

void to_json(nlohmann::json& j, const DomainStyle& s) {
  j = {{"name", s.name},
       {"noise_sigma", s.noise_sigma},
       {"frames_per_token", {s.frames_per_token.min, s.frames_per_token.max}},
       {"utterance_length", {s.utterance_length.min, s.utterance_length.max}},
       {"token_weights", s.token_weights},
       {"background_prob", s.background_prob},
       {"background_tokens", {s.background_tokens.min, s.background_tokens.max}},
       {"background_gain", s.background_gain},
       {"condition_number", s.condition_number()}};
}

RowMatrix<double> token_prototypes(int vocab, int feature_dim, std::uint64_t global_seed,
                                   int clusters, double spread) {
  if (clusters < 1) throw std::invalid_argument("prototype clusters must be >= 1");
  std::mt19937_64 rng(splitmix64(global_seed ^ 0x70726f746fULL));
  const RowMatrix<double> centres = gaussian(clusters, feature_dim, rng, 1.0);
  RowMatrix<double> p = gaussian(vocab, feature_dim, rng, spread);
  for (int v = 0; v < vocab; ++v) p.row(v) += centres.row(v % clusters);
  return p;
}

std::vector<std::string> preset_domains() { return {"yt-like", "vs-like", "dt-like"}; }

DomainStyle preset_style(const std::string& name, int feature_dim, int vocab,
                         std::uint64_t global_seed) {
  std::uint64_t tag = 0;
  for (char c : name) tag = tag * 131 + static_cast<unsigned char>(c);
  std::mt19937_64 rng(splitmix64(global_seed ^ tag));
  DomainStyle s;
  s.name = name;
  s.token_weights.assign(vocab, 1.0);
  s.bias = Eigen::VectorXd::Zero(feature_dim);
  if (name == "yt-like") {
    s.transform = RowMatrix<double>::Identity(feature_dim, feature_dim);
    s.noise_sigma = 0.5;
    s.frames_per_token = {2, 4};
    s.utterance_length = {6, 14};
    s.background_prob = 0.4;
  } else if (name == "vs-like") {
    s.transform = channel(feature_dim, 0.3, rng);
    s.bias = gaussian(feature_dim, 1, rng, 0.3);
    s.noise_sigma = 0.4;
    // Fast speech: single-frame tokens never occur in the other presets.
    s.frames_per_token = {1, 3};
    s.utterance_length = {2, 5};
    // Four named-entity-like tokens carry about 40% of the mass.
    std::vector<int> ids(vocab);
    for (int i = 0; i < vocab; ++i) ids[i] = i;
    std::shuffle(ids.begin(), ids.end(), rng);
    const int boosted = std::min(4, vocab);
    const double w = 0.4 * (vocab - boosted) / (0.6 * boosted);
    for (int i = 0; i < boosted; ++i) s.token_weights[ids[i]] = w;
  } else if (name == "dt-like") {
    s.transform = channel(feature_dim, 0.3, rng);
    s.noise_sigma = 0.2;
    s.frames_per_token = {3, 5};
    s.utterance_length = {4, 9};
    s.background_prob = 0.05;
  } else {
    throw std::invalid_argument("unknown domain preset '" + name + "'");
  }
  s.validate();
  return s;
}

std::vector<int> boosted_tokens(const DomainStyle& style) {
  std::vector<int> out;
  if (style.token_weights.empty()) return out;
  const double lo = *std::min_element(style.token_weights.begin(), style.token_weights.end());
  for (int i = 0; i < style.vocab_size(); ++i) {
    if (style.token_weights[i] > lo) out.push_back(i);
  }
  return out;
}

Utterance gen_utterance(std::uint64_t seed, const DomainStyle& style,
                        const RowMatrix<double>& prototypes) {
  const int f = style.feature_dim();
  if (prototypes.cols() != f || prototypes.rows() != style.vocab_size()) {
    throw std::invalid_argument("prototypes do not match style '" + style.name + "'");
  }
  std::mt19937_64 rng(splitmix64(seed));
  std::discrete_distribution<int> token_dist(style.token_weights.begin(),
                                             style.token_weights.end());
  std::uniform_int_distribution<int> any_token(0, style.vocab_size() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  Utterance u;
  u.domain = style.name;
  u.seed = seed;
  const int n = uniform_int(rng, style.utterance_length);
  // Adjacent repeats would be indistinguishable from one long token.
  while (static_cast<int>(u.targets.size()) < n) {
    const int tok = token_dist(rng);
    if (!u.targets.empty() && u.targets.back() == tok) continue;
    u.targets.push_back(tok);
  }
  std::vector<std::pair<int, double>> segments;  // (token, gain)
  std::vector<int> lengths;
  for (int tok : u.targets) {
    segments.emplace_back(tok, 1.0);
    lengths.push_back(uniform_int(rng, style.frames_per_token));
  }
  if (std::bernoulli_distribution(style.background_prob)(rng)) {
    const int m = uniform_int(rng, style.background_tokens);
    for (int i = 0; i < m; ++i) {
      segments.emplace_back(any_token(rng), style.background_gain);
      lengths.push_back(uniform_int(rng, style.frames_per_token));
      u.distractor_frames += lengths.back();
    }
  }
  Index total = 0;
  for (int l : lengths) total += l;
  RowMatrix<double> clean(total, f);
  Index row = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (int k = 0; k < lengths[s]; ++k) {
      clean.row(row++) = segments[s].second * prototypes.row(segments[s].first);
    }
  }
  RowMatrix<double> x = clean * style.transform.transpose();
  x.rowwise() += style.bias.transpose();
  if (style.noise_sigma > 0.0) {
    for (Index i = 0; i < x.size(); ++i) x.data()[i] += style.noise_sigma * noise(rng);
  }
  u.features = x.cast<float>();
  return u;
}

std::uint64_t utterance_seed(std::uint64_t global_seed, const std::string& domain,
                             const std::string& split, std::uint64_t index) {
  return splitmix64(global_seed ^ fnv1a64(domain + "/" + split) ^ splitmix64(index));
}

void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = {{"global_seed", s.global_seed},
       {"feature_dim", s.feature_dim},
       {"vocab_size", s.vocab_size},
       {"prototype_clusters", s.prototype_clusters},
       {"prototype_spread", s.prototype_spread},
       {"domains", s.domains},
       {"train_per_domain", s.train_per_domain},
       {"test_per_domain", s.test_per_domain}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
  CorpusSpec d;
  s.global_seed = j.value("global_seed", d.global_seed);
  s.feature_dim = j.value("feature_dim", d.feature_dim);
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.prototype_clusters = j.value("prototype_clusters", d.prototype_clusters);
  s.prototype_spread = j.value("prototype_spread", d.prototype_spread);
  s.domains = j.value("domains", d.domains);
  s.train_per_domain = j.value("train_per_domain", d.train_per_domain);
  s.test_per_domain = j.value("test_per_domain", d.test_per_domain);
}

std::vector<Utterance> Corpus::select(const std::string& split, const std::string& domain) const {
  auto it = splits.find(split);
  if (it == splits.end()) throw std::invalid_argument("corpus has no split '" + split + "'");
  std::vector<Utterance> out;
  for (const auto& u : it->second) {
    if (domain.empty() || u.domain == domain) out.push_back(u);
  }
  return out;
}

namespace {

Corpus corpus_skeleton(const CorpusSpec& spec) {
  Corpus c;
  c.spec = spec;
  c.prototypes = token_prototypes(spec.vocab_size, spec.feature_dim, spec.global_seed,
                                  spec.prototype_clusters, spec.prototype_spread);
  for (const auto& d : spec.domains) {
    c.styles.emplace(d, preset_style(d, spec.feature_dim, spec.vocab_size, spec.global_seed));
  }
  return c;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
  Corpus c = corpus_skeleton(spec);
  const std::pair<const char*, int> splits[] = {{"train", spec.train_per_domain},
                                                {"test", spec.test_per_domain}};
  for (const auto& [split, n] : splits) {
    auto& out = c.splits[split];
    for (const auto& d : spec.domains) {
      for (int i = 0; i < n; ++i) {
        out.push_back(gen_utterance(utterance_seed(spec.global_seed, d, split, i), c.styles.at(d),
                                    c.prototypes));
      }
    }
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json meta = {{"spec", corpus.spec}, {"styles", nlohmann::json::object()}};
  for (const auto& [name, style] : corpus.styles) meta["styles"][name] = style;
  for (const auto& [split, utts] : corpus.splits) meta["splits"][split] = utts.size();
  std::ofstream(fs::path(dir) / "corpus.json") << meta.dump(2) << "\n";
  for (const auto& [split, utts] : corpus.splits) {
    std::ofstream out(fs::path(dir) / (split + ".jsonl"));
    for (const auto& u : utts) {
      out << nlohmann::json{{"seed", u.seed}, {"domain", u.domain}, {"targets", u.targets}}.dump()
          << "\n";
    }
    if (!out) throw std::runtime_error("cannot write split '" + split + "' to " + dir);
  }
}

Corpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "corpus.json");
  if (!in) throw std::runtime_error("cannot open " + (fs::path(dir) / "corpus.json").string());
  const auto meta = nlohmann::json::parse(in);
  Corpus c = corpus_skeleton(meta.at("spec").get<CorpusSpec>());
  for (const auto& [split, count] : meta.at("splits").items()) {
    std::ifstream lines(fs::path(dir) / (split + ".jsonl"));
    if (!lines) throw std::runtime_error("missing split file for '" + split + "'");
    auto& out = c.splits[split];
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      const auto domain = rec.at("domain").get<std::string>();
      auto style = c.styles.find(domain);
      if (style == c.styles.end()) throw std::runtime_error("record of unknown domain " + domain);
      Utterance u = gen_utterance(rec.at("seed").get<std::uint64_t>(), style->second, c.prototypes);
      if (u.targets != rec.at("targets").get<std::vector<int>>()) {
        throw std::runtime_error("split '" + split + "': record does not regenerate its targets");
      }
      out.push_back(std::move(u));
    }
    if (out.size() != count.get<std::size_t>()) {
      throw std::runtime_error("split '" + split + "' has " + std::to_string(out.size()) +
                               " records, corpus.json says " + count.dump());
    }
  }
  return c;
}

std::map<std::string, DomainStats> corpus_stats(std::span<const Utterance> utterances,
                                                int vocab_size) {
  std::map<std::string, DomainStats> out;
  for (const auto& u : utterances) {
    auto& s = out[u.domain];
    if (s.token_histogram.empty()) s.token_histogram.assign(vocab_size, 0);
    ++s.count;
    s.mean_length += static_cast<double>(u.targets.size());
    s.mean_frames += static_cast<double>(u.frames());
    for (int t : u.targets) {
      if (t < 0 || t >= vocab_size) throw std::out_of_range("token outside vocabulary");
      ++s.token_histogram[t];
    }
  }
  for (auto& [d, s] : out) {
    s.mean_length /= static_cast<double>(s.count);
    s.mean_frames /= static_cast<double>(s.count);
  }
  return out;
}

nlohmann::json stats_json(const std::map<std::string, DomainStats>& stats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [d, s] : stats) {
    j[d] = {{"count", s.count},
            {"mean_length", s.mean_length},
            {"mean_frames", s.mean_frames},
            {"token_histogram", s.token_histogram}};
  }
  return j;
}

}  // namespace mda
