#include "mda/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_map>

namespace mda {

double TrainConfig::learning_rate_at(int step) const {
  const double s = std::max(step, 1);
  if (warmup_steps <= 0) return learning_rate;
  const double w = warmup_steps;
  return learning_rate * std::min(s / w, std::sqrt(w / s));
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must be in [0, 1)");
  }
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
  if (!(causal_prob >= 0.0 && causal_prob <= 1.0)) {
    throw std::invalid_argument("causal_prob must be in [0, 1]");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},          {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate}, {"warmup_steps", c.warmup_steps},
       {"beta1", c.beta1},          {"beta2", c.beta2},
       {"epsilon", c.epsilon},      {"clip_norm", c.clip_norm},
       {"seed", c.seed},            {"causal_prob", c.causal_prob}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.seed = j.value("seed", d.seed);
  c.causal_prob = j.value("causal_prob", d.causal_prob);
}

Tensor<float> model_input(const Utterance& u, const ModelConfig& cfg,
                          std::span<const std::string> onehot_domains) {
  const Index f = cfg.encoder.feature_dim;
  if (u.features.cols() != f) {
    throw ShapeError("utterance has " + std::to_string(u.features.cols()) +
                     " features, model expects " + std::to_string(f));
  }
  const Index w = cfg.domain_onehot_width;
  RowMatrix<float> x = RowMatrix<float>::Zero(u.frames(), f + w);
  x.leftCols(f) = u.features;
  if (w > 0) {
    auto it = std::find(onehot_domains.begin(), onehot_domains.end(), u.domain);
    if (it == onehot_domains.end()) {
      throw CorpusDomainError("domain '" + u.domain + "' has no one-hot index");
    }
    const Index k = it - onehot_domains.begin();
    if (k >= w) throw CorpusDomainError("one-hot width too small for domain '" + u.domain + "'");
    x.col(f + k).setOnes();
  }
  return Tensor<float>::from_matrix(x);
}

namespace {

struct AdamSlot {
  Tensor<float> param;
  Array<float> m, v;
};

// Adam over `trainable` with batches drawn from `corpus`; `src` must resolve
// to the same storage as `trainable`.
TrainLog fit(const ParamSource<float>& src, const std::vector<Tensor<float>>& trainable,
             std::span<const Utterance> corpus, const ModelConfig& cfg, const TrainConfig& train,
             std::span<const std::string> onehot_domains, const ProgressFn& progress) {
  train.validate();
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<AdamSlot> slots;
  std::unordered_map<const void*, std::size_t> index;
  for (const auto& t : trainable) {
    index.emplace(t.storage_id(), slots.size());
    slots.push_back({t, Array<float>::Zero(t.size()), Array<float>::Zero(t.size())});
  }
  std::vector<Tensor<float>> inputs;
  inputs.reserve(corpus.size());
  for (const auto& u : corpus) inputs.push_back(model_input(u, cfg, onehot_domains));

  std::mt19937_64 rng(train.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  std::bernoulli_distribution causal(train.causal_prob);
  TrainLog log;
  std::vector<Array<float>> grads(slots.size());
  for (int step = 1; step <= train.steps; ++step) {
    const Stack stack = causal(rng) ? Stack::Causal : Stack::Noncausal;
    const std::string prefix = decoder_prefix(stack);
    EncodeOptions opts;
    opts.causal = stack == Stack::Causal;
    opts.noncausal = stack == Stack::Noncausal;

    Tape<float> tape;
    double nll_sum = 0.0;
    Tensor<float> total;
    auto diverged = [&](const std::string& why) {
      return TrainingDivergedError("training diverged at step " + std::to_string(step) + " (" +
                                   std::string(stack_name(stack)) + " decoder): " + why);
    };
    try {
      TapeScope<float> scope(tape);
      for (int b = 0; b < train.batch_size; ++b) {
        const std::size_t i = pick(rng);
        const auto enc = encode(inputs[i], cfg, src, opts);
        const auto loss = transducer_loss(stack == Stack::Causal ? enc.causal : enc.noncausal,
                                          corpus[i].targets, src, prefix, cfg.decoder);
        nll_sum += loss.nll.values()[0];
        total = total.defined() ? add(total, loss.nll) : loss.nll;
      }
      total = scale(total, 1.0f / static_cast<float>(train.batch_size));
    } catch (const NonFiniteError& e) {
      throw diverged(e.what());
    }
    const double nll = nll_sum / train.batch_size;
    if (!std::isfinite(nll)) throw diverged("nll is not finite");
    for (auto& g : grads) g.resize(0);
    if (total.requires_grad()) {
      try {
        for (auto& lg : tape.gradients(total)) {
          auto it = index.find(lg.leaf.storage_id());
          if (it != index.end()) grads[it->second] = std::move(lg.grad);
        }
      } catch (const NonFiniteError& e) {
        throw diverged(e.what());
      }
    }
    double sq = 0.0;
    for (const auto& g : grads) {
      if (g.size()) sq += g.cast<double>().square().sum();
    }
    const double norm = std::sqrt(sq);
    const float clip = norm > train.clip_norm ? static_cast<float>(train.clip_norm / norm) : 1.0f;
    const double lr = train.learning_rate_at(step);
    const double bc1 = 1.0 - std::pow(train.beta1, step);
    const double bc2 = 1.0 - std::pow(train.beta2, step);
    const float b1 = static_cast<float>(train.beta1), b2 = static_cast<float>(train.beta2);
    const float step_size = static_cast<float>(lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(train.epsilon);
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (grads[k].size() == 0) continue;
      auto& s = slots[k];
      const Array<float> g = grads[k] * clip;
      s.m = b1 * s.m + (1.0f - b1) * g;
      s.v = b2 * s.v + (1.0f - b2) * g.square();
      s.param.mutable_values() -= step_size * s.m / ((s.v * inv_bc2).sqrt() + eps);
    }
    log.curve.push_back({step, nll, stack});
    if (progress) progress(step, nll);
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

// Whether `plan` owns anything on the path feeding `decoder`.
bool reaches(const DomainPlan& plan, Stack decoder) {
  auto hit = [&](const ModulePath& p) {
    if (p.stack == Stack::Causal) return true;
    if (decoder == Stack::Noncausal) {
      return p.stack == Stack::Noncausal || p.stack == Stack::DecoderNoncausal;
    }
    return p.stack == Stack::DecoderCausal;
  };
  for (const auto& o : plan.overrides) {
    if (hit(o)) return true;
  }
  for (const auto& a : plan.adapters) {
    for (const auto& s : a.sites) {
      if (hit(s)) return true;
    }
  }
  return false;
}

}  // namespace

BackboneResult train_backbone(std::span<const Utterance> corpus, const ModelConfig& cfg,
                              const TrainConfig& train, BackboneMode mode,
                              std::span<const std::string> onehot_domains,
                              const ProgressFn& progress) {
  cfg.validate();
  if (mode == BackboneMode::SingleDomain && cfg.domain_onehot_width != 0) {
    throw std::invalid_argument("single-domain mode needs domain_onehot_width = 0");
  }
  if (mode == BackboneMode::MultidomainOnehot) {
    if (cfg.domain_onehot_width < static_cast<int>(onehot_domains.size()) ||
        onehot_domains.empty()) {
      throw std::invalid_argument("multidomain mode needs one one-hot column per domain");
    }
  }
  BackboneResult r;
  r.params = initialize<float>(backbone_layout(cfg), train.seed);
  r.params.set_requires_grad(true);
  std::vector<Tensor<float>> trainable;
  for (const auto& [k, t] : r.params) trainable.push_back(t);
  r.log = fit(r.params, trainable, corpus, cfg, train, onehot_domains, progress);
  r.params.set_requires_grad(false);
  return r;
}

DomainTrainResult train_domain(MdaModel<float>& model, const DomainPlan& plan,
                               std::span<const Utterance> corpus, const TrainConfig& train,
                               const ProgressFn& progress) {
  if (plan.empty()) throw NothingTrainableError("domain '" + plan.domain + "': nothing trainable");
  for (const auto& u : corpus) {
    if (u.domain != plan.domain) {
      throw CorpusDomainError("corpus utterance of domain '" + u.domain +
                              "' given to plan for '" + plan.domain + "'");
    }
  }
  train.validate();
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  // Batches routed through a decoder the plan cannot change would be no-ops.
  TrainConfig effective = train;
  if (!reaches(plan, Stack::Causal)) effective.causal_prob = 0.0;
  if (!reaches(plan, Stack::Noncausal)) effective.causal_prob = 1.0;
  DomainTrainResult r;
  r.domain = model.register_domain(plan);
  model.backbone().set_requires_grad(false);
  auto& params = model.domain_params(r.domain);
  params.set_requires_grad(true);
  const auto view = model.view(r.domain);
  r.log = fit(view, model.trainable_mask(r.domain), corpus, model.config(), effective, {}, progress);
  params.set_requires_grad(false);
  return r;
}

WerStats EvalReport::total() const {
  WerStats t;
  for (const auto& [d, s] : per_domain) t += s;
  return t;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  auto stats = [](const WerStats& s) {
    return nlohmann::json{{"rate", s.rate()},
                          {"substitutions", s.substitutions},
                          {"insertions", s.insertions},
                          {"deletions", s.deletions},
                          {"reference_length", s.reference_length}};
  };
  j = {{"routing_domain", r.routing_domain},
       {"decoder", stack_name(r.decoder)},
       {"total", stats(r.total())},
       {"per_domain", nlohmann::json::object()}};
  for (const auto& [d, s] : r.per_domain) {
    auto e = stats(s);
    e["utterances"] = r.utterances.at(d);
    j["per_domain"][d] = e;
  }
}

EvalReport evaluate(const MdaModel<float>& model, const DomainId& routing,
                    std::span<const Utterance> test, Stack decoder,
                    std::span<const std::string> onehot_domains) {
  if (decoder != Stack::Causal && decoder != Stack::Noncausal) {
    throw std::invalid_argument("decoder must be causal or noncausal");
  }
  const auto view = model.view(routing);
  const auto& cfg = model.config();
  EncodeOptions opts;
  opts.causal = decoder == Stack::Causal;
  opts.noncausal = decoder == Stack::Noncausal;
  const std::string prefix = decoder_prefix(decoder);
  EvalReport r;
  r.routing_domain = routing.name;
  r.decoder = decoder;
  for (const auto& u : test) {
    const auto enc = encode(model_input(u, cfg, onehot_domains), cfg, view, opts);
    const auto hyp =
        greedy_decode(decoder == Stack::Causal ? enc.causal : enc.noncausal, view, prefix,
                      cfg.decoder);
    r.per_domain[u.domain] += wer(u.targets, hyp);
    ++r.utterances[u.domain];
  }
  return r;
}

void write_loss_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,nll,decoder\n";
  out.precision(9);
  for (const auto& p : log.curve) out << p.step << "," << p.nll << "," << stack_name(p.decoder) << "\n";
}

}  // namespace mda
