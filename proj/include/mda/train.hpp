#pragma once

#include "mda/routing.hpp"
#include "mda/synth.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mda {

struct TrainConfig {
  int steps = 3000;
  int batch_size = 16;
  double learning_rate = 2e-3;
  int warmup_steps = 200;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  // Probability that a batch trains through the causal decoder.
  double causal_prob = 0.5;

  // Linear warmup then inverse-sqrt decay; `step` counts from 1.
  double learning_rate_at(int step) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NothingTrainableError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class CorpusDomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LossPoint {
  int step = 0;
  double nll = 0.0;
  Stack decoder = Stack::Noncausal;
};

struct TrainLog {
  std::vector<LossPoint> curve;
  double seconds = 0.0;
};

// step, nll
using ProgressFn = std::function<void(int, double)>;

enum class BackboneMode { SingleDomain, MultidomainOnehot };

// Encoder input for one utterance: features, plus the domain one-hot when
// cfg.domain_onehot_width > 0 (index = position in `onehot_domains`).
Tensor<float> model_input(const Utterance& u, const ModelConfig& cfg,
                          std::span<const std::string> onehot_domains = {});

struct BackboneResult {
  ParameterSet<float> params;
  TrainLog log;
};

BackboneResult train_backbone(std::span<const Utterance> corpus, const ModelConfig& cfg,
                              const TrainConfig& train, BackboneMode mode,
                              std::span<const std::string> onehot_domains = {},
                              const ProgressFn& progress = {});

struct DomainTrainResult {
  DomainId domain;
  TrainLog log;
};

// Registers `plan` on `model` and trains only its parameters; the backbone
// and every other domain are left untouched.
DomainTrainResult train_domain(MdaModel<float>& model, const DomainPlan& plan,
                               std::span<const Utterance> corpus, const TrainConfig& train,
                               const ProgressFn& progress = {});

struct EvalReport {
  std::string routing_domain;
  Stack decoder = Stack::Noncausal;
  std::map<std::string, WerStats> per_domain;
  std::map<std::string, long long> utterances;

  WerStats total() const;
};

void to_json(nlohmann::json& j, const EvalReport& r);

EvalReport evaluate(const MdaModel<float>& model, const DomainId& routing,
                    std::span<const Utterance> test, Stack decoder = Stack::Noncausal,
                    std::span<const std::string> onehot_domains = {});

void write_loss_csv(const TrainLog& log, const std::string& path);

}  // namespace mda
