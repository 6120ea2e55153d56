#pragma once

#include "mda/config.hpp"
#include "mda/module_path.hpp"
#include "mda/tensor.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mda {

enum class Init { Xavier, Zeros, Ones };

struct ParamSpec {
  std::string key;
  Shape shape;
  Init init = Init::Xavier;
  // Xavier fans; zero means "take them from the rank-2 shape".
  Index fan_in = 0;
  Index fan_out = 0;
};

// Every backbone parameter in canonical (forward) order.
std::vector<ParamSpec> backbone_layout(const ModelConfig& cfg);
// The subset of the backbone layout owned by `path`.
std::vector<ParamSpec> component_layout(const ModelConfig& cfg,
                                        const ModulePath& path);

enum class AdapterMode { Sequential, Parallel };
enum class Activation { Swish, Identity };

std::string_view adapter_mode_name(AdapterMode m);
AdapterMode parse_adapter_mode(std::string_view s);
std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view s);

// W_down [d x b], b_down [b], W_up [b x d] (zero), b_up [d] (zero) at `site`.
std::vector<ParamSpec> adapter_layout(const ModelConfig& cfg,
                                      const ModulePath& site, int bottleneck);
std::string adapter_prefix(const ModulePath& site);

class MissingParameterError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

template <typename Scalar>
struct AdapterParams {
  AdapterMode mode = AdapterMode::Parallel;
  Activation activation = Activation::Swish;
  Tensor<Scalar> w_down, b_down, w_up, b_up;
};

// Where module code fetches its weights. Routing plugs domain overrides and
// adapters in behind this interface; missing keys are unresolved paths.
template <typename Scalar>
class ParamSource {
 public:
  virtual ~ParamSource() = default;
  virtual const Tensor<Scalar>& param(const std::string& key) const = 0;
  virtual const AdapterParams<Scalar>* adapter(const std::string& site) const {
    (void)site;
    return nullptr;
  }
};

template <typename Scalar>
class ParameterSet : public ParamSource<Scalar> {
 public:
  using Map = std::map<std::string, Tensor<Scalar>>;

  void insert(const std::string& key, Tensor<Scalar> t) {
    if (!params_.emplace(key, std::move(t)).second) {
      throw std::invalid_argument("duplicate parameter key '" + key + "'");
    }
  }
  bool contains(const std::string& key) const { return params_.count(key) != 0; }
  const Tensor<Scalar>& at(const std::string& key) const {
    auto it = params_.find(key);
    if (it == params_.end()) throw MissingParameterError("unresolved parameter '" + key + "'");
    return it->second;
  }
  Tensor<Scalar>& at(const std::string& key) {
    auto it = params_.find(key);
    if (it == params_.end()) throw MissingParameterError("unresolved parameter '" + key + "'");
    return it->second;
  }
  const Tensor<Scalar>& param(const std::string& key) const override { return at(key); }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  Index total_size() const {
    Index n = 0;
    for (const auto& [k, t] : params_) n += t.size();
    return n;
  }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  void set_requires_grad(bool flag) {
    for (auto& [k, t] : params_) t.set_requires_grad(flag);
  }
  void clear_grads() {
    for (auto& [k, t] : params_) t.clear_grad();
  }

  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& [k, t] : params_) out.insert(k, t.clone());
    return out;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& [k, t] : params_) {
      out.insert(k, Tensor<Other>(t.shape(), t.values().template cast<Other>(),
                                  t.requires_grad()));
    }
    return out;
  }

 private:
  Map params_;
};

// Deterministic per-key initialization: the values of a key depend only on
// (seed, key, spec), never on allocation order.
template <typename Scalar>
Tensor<Scalar> init_param(const ParamSpec& spec, std::uint64_t seed);

template <typename Scalar>
ParameterSet<Scalar> initialize(const std::vector<ParamSpec>& layout,
                                std::uint64_t seed) {
  ParameterSet<Scalar> out;
  for (const auto& spec : layout) out.insert(spec.key, init_param<Scalar>(spec, seed));
  return out;
}

}  // namespace mda
