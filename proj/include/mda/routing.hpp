#pragma once

#include "mda/conformer.hpp"
#include "mda/count.hpp"
#include "mda/params.hpp"
#include "mda/transducer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace mda {

struct DomainId {
  int id = 0;
  std::string name;
  bool operator==(const DomainId&) const = default;
};

struct AdapterSpec {
  AdapterMode mode = AdapterMode::Parallel;
  std::vector<ModulePath> sites;
  int bottleneck = 8;
  Activation activation = Activation::Swish;
};

struct DomainPlan {
  std::string domain;
  std::vector<ModulePath> overrides;
  std::vector<AdapterSpec> adapters;
  std::uint64_t init_seed = 0;

  bool empty() const { return overrides.empty() && adapters.empty(); }
};

void to_json(nlohmann::json& j, const AdapterSpec& a);
void from_json(const nlohmann::json& j, AdapterSpec& a);
void to_json(nlohmann::json& j, const DomainPlan& p);
void from_json(const nlohmann::json& j, DomainPlan& p);

class SiteConflictError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class DuplicateDomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class UnknownDomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Throws InvalidPathError for paths outside `cfg`, SiteConflictError when
// overrides overlap each other or an adapter site.
void validate_plan(const DomainPlan& plan, const ModelConfig& cfg);

// Every parameter a plan owns: override components (same keys as the
// backbone entries they replace) followed by adapter parameters.
std::vector<ParamSpec> domain_layout(const ModelConfig& cfg, const DomainPlan& plan);

// Common plans.
std::vector<ModulePath> sites_of(const ModelConfig& cfg, Stack stack, Site site);
DomainPlan adapter_plan(const std::string& domain, const std::vector<ModulePath>& sites,
                        int bottleneck, AdapterMode mode = AdapterMode::Parallel);
DomainPlan override_plan(const std::string& domain, const std::vector<ModulePath>& paths);
// Parallel adapters on every causal FFN site plus per-domain ffn_end modules
// in the non-causal stack.
DomainPlan final_recipe_plan(const ModelConfig& cfg, const std::string& domain, int bottleneck);

// Where a path's parameters come from for one domain. Mixed: the path is not
// overridden as a whole but contains overridden sub-components.
enum class Resolution { Backbone, DomainOverride, Mixed };
std::string_view resolution_name(Resolution r);

template <typename Scalar>
class MdaModel;

// Parameter source of one domain: domain-owned keys first, backbone otherwise.
template <typename Scalar>
class DomainView : public ParamSource<Scalar> {
 public:
  const Tensor<Scalar>& param(const std::string& key) const override;
  const AdapterParams<Scalar>* adapter(const std::string& site) const override;

 private:
  friend class MdaModel<Scalar>;
  const ParameterSet<Scalar>* backbone_ = nullptr;
  const ParameterSet<Scalar>* domain_ = nullptr;
  std::map<std::string, AdapterParams<Scalar>> adapters_;
};

// A frozen backbone plus per-domain parameter sets. Domain 0 is the backbone's
// own domain and owns nothing.
template <typename Scalar>
class MdaModel {
 public:
  MdaModel(ModelConfig cfg, ParameterSet<Scalar> backbone,
           std::string backbone_domain = "backbone");

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet<Scalar>& backbone() const { return backbone_; }
  ParameterSet<Scalar>& backbone() { return backbone_; }

  // Allocates fresh per-domain parameters per the plan (overrides Xavier,
  // adapter W_up zero).
  DomainId register_domain(const DomainPlan& plan);
  // Registers externally supplied parameters; keys and shapes must equal
  // domain_layout(plan).
  DomainId register_domain(const DomainPlan& plan, ParameterSet<Scalar> params);
  void remove_domain(const std::string& name);

  DomainId domain(const std::string& name) const;
  DomainId domain(int id) const;
  std::vector<DomainId> domains() const;
  const DomainPlan& plan(const DomainId& d) const;
  const ParameterSet<Scalar>& domain_params(const DomainId& d) const;
  ParameterSet<Scalar>& domain_params(const DomainId& d);

  Resolution resolve(const ModulePath& path, const DomainId& d) const;
  DomainView<Scalar> view(const DomainId& d) const;

  EncoderOutput<Scalar> forward_with_domain(const Tensor<Scalar>& features, const DomainId& d,
                                            EncodeOptions options = {}) const;

  // Handles the optimizer may update for this domain (sorted by key).
  std::vector<std::string> trainable_keys(const DomainId& d) const;
  std::vector<Tensor<Scalar>> trainable_mask(const DomainId& d) const;

 private:
  struct Entry {
    DomainId id;
    DomainPlan plan;
    ParameterSet<Scalar> params;
  };
  const Entry& entry(const DomainId& d) const;
  Entry& entry(const DomainId& d);

  ModelConfig cfg_;
  ParameterSet<Scalar> backbone_;
  DomainId backbone_id_;
  std::vector<std::unique_ptr<Entry>> entries_;
  int next_id_ = 1;
};

extern template class DomainView<float>;
extern template class DomainView<double>;
extern template class MdaModel<float>;
extern template class MdaModel<double>;

}  // namespace mda
