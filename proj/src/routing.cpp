#include "mda/routing.hpp"

#include <algorithm>
#include <set>

namespace mda {

void to_json(nlohmann::json& j, const AdapterSpec& a) {
  std::vector<std::string> sites;
  for (const auto& s : a.sites) sites.push_back(s.str());
  j = {{"mode", adapter_mode_name(a.mode)},
       {"sites", sites},
       {"bottleneck", a.bottleneck},
       {"activation", activation_name(a.activation)}};
}

void from_json(const nlohmann::json& j, AdapterSpec& a) {
  a.mode = parse_adapter_mode(j.at("mode").get<std::string>());
  a.sites.clear();
  for (const auto& s : j.at("sites")) a.sites.push_back(ModulePath::parse(s.get<std::string>()));
  a.bottleneck = j.at("bottleneck").get<int>();
  a.activation = parse_activation(j.value("activation", std::string("swish")));
}

void to_json(nlohmann::json& j, const DomainPlan& p) {
  std::vector<std::string> overrides;
  for (const auto& o : p.overrides) overrides.push_back(o.str());
  j = {{"domain", p.domain},
       {"overrides", overrides},
       {"adapters", p.adapters},
       {"init_seed", p.init_seed}};
}

void from_json(const nlohmann::json& j, DomainPlan& p) {
  p.domain = j.at("domain").get<std::string>();
  p.overrides.clear();
  for (const auto& o : j.value("overrides", nlohmann::json::array())) {
    p.overrides.push_back(ModulePath::parse(o.get<std::string>()));
  }
  p.adapters = j.value("adapters", std::vector<AdapterSpec>{});
  p.init_seed = j.value("init_seed", std::uint64_t{0});
}

void validate_plan(const DomainPlan& plan, const ModelConfig& cfg) {
  if (plan.domain.empty()) throw std::invalid_argument("domain plan needs a name");
  for (const auto& o : plan.overrides) validate_path(o, cfg);
  for (std::size_t i = 0; i < plan.overrides.size(); ++i) {
    for (std::size_t k = 0; k < plan.overrides.size(); ++k) {
      if (i != k && plan.overrides[i].contains(plan.overrides[k])) {
        throw SiteConflictError("overlapping overrides '" + plan.overrides[i].str() + "' and '" +
                                plan.overrides[k].str() + "'");
      }
    }
  }
  std::set<ModulePath> adapter_sites;
  for (const auto& a : plan.adapters) {
    if (a.bottleneck < 1) throw std::invalid_argument("adapter bottleneck must be >= 1");
    for (const auto& s : a.sites) {
      (void)adapter_layout(cfg, s, a.bottleneck);
      if (!adapter_sites.insert(s).second) {
        throw SiteConflictError("two adapters at site '" + s.str() + "'");
      }
      for (const auto& o : plan.overrides) {
        if (o.contains(s)) {
          throw SiteConflictError("adapter site '" + s.str() + "' lies inside override '" +
                                  o.str() + "'");
        }
      }
    }
  }
}

std::vector<ParamSpec> domain_layout(const ModelConfig& cfg, const DomainPlan& plan) {
  validate_plan(plan, cfg);
  std::vector<ParamSpec> out;
  for (const auto& o : plan.overrides) {
    for (auto& s : component_layout(cfg, o)) out.push_back(std::move(s));
  }
  for (const auto& a : plan.adapters) {
    for (const auto& site : a.sites) {
      for (auto& s : adapter_layout(cfg, site, a.bottleneck)) out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<ModulePath> sites_of(const ModelConfig& cfg, Stack stack, Site site) {
  std::vector<ModulePath> out;
  for (const auto& p : module_sites(cfg, stack)) {
    if (p.site == site) out.push_back(p);
  }
  return out;
}

DomainPlan adapter_plan(const std::string& domain, const std::vector<ModulePath>& sites,
                        int bottleneck, AdapterMode mode) {
  DomainPlan p;
  p.domain = domain;
  p.adapters.push_back({mode, sites, bottleneck, Activation::Swish});
  return p;
}

DomainPlan override_plan(const std::string& domain, const std::vector<ModulePath>& paths) {
  DomainPlan p;
  p.domain = domain;
  p.overrides = paths;
  return p;
}

DomainPlan final_recipe_plan(const ModelConfig& cfg, const std::string& domain, int bottleneck) {
  DomainPlan p = adapter_plan(domain, ffn_sites(cfg, Stack::Causal), bottleneck);
  p.overrides = sites_of(cfg, Stack::Noncausal, Site::FfnEnd);
  return p;
}

std::string_view resolution_name(Resolution r) {
  switch (r) {
    case Resolution::Backbone: return "backbone";
    case Resolution::DomainOverride: return "domain-override";
    case Resolution::Mixed: return "mixed";
  }
  return "?";
}

template <typename S>
const Tensor<S>& DomainView<S>::param(const std::string& key) const {
  if (domain_ && domain_->contains(key)) return domain_->at(key);
  return backbone_->at(key);
}

template <typename S>
const AdapterParams<S>* DomainView<S>::adapter(const std::string& site) const {
  auto it = adapters_.find(site);
  return it == adapters_.end() ? nullptr : &it->second;
}

template <typename S>
MdaModel<S>::MdaModel(ModelConfig cfg, ParameterSet<S> backbone, std::string backbone_domain)
    : cfg_(std::move(cfg)), backbone_(std::move(backbone)),
      backbone_id_{0, std::move(backbone_domain)} {
  cfg_.validate();
  for (const auto& spec : backbone_layout(cfg_)) {
    const auto& t = backbone_.at(spec.key);
    if (t.shape() != spec.shape) {
      throw ShapeError("backbone '" + spec.key + "' has shape " + shape_string(t.shape()) +
                       ", expected " + shape_string(spec.shape));
    }
  }
}

template <typename S>
DomainId MdaModel<S>::register_domain(const DomainPlan& plan) {
  return register_domain(plan, initialize<S>(domain_layout(cfg_, plan), plan.init_seed));
}

template <typename S>
DomainId MdaModel<S>::register_domain(const DomainPlan& plan, ParameterSet<S> params) {
  if (plan.domain == backbone_id_.name) {
    throw DuplicateDomainError("domain '" + plan.domain + "' is the backbone domain");
  }
  for (const auto& e : entries_) {
    if (e->id.name == plan.domain) {
      throw DuplicateDomainError("domain '" + plan.domain + "' already registered");
    }
  }
  const auto layout = domain_layout(cfg_, plan);
  if (layout.size() != params.size()) {
    throw std::invalid_argument("domain '" + plan.domain + "': expected " +
                                std::to_string(layout.size()) + " parameters, got " +
                                std::to_string(params.size()));
  }
  for (const auto& spec : layout) {
    const auto& t = params.at(spec.key);
    if (t.shape() != spec.shape) {
      throw ShapeError("domain '" + plan.domain + "' parameter '" + spec.key + "' has shape " +
                       shape_string(t.shape()) + ", expected " + shape_string(spec.shape));
    }
  }
  auto e = std::make_unique<Entry>();
  e->id = {next_id_++, plan.domain};
  e->plan = plan;
  e->params = std::move(params);
  entries_.push_back(std::move(e));
  return entries_.back()->id;
}

template <typename S>
void MdaModel<S>::remove_domain(const std::string& name) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const auto& e) { return e->id.name == name; });
  if (it == entries_.end()) throw UnknownDomainError("unknown domain '" + name + "'");
  entries_.erase(it);
}

template <typename S>
DomainId MdaModel<S>::domain(const std::string& name) const {
  if (name == backbone_id_.name) return backbone_id_;
  for (const auto& e : entries_) {
    if (e->id.name == name) return e->id;
  }
  throw UnknownDomainError("unknown domain '" + name + "'");
}

template <typename S>
DomainId MdaModel<S>::domain(int id) const {
  if (id == 0) return backbone_id_;
  for (const auto& e : entries_) {
    if (e->id.id == id) return e->id;
  }
  throw UnknownDomainError("unknown domain id " + std::to_string(id));
}

template <typename S>
std::vector<DomainId> MdaModel<S>::domains() const {
  std::vector<DomainId> out{backbone_id_};
  for (const auto& e : entries_) out.push_back(e->id);
  return out;
}

template <typename S>
const typename MdaModel<S>::Entry& MdaModel<S>::entry(const DomainId& d) const {
  for (const auto& e : entries_) {
    if (e->id == d) return *e;
  }
  throw UnknownDomainError("unregistered domain '" + d.name + "'");
}

template <typename S>
typename MdaModel<S>::Entry& MdaModel<S>::entry(const DomainId& d) {
  for (auto& e : entries_) {
    if (e->id == d) return *e;
  }
  throw UnknownDomainError("unregistered domain '" + d.name + "'");
}

template <typename S>
const DomainPlan& MdaModel<S>::plan(const DomainId& d) const {
  static const DomainPlan kBackbonePlan{};
  if (d == backbone_id_) return kBackbonePlan;
  return entry(d).plan;
}

template <typename S>
const ParameterSet<S>& MdaModel<S>::domain_params(const DomainId& d) const {
  return entry(d).params;
}

template <typename S>
ParameterSet<S>& MdaModel<S>::domain_params(const DomainId& d) {
  return entry(d).params;
}

template <typename S>
Resolution MdaModel<S>::resolve(const ModulePath& path, const DomainId& d) const {
  validate_path(path, cfg_);
  if (d == backbone_id_) return Resolution::Backbone;
  bool inner = false;
  for (const auto& o : entry(d).plan.overrides) {
    if (o.contains(path)) return Resolution::DomainOverride;
    if (path.contains(o)) inner = true;
  }
  return inner ? Resolution::Mixed : Resolution::Backbone;
}

template <typename S>
DomainView<S> MdaModel<S>::view(const DomainId& d) const {
  DomainView<S> v;
  v.backbone_ = &backbone_;
  if (d == backbone_id_) return v;
  const Entry& e = entry(d);
  v.domain_ = &e.params;
  for (const auto& a : e.plan.adapters) {
    for (const auto& site : a.sites) {
      const std::string p = adapter_prefix(site);
      v.adapters_[site.str()] = AdapterParams<S>{a.mode, a.activation, e.params.at(p + ".w_down"),
                                                 e.params.at(p + ".b_down"),
                                                 e.params.at(p + ".w_up"),
                                                 e.params.at(p + ".b_up")};
    }
  }
  return v;
}

template <typename S>
EncoderOutput<S> MdaModel<S>::forward_with_domain(const Tensor<S>& features, const DomainId& d,
                                                  EncodeOptions options) const {
  return encode(features, cfg_, view(d), options);
}

template <typename S>
std::vector<std::string> MdaModel<S>::trainable_keys(const DomainId& d) const {
  std::vector<std::string> out;
  if (d == backbone_id_) return out;
  for (const auto& [k, t] : entry(d).params) out.push_back(k);
  return out;
}

template <typename S>
std::vector<Tensor<S>> MdaModel<S>::trainable_mask(const DomainId& d) const {
  std::vector<Tensor<S>> out;
  if (d == backbone_id_) return out;
  for (const auto& [k, t] : entry(d).params) out.push_back(t);
  return out;
}

template class DomainView<float>;
template class DomainView<double>;
template class MdaModel<float>;
template class MdaModel<double>;

}  // namespace mda
