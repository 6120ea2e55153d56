#include "mda/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace mda {

static_assert(std::endian::native == std::endian::little, ".mdab I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'D', 'A', 'B'};

nlohmann::json manifest_json(const BundleManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) entries.push_back({{"key", e.key}, {"shape", e.shape}});
  return {{"domain", m.domain},
          {"model_fingerprint", m.model_fingerprint},
          {"fingerprint", m.fingerprint},
          {"plan", m.plan},
          {"creation_step", m.creation_step},
          {"format_version", m.format_version},
          {"model_config", m.model_config},
          {"entries", entries}};
}

BundleManifest manifest_from_json(const nlohmann::json& j) {
  BundleManifest m;
  m.domain = j.at("domain").get<std::string>();
  m.model_fingerprint = j.at("model_fingerprint").get<std::string>();
  m.fingerprint = j.at("fingerprint").get<std::string>();
  m.plan = j.at("plan");
  m.creation_step = j.at("creation_step").get<long long>();
  m.format_version = j.at("format_version").get<std::uint32_t>();
  m.model_config = j.at("model_config");
  for (const auto& e : j.at("entries")) {
    m.entries.push_back({e.at("key").get<std::string>(), e.at("shape").get<Shape>()});
  }
  return m;
}

std::string plan_fingerprint(const nlohmann::json& model_config, const nlohmann::json& plan) {
  return fingerprint(nlohmann::json{{"model_config", model_config}, {"plan", plan}});
}

ParameterBundle make_bundle(const ModelConfig& cfg, const ParameterSet<float>& params,
                            const std::string& domain, nlohmann::json plan, long long step) {
  ParameterBundle b;
  b.manifest.domain = domain;
  b.manifest.model_config = cfg;
  b.manifest.model_fingerprint = fingerprint(b.manifest.model_config);
  b.manifest.plan = std::move(plan);
  b.manifest.fingerprint = plan_fingerprint(b.manifest.model_config, b.manifest.plan);
  b.manifest.creation_step = step;
  for (const auto& [k, t] : params) {
    b.manifest.entries.push_back({k, t.shape()});
    b.params.insert(k, Tensor<float>(t.shape(), t.values()));
  }
  return b;
}

void check_layout(const ParameterBundle& b, const std::vector<ParamSpec>& layout) {
  std::map<std::string, Shape> expected;
  for (const auto& s : layout) expected[s.key] = s.shape;
  std::set<std::string> present;
  for (const auto& e : b.manifest.entries) {
    present.insert(e.key);
    auto it = expected.find(e.key);
    if (it == expected.end()) {
      throw BundleError(BundleErrorCode::KeyMismatch,
                        "unexpected key '" + e.key + "' in bundle '" + b.manifest.domain + "'");
    }
    if (it->second != e.shape) {
      throw BundleError(BundleErrorCode::ShapeMismatch,
                        "'" + e.key + "' has shape " + shape_string(e.shape) + ", expected " +
                            shape_string(it->second));
    }
  }
  for (const auto& [k, s] : expected) {
    if (!present.count(k)) {
      throw BundleError(BundleErrorCode::KeyMismatch,
                        "missing key '" + k + "' in bundle '" + b.manifest.domain + "'");
    }
  }
}

}  // namespace

std::string_view bundle_error_name(BundleErrorCode c) {
  switch (c) {
    case BundleErrorCode::Io: return "io";
    case BundleErrorCode::CorruptHeader: return "corrupt_header";
    case BundleErrorCode::UnsupportedVersion: return "unsupported_version";
    case BundleErrorCode::FingerprintMismatch: return "fingerprint_mismatch";
    case BundleErrorCode::ShapeMismatch: return "shape_mismatch";
    case BundleErrorCode::KeyMismatch: return "key_mismatch";
    case BundleErrorCode::DuplicateDomain: return "duplicate_domain";
  }
  return "?";
}

std::string model_fingerprint(const ModelConfig& cfg) { return fingerprint(nlohmann::json(cfg)); }

ParameterBundle make_backbone_bundle(const ModelConfig& cfg, const ParameterSet<float>& params,
                                     const std::string& domain, long long step) {
  return make_bundle(cfg, params, domain, nullptr, step);
}

ParameterBundle make_domain_bundle(const MdaModel<float>& model, const DomainId& d,
                                   long long step) {
  if (d.id == 0) {
    return make_backbone_bundle(model.config(), model.backbone(), d.name, step);
  }
  return make_bundle(model.config(), model.domain_params(d), d.name, model.plan(d), step);
}

void save_bundle(const ParameterBundle& bundle, const std::string& path) {
  const std::string header = manifest_json(bundle.manifest).dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw BundleError(BundleErrorCode::Io, "cannot open '" + path + "' for writing");
  const std::uint32_t version = bundle.manifest.format_version;
  const std::uint64_t len = header.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& e : bundle.manifest.entries) {
    const auto& v = bundle.params.at(e.key).values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!out) throw BundleError(BundleErrorCode::Io, "write to '" + path + "' failed");
}

ParameterBundle read_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(BundleErrorCode::Io, "cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  constexpr std::uint64_t kPrefix = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file_size < kPrefix) {
    throw BundleError(BundleErrorCode::CorruptHeader, "'" + path + "' is too short");
  }
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw BundleError(BundleErrorCode::CorruptHeader, "'" + path + "' is not an .mdab file");
  }
  if (version != kBundleFormatVersion) {
    throw BundleError(BundleErrorCode::UnsupportedVersion,
                      "format version " + std::to_string(version) + " in '" + path + "'");
  }
  if (len > file_size - kPrefix) {
    throw BundleError(BundleErrorCode::CorruptHeader, "header of '" + path + "' is truncated");
  }
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  ParameterBundle b;
  try {
    b.manifest = manifest_from_json(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(BundleErrorCode::CorruptHeader,
                      "bad manifest in '" + path + "': " + e.what());
  }
  if (b.manifest.format_version != version) {
    throw BundleError(BundleErrorCode::CorruptHeader, "manifest version disagrees with prefix");
  }
  if (plan_fingerprint(b.manifest.model_config, b.manifest.plan) != b.manifest.fingerprint ||
      fingerprint(b.manifest.model_config) != b.manifest.model_fingerprint) {
    throw BundleError(BundleErrorCode::CorruptHeader,
                      "manifest fingerprints do not match its contents in '" + path + "'");
  }
  std::uint64_t payload = 0;
  for (const auto& e : b.manifest.entries) {
    for (Index d : e.shape) {
      if (d < 0) throw BundleError(BundleErrorCode::CorruptHeader, "negative extent");
    }
    payload += static_cast<std::uint64_t>(numel(e.shape)) * sizeof(float);
  }
  if (kPrefix + len + payload != file_size) {
    throw BundleError(BundleErrorCode::CorruptHeader,
                      "'" + path + "' has " + std::to_string(file_size) + " bytes, manifest implies " +
                          std::to_string(kPrefix + len + payload));
  }
  for (const auto& e : b.manifest.entries) {
    Array<float> v(numel(e.shape));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!in) throw BundleError(BundleErrorCode::Io, "read from '" + path + "' failed");
    try {
      b.params.insert(e.key, Tensor<float>(e.shape, std::move(v)));
    } catch (const std::invalid_argument&) {
      throw BundleError(BundleErrorCode::CorruptHeader, "duplicate key '" + e.key + "'");
    }
  }
  return b;
}

ParameterBundle load_bundle(const std::string& path, const ModelConfig& expected) {
  ParameterBundle b = read_bundle(path);
  if (b.manifest.model_fingerprint != model_fingerprint(expected)) {
    throw BundleError(BundleErrorCode::FingerprintMismatch,
                      "'" + path + "' was saved for config " + b.manifest.model_fingerprint +
                          ", expected " + model_fingerprint(expected));
  }
  if (b.is_backbone()) {
    check_layout(b, backbone_layout(expected));
  } else {
    check_layout(b, domain_layout(expected, b.manifest.plan.get<DomainPlan>()));
  }
  return b;
}

MdaModel<float> compose(const ModelConfig& cfg, const ParameterBundle& backbone,
                        std::vector<ParameterBundle> domains) {
  auto check_fp = [&](const ParameterBundle& b) {
    if (b.manifest.model_fingerprint != model_fingerprint(cfg)) {
      throw BundleError(BundleErrorCode::FingerprintMismatch,
                        "bundle '" + b.manifest.domain + "' belongs to another config");
    }
  };
  check_fp(backbone);
  if (!backbone.is_backbone()) {
    throw BundleError(BundleErrorCode::KeyMismatch,
                      "'" + backbone.manifest.domain + "' is not a backbone bundle");
  }
  check_layout(backbone, backbone_layout(cfg));
  std::sort(domains.begin(), domains.end(), [](const auto& a, const auto& b) {
    return a.manifest.domain < b.manifest.domain;
  });
  std::set<std::string> names{backbone.manifest.domain};
  for (const auto& d : domains) {
    check_fp(d);
    if (d.is_backbone()) {
      throw BundleError(BundleErrorCode::DuplicateDomain,
                        "second backbone bundle '" + d.manifest.domain + "'");
    }
    if (!names.insert(d.manifest.domain).second) {
      throw BundleError(BundleErrorCode::DuplicateDomain,
                        "domain '" + d.manifest.domain + "' supplied twice");
    }
  }
  MdaModel<float> model(cfg, backbone.params.clone(), backbone.manifest.domain);
  for (const auto& d : domains) {
    const DomainPlan plan = d.manifest.plan.get<DomainPlan>();
    check_layout(d, domain_layout(cfg, plan));
    model.register_domain(plan, d.params.clone());
  }
  return model;
}

nlohmann::json diff(const ParameterBundle& a, const ParameterBundle& b) {
  nlohmann::json added = nlohmann::json::array(), removed = nlohmann::json::array(),
                 changed = nlohmann::json::array();
  for (const auto& [k, t] : a.params) {
    if (!b.params.contains(k)) {
      removed.push_back(k);
      continue;
    }
    const auto& u = b.params.at(k);
    if (t.shape() != u.shape()) {
      changed.push_back({{"key", k}, {"shape_changed", true}, {"max_abs_delta", nullptr}});
      continue;
    }
    if (std::memcmp(t.values().data(), u.values().data(), sizeof(float) * t.size()) != 0) {
      const double delta = (t.values() - u.values()).abs().maxCoeff();
      changed.push_back({{"key", k}, {"shape_changed", false}, {"max_abs_delta", delta}});
    }
  }
  for (const auto& [k, t] : b.params) {
    if (!a.params.contains(k)) added.push_back(k);
  }
  return {{"added", added}, {"removed", removed}, {"changed", changed}};
}

bool diff_empty(const nlohmann::json& r) {
  return r.at("added").empty() && r.at("removed").empty() && r.at("changed").empty();
}

nlohmann::json inspect(const ParameterBundle& b) {
  nlohmann::json j = manifest_json(b.manifest);
  j["total_params"] = b.params.total_size();
  j["num_entries"] = b.manifest.entries.size();
  return j;
}

}  // namespace mda
