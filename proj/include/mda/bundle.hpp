#pragma once

#include "mda/routing.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace mda {

// .mdab layout (little-endian):
//   "MDAB" | u32 version | u64 header_bytes | header JSON | f32 arrays
// The header lists entries in storage order. docs/mdab_format.md has the
// full description.
inline constexpr std::uint32_t kBundleFormatVersion = 1;

enum class BundleErrorCode {
  Io,
  CorruptHeader,
  UnsupportedVersion,
  FingerprintMismatch,
  ShapeMismatch,
  KeyMismatch,
  DuplicateDomain,
};
std::string_view bundle_error_name(BundleErrorCode c);

class BundleError : public std::runtime_error {
 public:
  BundleError(BundleErrorCode code, const std::string& what)
      : std::runtime_error(std::string(bundle_error_name(code)) + ": " + what), code_(code) {}
  BundleErrorCode code() const { return code_; }

 private:
  BundleErrorCode code_;
};

struct BundleEntry {
  std::string key;
  Shape shape;
};

struct BundleManifest {
  std::string domain;
  std::string model_fingerprint;  // hash of the model config
  std::string fingerprint;        // hash of model config + plan
  nlohmann::json plan;            // null for the backbone
  long long creation_step = 0;
  std::uint32_t format_version = kBundleFormatVersion;
  nlohmann::json model_config;
  std::vector<BundleEntry> entries;
};

struct ParameterBundle {
  BundleManifest manifest;
  ParameterSet<float> params;

  bool is_backbone() const { return manifest.plan.is_null(); }
};

std::string model_fingerprint(const ModelConfig& cfg);

ParameterBundle make_backbone_bundle(const ModelConfig& cfg, const ParameterSet<float>& params,
                                     const std::string& domain, long long step = 0);
ParameterBundle make_domain_bundle(const MdaModel<float>& model, const DomainId& d,
                                   long long step = 0);

void save_bundle(const ParameterBundle& bundle, const std::string& path);
// Structural read with header and size checks only.
ParameterBundle read_bundle(const std::string& path);
// read_bundle plus fingerprint, key and shape validation against `expected`.
ParameterBundle load_bundle(const std::string& path, const ModelConfig& expected);

// Backbone plus domain bundles; domains are registered in name order so the
// result does not depend on argument order.
MdaModel<float> compose(const ModelConfig& cfg, const ParameterBundle& backbone,
                        std::vector<ParameterBundle> domains);

// {added, removed, changed: [{key, max_abs_delta, shape_changed}]}.
nlohmann::json diff(const ParameterBundle& a, const ParameterBundle& b);
bool diff_empty(const nlohmann::json& report);

nlohmann::json inspect(const ParameterBundle& bundle);

}  // namespace mda
