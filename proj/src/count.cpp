#include "mda/count.hpp"

#include "mda/params.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace mda {

namespace {

long long sum_if(const ModelConfig& cfg, auto&& pred) {
  long long n = 0;
  for (const auto& spec : backbone_layout(cfg)) {
    if (pred(spec.key)) n += numel(spec.shape);
  }
  return n;
}

bool has_prefix(std::string_view s, std::string_view p) {
  return s.substr(0, p.size()) == p;
}

Stack as_decoder(Stack s) { return is_encoder(s) ? decoder_for(s) : s; }

}  // namespace

long long count_params(const ModelConfig& cfg, std::string_view selector,
                       std::optional<Stack> stack) {
  for (Site site : {Site::FfnStart, Site::Mhsa, Site::Conv, Site::FfnEnd}) {
    if (selector != site_name(site)) continue;
    if (!stack || !is_encoder(*stack)) {
      throw UnknownSelectorError("selector '" + std::string(selector) +
                                 "' needs an encoder stack");
    }
    long long n = 0;
    for (int b = 0; b < stack_blocks(cfg.encoder, *stack); ++b) {
      const ModulePath p{*stack, b, site};
      if (!path_exists(p, cfg)) continue;
      n += sum_if(cfg, [&](const std::string& k) { return p.owns_key(k); });
    }
    return n;
  }
  if (has_prefix(selector, "block-")) {
    if (!stack || !is_encoder(*stack)) {
      throw UnknownSelectorError("block selector needs an encoder stack");
    }
    int b = -1;
    const auto digits = selector.substr(6);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), b);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
      throw UnknownSelectorError("bad block selector '" + std::string(selector) + "'");
    }
    const ModulePath p{*stack, b, Site::Block};
    if (!path_exists(p, cfg)) {
      throw UnknownSelectorError("block out of range: '" + std::string(selector) + "'");
    }
    return sum_if(cfg, [&](const std::string& k) { return p.owns_key(k); });
  }
  if (selector == "encoder") {
    if (!stack || !is_encoder(*stack)) {
      throw UnknownSelectorError("encoder selector needs an encoder stack");
    }
    const ModulePath p{*stack, -1, Site::Whole};
    return sum_if(cfg, [&](const std::string& k) { return p.owns_key(k); });
  }
  if (selector == "prediction" || selector == "joint" || selector == "decoder") {
    const Stack dec = as_decoder(stack.value_or(Stack::DecoderNoncausal));
    const Site site = selector == "prediction" ? Site::Prediction
                      : selector == "joint"    ? Site::Joint
                                               : Site::Whole;
    const ModulePath p{dec, -1, site};
    return sum_if(cfg, [&](const std::string& k) { return p.owns_key(k); });
  }
  if (selector == "all") {
    if (!stack) return sum_if(cfg, [](const std::string&) { return true; });
    const ModulePath p{*stack, -1, Site::Whole};
    return sum_if(cfg, [&](const std::string& k) { return p.owns_key(k); });
  }
  throw UnknownSelectorError("unknown selector '" + std::string(selector) + "'");
}

long long count_adapter_params(const ModelConfig& cfg,
                               const std::vector<ModulePath>& sites,
                               int bottleneck) {
  long long n = 0;
  for (const auto& s : sites) {
    for (const auto& spec : adapter_layout(cfg, s, bottleneck)) n += numel(spec.shape);
  }
  return n;
}

std::vector<ModulePath> ffn_sites(const ModelConfig& cfg, Stack stack) {
  std::vector<ModulePath> out;
  for (int b = 0; b < stack_blocks(cfg.encoder, stack); ++b) {
    out.push_back({stack, b, Site::FfnStart});
    out.push_back({stack, b, Site::FfnEnd});
  }
  return out;
}

nlohmann::json param_report(const ModelConfig& cfg,
                            const std::vector<int>& bottlenecks) {
  using nlohmann::json;
  json modules = json::array();
  for (const char* sel : {"ffn_start", "mhsa", "conv", "ffn_end", "all"}) {
    modules.push_back({{"component", sel},
                       {"causal", count_params(cfg, sel, Stack::Causal)},
                       {"noncausal", count_params(cfg, sel, Stack::Noncausal)}});
  }
  json blocks = json::object();
  for (Stack s : {Stack::Causal, Stack::Noncausal}) {
    json arr = json::array();
    for (int b = 0; b < stack_blocks(cfg.encoder, s); ++b) {
      arr.push_back(count_params(cfg, "block-" + std::to_string(b), s));
    }
    blocks[std::string(stack_name(s))] = arr;
  }
  json adapters = json::array();
  for (int b : bottlenecks) {
    adapters.push_back(
        {{"bottleneck", b},
         {"causal", count_adapter_params(cfg, ffn_sites(cfg, Stack::Causal), b)},
         {"noncausal", count_adapter_params(cfg, ffn_sites(cfg, Stack::Noncausal), b)}});
  }
  json decoder = {{"prediction", count_params(cfg, "prediction")},
                  {"joint", count_params(cfg, "joint")},
                  {"decoder", count_params(cfg, "decoder")}};
  return {{"modules", modules},
          {"blocks", blocks},
          {"adapters_all_ffn", adapters},
          {"decoder", decoder},
          {"total", count_params(cfg, "all")}};
}

std::string format_param_report(const nlohmann::json& r) {
  std::ostringstream os;
  char line[160];
  auto m = [](long long n) { return double(n) / 1e6; };
  os << "per-domain encoder components (# params, M)\n";
  std::snprintf(line, sizeof line, "  %-12s %10s %10s\n", "", "C", "NC");
  os << line;
  for (const auto& row : r["modules"]) {
    std::snprintf(line, sizeof line, "  %-12s %10.2f %10.2f\n",
                  row["component"].get<std::string>().c_str(),
                  m(row["causal"].get<long long>()), m(row["noncausal"].get<long long>()));
    os << line;
  }
  os << "per-domain adapters on all FFN sites (# params, M)\n";
  for (const auto& row : r["adapters_all_ffn"]) {
    std::snprintf(line, sizeof line, "  dim %-8d %10.2f %10.2f\n",
                  row["bottleneck"].get<int>(), m(row["causal"].get<long long>()),
                  m(row["noncausal"].get<long long>()));
    os << line;
  }
  os << "blocks (# params, M)\n";
  for (const auto& [stack, arr] : r["blocks"].items()) {
    os << "  " << stack << ":";
    for (const auto& v : arr) {
      std::snprintf(line, sizeof line, " %.2f", m(v.get<long long>()));
      os << line;
    }
    os << '\n';
  }
  const auto& d = r["decoder"];
  std::snprintf(line, sizeof line,
                "decoder (# params, M): prediction %.2f  joint %.2f  total %.2f\n",
                m(d["prediction"].get<long long>()), m(d["joint"].get<long long>()),
                m(d["decoder"].get<long long>()));
  os << line;
  std::snprintf(line, sizeof line, "model total (M): %.2f\n", m(r["total"].get<long long>()));
  os << line;
  return os.str();
}

}  // namespace mda
