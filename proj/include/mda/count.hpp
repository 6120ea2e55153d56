#pragma once

#include "mda/config.hpp"
#include "mda/module_path.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace mda {

class UnknownSelectorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Exact parameter count of a component selection, computed from the layout
// (no allocation, so full-size configs are cheap).
//
// Selectors: ffn_start | mhsa | conv | ffn_end (summed over every block of an
// encoder stack), block-<k>, encoder, prediction, joint, decoder, all.
// `all` with a stack is that stack's total; without one it is the whole
// model. Decoder selectors given an encoder stack use the decoder it feeds.
long long count_params(const ModelConfig& cfg, std::string_view selector,
                       std::optional<Stack> stack = std::nullopt);

// Closed form per site is 2*d*b + b + d.
long long count_adapter_params(const ModelConfig& cfg,
                               const std::vector<ModulePath>& sites,
                               int bottleneck);

// FFN start/end sites of every block of `stack`.
std::vector<ModulePath> ffn_sites(const ModelConfig& cfg, Stack stack);

// Table-shaped parameter accounting: per-module counts per stack, block
// totals, adapter grids, decoder parts.
nlohmann::json param_report(const ModelConfig& cfg,
                            const std::vector<int>& bottlenecks);
std::string format_param_report(const nlohmann::json& report);

}  // namespace mda
