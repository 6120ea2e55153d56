#pragma once

#include "mda/bundle.hpp"
#include "mda/train.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mda {

// per-block: one whole-block override per encoder block.
// per-module: {ffn_start, mhsa, conv, ffn_end} x {NC, C+NC} overrides.
// adapter-grid: {sequential, parallel} x bottlenecks x {NC, C+NC} on FFN sites.
// recipe: parallel adapters, NC FFN overrides, causal FFN overrides, final recipe.
enum class SweepAxis { PerBlock, PerModule, AdapterGrid, Recipe };
std::string_view sweep_axis_name(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view s);

struct SweepCell {
  std::string id;
  std::string row;
  std::string column;
  DomainPlan plan;
  TrainConfig train;
};

void to_json(nlohmann::json& j, const SweepCell& c);
void from_json(const nlohmann::json& j, SweepCell& c);

struct SweepOptions {
  std::string domain = "vs-like";
  TrainConfig train;
  // Full-size widths 64/128/256 at d=640 are 10/20/40% of the model width.
  std::vector<int> bottlenecks{8, 16, 32};
  int recipe_bottleneck = 8;
};

std::vector<SweepCell> sweep_cells(const ModelConfig& cfg, SweepAxis axis,
                                   const SweepOptions& options);

// Everything a cell needs besides its plan; shared read-only across cells.
struct SweepContext {
  ModelConfig cfg;
  ParameterSet<float> backbone;
  std::string backbone_domain = "yt-like";
  std::vector<Utterance> train;
  std::vector<Utterance> test;
  Stack decoder = Stack::Noncausal;
};

struct CellResult {
  SweepCell cell;
  bool ok = false;
  std::string error;
  long long trainable_params = 0;
  EvalReport report;
  TrainLog log;
  std::optional<ParameterBundle> bundle;
};

CellResult run_cell(const SweepCell& cell, const SweepContext& ctx);
// Cells run on up to `jobs` threads; results keep the order of `cells`.
std::vector<CellResult> run_sweep(const std::vector<SweepCell>& cells, const SweepContext& ctx,
                                  int jobs = 1);

// Frozen-backbone score on ctx.test.
EvalReport baseline_report(const SweepContext& ctx);

nlohmann::json cell_json(const CellResult& r);
nlohmann::json sweep_table(SweepAxis axis, const std::string& domain, const EvalReport& baseline,
                           const std::vector<CellResult>& results);
// Aligned text rendering of sweep_table(): one row per table row, one
// "<params> <WER>" entry per column.
std::string sweep_text(const nlohmann::json& table);

}  // namespace mda
