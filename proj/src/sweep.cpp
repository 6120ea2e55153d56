#include "mda/sweep.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <thread>

namespace mda {

namespace {

constexpr std::pair<SweepAxis, std::string_view> kAxes[] = {
    {SweepAxis::PerBlock, "per-block"},
    {SweepAxis::PerModule, "per-module"},
    {SweepAxis::AdapterGrid, "adapter-grid"},
    {SweepAxis::Recipe, "recipe"},
};

std::vector<ModulePath> concat(std::vector<ModulePath> a, const std::vector<ModulePath>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string stacks_label(bool with_causal) { return with_causal ? "C+NC" : "NC"; }

SweepCell make_cell(std::string id, std::string row, std::string column, DomainPlan plan,
                    const SweepOptions& o) {
  plan.domain = o.domain;
  plan.init_seed = o.train.seed;
  return {std::move(id), std::move(row), std::move(column), std::move(plan), o.train};
}

}  // namespace

std::string_view sweep_axis_name(SweepAxis a) {
  for (auto [k, v] : kAxes) {
    if (k == a) return v;
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view s) {
  for (auto [k, v] : kAxes) {
    if (v == s) return k;
  }
  throw std::invalid_argument("unknown sweep axis '" + std::string(s) + "'");
}

void to_json(nlohmann::json& j, const SweepCell& c) {
  j = {{"id", c.id}, {"row", c.row}, {"column", c.column}, {"plan", c.plan}, {"train", c.train}};
}

void from_json(const nlohmann::json& j, SweepCell& c) {
  c.id = j.at("id").get<std::string>();
  c.row = j.at("row").get<std::string>();
  c.column = j.at("column").get<std::string>();
  c.plan = j.at("plan").get<DomainPlan>();
  c.train = j.at("train").get<TrainConfig>();
}

std::vector<SweepCell> sweep_cells(const ModelConfig& cfg, SweepAxis axis,
                                   const SweepOptions& o) {
  std::vector<SweepCell> cells;
  switch (axis) {
    case SweepAxis::PerBlock:
      for (Stack s : {Stack::Causal, Stack::Noncausal}) {
        const int n = s == Stack::Causal ? cfg.encoder.causal_blocks : cfg.encoder.noncausal_blocks;
        for (int b = 0; b < n; ++b) {
          const auto path = ModulePath::module(s, b, Site::Block);
          cells.push_back(make_cell(path.str(), path.str(), "override",
                                    override_plan(o.domain, {path}), o));
        }
      }
      break;
    case SweepAxis::PerModule:
      for (Site site : {Site::FfnStart, Site::Mhsa, Site::Conv, Site::FfnEnd}) {
        const std::string row(site_name(site));
        for (bool with_causal : {false, true}) {
          auto paths = sites_of(cfg, Stack::Noncausal, site);
          if (with_causal) paths = concat(sites_of(cfg, Stack::Causal, site), paths);
          const auto col = stacks_label(with_causal);
          cells.push_back(make_cell(row + "." + col, row, col, override_plan(o.domain, paths), o));
        }
      }
      break;
    case SweepAxis::AdapterGrid:
      for (AdapterMode mode : {AdapterMode::Sequential, AdapterMode::Parallel}) {
        for (int b : o.bottlenecks) {
          const std::string row = std::string(adapter_mode_name(mode)) + " b=" + std::to_string(b);
          for (bool with_causal : {false, true}) {
            auto sites = ffn_sites(cfg, Stack::Noncausal);
            if (with_causal) sites = concat(ffn_sites(cfg, Stack::Causal), sites);
            const auto col = stacks_label(with_causal);
            cells.push_back(make_cell(std::string(adapter_mode_name(mode)) + ".b" +
                                          std::to_string(b) + "." + col,
                                      row, col, adapter_plan(o.domain, sites, b, mode), o));
          }
        }
      }
      break;
    case SweepAxis::Recipe: {
      const int b = o.recipe_bottleneck;
      const auto all_ffn = concat(ffn_sites(cfg, Stack::Causal), ffn_sites(cfg, Stack::Noncausal));
      cells.push_back(make_cell("pa", "PA (all FFN)", "WER", adapter_plan(o.domain, all_ffn, b), o));
      cells.push_back(make_cell("ffn-nc", "FFN (NC)", "WER",
                                override_plan(o.domain, ffn_sites(cfg, Stack::Noncausal)), o));
      cells.push_back(make_cell("ffn-c", "FFN (C only)", "WER",
                                override_plan(o.domain, ffn_sites(cfg, Stack::Causal)), o));
      cells.push_back(make_cell("pa-c+ffn_end-nc", "PA (C) + ffn_end (NC)", "WER",
                                final_recipe_plan(cfg, o.domain, b), o));
      break;
    }
  }
  return cells;
}

CellResult run_cell(const SweepCell& cell, const SweepContext& ctx) {
  CellResult r;
  r.cell = cell;
  try {
    MdaModel<float> model(ctx.cfg, ctx.backbone.clone(), ctx.backbone_domain);
    for (const auto& s : domain_layout(ctx.cfg, cell.plan)) r.trainable_params += numel(s.shape);
    auto trained = train_domain(model, cell.plan, ctx.train, cell.train);
    r.log = std::move(trained.log);
    r.report = evaluate(model, trained.domain, ctx.test, ctx.decoder);
    r.bundle = make_domain_bundle(model, trained.domain, cell.train.steps);
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

std::vector<CellResult> run_sweep(const std::vector<SweepCell>& cells, const SweepContext& ctx,
                                  int jobs) {
  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) results[i] = run_cell(cells[i], ctx);
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return results;
}

EvalReport baseline_report(const SweepContext& ctx) {
  const MdaModel<float> model(ctx.cfg, ctx.backbone.clone(), ctx.backbone_domain);
  return evaluate(model, model.domain(ctx.backbone_domain), ctx.test, ctx.decoder);
}

nlohmann::json cell_json(const CellResult& r) {
  nlohmann::json j = {{"id", r.cell.id},
                      {"row", r.cell.row},
                      {"column", r.cell.column},
                      {"ok", r.ok},
                      {"trainable_params", r.trainable_params}};
  if (!r.ok) {
    j["error"] = r.error;
    return j;
  }
  const auto t = r.report.total();
  j["wer"] = t.rate();
  j["substitutions"] = t.substitutions;
  j["insertions"] = t.insertions;
  j["deletions"] = t.deletions;
  j["reference_length"] = t.reference_length;
  j["final_nll"] = r.log.curve.empty() ? 0.0 : r.log.curve.back().nll;
  j["train_seconds"] = r.log.seconds;
  return j;
}

nlohmann::json sweep_table(SweepAxis axis, const std::string& domain, const EvalReport& baseline,
                           const std::vector<CellResult>& results) {
  std::vector<std::string> rows, cols;
  auto add_unique = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& r : results) {
    add_unique(rows, r.cell.row);
    add_unique(cols, r.cell.column);
    cells.push_back(cell_json(r));
  }
  return {{"axis", sweep_axis_name(axis)},
          {"domain", domain},
          {"decoder", stack_name(baseline.decoder)},
          {"baseline_wer", baseline.total().rate()},
          {"rows", rows},
          {"columns", cols},
          {"cells", cells}};
}

std::string sweep_text(const nlohmann::json& table) {
  const auto rows = table.at("rows").get<std::vector<std::string>>();
  const auto cols = table.at("columns").get<std::vector<std::string>>();
  auto entry = [&](const std::string& row, const std::string& col) -> std::string {
    for (const auto& c : table.at("cells")) {
      if (c.at("row") != row || c.at("column") != col) continue;
      char buf[64];
      if (!c.at("ok").get<bool>()) return "failed";
      std::snprintf(buf, sizeof buf, "%.3fM %5.1f%%",
                    c.at("trainable_params").get<double>() / 1e6, 100.0 * c.at("wer").get<double>());
      return buf;
    }
    return "-";
  };
  std::size_t w0 = std::string("backbone").size();
  for (const auto& r : rows) w0 = std::max(w0, r.size());
  std::vector<std::size_t> widths;
  for (const auto& c : cols) {
    std::size_t w = c.size();
    for (const auto& r : rows) w = std::max(w, entry(r, c).size());
    widths.push_back(w);
  }
  std::ostringstream out;
  out << sweep_axis_name(parse_sweep_axis(table.at("axis").get<std::string>())) << " sweep, domain "
      << table.at("domain").get<std::string>() << ", " << table.at("decoder").get<std::string>()
      << " decoder\n";
  out << std::left << std::setw(static_cast<int>(w0)) << "";
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out << " | " << std::setw(static_cast<int>(widths[k])) << cols[k];
  }
  out << "\n" << std::string(w0, '-');
  for (auto w : widths) out << "-+-" << std::string(w, '-');
  out << "\n";
  char base[32];
  std::snprintf(base, sizeof base, "%.1f%%", 100.0 * table.at("baseline_wer").get<double>());
  out << std::setw(static_cast<int>(w0)) << "backbone" << " | " << base << "\n";
  for (const auto& r : rows) {
    out << std::setw(static_cast<int>(w0)) << r;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      out << " | " << std::setw(static_cast<int>(widths[k])) << entry(r, cols[k]);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace mda
