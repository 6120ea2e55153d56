// mda_cli: batch front end for data generation, training, evaluation,
// sweeps, parameter accounting and checkpoint handling.

#include "mda/bundle.hpp"
#include "mda/count.hpp"
#include "mda/sweep.hpp"
#include "mda/synth.hpp"
#include "mda/train.hpp"
#include "mda/version.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mda;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

std::string content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

// Full resolved configuration of a run plus its outputs; enough to repeat it.
json make_manifest(const std::string& verb, const json& resolved, const json& outputs) {
  return {{"command", verb},
          {"version", version_string()},
          {"resolved", resolved},
          {"outputs", outputs}};
}

// --from-manifest replaces every resolved option except the output tree.
json resolve(json resolved, const std::string& from_manifest, const std::string& verb) {
  if (from_manifest.empty()) return resolved;
  const json m = read_json(from_manifest);
  if (m.value("command", "") != verb) {
    throw UsageError("manifest " + from_manifest + " is for '" + m.value("command", "?") +
                     "', not '" + verb + "'");
  }
  json r = m.at("resolved");
  if (resolved.contains("out") && !resolved["out"].get<std::string>().empty()) {
    r["out"] = resolved["out"];
  }
  return r;
}

fs::path out_dir(const json& r) {
  const auto out = r.value("out", std::string());
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
  return out;
}

struct ModelFlags {
  std::string preset = "desk";
  std::string config;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Model preset (desk|paper)");
    app->add_option("--config", config, "Model config JSON (overrides --preset)");
  }
  json resolve() const {
    return config.empty() ? json(ModelConfig::preset(preset)) : json(load_model_config(config));
  }
};

struct TrainFlags {
  TrainConfig t;

  void add(CLI::App* app, int default_steps) {
    t.steps = default_steps;
    app->add_option("--steps", t.steps, "Optimizer steps");
    app->add_option("--batch-size", t.batch_size, "Utterances per batch");
    app->add_option("--lr", t.learning_rate, "Peak learning rate");
    app->add_option("--warmup", t.warmup_steps, "Warmup steps");
    app->add_option("--clip", t.clip_norm, "Gradient clip norm");
    app->add_option("--seed", t.seed, "Training seed");
    app->add_option("--causal-prob", t.causal_prob, "Probability of the causal decoder per batch");
  }
};

Stack parse_decoder(const std::string& s) {
  if (s == "causal") return Stack::Causal;
  if (s == "noncausal") return Stack::Noncausal;
  throw UsageError("decoder must be 'causal' or 'noncausal'");
}

ParameterBundle load_backbone(const std::string& path, ModelConfig& cfg) {
  const auto raw = read_bundle(path);
  if (!raw.is_backbone()) throw UsageError(path + " is a domain bundle, not a backbone");
  cfg = raw.manifest.model_config.get<ModelConfig>();
  return load_bundle(path, cfg);
}

ParameterSet<float> clone_params(const ParameterSet<float>& p) { return p.clone(); }

// ---------------------------------------------------------------- gen-data

int run_gen_data(const json& r) {
  const auto dir = out_dir(r);
  const auto spec = r.at("corpus").get<CorpusSpec>();
  const auto corpus = generate_corpus(spec);
  save_corpus(corpus, dir.string());
  json stats = json::object();
  for (const auto& [split, utts] : corpus.splits) {
    stats[split] = stats_json(corpus_stats(utts, spec.vocab_size));
  }
  write_json(dir / "stats.json", stats);
  write_json(dir / "manifest.json",
             make_manifest("gen-data", r, {"corpus.json", "train.jsonl", "test.jsonl", "stats.json"}));
  std::cout << json{{"out", dir.string()}, {"stats", stats}}.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------- train-backbone

int run_train_backbone(const json& r) {
  const auto dir = out_dir(r);
  const auto corpus = load_corpus(r.at("corpus").get<std::string>());
  auto cfg = r.at("model_config").get<ModelConfig>();
  const auto train = r.at("train").get<TrainConfig>();
  const auto mode_name = r.at("mode").get<std::string>();
  const auto domain = r.at("domain").get<std::string>();
  BackboneMode mode = BackboneMode::SingleDomain;
  std::vector<Utterance> data;
  const auto& onehot = corpus.spec.domains;
  if (mode_name == "multidomain") {
    mode = BackboneMode::MultidomainOnehot;
    data = corpus.select("train");
  } else if (mode_name == "single") {
    data = corpus.select("train", domain);
  } else {
    throw UsageError("--mode must be 'single' or 'multidomain'");
  }
  if (data.empty()) throw UsageError("no training utterances for domain '" + domain + "'");
  const auto result = train_backbone(data, cfg, train, mode, onehot, [](int step, double nll) {
    if (step % 100 == 0) std::cerr << json{{"step", step}, {"nll", nll}}.dump() << "\n";
  });
  const std::string name = mode == BackboneMode::MultidomainOnehot ? "multidomain" : domain;
  save_bundle(make_backbone_bundle(cfg, result.params, name, train.steps),
              (dir / "backbone.mdab").string());
  write_loss_csv(result.log, (dir / "loss.csv").string());
  const MdaModel<float> model(cfg, result.params, name);
  const auto report = evaluate(model, model.domain(name), corpus.select("test"), Stack::Noncausal,
                               mode == BackboneMode::MultidomainOnehot
                                   ? std::span<const std::string>(onehot)
                                   : std::span<const std::string>());
  write_json(dir / "eval.json", report);
  json outputs = {"backbone.mdab", "loss.csv", "eval.json"};
  json m = make_manifest("train-backbone", r, outputs);
  m["bundle_content_hash"] = content_hash((dir / "backbone.mdab").string());
  m["train_seconds"] = result.log.seconds;
  write_json(dir / "manifest.json", m);
  std::cout << json(report).dump() << "\n";
  return 0;
}

// ------------------------------------------------------------ train-domain

DomainPlan plan_for_recipe(const ModelConfig& cfg, const std::string& recipe,
                           const std::string& domain, int bottleneck) {
  SweepOptions o;
  o.domain = domain;
  o.recipe_bottleneck = bottleneck;
  for (const auto& c : sweep_cells(cfg, SweepAxis::Recipe, o)) {
    if (c.id == recipe) return c.plan;
  }
  throw UsageError("unknown recipe '" + recipe + "' (pa, ffn-nc, ffn-c, pa-c+ffn_end-nc)");
}

int run_train_domain(const json& r) {
  const auto dir = out_dir(r);
  const auto corpus = load_corpus(r.at("corpus").get<std::string>());
  ModelConfig cfg;
  const auto backbone_path = r.at("backbone").get<std::string>();
  const auto bb = load_backbone(backbone_path, cfg);
  const auto plan = r.at("plan").get<DomainPlan>();
  const auto train = r.at("train").get<TrainConfig>();
  MdaModel<float> model(cfg, clone_params(bb.params), bb.manifest.domain);
  const auto result = train_domain(model, plan, corpus.select("train", plan.domain), train,
                                   [](int step, double nll) {
                                     if (step % 100 == 0) {
                                       std::cerr << json{{"step", step}, {"nll", nll}}.dump() << "\n";
                                     }
                                   });
  const std::string file = plan.domain + ".mdab";
  save_bundle(make_domain_bundle(model, result.domain, train.steps), (dir / file).string());
  write_loss_csv(result.log, (dir / "loss.csv").string());
  const auto report = evaluate(model, result.domain, corpus.select("test", plan.domain));
  write_json(dir / "eval.json", report);
  json m = make_manifest("train-domain", r, {file, "loss.csv", "eval.json"});
  m["backbone_content_hash"] = content_hash(backbone_path);
  m["bundle_content_hash"] = content_hash((dir / file).string());
  m["train_seconds"] = result.log.seconds;
  write_json(dir / "manifest.json", m);
  std::cout << json(report).dump() << "\n";
  return 0;
}

// -------------------------------------------------------------------- eval

int run_eval(const json& r) {
  const auto corpus = load_corpus(r.at("corpus").get<std::string>());
  ModelConfig cfg;
  const auto bb = load_backbone(r.at("backbone").get<std::string>(), cfg);
  std::vector<ParameterBundle> domains;
  for (const auto& p : r.at("bundles")) domains.push_back(load_bundle(p.get<std::string>(), cfg));
  const auto model = compose(cfg, bb, domains);
  const auto routing = r.value("routing", bb.manifest.domain);
  const auto test = corpus.select(r.value("split", std::string("test")),
                                  r.value("test_domain", std::string()));
  const auto& onehot = corpus.spec.domains;
  const auto report = evaluate(model, model.domain(routing), test,
                               parse_decoder(r.value("decoder", std::string("noncausal"))),
                               cfg.domain_onehot_width > 0 ? std::span<const std::string>(onehot)
                                                           : std::span<const std::string>());
  if (!r.value("out", std::string()).empty()) {
    const auto dir = out_dir(r);
    write_json(dir / "eval.json", report);
    write_json(dir / "manifest.json", make_manifest("eval", r, {"eval.json"}));
  }
  std::cout << json(report).dump() << "\n";
  return 0;
}

// ------------------------------------------------------------------- sweep

struct LoadedSweep {
  SweepContext ctx;
  std::string backbone_hash;
};

LoadedSweep load_sweep_inputs(const json& r, const std::string& domain) {
  LoadedSweep s;
  const auto corpus = load_corpus(r.at("corpus").get<std::string>());
  const auto bb = load_backbone(r.at("backbone").get<std::string>(), s.ctx.cfg);
  s.ctx.backbone = bb.params.clone();
  s.ctx.backbone_domain = bb.manifest.domain;
  s.ctx.train = corpus.select("train", domain);
  s.ctx.test = corpus.select("test", domain);
  s.ctx.decoder = parse_decoder(r.value("decoder", std::string("noncausal")));
  s.backbone_hash = content_hash(r.at("backbone").get<std::string>());
  if (s.ctx.train.empty()) throw UsageError("no training utterances for domain '" + domain + "'");
  return s;
}

json write_cell(const fs::path& dir, const CellResult& res, const json& inputs) {
  const fs::path cell_dir = dir / "cells" / res.cell.id;
  fs::create_directories(cell_dir);
  json m = {{"command", "sweep-cell"},
            {"version", version_string()},
            {"cell", res.cell},
            {"inputs", inputs},
            {"result", cell_json(res)}};
  if (res.ok) {
    const auto file = cell_dir / "domain.mdab";
    save_bundle(*res.bundle, file.string());
    write_loss_csv(res.log, (cell_dir / "loss.csv").string());
    m["bundle"] = {{"file", "domain.mdab"}, {"content_hash", content_hash(file.string())}};
  }
  write_json(cell_dir / "manifest.json", m);
  return m;
}

int run_sweep_cmd(const json& r) {
  const auto dir = out_dir(r);
  const auto axis = parse_sweep_axis(r.at("axis").get<std::string>());
  SweepOptions o;
  o.domain = r.at("domain").get<std::string>();
  o.train = r.at("train").get<TrainConfig>();
  o.bottlenecks = r.at("bottlenecks").get<std::vector<int>>();
  o.recipe_bottleneck = r.at("recipe_bottleneck").get<int>();
  const auto in = load_sweep_inputs(r, o.domain);
  const json inputs = {{"corpus", r.at("corpus")},
                       {"backbone", r.at("backbone")},
                       {"backbone_content_hash", in.backbone_hash},
                       {"domain", o.domain},
                       {"decoder", stack_name(in.ctx.decoder)}};
  const auto cells = sweep_cells(in.ctx.cfg, axis, o);
  const auto results = run_sweep(cells, in.ctx, r.value("jobs", 1));
  for (const auto& res : results) write_cell(dir, res, inputs);
  const auto table = sweep_table(axis, o.domain, baseline_report(in.ctx), results);
  write_json(dir / "table.json", table);
  write_text(dir / "table.txt", sweep_text(table));
  write_json(dir / "manifest.json", make_manifest("sweep", r, {"table.json", "table.txt", "cells/"}));
  std::cout << sweep_text(table);
  int failed = 0;
  for (const auto& res : results) failed += !res.ok;
  return failed == 0 ? 0 : 1;
}

// Re-runs one cell from its manifest and reports whether it reproduced.
int run_sweep_rerun(const std::string& manifest_path, const std::string& out) {
  const json m = read_json(manifest_path);
  if (m.value("command", "") != "sweep-cell") throw UsageError("not a sweep-cell manifest");
  const auto cell = m.at("cell").get<SweepCell>();
  const auto& inputs = m.at("inputs");
  json r = {{"corpus", inputs.at("corpus")},
            {"backbone", inputs.at("backbone")},
            {"decoder", inputs.at("decoder")}};
  const auto in = load_sweep_inputs(r, inputs.at("domain").get<std::string>());
  if (in.backbone_hash != inputs.at("backbone_content_hash")) {
    throw std::runtime_error("backbone bundle differs from the one recorded in the manifest");
  }
  const auto res = run_cell(cell, in.ctx);
  const fs::path dir = out.empty() ? fs::path(manifest_path).parent_path() / "rerun" : fs::path(out);
  fs::create_directories(dir);
  const json again = write_cell(dir, res, inputs);
  const bool same = again.at("result").at("wer") == m.at("result").at("wer") &&
                    again.value("bundle", json()).value("content_hash", "") ==
                        m.value("bundle", json()).value("content_hash", "");
  std::cout << json{{"cell", cell.id}, {"reproduced", same}, {"result", again.at("result")}}.dump()
            << "\n";
  return same ? 0 : 1;
}

// ------------------------------------------------------------------ params

int run_params(const json& r) {
  const auto cfg = r.at("model_config").get<ModelConfig>();
  const auto select = r.value("select", std::string());
  std::optional<Stack> stack;
  if (!r.value("stack", std::string()).empty()) stack = ModulePath::parse(r.at("stack").get<std::string>()).stack;
  if (!select.empty()) {
    const long long n = count_params(cfg, select, stack);
    if (r.value("json", false)) {
      std::cout << json{{"select", select}, {"stack", r.value("stack", "")}, {"params", n}}.dump()
                << "\n";
    } else {
      std::cout << n << "\n";
    }
    return 0;
  }
  const auto report = param_report(cfg, r.at("bottlenecks").get<std::vector<int>>());
  if (r.value("json", false)) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::cout << format_param_report(report);
  }
  return 0;
}

// -------------------------------------------------------------------- ckpt

int run_ckpt_inspect(const std::string& path) {
  std::cout << inspect(read_bundle(path)).dump(2) << "\n";
  return 0;
}

int run_ckpt_diff(const std::string& a, const std::string& b) {
  std::cout << diff(read_bundle(a), read_bundle(b)).dump(2) << "\n";
  return 0;
}

int run_ckpt_compose(const std::string& backbone, const std::vector<std::string>& bundles,
                     const std::string& out) {
  ModelConfig cfg;
  const auto bb = load_backbone(backbone, cfg);
  std::vector<ParameterBundle> domains;
  for (const auto& p : bundles) domains.push_back(load_bundle(p, cfg));
  const auto model = compose(cfg, bb, domains);
  json summary = {{"model_fingerprint", bb.manifest.model_fingerprint},
                  {"backbone", backbone},
                  {"domains", json::array()}};
  for (const auto& d : model.domains()) {
    long long n = 0;
    if (d.id != 0) {
      for (const auto& t : model.trainable_mask(d)) n += t.size();
    }
    summary["domains"].push_back({{"id", d.id}, {"name", d.name}, {"owned_params", n}});
  }
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(fs::path(out) / "composition.json", summary);
    write_json(fs::path(out) / "manifest.json",
               make_manifest("ckpt compose", {{"backbone", backbone}, {"bundles", bundles}, {"out", out}},
                             {"composition.json"}));
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modular domain adaptation toolkit"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic multi-domain corpus");
  CorpusSpec spec;
  std::string gen_out, gen_manifest;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--seed", spec.global_seed, "Global corpus seed");
  gen->add_option("--train-per-domain", spec.train_per_domain, "Training utterances per domain");
  gen->add_option("--test-per-domain", spec.test_per_domain, "Test utterances per domain");
  gen->add_option("--domains", spec.domains, "Domain presets")->delimiter(',');
  gen->add_option("--from-manifest", gen_manifest, "Repeat a previous run");

  // train-backbone
  auto* tb = app.add_subcommand("train-backbone", "Train the backbone model");
  ModelFlags tb_model;
  TrainFlags tb_train;
  std::string tb_corpus, tb_out, tb_domain = "yt-like", tb_mode = "single", tb_manifest;
  tb_model.add(tb);
  tb_train.add(tb, 3000);
  tb->add_option("--corpus", tb_corpus, "Corpus directory");
  tb->add_option("--out", tb_out, "Output directory");
  tb->add_option("--domain", tb_domain, "Backbone domain (single mode)");
  tb->add_option("--mode", tb_mode, "single | multidomain");
  tb->add_option("--from-manifest", tb_manifest, "Repeat a previous run");

  // train-domain
  auto* td = app.add_subcommand("train-domain", "Train one domain on a frozen backbone");
  TrainFlags td_train;
  std::string td_corpus, td_backbone, td_out, td_plan, td_recipe, td_domain = "vs-like",
                                                                   td_manifest;
  int td_bottleneck = 8;
  td_train.add(td, 1500);
  td->add_option("--corpus", td_corpus, "Corpus directory");
  td->add_option("--backbone", td_backbone, "Backbone bundle (.mdab)");
  td->add_option("--out", td_out, "Output directory");
  td->add_option("--plan", td_plan, "DomainPlan JSON file");
  td->add_option("--recipe", td_recipe, "pa | ffn-nc | ffn-c | pa-c+ffn_end-nc");
  td->add_option("--domain", td_domain, "Domain name (recipes)");
  td->add_option("--bottleneck", td_bottleneck, "Adapter bottleneck (recipes)");
  td->add_option("--from-manifest", td_manifest, "Repeat a previous run");

  // eval
  auto* ev = app.add_subcommand("eval", "Greedy-decode a split and score it");
  std::string ev_corpus, ev_backbone, ev_routing, ev_test_domain, ev_decoder = "noncausal",
                                                                  ev_split = "test", ev_out,
                                                                  ev_manifest;
  std::vector<std::string> ev_bundles;
  ev->add_option("--corpus", ev_corpus, "Corpus directory");
  ev->add_option("--backbone", ev_backbone, "Backbone bundle");
  ev->add_option("--bundle", ev_bundles, "Domain bundles to compose");
  ev->add_option("--domain", ev_routing, "Routing domain (default: backbone domain)");
  ev->add_option("--test-domain", ev_test_domain, "Restrict the split to one data domain");
  ev->add_option("--decoder", ev_decoder, "causal | noncausal");
  ev->add_option("--split", ev_split, "Corpus split");
  ev->add_option("--out", ev_out, "Output directory");
  ev->add_option("--from-manifest", ev_manifest, "Repeat a previous run");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Per-domain component sweeps");
  TrainFlags sw_train;
  std::string sw_axis, sw_corpus, sw_backbone, sw_domain = "vs-like", sw_out, sw_decoder = "noncausal",
                                                sw_manifest, sw_rerun;
  std::vector<int> sw_bottlenecks = SweepOptions{}.bottlenecks;
  int sw_recipe_b = SweepOptions{}.recipe_bottleneck, sw_jobs = 1;
  sw_train.add(sw, 1500);
  sw->add_option("--axis", sw_axis, "per-block | per-module | adapter-grid | recipe");
  sw->add_option("--corpus", sw_corpus, "Corpus directory");
  sw->add_option("--backbone", sw_backbone, "Backbone bundle");
  sw->add_option("--domain", sw_domain, "Target domain");
  sw->add_option("--out", sw_out, "Output directory");
  sw->add_option("--decoder", sw_decoder, "Evaluation decoder");
  sw->add_option("--bottlenecks", sw_bottlenecks, "Adapter grid bottlenecks")->delimiter(',');
  sw->add_option("--recipe-bottleneck", sw_recipe_b, "Adapter bottleneck of recipe cells");
  sw->add_option("--jobs", sw_jobs, "Cells trained concurrently");
  sw->add_option("--from-manifest", sw_manifest, "Repeat a previous sweep");
  sw->add_option("--rerun", sw_rerun, "Re-run one cell from its manifest");

  // params
  auto* pa = app.add_subcommand("params", "Parameter accounting");
  ModelFlags pa_model;
  std::string pa_select, pa_stack;
  std::vector<int> pa_bottlenecks{64, 128, 256};
  bool pa_json = false;
  pa_model.add(pa);
  pa->add_option("--select", pa_select, "ffn_start | mhsa | conv | ffn_end | block-<k> | ...");
  pa->add_option("--stack", pa_stack, "causal | noncausal | decoder_causal | decoder_noncausal");
  pa->add_option("--bottlenecks", pa_bottlenecks, "Adapter bottlenecks")->delimiter(',');
  pa->add_flag("--json", pa_json, "Emit JSON");

  // ckpt
  auto* ck = app.add_subcommand("ckpt", "Inspect, diff and compose bundles");
  ck->require_subcommand(1);
  auto* ck_inspect = ck->add_subcommand("inspect", "Print a bundle header");
  std::string ck_file;
  ck_inspect->add_option("file", ck_file, "Bundle")->required();
  auto* ck_diff = ck->add_subcommand("diff", "Compare two bundles");
  std::string ck_a, ck_b;
  ck_diff->add_option("a", ck_a, "First bundle")->required();
  ck_diff->add_option("b", ck_b, "Second bundle")->required();
  auto* ck_compose = ck->add_subcommand("compose", "Compose a backbone with domain bundles");
  std::string ck_backbone, ck_out;
  std::vector<std::string> ck_domains;
  ck_compose->add_option("--backbone", ck_backbone, "Backbone bundle")->required();
  ck_compose->add_option("--domain", ck_domains, "Domain bundles");
  ck_compose->add_option("--out", ck_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) {
      return run_gen_data(resolve({{"corpus", spec}, {"out", gen_out}}, gen_manifest, "gen-data"));
    }
    if (tb->parsed()) {
      json r = {{"corpus", tb_corpus}, {"out", tb_out},     {"domain", tb_domain},
                {"mode", tb_mode},     {"train", tb_train.t}};
      if (tb_manifest.empty()) {
        ModelConfig cfg = tb_model.resolve().get<ModelConfig>();
        if (tb_mode == "multidomain" && cfg.domain_onehot_width == 0) cfg.domain_onehot_width = 16;
        r["model_config"] = cfg;
        if (tb_corpus.empty()) throw UsageError("--corpus is required");
      }
      return run_train_backbone(resolve(r, tb_manifest, "train-backbone"));
    }
    if (td->parsed()) {
      json r = {{"corpus", td_corpus}, {"backbone", td_backbone}, {"out", td_out},
                {"train", td_train.t}};
      if (td_manifest.empty()) {
        if (td_corpus.empty() || td_backbone.empty()) {
          throw UsageError("--corpus and --backbone are required");
        }
        if (td_plan.empty() == td_recipe.empty()) {
          throw UsageError("give exactly one of --plan and --recipe");
        }
        if (!td_plan.empty()) {
          r["plan"] = read_json(td_plan);
        } else {
          ModelConfig cfg;
          load_backbone(td_backbone, cfg);
          r["plan"] = plan_for_recipe(cfg, td_recipe, td_domain, td_bottleneck);
        }
        r["plan"]["init_seed"] = r["plan"].value("init_seed", td_train.t.seed);
      }
      return run_train_domain(resolve(r, td_manifest, "train-domain"));
    }
    if (ev->parsed()) {
      json r = {{"corpus", ev_corpus}, {"backbone", ev_backbone}, {"bundles", ev_bundles},
                {"decoder", ev_decoder}, {"split", ev_split},     {"out", ev_out}};
      if (!ev_routing.empty()) r["routing"] = ev_routing;
      if (!ev_test_domain.empty()) r["test_domain"] = ev_test_domain;
      if (ev_manifest.empty() && (ev_corpus.empty() || ev_backbone.empty())) {
        throw UsageError("--corpus and --backbone are required");
      }
      return run_eval(resolve(r, ev_manifest, "eval"));
    }
    if (sw->parsed()) {
      if (!sw_rerun.empty()) return run_sweep_rerun(sw_rerun, sw_out);
      json r = {{"axis", sw_axis},
                {"corpus", sw_corpus},
                {"backbone", sw_backbone},
                {"domain", sw_domain},
                {"out", sw_out},
                {"decoder", sw_decoder},
                {"train", sw_train.t},
                {"bottlenecks", sw_bottlenecks},
                {"recipe_bottleneck", sw_recipe_b},
                {"jobs", sw_jobs}};
      if (sw_manifest.empty() && (sw_axis.empty() || sw_corpus.empty() || sw_backbone.empty())) {
        throw UsageError("--axis, --corpus and --backbone are required");
      }
      return run_sweep_cmd(resolve(r, sw_manifest, "sweep"));
    }
    if (pa->parsed()) {
      return run_params({{"model_config", pa_model.resolve()},
                         {"select", pa_select},
                         {"stack", pa_stack},
                         {"bottlenecks", pa_bottlenecks},
                         {"json", pa_json}});
    }
    if (ck_inspect->parsed()) return run_ckpt_inspect(ck_file);
    if (ck_diff->parsed()) return run_ckpt_diff(ck_a, ck_b);
    if (ck_compose->parsed()) return run_ckpt_compose(ck_backbone, ck_domains, ck_out);
  } catch (const UsageError& e) {
    report_error("usage", e.what());
    return 2;
  } catch (const UnknownSelectorError& e) {
    report_error("usage", e.what());
    return 2;
  } catch (const InvalidPathError& e) {
    report_error("usage", e.what());
    return 2;
  } catch (const BundleError& e) {
    report_error(std::string(bundle_error_name(e.code())), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("runtime", e.what());
    return 1;
  }
  return 2;
}
