#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "spgen/corpus.hpp"
#include "spgen/linkpred.hpp"
#include "spgen/metrics.hpp"
#include "spgen/pipeline.hpp"
#include "spgen/reasoning.hpp"
#include "spgen/toy.hpp"
#include "spgen/tradeoff.hpp"

namespace {

using namespace spgen;
using nlohmann::json;

struct Common {
  std::string config;
  std::string data;
  std::string out;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (!c.data.empty()) cfg.data_path = c.data;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (cfg.data_path.empty()) throw ConfigError("no data file given (config 'data' or --data)");
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool need_config = false) {
  auto* opt = app->add_option("--config", c.config, "Run configuration (JSON)");
  if (need_config) opt->required();
  app->add_option("--data", c.data, "Interactions (JSONL) or saved graph; overrides the config");
  app->add_option("--out", c.out, "Output directory; overrides the config");
}

std::vector<int> parse_k_list(const std::string& s) {
  std::vector<int> ks;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    try {
      std::size_t used = 0;
      int k = std::stoi(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
      ks.push_back(k);
    } catch (const std::exception&) {
      throw ConfigError("bad K value '" + part + "'");
    }
  }
  return ks;
}

SageParams params_or_train(const RunConfig& cfg, const std::string& params_path) {
  if (!params_path.empty()) return load_params_file(params_path);
  auto graph = training_graph(load_interactions(cfg.data_path));
  auto enc = make_encoder(cfg.encoder);
  return train(graph, build_features(*enc, graph), cfg.train).params;
}

int cmd_ingest(const std::string& input, const std::string& out) {
  auto xs = ingest_interactions_file(input);
  auto g = build_graph(xs);
  if (!out.empty()) save_graph_file(g, out);
  auto s = degree_stats(g);
  std::size_t counts[3] = {0, 0, 0};
  for (auto x : xs) counts[static_cast<int>(x.split)]++;
  json j{{"interactions", xs.size()},
         {"users", g.users().size()},
         {"items", g.items().size()},
         {"edges", g.edge_count()},
         {"splits", {{"train", counts[0]}, {"validation", counts[1]}, {"test", counts[2]}}},
         {"avg_user_degree", s.avg_user_degree},
         {"avg_item_degree", s.avg_item_degree}};
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_train(const Common& c) {
  auto cfg = resolve(c);
  auto graph = training_graph(load_interactions(cfg.data_path));
  auto enc = make_encoder(cfg.encoder);
  auto result = train(graph, build_features(*enc, graph), cfg.train);
  fs::create_directories(cfg.output_dir);
  save_params_file(result.params, (fs::path(cfg.output_dir) / "params.json").string());
  std::ofstream log(fs::path(cfg.output_dir) / "train_log.jsonl");
  write_train_log(result.log, log);
  std::cout << "trained " << result.log.size() << " epochs, loss " << result.log.front().loss << " -> "
            << result.log.back().loss << "\n";
  return kExitOk;
}

int cmd_predict(const Common& c, const std::string& params_path, std::size_t top) {
  auto cfg = resolve(c);
  auto all = load_interactions(cfg.data_path);
  auto graph = training_graph(all);
  auto enc = make_encoder(cfg.encoder);
  auto features = build_features(*enc, graph);
  auto params = params_or_train(cfg, params_path);
  auto ev = evaluate_links(graph, features, params, filter_split(all, {Split::test}));
  fs::create_directories(cfg.output_dir);
  std::ofstream out(fs::path(cfg.output_dir) / "rankings.jsonl");
  for (const auto& r : ev.rankings) {
    json items = json::array();
    for (std::size_t k = 0; k < r.ranked_items.size() && k < top; ++k)
      items.push_back({{"item_id", r.ranked_items[k].item_id},
                       {"score", r.ranked_items[k].score},
                       {"probability", r.ranked_items[k].probability}});
    out << json{{"user_id", r.user_id}, {"ranked_items", items}}.dump() << "\n";
  }
  json m = json::object();
  if (ev.metrics)
    m = {{"users", ev.metrics->users},
         {"mrr", ev.metrics->mrr},
         {"hits@1", ev.metrics->hits1},
         {"hits@5", ev.metrics->hits5},
         {"hits@10", ev.metrics->hits10}};
  std::cout << m.dump(2) << "\n";
  return kExitOk;
}

int cmd_build_sft(const Common& c, const std::string& params_path) {
  auto cfg = resolve(c);
  if (!uses_reasoning(cfg.variant)) {
    std::cout << "variant -r-ft uses no reasoning; no alignment records to build\n";
    return kExitOk;
  }
  auto clients = make_clients(cfg);
  auto graph = training_graph(load_interactions(cfg.data_path));
  auto enc = make_encoder(cfg.encoder);
  auto features = build_features(*enc, graph);
  auto params = params_or_train(cfg, params_path);
  auto eg = embed_graph(graph, features, params);
  ContextBuilder ctx(graph, eg.user_map(), cfg.k_sim, cfg.k_peer);
  std::size_t skipped = 0;
  for (auto task : cfg.tasks) {
    auto built = build_sft_records(graph, ctx, *clients.reasoner, task, cfg.sampling, cfg.omega);
    std::string lines;
    for (const auto& r : built.records) lines += to_json(r).dump() + "\n";
    write_text(fs::path(cfg.output_dir) / ("sft_" + std::string(to_string(task)) + ".jsonl"), lines);
    for (const auto& w : built.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << to_string(task) << ": " << built.records.size() << " records, " << built.skipped << " skipped\n";
    skipped += built.skipped;
  }
  return skipped ? kExitPartial : kExitOk;
}

int cmd_run(const Common& c) {
  auto cfg = resolve(c);
  auto clients = make_clients(cfg);
  const fs::path out(cfg.output_dir);
  auto art = run_training(cfg, clients, out);
  for (const auto& w : art.warnings) std::cerr << "warning: " << w << "\n";
  auto o = run_stage("inference", [&] { return infer_and_report(cfg, clients, art.params, cfg.K, out); });
  for (const auto& w : o.report.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
  std::cout << "report written to " << (out / "report.md").string() << " (" << o.report.at("counts").at("records")
            << " records, " << o.skipped << " skipped)\n";
  return art.skipped() + o.skipped ? kExitPartial : kExitOk;
}

int cmd_sweep(const Common& c, const std::string& k_list, const std::string& params_path) {
  auto cfg = resolve(c);
  auto ks = parse_k_list(k_list);
  auto clients = make_clients(cfg);
  const fs::path out(cfg.output_dir);
  SageParams params;
  std::size_t skipped = 0;
  if (params_path.empty()) {
    auto art = run_training(cfg, clients, out);
    skipped += art.skipped();
    params = std::move(art.params);
  } else {
    params = load_params_file(params_path);
  }
  run_stage("inference", [&] { return sweep_k(cfg, clients, params, ks, out, &skipped); });
  std::cout << render_sweep_markdown(json::parse(read_text(out / "sweep_k.json")));
  return skipped ? kExitPartial : kExitOk;
}

int cmd_evaluate(const std::string& run_dir, const std::string& pairs, const std::string& task_name) {
  if (!run_dir.empty()) {
    auto report = emit_report(run_dir);
    std::cout << render_report_markdown(report);
    return report.at("counts").at("skipped").get<std::size_t>() ? kExitPartial : kExitOk;
  }
  if (pairs.empty()) throw ConfigError("evaluate needs --run-dir or --pairs");
  const auto task = parse_task(task_name);
  std::ifstream in(pairs);
  if (!in) throw ConfigError("cannot open " + pairs);
  std::vector<ExampleRecord> records;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n);
    }
    ExampleRecord r;
    r.task = task;
    if (task == Task::rating) {
      r.predicted_rating = j.at("predicted").get<int>();
      r.gold_rating = j.at("gold").get<int>();
    } else {
      auto cand = tokenize(j.at("generated").get<std::string>());
      auto ref = tokenize(j.at("reference").get<std::string>());
      r.rouge1_f1 = rouge1(cand, ref).f1;
      r.rougeL_f1 = rougeL(cand, ref).f1;
      r.meteor_score = meteor(cand, ref);
    }
    records.push_back(std::move(r));
  }
  std::vector<const ExampleRecord*> ptrs;
  for (const auto& r : records) ptrs.push_back(&r);
  std::cout << metric_block(ptrs, task).dump(2) << "\n";
  return kExitOk;
}

int cmd_tradeoff(const std::string& grid_path, std::int64_t trials, std::uint64_t seed, const std::string& out,
                 const std::string& noise, unsigned workers, bool as_json) {
  std::vector<TradeoffSetting> grid;
  if (grid_path.empty() || grid_path == "default") {
    grid = default_grid();
  } else {
    std::ifstream in(grid_path);
    if (!in) throw ConfigError("cannot open grid " + grid_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("grid is not valid JSON: ") + e.what());
    }
    grid = grid_from_json(j);
  }
  SweepOptions opt{trials, seed, noise == "uniform" ? NoiseKind::uniform : NoiseKind::gaussian, workers};
  if (noise != "gaussian" && noise != "uniform") throw ConfigError("noise must be gaussian or uniform");
  auto rows = sweep(grid, opt);
  std::ostringstream text;
  if (as_json) {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(to_json(r));
    text << arr.dump(2) << "\n";
  } else {
    write_tradeoff_csv(text, rows);
  }
  if (out.empty() || out == "-") std::cout << text.str();
  else write_text(out, text.str());
  return kExitOk;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (fs::exists(dir / "sweep_k.json")) {
    write_text(dir / "sweep_k.md", render_sweep_markdown(json::parse(read_text(dir / "sweep_k.json"))));
    std::cout << read_text(dir / "sweep_k.md");
    return kExitOk;
  }
  auto report = json::parse(read_text(dir / "report.json"));
  write_text(dir / "report.md", render_report_markdown(report));
  std::cout << read_text(dir / "report.md");
  return kExitOk;
}

int cmd_make_toy(const std::string& out, std::size_t users, std::uint64_t seed) {
  ToyOptions opt;
  opt.users = users;
  opt.seed = seed;
  std::ostringstream os;
  write_interactions(os, toy_reviews(opt));
  if (out.empty() || out == "-") std::cout << os.str();
  else write_text(out, os.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spgen: graph-based profile augmentation and reasoning-aligned review generation"};
  app.require_subcommand(1);

  std::string ingest_in, ingest_out;
  auto* ingest = app.add_subcommand("ingest", "Validate an interactions file and build the graph");
  ingest->add_option("--input", ingest_in, "Interactions (JSONL)")->required();
  ingest->add_option("--out", ingest_out, "Write the graph container here");

  Common c_train, c_pred, c_sft, c_run, c_sweep;
  std::string params_pred, params_sft, params_sweep, k_list = "1,2,3,4";
  std::size_t top = 10;

  auto* train_cmd = app.add_subcommand("train-linkpred", "Train the link predictor on the train split");
  add_common(train_cmd, c_train);

  auto* pred = app.add_subcommand("predict-links", "Rank items per user and score against test interactions");
  add_common(pred, c_pred);
  pred->add_option("--params", params_pred, "Trained parameters (trains when omitted)");
  pred->add_option("--top", top, "Items kept per user in rankings.jsonl");

  auto* sft = app.add_subcommand("build-sft", "Build alignment training records");
  add_common(sft, c_sft);
  sft->add_option("--params", params_sft, "Trained parameters (trains when omitted)");

  auto* run = app.add_subcommand("run", "Train, run inference and write the report");
  add_common(run, c_run);

  auto* sweep_cmd = app.add_subcommand("sweep-k", "Inference at several K with shared training");
  add_common(sweep_cmd, c_sweep);
  sweep_cmd->add_option("--k", k_list, "Comma-separated K values");
  sweep_cmd->add_option("--params", params_sweep, "Trained parameters (trains when omitted)");

  std::string eval_dir, eval_pairs, eval_task = "long_text";
  auto* eval = app.add_subcommand("evaluate", "Recompute a run's report, or score (generated, reference) pairs");
  eval->add_option("--run-dir", eval_dir, "Run directory holding records.jsonl and run_meta.json");
  eval->add_option("--pairs", eval_pairs, "JSONL of {generated, reference} or {predicted, gold}");
  eval->add_option("--task", eval_task, "long_text, short_text or rating");

  std::string grid = "default", table_out, noise = "gaussian";
  std::int64_t trials = 100000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  bool as_json = false;
  auto* trade = app.add_subcommand("simulate-tradeoff", "Closed form vs Monte Carlo MSE over a grid");
  trade->add_option("--grid", grid, "Grid JSON, or 'default' for the 27-point grid");
  trade->add_option("--trials", trials, "Monte Carlo trials per grid point");
  trade->add_option("--seed", seed, "Master seed");
  trade->add_option("--out", table_out, "Output table (stdout when omitted)");
  trade->add_option("--noise", noise, "gaussian or uniform");
  trade->add_option("--workers", workers, "Worker threads");
  trade->add_flag("--json", as_json, "Write JSON instead of CSV");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Re-render the human-readable report of a run directory");
  report->add_option("--run-dir", report_dir, "Run or sweep directory")->required();

  std::string toy_out;
  std::size_t toy_users = 30;
  std::uint64_t toy_seed = 7;
  auto* toy = app.add_subcommand("make-toy", "Write the synthetic toy review corpus");
  toy->add_option("--out", toy_out, "Output JSONL (stdout when omitted)");
  toy->add_option("--users", toy_users, "Number of users");
  toy->add_option("--seed", toy_seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*ingest) return cmd_ingest(ingest_in, ingest_out);
    if (*train_cmd) return cmd_train(c_train);
    if (*pred) return cmd_predict(c_pred, params_pred, top);
    if (*sft) return cmd_build_sft(c_sft, params_sft);
    if (*run) return cmd_run(c_run);
    if (*sweep_cmd) return cmd_sweep(c_sweep, k_list, params_sweep);
    if (*eval) return cmd_evaluate(eval_dir, eval_pairs, eval_task);
    if (*trade) return cmd_tradeoff(grid, trials, seed, table_out, noise, workers, as_json);
    if (*report) return cmd_report(report_dir);
    if (*toy) return cmd_make_toy(toy_out, toy_users, toy_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFatal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitOk;
}
