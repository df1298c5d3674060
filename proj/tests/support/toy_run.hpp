#pragma once

// A complete offline pipeline run over the 30-user toy corpus.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spgen/pipeline.hpp"
#include "spgen/toy.hpp"

namespace spgen::testing {

inline std::string write_toy_data(const std::filesystem::path& dir, std::size_t users = 30, std::uint64_t seed = 7) {
  ToyOptions opt;
  opt.users = users;
  opt.seed = seed;
  std::ostringstream os;
  write_interactions(os, toy_reviews(opt));
  const auto path = (dir / "toy.jsonl").string();
  write_text(path, os.str());
  return path;
}

inline RunConfig toy_config(const std::string& data, const std::filesystem::path& out, std::uint64_t seed = 11) {
  RunConfig cfg = run_config_from_json({{"data", data},
                                        {"output_dir", out.string()},
                                        {"encoder", {{"dimension", 32}}},
                                        {"train", {{"epochs", 20}}},
                                        {"K", 2},
                                        {"R", 3},
                                        {"tasks", {"long_text", "rating"}},
                                        {"seed", seed}});
  return cfg;
}

struct ToyRun {
  TrainingArtifacts training;
  InferenceResult inference;
  nlohmann::json report;
};

inline RetryPolicy no_sleep_retries() {
  RetryPolicy r;
  r.sleep = nullptr;
  return r;
}

inline ToyRun run_toy(const RunConfig& cfg) {
  ToyRun run;
  auto clients = make_clients(cfg, no_sleep_retries());
  const std::filesystem::path out(cfg.output_dir);
  run.training = run_training(cfg, clients, out);
  run.inference = run_inference(cfg, clients, run.training.params);
  auto meta = run_meta(cfg, clients, run.inference, file_digest(cfg.data_path));
  run.report = emit_run(out, meta, run.inference.records);
  return run;
}

/// Relative path -> bytes for every regular file under `dir`.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), dir).string()] = read_text(e.path());
  return out;
}

struct SftScan {
  std::size_t records = 0;
  std::size_t leaks = 0;
};

/// Counts alignment records whose prompt contains the target text of the
/// completion.
inline SftScan scan_sft(const std::filesystem::path& file, Task task) {
  SftScan scan;
  std::istringstream in(read_text(file));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    const auto target = parse_reasoned_output(j.at("completion").get<std::string>(), task).payload;
    ++scan.records;
    if (!target.empty() && contains(j.at("prompt").get<std::string>(), target)) ++scan.leaks;
  }
  return scan;
}

}  // namespace spgen::testing
