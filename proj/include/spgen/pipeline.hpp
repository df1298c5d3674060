#pragma once

// End-to-end orchestration: configuration, the training stage (link
// predictor, then alignment records), the inference stage (rank, synthesize,
// augment, generate, strip, score), the K sweep and report emission.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "spgen/common.hpp"
#include "spgen/corpus.hpp"
#include "spgen/encoder.hpp"
#include "spgen/external_encoder.hpp"
#include "spgen/linkpred.hpp"
#include "spgen/llmclient.hpp"
#include "spgen/metrics.hpp"
#include "spgen/offline_llm.hpp"
#include "spgen/reasoning.hpp"
#include "spgen/retrieval.hpp"

namespace spgen {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitPartial = 2, kExitFatal = 3 };

/// A pipeline stage failed; artifacts written by earlier stages are kept.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Configuration.

struct LlmRoleConfig {
  std::string backend = "mock";  // mock | http
  std::string base_url;
  std::string model;
  std::string api_key_env;
  double mock_malformed_rate = 0.0;
};

struct UserFilter {
  enum class Kind { all, sparse, list } kind = Kind::all;
  std::size_t sparse_max = 2;  // sparse: at most this many real history entries
  std::set<std::string> users;

  bool accepts(const std::string& user, std::size_t real_entries) const {
    switch (kind) {
      case Kind::all: return true;
      case Kind::sparse: return real_entries <= sparse_max;
      case Kind::list: return users.count(user) > 0;
    }
    return true;
  }
};

inline const std::vector<std::string> kRoles = {"reasoner", "generator", "judge"};

struct RunConfig {
  std::string data_path;
  std::string output_dir = "spgen_out";
  EncoderHandle encoder;
  TrainConfig train;
  int K = 2;
  std::size_t k_sim = kDefaultSimilarUsers;
  std::size_t k_peer = kDefaultPeerTexts;
  SamplingConfig sampling;  // R lives here as `paths`
  std::vector<Task> tasks{Task::long_text};
  Variant variant = Variant::full;
  std::map<std::string, LlmRoleConfig> roles{{"reasoner", {}}, {"generator", {}}, {"judge", {}}};
  std::uint64_t seed = 0;
  UserFilter user_filter;
  OmegaConfig omega;
  bool judge = true;
  std::size_t max_inflight = 4;
  unsigned workers = 1;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T dflt) {
  if (!j.contains(key)) return dflt;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const UserFilter& f) {
  switch (f.kind) {
    case UserFilter::Kind::all: return "all";
    case UserFilter::Kind::sparse: return {{"sparse_max", f.sparse_max}};
    case UserFilter::Kind::list: return std::vector<std::string>(f.users.begin(), f.users.end());
  }
  return "all";
}

inline UserFilter user_filter_from_json(const nlohmann::json& j) {
  UserFilter f;
  if (j.is_string()) {
    auto s = j.get<std::string>();
    if (s == "all") return f;
    if (s == "sparse") {
      f.kind = UserFilter::Kind::sparse;
      return f;
    }
    throw ConfigError("user_filter must be \"all\", \"sparse\", {\"sparse_max\": n} or a list of user ids");
  }
  if (j.is_object()) {
    detail::check_keys(j, {"sparse_max"}, "user_filter");
    f.kind = UserFilter::Kind::sparse;
    f.sparse_max = detail::get_or<std::size_t>(j, "sparse_max", 2);
    return f;
  }
  if (j.is_array()) {
    f.kind = UserFilter::Kind::list;
    for (const auto& u : j) {
      if (!u.is_string()) throw ConfigError("user_filter list entries must be strings");
      f.users.insert(u.get<std::string>());
    }
    return f;
  }
  throw ConfigError("user_filter has an unsupported shape");
}

/// Canonical form. The output directory is left out so that two runs that
/// differ only in where they write share a digest.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json roles = nlohmann::json::object();
  for (const auto& [name, r] : c.roles)
    roles[name] = {{"backend", r.backend},
                   {"base_url", r.base_url},
                   {"model", r.model},
                   {"api_key_env", r.api_key_env},
                   {"mock_malformed_rate", r.mock_malformed_rate}};
  nlohmann::json tasks = nlohmann::json::array();
  for (auto t : c.tasks) tasks.push_back(to_string(t));
  nlohmann::json enc{{"kind", c.encoder.kind == EncoderKind::external_service ? "external" : "hashed_ngrams"},
                     {"dimension", c.encoder.dimension}};
  if (c.encoder.endpoint) enc["endpoint"] = *c.encoder.endpoint;
  if (c.encoder.model_name) enc["model"] = *c.encoder.model_name;
  return {{"data", c.data_path},
          {"encoder", enc},
          {"train", to_json(c.train)},
          {"K", c.K},
          {"k_sim", c.k_sim},
          {"k_peer", c.k_peer},
          {"R", c.sampling.paths},
          {"temperatures",
           {{"reasoning", c.sampling.reasoning_temperature},
            {"synthetic", c.sampling.synthetic_temperature},
            {"generation", c.sampling.generation_temperature}}},
          {"max_tokens", c.sampling.max_tokens},
          {"tasks", tasks},
          {"variant", to_string(c.variant)},
          {"llm", roles},
          {"seed", c.seed},
          {"user_filter", to_json(c.user_filter)},
          {"omega_include_rouge1", c.omega.include_rouge1},
          {"judge", c.judge},
          {"max_inflight", c.max_inflight},
          {"workers", c.workers}};
}

inline std::string config_digest(const RunConfig& c) { return digest(to_json(c).dump()); }

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::get_or;
  detail::check_keys(j,
                     {"data", "output_dir", "encoder", "train", "K", "k_sim", "k_peer", "R", "temperatures",
                      "max_tokens", "tasks", "task", "variant", "llm", "seed", "user_filter", "omega_include_rouge1",
                      "judge", "max_inflight", "workers"},
                     "run config");
  RunConfig c;
  c.data_path = get_or<std::string>(j, "data", "");
  c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir);
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::check_keys(e, {"kind", "dimension", "endpoint", "model"}, "encoder");
    auto kind = get_or<std::string>(e, "kind", "hashed_ngrams");
    if (kind == "external") c.encoder.kind = EncoderKind::external_service;
    else if (kind != "hashed_ngrams") throw ConfigError("encoder kind must be hashed_ngrams or external");
    c.encoder.dimension = get_or<std::size_t>(e, "dimension", c.encoder.dimension);
    if (e.contains("endpoint")) c.encoder.endpoint = e.at("endpoint").get<std::string>();
    if (e.contains("model")) c.encoder.model_name = e.at("model").get<std::string>();
    if (c.encoder.dimension == 0) throw ConfigError("encoder dimension must be positive");
  }
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.train.seed = c.seed;
  if (j.contains("train")) {
    auto t = j.at("train");
    if (!t.contains("seed")) t["seed"] = c.seed;
    try {
      c.train = train_config_from_json(t);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  c.K = get_or<int>(j, "K", c.K);
  if (c.K < 0) throw ConfigError("K must be >= 0");
  c.k_sim = get_or<std::size_t>(j, "k_sim", c.k_sim);
  c.k_peer = get_or<std::size_t>(j, "k_peer", c.k_peer);
  c.sampling.paths = get_or<int>(j, "R", c.sampling.paths);
  if (c.sampling.paths < 1) throw ConfigError("R must be >= 1");
  if (j.contains("temperatures")) {
    const auto& t = j.at("temperatures");
    detail::check_keys(t, {"reasoning", "synthetic", "generation"}, "temperatures");
    c.sampling.reasoning_temperature = get_or<double>(t, "reasoning", c.sampling.reasoning_temperature);
    c.sampling.synthetic_temperature = get_or<double>(t, "synthetic", c.sampling.synthetic_temperature);
    c.sampling.generation_temperature = get_or<double>(t, "generation", c.sampling.generation_temperature);
  }
  c.sampling.max_tokens = get_or<int>(j, "max_tokens", c.sampling.max_tokens);
  if (j.contains("tasks") && j.contains("task")) throw ConfigError("give either 'task' or 'tasks', not both");
  if (j.contains("task")) c.tasks = {parse_task(j.at("task").get<std::string>())};
  if (j.contains("tasks")) {
    c.tasks.clear();
    for (const auto& t : j.at("tasks")) c.tasks.push_back(parse_task(t.get<std::string>()));
    if (c.tasks.empty()) throw ConfigError("tasks must not be empty");
  }
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("llm")) {
    const auto& l = j.at("llm");
    detail::check_keys(l, {"reasoner", "generator", "judge"}, "llm");
    for (auto it = l.begin(); it != l.end(); ++it) {
      detail::check_keys(it.value(), {"backend", "base_url", "model", "api_key_env", "mock_malformed_rate"},
                         "llm." + it.key());
      LlmRoleConfig r;
      r.backend = get_or<std::string>(it.value(), "backend", r.backend);
      if (r.backend != "mock" && r.backend != "http")
        throw ConfigError("llm." + it.key() + ".backend must be mock or http");
      r.base_url = get_or<std::string>(it.value(), "base_url", "");
      r.model = get_or<std::string>(it.value(), "model", "");
      r.api_key_env = get_or<std::string>(it.value(), "api_key_env", "");
      r.mock_malformed_rate = get_or<double>(it.value(), "mock_malformed_rate", 0.0);
      c.roles[it.key()] = r;
    }
  }
  if (j.contains("user_filter")) c.user_filter = user_filter_from_json(j.at("user_filter"));
  c.omega.include_rouge1 = get_or<bool>(j, "omega_include_rouge1", false);
  c.judge = get_or<bool>(j, "judge", true);
  c.max_inflight = get_or<std::size_t>(j, "max_inflight", c.max_inflight);
  c.workers = get_or<unsigned>(j, "workers", c.workers);
  if (c.max_inflight == 0 || c.workers == 0) throw ConfigError("max_inflight and workers must be >= 1");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

// Clients.

inline std::string env_or(const std::string& name, const std::string& fallback) {
  const char* v = std::getenv(name.c_str());
  return v && *v ? std::string(v) : fallback;
}

inline std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

/// SPGEN_<ROLE>_BASE_URL, SPGEN_<ROLE>_MODEL and SPGEN_<ROLE>_API_KEY
/// override the config for http backends.
inline std::shared_ptr<ChatBackend> make_backend(const std::string& role, const LlmRoleConfig& r) {
  if (r.backend == "mock") {
    OfflineMockOptions opt;
    opt.malformed_rate = r.mock_malformed_rate;
    return make_offline_backend(opt, r.model.empty() ? "offline-mock" : r.model);
  }
  const auto prefix = "SPGEN_" + upper(role) + "_";
  HttpEndpoint ep;
  ep.base_url = env_or(prefix + "BASE_URL", r.base_url);
  ep.api_key = env_or(prefix + "API_KEY", r.api_key_env.empty() ? std::string() : env_or(r.api_key_env, ""));
  const auto model = env_or(prefix + "MODEL", r.model);
  if (ep.base_url.empty()) throw ConfigError("llm." + role + " needs a base_url (or " + prefix + "BASE_URL)");
  if (model.empty()) throw ConfigError("llm." + role + " needs a model (or " + prefix + "MODEL)");
  return std::make_shared<HttpChatBackend>(ep, model);
}

struct Clients {
  std::shared_ptr<LlmClient> reasoner;
  std::shared_ptr<LlmClient> generator;
  std::shared_ptr<LlmClient> judge;
};

inline Clients make_clients(const RunConfig& c, RetryPolicy retry = {}) {
  auto role = [&](const std::string& name) {
    auto it = c.roles.find(name);
    LlmRoleConfig r = it == c.roles.end() ? LlmRoleConfig{} : it->second;
    return std::make_shared<LlmClient>(make_backend(name, r), retry, c.max_inflight);
  };
  return {role("reasoner"), role("generator"), role("judge")};
}

inline std::unique_ptr<TextEncoder> make_encoder(const EncoderHandle& h) {
  if (h.kind == EncoderKind::external_service)
    return std::make_unique<ExternalEncoder>(h, env_or("SPGEN_ENCODER_API_KEY", ""));
  return std::make_unique<HashedNgramEncoder>(h.dimension);
}

// Data.

/// Interactions from either a raw JSONL file or a saved graph container.
inline std::vector<Interaction> load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open data file " + path);
  std::string first;
  std::getline(in, first);
  in.clear();
  in.seekg(0);
  if (contains(first, "\"spgen-graph\"")) return load_graph(in).interactions();
  return ingest_interactions(in);
}

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return digest(ss.str());
}

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << s;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Training.

struct SftSummary {
  Task task = Task::long_text;
  std::size_t records = 0;
  std::size_t skipped = 0;
  std::vector<double> mean_omega_by_rank;
};

struct TrainingArtifacts {
  SageParams params;
  std::vector<EpochLog> log;
  std::vector<SftSummary> sft;
  std::vector<std::string> warnings;
  bool sft_built = false;

  std::size_t skipped() const {
    std::size_t n = 0;
    for (const auto& s : sft) n += s.skipped;
    return n;
  }
};

/// Mean omega at each rank position (1 = best) over all records.
inline std::vector<double> mean_omega_by_rank(const std::vector<std::vector<double>>& omegas) {
  std::vector<double> sum;
  std::vector<std::size_t> count;
  for (auto v : omegas) {
    std::sort(v.begin(), v.end(), std::greater<>());
    if (v.size() > sum.size()) {
      sum.resize(v.size(), 0.0);
      count.resize(v.size(), 0);
    }
    for (std::size_t k = 0; k < v.size(); ++k) {
      sum[k] += v[k];
      ++count[k];
    }
  }
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] /= static_cast<double>(count[k]);
  return sum;
}

inline InteractionGraph training_graph(const std::vector<Interaction>& all) {
  auto g = build_graph(filter_split(all, {Split::train}));
  if (g.edge_count() == 0) throw ConfigError("the train split has no interactions; nothing to train on");
  return g;
}

template <class F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

/// Link predictor first, then the alignment records, written to `out`.
inline TrainingArtifacts run_training(const RunConfig& cfg, const Clients& clients, const fs::path& out) {
  TrainingArtifacts art;
  auto all = run_stage("load", [&] { return load_interactions(cfg.data_path); });
  auto graph = training_graph(all);
  auto encoder = run_stage("encode", [&] { return make_encoder(cfg.encoder); });
  auto features = run_stage("encode", [&] { return build_features(*encoder, graph); });

  run_stage("linkpred", [&] {
    auto result = train(graph, features, cfg.train);
    art.params = std::move(result.params);
    art.log = std::move(result.log);
    fs::create_directories(out);
    save_params_file(art.params, (out / "params.json").string());
    std::ofstream log(out / "train_log.jsonl");
    write_train_log(art.log, log);
    return 0;
  });

  if (uses_reasoning(cfg.variant)) {
    run_stage("sft", [&] {
      auto eg = embed_graph(graph, features, art.params);
      ContextBuilder ctx(graph, eg.user_map(), cfg.k_sim, cfg.k_peer);
      for (auto task : cfg.tasks) {
        auto built = build_sft_records(graph, ctx, *clients.reasoner, task, cfg.sampling, cfg.omega);
        std::string lines;
        for (const auto& r : built.records) lines += to_json(r).dump() + "\n";
        write_text(out / ("sft_" + std::string(to_string(task)) + ".jsonl"), lines);
        SftSummary s{task, built.records.size(), built.skipped, mean_omega_by_rank(built.omegas)};
        nlohmann::json ranks{{"task", to_string(task)},
                             {"records", built.omegas.size()},
                             {"mean_omega_by_rank", s.mean_omega_by_rank},
                             {"omegas", built.omegas}};
        write_text(out / ("reasoning_ranks_" + std::string(to_string(task)) + ".json"), ranks.dump(2) + "\n");
        art.sft.push_back(std::move(s));
        for (auto& w : built.warnings) art.warnings.push_back(std::move(w));
      }
      art.sft_built = true;
      return 0;
    });
  }

  nlohmann::json summary{{"config_digest", config_digest(cfg)},
                         {"epochs", art.log.size()},
                         {"first_loss", art.log.empty() ? 0.0 : art.log.front().loss},
                         {"last_loss", art.log.empty() ? 0.0 : art.log.back().loss},
                         {"sft_built", art.sft_built},
                         {"warnings", art.warnings}};
  nlohmann::json sft = nlohmann::json::array();
  for (const auto& s : art.sft)
    sft.push_back({{"task", to_string(s.task)}, {"records", s.records}, {"skipped", s.skipped}});
  summary["sft"] = sft;
  write_text(out / "training_summary.json", summary.dump(2) + "\n");
  return art;
}

// Inference.

struct SyntheticSkip {
  std::string item_id;  // empty when no item was available
  std::string reason;
};

struct ExampleRecord {
  std::string user_id;
  std::string item_id;
  Task task = Task::long_text;
  SparsityBucket bucket = SparsityBucket::zero;
  std::size_t real_history = 0;
  std::size_t augmented_size = 0;
  std::optional<double> confidence;
  std::vector<std::string> augmentation_items;
  std::vector<SyntheticReview> synthetic;
  std::vector<SyntheticSkip> synthetic_skips;
  int retries = 0;
  std::string context_digest;
  std::string reasoning;
  std::string payload;
  std::string target;
  // Text tasks.
  std::optional<double> rouge1_f1, rougeL_f1, meteor_score, judge;
  // Rating task.
  std::optional<int> predicted_rating, gold_rating;
};

inline SparsityBucket parse_bucket(const std::string& s) {
  if (s == "zero") return SparsityBucket::zero;
  if (s == "one") return SparsityBucket::one;
  if (s == "two_plus") return SparsityBucket::two_plus;
  throw ParseError("unknown sparsity bucket '" + s + "'");
}

namespace detail {
template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}
template <class T>
std::optional<T> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}
}  // namespace detail

inline nlohmann::json to_json(const ExampleRecord& r) {
  nlohmann::json synth = nlohmann::json::array();
  for (const auto& s : r.synthetic)
    synth.push_back({{"item_id", s.item_id}, {"text", s.text}, {"reasoning", s.reasoning}, {"synthetic", true}});
  nlohmann::json skips = nlohmann::json::array();
  for (const auto& s : r.synthetic_skips) skips.push_back({{"item_id", s.item_id}, {"reason", s.reason}});
  nlohmann::json scores;
  if (r.task == Task::rating)
    scores = {{"predicted", detail::opt_json(r.predicted_rating)}, {"gold", detail::opt_json(r.gold_rating)}};
  else
    scores = {{"rouge1", detail::opt_json(r.rouge1_f1)},
              {"rougeL", detail::opt_json(r.rougeL_f1)},
              {"meteor", detail::opt_json(r.meteor_score)},
              {"judge", detail::opt_json(r.judge)}};
  return {{"user_id", r.user_id},
          {"item_id", r.item_id},
          {"task", to_string(r.task)},
          {"bucket", to_string(r.bucket)},
          {"real_history", r.real_history},
          {"augmented_size", r.augmented_size},
          {"confidence", detail::opt_json(r.confidence)},
          {"augmentation_items", r.augmentation_items},
          {"synthetic", synth},
          {"synthetic_skips", skips},
          {"retries", r.retries},
          {"context_digest", r.context_digest},
          {"reasoning", r.reasoning},
          {"payload", r.payload},
          {"target", r.target},
          {"scores", scores}};
}

inline ExampleRecord example_record_from_json(const nlohmann::json& j) {
  try {
    ExampleRecord r;
    r.user_id = j.at("user_id").get<std::string>();
    r.item_id = j.at("item_id").get<std::string>();
    r.task = parse_task(j.at("task").get<std::string>());
    r.bucket = parse_bucket(j.at("bucket").get<std::string>());
    r.real_history = j.at("real_history").get<std::size_t>();
    r.augmented_size = j.at("augmented_size").get<std::size_t>();
    r.confidence = detail::opt_from<double>(j, "confidence");
    r.augmentation_items = j.at("augmentation_items").get<std::vector<std::string>>();
    for (const auto& s : j.at("synthetic"))
      r.synthetic.push_back({r.user_id, s.at("item_id").get<std::string>(), s.at("text").get<std::string>(),
                             s.at("reasoning").get<std::string>(), true});
    for (const auto& s : j.at("synthetic_skips"))
      r.synthetic_skips.push_back({s.at("item_id").get<std::string>(), s.at("reason").get<std::string>()});
    r.retries = j.at("retries").get<int>();
    r.context_digest = j.at("context_digest").get<std::string>();
    r.reasoning = j.at("reasoning").get<std::string>();
    r.payload = j.at("payload").get<std::string>();
    r.target = j.at("target").get<std::string>();
    const auto& s = j.at("scores");
    if (r.task == Task::rating) {
      r.predicted_rating = detail::opt_from<int>(s, "predicted");
      r.gold_rating = detail::opt_from<int>(s, "gold");
    } else {
      r.rouge1_f1 = detail::opt_from<double>(s, "rouge1");
      r.rougeL_f1 = detail::opt_from<double>(s, "rougeL");
      r.meteor_score = detail::opt_from<double>(s, "meteor");
      r.judge = detail::opt_from<double>(s, "judge");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed example record: ") + e.what());
  }
}

struct ExampleSkip {
  std::string user_id;
  std::string item_id;
  Task task = Task::long_text;
  std::string reason;
};

struct LocalityAudit {
  std::size_t profiles_checked = 0;
  std::vector<std::string> changed;
};

struct InferenceResult {
  int K = 0;
  std::size_t targets = 0;
  std::vector<ExampleRecord> records;
  std::vector<ExampleSkip> skips;
  std::vector<std::string> warnings;
  LocalityAudit locality;
};

inline std::string profile_digest(const UserProfile& p) {
  std::string s = p.user_id;
  for (const auto& x : p.entries) s += "\n" + to_json_line(x);
  return digest(s);
}

inline std::map<std::string, std::string> profile_digests(const InteractionGraph& g) {
  std::map<std::string, std::string> out;
  for (const auto& u : g.users()) out[u] = profile_digest(profile_of(g, u));
  return out;
}

namespace detail {

// Graph, features and embeddings the inference stage ranks against.
struct InferenceState {
  InteractionGraph graph;
  FeatureTable features;
  EmbeddedGraph eg;
  std::unique_ptr<ContextBuilder> builder;
};

inline std::unique_ptr<InferenceState> make_state(InteractionGraph g, const TextEncoder& enc, const SageParams& p,
                                                  const RunConfig& cfg) {
  auto s = std::make_unique<InferenceState>();
  s->graph = std::move(g);
  s->features = build_features(enc, s->graph);
  s->eg = embed_graph(s->graph, s->features, p);
  s->builder = std::make_unique<ContextBuilder>(s->graph, s->eg.user_map(), cfg.k_sim, cfg.k_peer);
  return s;
}

inline Vec to_vec(const Embedding& e) { return Eigen::Map<const Vec>(e.data(), static_cast<Eigen::Index>(e.size())); }

inline Embedding to_embedding(const Vec& v) { return Embedding(v.data(), v.data() + v.size()); }

}  // namespace detail

struct InferenceTarget {
  Interaction interaction;
  Task task = Task::long_text;
};

/// Per test interaction and task: rank candidate items (excluding the
/// target), synthesize reviews for the top K, augment the user's profile
/// locally, generate the target output and score it.
inline InferenceResult run_inference(const RunConfig& cfg, const Clients& clients, const SageParams& params,
                                     std::optional<int> k_override = std::nullopt) {
  InferenceResult res;
  res.K = k_override.value_or(cfg.K);
  if (res.K < 0) throw ConfigError("K must be >= 0");
  auto all = run_stage("load", [&] { return load_interactions(cfg.data_path); });
  auto encoder = run_stage("encode", [&] { return make_encoder(cfg.encoder); });
  auto base = run_stage("embed", [&] {
    return detail::make_state(build_graph(filter_split(all, {Split::train, Split::validation})), *encoder, params, cfg);
  });

  std::vector<InferenceTarget> targets;
  for (const auto& x : all) {
    if (x.split != Split::test) continue;
    const auto real = profile_or_empty(base->graph, x.user_id).entries.size();
    if (!cfg.user_filter.accepts(x.user_id, real)) continue;
    for (auto t : cfg.tasks) targets.push_back({x, t});
  }
  std::stable_sort(targets.begin(), targets.end(), [](const InferenceTarget& a, const InferenceTarget& b) {
    const auto& x = a.interaction;
    const auto& y = b.interaction;
    if (x.user_id != y.user_id) return x.user_id < y.user_id;
    if (x.item_id != y.item_id) return x.item_id < y.item_id;
    return static_cast<int>(a.task) < static_cast<int>(b.task);
  });
  res.targets = targets.size();

  // Targets whose edge also occurs in train/validation rank against a graph
  // without that edge.
  std::map<InteractionGraph::Edge, std::unique_ptr<detail::InferenceState>> removed;
  run_stage("embed", [&] {
    for (const auto& t : targets) {
      InteractionGraph::Edge e{t.interaction.user_id, t.interaction.item_id};
      if (base->graph.has_edge(e.first, e.second) && !removed.count(e))
        removed[e] = detail::make_state(base->graph.without_edge(e.first, e.second), *encoder, params, cfg);
    }
    return 0;
  });

  const auto before = profile_digests(base->graph);

  struct Slot {
    std::optional<ExampleRecord> record;
    std::optional<ExampleSkip> skip;
    std::vector<std::string> warnings;
  };
  std::vector<Slot> slots(targets.size());

  auto process = [&](std::size_t idx) {
    const auto& t = targets[idx];
    const auto& x = t.interaction;
    Slot& slot = slots[idx];
    auto skip = [&](const std::string& reason) { slot.skip = ExampleSkip{x.user_id, x.item_id, t.task, reason}; };
    const detail::InferenceState& st =
        removed.count({x.user_id, x.item_id}) ? *removed.at({x.user_id, x.item_id}) : *base;
    try {
      ExampleRecord r;
      r.user_id = x.user_id;
      r.item_id = x.item_id;
      r.task = t.task;
      r.target = task_target_of(x, t.task);
      const auto profile = profile_or_empty(st.graph, x.user_id);
      r.real_history = profile.entries.size();
      r.bucket = sparsity_bucket(profile);

      // Node embedding: trained graph for known users, the target item's
      // feature through the isolated-node path for cold-start users.
      std::optional<Vec> z_u;
      if (st.graph.has_user(x.user_id)) z_u = st.eg.user_z(x.user_id);
      else if (st.graph.has_item(x.item_id)) z_u = embed_isolated(params, detail::to_vec(st.features.items.at(x.item_id)));

      std::vector<std::string> similar;
      if (z_u) {
        std::set<std::string> exclude{x.item_id};
        if (st.graph.has_user(x.user_id))
          for (const auto& i : st.graph.user_neighbors(x.user_id)) exclude.insert(i);
        auto ranked = rank_items_for(st.eg, *z_u, params, exclude);
        const std::size_t top = std::min<std::size_t>(std::max(res.K, 1), ranked.size());
        if (top > 0) {
          double sum = 0;
          for (std::size_t k = 0; k < top; ++k) sum += ranked[k].probability;
          r.confidence = sum / static_cast<double>(top);
        }
        for (std::size_t k = 0; k < ranked.size() && static_cast<int>(k) < res.K; ++k)
          r.augmentation_items.push_back(ranked[k].item_id);
        for (std::size_t k = r.augmentation_items.size(); static_cast<int>(k) < res.K; ++k)
          r.synthetic_skips.push_back({"", "insufficient_candidates"});
        similar = st.builder->similar_to(detail::to_embedding(*z_u), x.user_id);
      } else {
        for (int k = 0; k < res.K; ++k) r.synthetic_skips.push_back({"", "no_embedding"});
        slot.warnings.push_back("(" + x.user_id + ", " + x.item_id + "): no embedding for a cold-start user on an unseen item");
      }
      const auto similar_entries = st.builder->histories_of(similar);

      std::vector<ContextEntry> own;
      std::vector<std::string> own_texts;
      for (const auto& e : profile.entries) {
        own.push_back({e.text, e.rating, false});
        own_texts.push_back(e.text);
      }
      std::vector<SyntheticReview> synthetic;
      for (const auto& item : r.augmentation_items) {
        GenerationContext c;
        c.task = Task::long_text;
        c.own_history = own;
        c.similar_histories = similar_entries;
        c.peer_texts = st.builder->peers(item, join(own_texts, " "), x.user_id);
        try {
          auto attempt = generate_synthetic_review(*clients.generator, x.user_id, item, c, cfg.variant, cfg.sampling);
          r.retries += attempt.retries;
          if (attempt.review) synthetic.push_back(std::move(*attempt.review));
          else {
            r.synthetic_skips.push_back({item, "parse_error"});
            slot.warnings.push_back(attempt.warning);
          }
        } catch (const Error& e) {
          r.synthetic_skips.push_back({item, "llm_error"});
          slot.warnings.push_back("synthetic review for (" + x.user_id + ", " + item + ") failed: " + e.what());
        }
      }
      auto augmented = augment_profile(profile, synthetic);
      r.synthetic = augmented.synthetic;
      r.augmented_size = augmented.size();

      GenerationContext c;
      c.task = t.task;
      c.task_input = task_input_of(x, t.task);
      c.own_history = context_entries(augmented);
      c.similar_histories = similar_entries;
      c.peer_texts = st.builder->peers(x.item_id, c.task_input, x.user_id);
      r.context_digest = digest(render_prompt(generation_template(cfg.variant), c));

      GenerationOutcome g;
      try {
        g = generate_personalized(*clients.generator, c, cfg.variant, cfg.sampling);
      } catch (const ParseError& e) {
        skip(std::string("generation_parse_error: ") + e.what());
        return;
      }
      r.reasoning = g.reasoning;
      r.payload = g.payload;
      if (t.task == Task::rating) {
        r.predicted_rating = g.rating;
        r.gold_rating = x.rating;
      } else {
        auto cand = tokenize(r.payload), ref = tokenize(r.target);
        r.rouge1_f1 = rouge1(cand, ref).f1;
        r.rougeL_f1 = rougeL(cand, ref).f1;
        r.meteor_score = meteor(cand, ref);
        if (cfg.judge) {
          try {
            r.judge = judge_score(*clients.judge, r.payload, r.target).normalized;
          } catch (const Error& e) {
            slot.warnings.push_back("judge for (" + x.user_id + ", " + x.item_id + ") failed: " + e.what());
          }
        }
      }
      slot.record = std::move(r);
    } catch (const Error& e) {
      skip(std::string("error: ") + e.what());
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(cfg.workers, static_cast<unsigned>(targets.size())));
  if (workers <= 1) {
    for (std::size_t k = 0; k < targets.size(); ++k) process(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k; (k = next++) < targets.size();) process(k);
      });
    for (auto& th : pool) th.join();
  }

  for (auto& s : slots) {
    if (s.record) res.records.push_back(std::move(*s.record));
    if (s.skip) res.skips.push_back(std::move(*s.skip));
    for (auto& w : s.warnings) res.warnings.push_back(std::move(w));
  }

  const auto after = profile_digests(base->graph);
  res.locality.profiles_checked = before.size();
  for (const auto& [u, d] : before) {
    auto it = after.find(u);
    if (it == after.end() || it->second != d) res.locality.changed.push_back(u);
  }
  return res;
}

// Aggregation and reports.

inline nlohmann::json round_json(double x) {
  // Twelve significant digits keep reports stable across platforms.
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return nlohmann::json::parse(buf);
}

inline nlohmann::json metric_block(const std::vector<const ExampleRecord*>& rs, Task task) {
  nlohmann::json j{{"n", rs.size()}};
  if (task == Task::rating) {
    std::vector<double> p, g;
    for (auto* r : rs)
      if (r->predicted_rating && r->gold_rating) {
        p.push_back(*r->predicted_rating);
        g.push_back(*r->gold_rating);
      }
    j["rmse"] = p.empty() ? nlohmann::json() : round_json(rmse(p, g));
    j["mae"] = p.empty() ? nlohmann::json() : round_json(mae(p, g));
    return j;
  }
  auto mean = [&](auto field) -> nlohmann::json {
    double s = 0;
    std::size_t n = 0;
    for (auto* r : rs)
      if (auto v = r->*field) {
        s += *v;
        ++n;
      }
    return n ? round_json(s / static_cast<double>(n)) : nlohmann::json();
  };
  j["rouge1"] = mean(&ExampleRecord::rouge1_f1);
  j["rougeL"] = mean(&ExampleRecord::rougeL_f1);
  j["meteor"] = mean(&ExampleRecord::meteor_score);
  j["judge"] = mean(&ExampleRecord::judge);
  return j;
}

inline std::vector<std::string> deviation_notes(const RunConfig& cfg) {
  std::vector<std::string> out{
      "METEOR uses exact lowercase unigram matching only (no stemming or synonym modules); alpha 0.9, beta 3, "
      "gamma 0.5; chunk count minimized by exhaustive search with a greedy fallback on very long inputs.",
      std::string("Reasoning-path score = mean of ROUGE-L F1 and METEOR") +
          (cfg.omega.include_rouge1 ? " and ROUGE-1 F1." : "."),
      "Generator fine-tuning happens outside this tool; the emitted alignment files are its input and the "
      "'full' variant assumes the configured generator was tuned on them.",
      "Synthetic reviews for the K predicted items are generated independently from the real history.",
      "The held-out target edge is removed from the ranking graph and the target item is excluded from "
      "augmentation candidates.",
      "Cold-start users are embedded through the isolated-node path with the target item's feature vector."};
  return out;
}

inline nlohmann::json run_meta(const RunConfig& cfg, const Clients& clients, const InferenceResult& res,
                               const std::string& data_digest) {
  nlohmann::json skips = nlohmann::json::array();
  for (const auto& s : res.skips)
    skips.push_back({{"user_id", s.user_id}, {"item_id", s.item_id}, {"task", to_string(s.task)}, {"reason", s.reason}});
  std::size_t attempted = 0, accepted = 0, synth_skipped = 0, retries = 0, violations = 0;
  for (const auto& r : res.records) {
    attempted += r.augmentation_items.size();
    accepted += r.synthetic.size();
    synth_skipped += r.synthetic_skips.size();
    retries += static_cast<std::size_t>(r.retries);
    if (r.augmented_size != r.real_history + static_cast<std::size_t>(res.K) - r.synthetic_skips.size()) ++violations;
  }
  return {{"format", "spgen-run"},
          {"format_version", 1},
          {"provenance",
           {{"config_digest", config_digest(cfg)},
            {"data_digest", data_digest},
            {"seed", cfg.seed},
            {"variant", to_string(cfg.variant)},
            {"K", res.K},
            {"k_sim", cfg.k_sim},
            {"k_peer", cfg.k_peer},
            {"R", cfg.sampling.paths},
            {"models",
             {{"reasoner", clients.reasoner->model_name()},
              {"generator", clients.generator->model_name()},
              {"judge", clients.judge->model_name()}}}}},
          {"tasks", [&] {
             nlohmann::json t = nlohmann::json::array();
             for (auto task : cfg.tasks) t.push_back(to_string(task));
             return t;
           }()},
          {"deviations", deviation_notes(cfg)},
          {"targets", res.targets},
          {"skips", skips},
          {"warnings", res.warnings},
          {"augmentation",
           {{"K", res.K},
            {"attempted", attempted},
            {"accepted", accepted},
            {"skipped", synth_skipped},
            {"retries", retries},
            {"profile_size_violations", violations}}},
          {"locality", {{"profiles_checked", res.locality.profiles_checked}, {"changed", res.locality.changed}}}};
}

/// Aggregates per task, sparsity bucket and confidence half. Every number is
/// computed from the per-example records.
inline nlohmann::json build_report(const nlohmann::json& meta, const std::vector<ExampleRecord>& records) {
  nlohmann::json report = meta;
  report["format"] = "spgen-report";
  nlohmann::json tasks = nlohmann::json::object();
  for (const auto& tj : meta.at("tasks")) {
    const auto task = parse_task(tj.get<std::string>());
    std::vector<const ExampleRecord*> rs;
    for (const auto& r : records)
      if (r.task == task) rs.push_back(&r);
    nlohmann::json t;
    t["overall"] = metric_block(rs, task);
    nlohmann::json buckets = nlohmann::json::object();
    for (auto b : {SparsityBucket::zero, SparsityBucket::one, SparsityBucket::two_plus}) {
      std::vector<const ExampleRecord*> sub;
      for (auto* r : rs)
        if (r->bucket == b) sub.push_back(r);
      buckets[to_string(b)] = metric_block(sub, task);
    }
    t["buckets"] = buckets;
    std::vector<ScoredExample> scored;
    std::map<std::string, const ExampleRecord*> by_id;
    for (auto* r : rs)
      if (r->confidence) {
        auto id = r->user_id + "|" + r->item_id;
        scored.push_back({id, *r->confidence});
        by_id[id] = r;
      }
    auto split = confidence_split(scored);
    auto pick = [&](const std::vector<std::string>& ids) {
      std::vector<const ExampleRecord*> out;
      for (const auto& id : ids) out.push_back(by_id.at(id));
      return out;
    };
    t["confidence"] = {{"top_50", metric_block(pick(split.top_half), task)},
                       {"bottom_50", metric_block(pick(split.bottom_half), task)},
                       {"without_confidence", rs.size() - scored.size()}};
    tasks[to_string(task)] = t;
  }
  report["results"] = tasks;
  report["counts"] = {{"targets", meta.at("targets")},
                      {"records", records.size()},
                      {"skipped", meta.at("skips").size()},
                      {"conserved", records.size() + meta.at("skips").size() == meta.at("targets").get<std::size_t>()}};
  return report;
}

namespace detail {

inline std::string cell(const nlohmann::json& v) {
  if (v.is_null()) return "-";
  if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
  return buf;
}

inline std::vector<std::string> metric_names(const std::string& task) {
  if (task == "rating") return {"rmse", "mae"};
  return {"rouge1", "rougeL", "meteor", "judge"};
}

inline std::string metric_label(const std::string& m) {
  static const std::map<std::string, std::string> labels{{"rouge1", "ROUGE-1"}, {"rougeL", "ROUGE-L"},
                                                         {"meteor", "METEOR"},  {"judge", "Judge"},
                                                         {"rmse", "RMSE"},      {"mae", "MAE"}};
  return labels.at(m);
}

inline std::string table_header(const std::string& first, const std::vector<std::string>& metrics) {
  std::string h = "| " + first + " | n |", sep = "|---|---|";
  for (const auto& m : metrics) {
    h += " " + metric_label(m) + " |";
    sep += "---|";
  }
  return h + "\n" + sep + "\n";
}

inline std::string table_row(const std::string& name, const nlohmann::json& block,
                             const std::vector<std::string>& metrics) {
  std::string row = "| " + name + " | " + cell(block.at("n")) + " |";
  for (const auto& m : metrics) row += " " + cell(block.at(m)) + " |";
  return row + "\n";
}

}  // namespace detail

inline std::string render_report_markdown(const nlohmann::json& report) {
  std::ostringstream md;
  const auto& prov = report.at("provenance");
  md << "# Run report\n\n";
  md << "- config digest: `" << prov.at("config_digest").get<std::string>() << "`\n";
  md << "- data digest: `" << prov.at("data_digest").get<std::string>() << "`\n";
  md << "- seed: " << prov.at("seed").dump() << "\n";
  md << "- variant: " << prov.at("variant").get<std::string>() << "\n";
  md << "- K = " << prov.at("K").dump() << ", k_sim = " << prov.at("k_sim").dump()
     << ", k_peer = " << prov.at("k_peer").dump() << ", R = " << prov.at("R").dump() << "\n";
  const auto& models = prov.at("models");
  md << "- models: reasoner " << models.at("reasoner").get<std::string>() << ", generator "
     << models.at("generator").get<std::string>() << ", judge " << models.at("judge").get<std::string>() << "\n\n";

  for (auto it = report.at("results").begin(); it != report.at("results").end(); ++it) {
    const auto metrics = detail::metric_names(it.key());
    const auto& t = it.value();
    md << "## Task: " << it.key() << "\n\n";
    md << detail::table_header("Split", metrics) << detail::table_row("all", t.at("overall"), metrics) << "\n";
    md << "### By history size\n\n" << detail::table_header("Real history", metrics);
    for (const char* b : {"zero", "one", "two_plus"}) md << detail::table_row(b, t.at("buckets").at(b), metrics);
    md << "\n### By link prediction confidence\n\n" << detail::table_header("Half", metrics);
    md << detail::table_row("top 50%", t.at("confidence").at("top_50"), metrics);
    md << detail::table_row("bottom 50%", t.at("confidence").at("bottom_50"), metrics) << "\n";
  }

  const auto& counts = report.at("counts");
  md << "## Counts\n\n";
  md << "- targets: " << counts.at("targets").dump() << ", records: " << counts.at("records").dump()
     << ", skipped: " << counts.at("skipped").dump() << "\n";
  const auto& aug = report.at("augmentation");
  md << "- synthetic reviews: attempted " << aug.at("attempted").dump() << ", accepted " << aug.at("accepted").dump()
     << ", skipped " << aug.at("skipped").dump() << ", retries " << aug.at("retries").dump()
     << ", profile size violations " << aug.at("profile_size_violations").dump() << "\n";
  const auto& loc = report.at("locality");
  md << "- locality audit: " << loc.at("profiles_checked").dump() << " profiles checked, "
     << loc.at("changed").size() << " changed\n";
  if (!report.at("skips").empty()) {
    md << "\n### Skipped examples\n\n";
    for (const auto& s : report.at("skips"))
      md << "- " << s.at("user_id").get<std::string>() << " / " << s.at("item_id").get<std::string>() << " ("
         << s.at("task").get<std::string>() << "): " << s.at("reason").get<std::string>() << "\n";
  }
  md << "\n## Deviations\n\n";
  for (const auto& d : report.at("deviations")) md << "- " << d.get<std::string>() << "\n";
  return md.str();
}

inline std::vector<ExampleRecord> read_records(const fs::path& p) {
  std::vector<ExampleRecord> out;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) out.push_back(example_record_from_json(nlohmann::json::parse(line)));
  return out;
}

/// Writes records.jsonl, run_meta.json, report.json and report.md.
inline nlohmann::json emit_run(const fs::path& dir, const nlohmann::json& meta, const std::vector<ExampleRecord>& records) {
  fs::create_directories(dir);
  std::string lines;
  for (const auto& r : records) lines += to_json(r).dump() + "\n";
  write_text(dir / "records.jsonl", lines);
  write_text(dir / "run_meta.json", meta.dump(2) + "\n");
  auto report = build_report(meta, records);
  write_text(dir / "report.json", report.dump(2) + "\n");
  write_text(dir / "report.md", render_report_markdown(report));
  return report;
}

/// Recomputes report.json and report.md from the records and metadata of a
/// finished run directory.
inline nlohmann::json emit_report(const fs::path& dir) {
  auto meta = nlohmann::json::parse(read_text(dir / "run_meta.json"));
  auto report = build_report(meta, read_records(dir / "records.jsonl"));
  write_text(dir / "report.json", report.dump(2) + "\n");
  write_text(dir / "report.md", render_report_markdown(report));
  return report;
}

// K sweep.

inline nlohmann::json sweep_table(const std::vector<int>& ks, const std::vector<nlohmann::json>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  if (!reports.empty()) {
    for (auto it = reports.front().at("results").begin(); it != reports.front().at("results").end(); ++it) {
      for (const auto& m : detail::metric_names(it.key())) {
        nlohmann::json values = nlohmann::json::array();
        for (const auto& r : reports) values.push_back(r.at("results").at(it.key()).at("overall").at(m));
        rows.push_back({{"task", it.key()}, {"metric", m}, {"values", values}});
      }
    }
  }
  return {{"format", "spgen-sweep-k"}, {"K", ks}, {"rows", rows}};
}

inline std::string render_sweep_markdown(const nlohmann::json& table) {
  std::ostringstream md;
  md << "# Sensitivity to K\n\n| Task | Metric |";
  std::string sep = "|---|---|";
  for (const auto& k : table.at("K")) {
    md << " K=" << k.dump() << " |";
    sep += "---|";
  }
  md << "\n" << sep << "\n";
  for (const auto& r : table.at("rows")) {
    md << "| " << r.at("task").get<std::string>() << " | " << detail::metric_label(r.at("metric").get<std::string>())
       << " |";
    for (const auto& v : r.at("values")) md << " " << detail::cell(v) << " |";
    md << "\n";
  }
  return md.str();
}

struct RunOutcome {
  nlohmann::json report;
  std::size_t skipped = 0;
};

/// One inference run at the given K into `dir`.
inline RunOutcome infer_and_report(const RunConfig& cfg, const Clients& clients, const SageParams& params, int K,
                                   const fs::path& dir) {
  auto res = run_inference(cfg, clients, params, K);
  auto meta = run_meta(cfg, clients, res, file_digest(cfg.data_path));
  auto report = emit_run(dir, meta, res.records);
  return {report, res.skips.size()};
}

inline nlohmann::json sweep_k(const RunConfig& cfg, const Clients& clients, const SageParams& params,
                              const std::vector<int>& ks, const fs::path& out, std::size_t* skipped = nullptr) {
  if (ks.empty()) throw ConfigError("no K values to sweep");
  std::set<int> seen;
  for (int k : ks) {
    if (k < 0) throw ConfigError("K values must be >= 0");
    if (!seen.insert(k).second) throw ConfigError("K values must be distinct");
  }
  std::vector<nlohmann::json> reports;
  for (int k : ks) {
    auto o = infer_and_report(cfg, clients, params, k, out / ("k" + std::to_string(k)));
    if (skipped) *skipped += o.skipped;
    reports.push_back(std::move(o.report));
  }
  auto table = sweep_table(ks, reports);
  write_text(out / "sweep_k.json", table.dump(2) + "\n");
  write_text(out / "sweep_k.md", render_sweep_markdown(table));
  return table;
}

// Link-prediction evaluation against test interactions.

struct LinkEvaluation {
  std::vector<RankingResult> rankings;
  std::map<std::string, std::set<std::string>> gold;
  std::optional<LpMetrics> metrics;
};

/// Ranks, for every user with a test interaction on a known item, all items
/// the user has not interacted with in `graph`.
inline LinkEvaluation evaluate_links(const InteractionGraph& graph, const FeatureTable& features,
                                     const SageParams& params, const std::vector<Interaction>& test) {
  LinkEvaluation ev;
  for (const auto& x : test)
    if (graph.has_user(x.user_id) && graph.has_item(x.item_id) && !graph.has_edge(x.user_id, x.item_id))
      ev.gold[x.user_id].insert(x.item_id);
  auto eg = embed_graph(graph, features, params);
  for (const auto& [u, _] : ev.gold) ev.rankings.push_back(rank_candidates(eg, graph, params, u));
  if (!ev.rankings.empty()) ev.metrics = lp_metrics(ev.rankings, ev.gold);
  return ev;
}

}  // namespace spgen
