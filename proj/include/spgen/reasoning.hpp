#pragma once

// Prompt rendering, reasoning-path sampling and selection, alignment
// training records, synthetic review generation and output stripping.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "spgen/common.hpp"
#include "spgen/corpus.hpp"
#include "spgen/encoder.hpp"
#include "spgen/llmclient.hpp"
#include "spgen/metrics.hpp"
#include "spgen/retrieval.hpp"

namespace spgen {

enum class Task { long_text, short_text, rating };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::long_text: return "long_text";
    case Task::short_text: return "short_text";
    case Task::rating: return "rating";
  }
  return "long_text";
}

inline Task parse_task(const std::string& s) {
  if (s == "long_text") return Task::long_text;
  if (s == "short_text") return Task::short_text;
  if (s == "rating") return Task::rating;
  throw ConfigError("unknown task '" + s + "' (expected long_text, short_text or rating)");
}

/// Label of what the model must produce for a task; also the payload marker.
inline std::string output_label(Task t) {
  switch (t) {
    case Task::long_text: return "Review text";
    case Task::short_text: return "Review title";
    case Task::rating: return "Rating";
  }
  return "Review text";
}

inline std::string payload_marker(Task t) { return output_label(t) + ":"; }

/// Label of the text the model is conditioned on.
inline std::string input_label(Task t) { return t == Task::long_text ? "Review title" : "Review text"; }

/// What the task asks for, given a full interaction.
inline std::string task_input_of(const Interaction& x, Task t) { return t == Task::long_text ? x.title : x.text; }

inline std::string task_target_of(const Interaction& x, Task t) {
  switch (t) {
    case Task::long_text: return x.text;
    case Task::short_text: return x.title;
    case Task::rating: return std::to_string(x.rating);
  }
  return x.text;
}

enum class Variant { full, no_finetune, no_reasoning_no_finetune };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_finetune: return "-ft";
    case Variant::no_reasoning_no_finetune: return "-r-ft";
  }
  return "full";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "-ft" || s == "no_finetune") return Variant::no_finetune;
  if (s == "-r-ft" || s == "no_reasoning_no_finetune") return Variant::no_reasoning_no_finetune;
  throw ConfigError("unknown variant '" + s + "' (expected full, -ft or -r-ft)");
}

inline bool uses_reasoning(Variant v) { return v != Variant::no_reasoning_no_finetune; }

struct ContextEntry {
  std::string text;
  std::optional<int> rating;
  bool synthetic = false;
};

struct GenerationContext {
  std::vector<ContextEntry> own_history;
  std::vector<ContextEntry> similar_histories;
  PeerContext peer_texts;
  Task task = Task::long_text;
  std::string task_input;
};

struct TargetReview {
  std::string title;
  std::string text;
  int rating = 3;
};

struct ReasoningCandidate {
  int index = 0;
  std::string reasoning;
  std::string realized_output;
  std::optional<double> omega;
};

enum class Template { phi, xi, rho, direct };

struct PromptExtras {
  std::optional<TargetReview> expected;        // phi
  std::optional<std::string> reasoning;        // xi
  std::optional<std::string> candidate_text;   // xi
};

namespace detail {

inline std::string render_entries(const std::vector<ContextEntry>& xs, Task task) {
  if (xs.empty()) return "(none)";
  std::string out;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (k) out += '\n';
    out += "- " + xs[k].text;
    if (task == Task::rating && xs[k].rating) out += " (rating " + std::to_string(*xs[k].rating) + ")";
  }
  return out;
}

inline std::string render_peers(const PeerContext& p) {
  if (p.texts.empty()) return "(none)";
  std::string out;
  for (std::size_t k = 0; k < p.texts.size(); ++k) {
    if (k) out += '\n';
    out += "- " + p.texts[k].text;
  }
  return out;
}

inline std::string or_none(const std::string& s) { return trim(s).empty() ? "(none)" : s; }

inline std::string profile_block(const GenerationContext& c, bool blank_after_own) {
  std::string s = "User's own profile:\n" + render_entries(c.own_history, c.task) + "\n\n";
  (void)blank_after_own;
  s += "Similar profiles:\n" + render_entries(c.similar_histories, c.task) + "\n\n";
  s += "Product Reviews:\n" + render_peers(c.peer_texts) + "\n\n";
  return s;
}

inline const char* kGenerationSystem =
    "System: You are a personalized review generation assistant that generates high-quality reviews based on "
    "user history and context.\n\n";

}  // namespace detail

/// Instantiates one of the prompt templates. Empty sections render "(none)".
inline std::string render_prompt(Template t, const GenerationContext& c, const PromptExtras& extras = {}) {
  std::string s;
  const std::string out_label = output_label(c.task);
  switch (t) {
    case Template::phi: {
      if (!extras.expected) throw ConfigError("phi prompt needs the expected output");
      const auto& e = *extras.expected;
      s = detail::kGenerationSystem;
      s += "Given profile which contains past documents written by the same person (might be empty), documents "
           "written by users that have similar writing style, reviews on the target product, and reasoning.\n\n";
      s += detail::profile_block(c, true);
      s += "Based on the above information, provide a detailed reasoning path that explains how we can arrive at "
           "the expected output. Consider:\n"
           "1. User's Writing Style: Analyze their typical review length, tone, and language patterns.\n"
           "2. User's Preferences: What aspects of products do they typically focus on or value?\n"
           "3. Product Information: What are the commonly mentioned features, pros, and cons from other reviews?\n"
           "Do not limit the reasoning to the above points. You can use your own knowledge to reason about the "
           "user's review. It is important to make sure that you only talk about information from the profile "
           "while considering the expected output in the reasoning process. You cannot directly copy or mention "
           "anything about the expected output. The expected output is only used to determine the reasoning "
           "process and how profile can affect the expected output.\n\n";
      s += "Provide your reasoning that leads to the following expected review on the target product from the "
           "user:\n\n";
      s += "Expected Output:\n";
      s += "Title: \"" + e.title + "\"\n";
      s += "Text: \"" + e.text + "\"\n";
      s += "Rating: " + std::to_string(e.rating) + "\n\n";
      s += "As mentioned before, you cannot directly copy or mention anything about the expected output. The "
           "expected output is only used to determine the reasoning process. Do not mention the expected output "
           "in your reasoning. Your reasoning should only analyze the profile and the other reviews.\n\n";
      s += "Output your reasoning in a single paragraph. Do not output anything else.\n\n";
      s += "Your reasoning:";
      return s;
    }
    case Template::xi: {
      if (!extras.reasoning) throw ConfigError("xi prompt needs a reasoning path");
      if (!extras.candidate_text) throw ConfigError("xi prompt needs the candidate text");
      s = "System: You are a personalized review evaluation assistant that judges whether the generated reasoning "
          "and review are consistent with the user's style and product context.\n\n";
      s += "Given a profile containing past documents written by the same person (may be empty), documents from "
           "users with similar writing style, reviews on the target product, and a reasoning trace, you will "
           "evaluate and refine the review text.\n\n";
      s += detail::profile_block(c, true);
      s += "Reasoning:\n" + detail::or_none(*extras.reasoning) + "\n\n";
      s += "Based on the above information, evaluate how well the provided review text follows the reasoning and "
           "user profile. Consider:\n"
           "1. Faithfulness to the reasoning: Does the review follow the logical path outlined in the reasoning?\n"
           "2. Stylistic alignment: Does the review reflect the user's writing style and preferences?\n"
           "3. Product grounding: Is the review consistent with the product reviews and features mentioned?\n\n";
      s += "Do not copy directly from the reasoning or profiles. Your task is to provide a short evaluation and, if "
           "needed, produce a refined review text.\n\n";
      s += "Provide your output strictly in the format:\n";
      s += "Evaluation: <evaluation>. " + out_label + ": <" + out_label + ">\n\n";
      s += "Do not output anything else.\n\n";
      s += input_label(c.task) + ": " + detail::or_none(*extras.candidate_text);
      return s;
    }
    case Template::rho:
    case Template::direct: {
      s = detail::kGenerationSystem;
      s += "Given a profile containing past documents written by the same person (may be empty), documents "
           "written by users with similar writing style, and reviews on the target product.\n\n";
      s += detail::profile_block(c, true);
      const std::string what = c.task == Task::rating ? "rating (1-5)" : to_lower_ascii(out_label);
      const std::string from = to_lower_ascii(input_label(c.task));
      if (t == Template::rho) {
        s += "Reason and generate a " + what + " based on the following " + from + ". Use the format:\n";
        s += "Reasoning: <reasoning>. " + out_label + ": <" + out_label + ">.\n\n";
      } else {
        s += "Generate a " + what + " based on the following " + from + ".\n\n";
      }
      s += "Do not output anything else.\n\n";
      s += input_label(c.task) + ": " + detail::or_none(c.task_input);
      return s;
    }
  }
  return s;
}

struct ReasonedOutput {
  std::string reasoning;
  std::string payload;
};

/// Splits at the first occurrence of the task's payload marker; a leading
/// "Reasoning:" label is dropped.
inline ReasonedOutput parse_reasoned_output(const std::string& raw, Task task) {
  const auto marker = payload_marker(task);
  auto pos = raw.find(marker);
  if (pos == std::string::npos) throw ParseError("output has no '" + marker + "' marker: " + raw.substr(0, 120));
  ReasonedOutput out;
  out.reasoning = trim(std::string_view(raw).substr(0, pos));
  constexpr std::string_view label = "Reasoning:";
  if (out.reasoning.rfind(label, 0) == 0) out.reasoning = trim(std::string_view(out.reasoning).substr(label.size()));
  out.payload = trim(std::string_view(raw).substr(pos + marker.size()));
  if (out.payload.empty()) throw ParseError("empty payload after '" + marker + "'");
  return out;
}

/// Integer rating, clamped to 1..5. A single trailing period is tolerated.
inline int parse_rating(const std::string& payload) {
  auto t = trim(payload);
  if (!t.empty() && t.back() == '.') t.pop_back();
  if (t.empty() || t.size() > 9 || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw ParseError("rating payload is not an integer: '" + payload + "'");
  return std::clamp(std::stoi(t), 1, 5);
}

struct OmegaConfig {
  bool include_rouge1 = false;
};

/// Mean of ROUGE-L F1 and METEOR (plus ROUGE-1 F1 when configured).
inline double omega_score(const std::string& realized, const std::string& target, const OmegaConfig& cfg = {}) {
  auto c = tokenize(realized);
  auto r = tokenize(target);
  double sum = rougeL(c, r).f1 + meteor(c, r);
  if (cfg.include_rouge1) return (sum + rouge1(c, r).f1) / 3.0;
  return sum / 2.0;
}

struct SamplingConfig {
  int paths = 5;                     // R
  double reasoning_temperature = 0.8;
  double generation_temperature = 0.0;
  double synthetic_temperature = 0.8;  // first attempt; the retry is greedy
  int max_tokens = 512;
};

inline std::vector<ReasoningCandidate> sample_reasoning_paths(const LlmClient& llm, const GenerationContext& c,
                                                              const TargetReview& target,
                                                              const SamplingConfig& cfg = {}) {
  if (cfg.paths < 1) throw ConfigError("need at least one reasoning path");
  auto prompt = render_prompt(Template::phi, c, PromptExtras{target, {}, {}});
  auto texts = llm.complete(request_from_prompt(prompt, cfg.reasoning_temperature, cfg.paths, cfg.max_tokens));
  std::vector<ReasoningCandidate> out;
  for (std::size_t k = 0; k < texts.size(); ++k) out.push_back({static_cast<int>(k), trim(texts[k]), {}, std::nullopt});
  return out;
}

/// Realizes the candidate's text under the xi prompt and scores it against
/// the target. Output lacking the marker is scored as a whole.
inline ReasoningCandidate realize_and_score(const LlmClient& llm, const GenerationContext& c,
                                            ReasoningCandidate cand, const std::string& target_text,
                                            const SamplingConfig& cfg = {}, const OmegaConfig& ocfg = {}) {
  auto prompt = render_prompt(Template::xi, c, PromptExtras{std::nullopt, cand.reasoning, c.task_input});
  auto raw = llm.complete_one(request_from_prompt(prompt, cfg.generation_temperature, 1, cfg.max_tokens));
  try {
    cand.realized_output = parse_reasoned_output(raw, c.task).payload;
  } catch (const ParseError&) {
    cand.realized_output = trim(raw);
  }
  cand.omega = omega_score(cand.realized_output, target_text, ocfg);
  return cand;
}

/// argmax omega, lowest index on ties.
inline ReasoningCandidate select_golden(const std::vector<ReasoningCandidate>& cands) {
  if (cands.empty()) throw Error("no reasoning candidates to select from");
  const ReasoningCandidate* best = nullptr;
  for (const auto& c : cands) {
    if (!c.omega) throw Error("candidate " + std::to_string(c.index) + " has not been scored");
    if (!best || *c.omega > *best->omega || (*c.omega == *best->omega && c.index < best->index)) best = &c;
  }
  return *best;
}

struct SyntheticReview {
  std::string user_id;
  std::string item_id;
  std::string text;
  std::string reasoning;
  bool synthetic = true;
};

struct AugmentedProfile {
  std::string user_id;
  std::vector<Interaction> real;
  std::vector<SyntheticReview> synthetic;

  std::size_t size() const { return real.size() + synthetic.size(); }
};

inline SparsityBucket sparsity_bucket(const AugmentedProfile& p) { return bucket_for_count(p.real.size()); }

/// Real entries first, then synthetic ones. Returns a new object; the input
/// profile and every other profile stay untouched.
inline AugmentedProfile augment_profile(const UserProfile& profile, const std::vector<SyntheticReview>& synthetic) {
  AugmentedProfile out{profile.user_id, profile.entries, {}};
  for (const auto& s : synthetic) {
    if (s.user_id != profile.user_id)
      throw Error("synthetic review for '" + s.user_id + "' cannot augment '" + profile.user_id + "'");
    out.synthetic.push_back(s);
  }
  return out;
}

inline std::vector<ContextEntry> context_entries(const AugmentedProfile& p) {
  std::vector<ContextEntry> out;
  for (const auto& x : p.real) out.push_back({x.text, x.rating, false});
  for (const auto& s : p.synthetic) out.push_back({s.text, std::nullopt, true});
  return out;
}

struct GenerationOutcome {
  std::string payload;
  std::string reasoning;
  std::string raw;
  std::optional<int> rating;
  int retries = 0;
};

inline Template generation_template(Variant v) { return uses_reasoning(v) ? Template::rho : Template::direct; }

/// One generation under rho (or the direct prompt for the no-reasoning
/// variant), stripped of its reasoning.
inline GenerationOutcome generate_once(const LlmClient& llm, const GenerationContext& c, Variant v, double temperature,
                                       int max_tokens = 512) {
  auto prompt = render_prompt(generation_template(v), c);
  GenerationOutcome out;
  out.raw = llm.complete_one(request_from_prompt(prompt, temperature, 1, max_tokens));
  if (uses_reasoning(v)) {
    auto parsed = parse_reasoned_output(out.raw, c.task);
    out.reasoning = parsed.reasoning;
    out.payload = parsed.payload;
  } else {
    out.payload = trim(out.raw);
    if (c.task == Task::rating) {
      // Direct answers may still be labelled.
      auto pos = out.payload.find(payload_marker(Task::rating));
      if (pos != std::string::npos) out.payload = trim(std::string_view(out.payload).substr(pos + 7));
    }
    if (out.payload.empty()) throw ParseError("empty generation");
  }
  if (c.task == Task::rating) {
    out.rating = parse_rating(out.payload);
    out.payload = std::to_string(*out.rating);
  }
  return out;
}

inline GenerationOutcome generate_personalized(const LlmClient& llm, const GenerationContext& c, Variant v,
                                               const SamplingConfig& cfg = {}) {
  return generate_once(llm, c, v, cfg.generation_temperature, cfg.max_tokens);
}

struct SyntheticAttempt {
  std::optional<SyntheticReview> review;
  int retries = 0;
  std::string warning;
};

/// Synthetic review text for a predicted item, sampled at the synthetic
/// temperature. A parse failure is retried once greedily; a second failure
/// yields no review and a warning.
inline SyntheticAttempt generate_synthetic_review(const LlmClient& llm, const std::string& user_id,
                                                  const std::string& item_id, const GenerationContext& c, Variant v,
                                                  const SamplingConfig& cfg = {}) {
  SyntheticAttempt out;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      auto g = generate_once(llm, c, v, attempt == 0 ? cfg.synthetic_temperature : 0.0, cfg.max_tokens);
      out.review = SyntheticReview{user_id, item_id, g.payload, g.reasoning, true};
      return out;
    } catch (const ParseError& e) {
      if (attempt == 0) {
        ++out.retries;
        continue;
      }
      out.warning = "synthetic review for (" + user_id + ", " + item_id + ") skipped: " + e.what();
    }
  }
  return out;
}

/// Builds generation contexts from a graph plus user embeddings.
class ContextBuilder {
 public:
  ContextBuilder(const InteractionGraph& graph, std::map<std::string, Embedding> z_users,
                 std::size_t k_sim = kDefaultSimilarUsers, std::size_t k_peer = kDefaultPeerTexts)
      : graph_(graph), z_users_(std::move(z_users)), k_sim_(k_sim), k_peer_(k_peer) {}

  const std::map<std::string, Embedding>& user_embeddings() const { return z_users_; }

  std::vector<std::string> similar_to(const Embedding& z, const std::string& self) const {
    std::vector<std::string> ids;
    for (auto& s : similar_users_to(z_users_, z, self, k_sim_)) ids.push_back(s.user_id);
    return ids;
  }

  std::vector<std::string> similar_to(const std::string& user_id) const {
    auto it = z_users_.find(user_id);
    if (it == z_users_.end()) return {};
    return similar_to(it->second, user_id);
  }

  std::vector<ContextEntry> histories_of(const std::vector<std::string>& users) const {
    std::vector<ContextEntry> out;
    for (const auto& u : users)
      for (const auto& x : profile_or_empty(graph_, u).entries) out.push_back({x.text, x.rating, false});
    return out;
  }

  /// BM25 top-k over the item's reviews, skipping those written by `exclude_user`.
  PeerContext peers(const std::string& item_id, const std::string& query, const std::string& exclude_user) const {
    std::vector<Document> docs;
    std::map<std::string, int> seen;
    for (const auto& x : graph_.item_interactions(item_id)) {
      if (x.user_id == exclude_user) continue;
      docs.push_back({x.user_id + "#" + std::to_string(seen[x.user_id]++), x.text});
    }
    return peer_texts(item_id, std::move(docs), query, k_peer_);
  }

  std::size_t k_sim() const { return k_sim_; }
  std::size_t k_peer() const { return k_peer_; }

 private:
  const InteractionGraph& graph_;
  std::map<std::string, Embedding> z_users_;
  std::size_t k_sim_;
  std::size_t k_peer_;
};

/// Drops context entries that contain `target` so it cannot leak into a prompt.
inline void remove_leaks(GenerationContext& c, const std::string& target) {
  if (target.empty()) return;
  auto leaks = [&](const ContextEntry& e) { return contains(e.text, target); };
  c.own_history.erase(std::remove_if(c.own_history.begin(), c.own_history.end(), leaks), c.own_history.end());
  c.similar_histories.erase(std::remove_if(c.similar_histories.begin(), c.similar_histories.end(), leaks),
                            c.similar_histories.end());
  auto& p = c.peer_texts.texts;
  p.erase(std::remove_if(p.begin(), p.end(), [&](const PeerText& t) { return contains(t.text, target); }), p.end());
}

struct SftRecord {
  std::string prompt;
  std::string completion;
};

inline nlohmann::json to_json(const SftRecord& r) { return {{"prompt", r.prompt}, {"completion", r.completion}}; }

inline std::string sft_completion(const std::string& reasoning, const std::string& target, Task task) {
  return "Reasoning: " + reasoning + " " + payload_marker(task) + " " + target;
}

struct SftBuild {
  std::vector<SftRecord> records;
  std::vector<std::vector<double>> omegas;  // per record, candidate order
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
};

/// Leave-one-out alignment records: for every training interaction, the
/// prompt is rendered without that interaction's text and the completion is
/// the golden reasoning followed by the target.
inline SftBuild build_sft_records(const InteractionGraph& train_graph, const ContextBuilder& ctx, const LlmClient& llm,
                                  Task task, const SamplingConfig& scfg = {}, const OmegaConfig& ocfg = {}) {
  SftBuild out;
  const auto marker = payload_marker(task);
  for (const auto& u : train_graph.users()) {
    auto profile = profile_of(train_graph, u);
    auto similar = ctx.histories_of(ctx.similar_to(u));
    for (std::size_t j = 0; j < profile.entries.size(); ++j) {
      const auto& held = profile.entries[j];
      const auto target = task_target_of(held, task);
      const std::string where = "(" + u + ", " + held.item_id + ")";
      if (trim(target).empty()) {
        ++out.skipped;
        out.warnings.push_back("sft " + where + ": empty target");
        continue;
      }
      GenerationContext c;
      c.task = task;
      c.task_input = task_input_of(held, task);
      for (std::size_t k = 0; k < profile.entries.size(); ++k)
        if (k != j) c.own_history.push_back({profile.entries[k].text, profile.entries[k].rating, false});
      c.similar_histories = similar;
      c.peer_texts = ctx.peers(held.item_id, c.task_input, u);
      if (task != Task::rating) remove_leaks(c, target);
      if (c.own_history.empty() && c.similar_histories.empty() && c.peer_texts.texts.empty()) {
        ++out.skipped;
        out.warnings.push_back("sft " + where + ": empty context");
        continue;
      }
      auto prompt = render_prompt(Template::rho, c);
      // A one-digit rating matches almost any prompt, so only text targets are scanned.
      if (task != Task::rating && contains(prompt, target)) {
        ++out.skipped;
        out.warnings.push_back("sft " + where + ": target text occurs in the prompt");
        continue;
      }
      try {
        auto cands = sample_reasoning_paths(llm, c, TargetReview{held.title, held.text, held.rating}, scfg);
        std::vector<double> omegas;
        for (auto& cand : cands) {
          cand = realize_and_score(llm, c, std::move(cand), target, scfg, ocfg);
          omegas.push_back(*cand.omega);
        }
        auto golden = select_golden(cands);
        auto completion = sft_completion(golden.reasoning, target, task);
        std::size_t markers = 0;
        for (auto p = completion.find(marker); p != std::string::npos; p = completion.find(marker, p + 1)) ++markers;
        if (markers != 1) {
          ++out.skipped;
          out.warnings.push_back("sft " + where + ": payload marker occurs " + std::to_string(markers) + " times");
          continue;
        }
        out.records.push_back({std::move(prompt), std::move(completion)});
        out.omegas.push_back(std::move(omegas));
      } catch (const Error& e) {
        ++out.skipped;
        out.warnings.push_back("sft " + where + ": " + e.what());
      }
    }
  }
  return out;
}

}  // namespace spgen
