#pragma once

// Deterministic stand-in for the chat models, used for offline runs and
// tests. It reads the rendered prompt, recognizes which template produced
// it, and answers in that template's output format using words taken from
// the prompt's own context sections. Outputs are a pure function of the
// request and sample index.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "spgen/common.hpp"
#include "spgen/llmclient.hpp"
#include "spgen/metrics.hpp"

namespace spgen {

struct OfflineMockOptions {
  // Fraction of sampled (temperature > 0) generation replies that come back
  // without the payload marker.
  double malformed_rate = 0.0;
  std::size_t text_words = 18;
};

namespace offline {

inline std::string section(const std::string& prompt, const std::string& header) {
  auto p = prompt.find(header + "\n");
  if (p == std::string::npos) return {};
  p += header.size() + 1;
  auto e = prompt.find("\n\n", p);
  return prompt.substr(p, e == std::string::npos ? std::string::npos : e - p);
}

inline std::vector<std::string> bullet_lines(const std::string& block) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= block.size()) {
    auto end = block.find('\n', start);
    auto line = block.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (line.rfind("- ", 0) == 0) out.push_back(line.substr(2));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

inline std::string line_after(const std::string& prompt, const std::string& label) {
  auto p = prompt.rfind(label);
  if (p == std::string::npos) return {};
  p += label.size();
  auto e = prompt.find('\n', p);
  return trim(prompt.substr(p, e == std::string::npos ? std::string::npos : e - p));
}

// "Evaluation: <evaluation>. Review text: <Review text>" -> "Review text"
inline std::string label_between(const std::string& prompt, const std::string& lead) {
  auto p = prompt.find(lead);
  if (p == std::string::npos) return {};
  p += lead.size();
  auto e = prompt.find(": <", p);
  if (e == std::string::npos) return {};
  return prompt.substr(p, e - p);
}

// Distinct words, taken column by column across the lines so every line
// contributes early.
inline std::vector<std::string> content_words(const std::vector<std::string>& texts) {
  std::vector<std::vector<std::string>> lines;
  std::size_t longest = 0;
  for (const auto& t : texts) {
    lines.push_back(tokenize(t));
    longest = std::max(longest, lines.back().size());
  }
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (std::size_t k = 0; k < longest; ++k)
    for (const auto& line : lines) {
      if (k >= line.size()) continue;
      const auto& w = line[k];
      if (w == "rating" || (w.size() == 1 && std::isdigit(static_cast<unsigned char>(w[0])))) continue;
      if (seen.insert(w).second) out.push_back(w);
    }
  return out;
}

// Round-robin over the sources, starting `offset` words in.
inline std::vector<std::string> interleave(const std::vector<std::vector<std::string>>& sources, std::size_t count,
                                           std::size_t offset) {
  std::vector<std::string> out;
  std::size_t longest = 0;
  for (const auto& s : sources) longest = std::max(longest, s.size());
  for (std::size_t k = 0; k < longest && out.size() < count; ++k)
    for (const auto& s : sources)
      if (!s.empty() && out.size() < count) out.push_back(s[(k + offset) % s.size()]);
  return out;
}

inline int rating_from(const std::vector<std::string>& lines) {
  double sum = 0;
  int n = 0;
  for (const auto& l : lines) {
    auto p = l.rfind("(rating ");
    if (p == std::string::npos || p + 8 >= l.size()) continue;
    char c = l[p + 8];
    if (c >= '1' && c <= '5') {
      sum += c - '0';
      ++n;
    }
  }
  if (n == 0) return 0;
  return static_cast<int>(std::lround(sum / n));
}

struct Sections {
  std::vector<std::string> own, similar, peers;
};

inline Sections read_sections(const std::string& user) {
  return {bullet_lines(section(user, "User's own profile:")), bullet_lines(section(user, "Similar profiles:")),
          bullet_lines(section(user, "Product Reviews:"))};
}

}  // namespace offline

inline MockBackend::Responder offline_responder(OfflineMockOptions opt = {}) {
  return [opt](const ChatRequest& req, int sample) -> std::string {
    using namespace offline;
    const std::string& u = req.user;
    const std::size_t h = fnv1a64(req.system + "\x1f" + u);
    const std::size_t offset = req.temperature > 0 ? static_cast<std::size_t>(sample) * 3 + h % 5 : 0;

    if (contains(u, "Provide only the numeric score")) {
      auto ref = line_after(u, "Reference Text (Ground Truth): ");
      auto gen = line_after(u, "Generated Text: ");
      double f = rouge1(gen, ref).f1;
      return std::to_string(1 + static_cast<int>(std::lround(6.0 * f)));
    }

    auto sec = read_sections(u);
    auto own = content_words(sec.own), sim = content_words(sec.similar), peers = content_words(sec.peers);

    auto payload_for = [&](const std::string& label, const std::vector<std::vector<std::string>>& sources) {
      if (label == "Rating") {
        int r = rating_from(sec.own);
        if (!r) r = rating_from(sec.similar);
        if (!r) r = 4;
        return std::to_string(r);
      }
      const std::size_t n = label == "Review title" ? 3 : opt.text_words;
      auto words = interleave(sources, n, offset);
      if (words.empty()) words = {"fine", "product"};
      return join(words, " ");
    };

    if (contains(u, "Your reasoning:")) {
      auto a = interleave({own, sim}, 6, offset);
      auto b = interleave({peers}, 6, offset);
      return "The user tends to mention " + (a.empty() ? std::string("little") : join(a, " ")) +
             " and other reviewers focus on " + (b.empty() ? std::string("nothing specific") : join(b, " ")) + ".";
    }

    if (contains(u, "Evaluation: <evaluation>")) {
      auto label = label_between(u, "Evaluation: <evaluation>. ");
      auto reasoning = tokenize(section(u, "Reasoning:"));
      std::vector<std::string> cues;
      for (auto& w : reasoning)
        if (w.size() > 3) cues.push_back(w);
      return "Evaluation: consistent with the profile. " + label + ": " + payload_for(label, {cues, peers});
    }

    const bool reasoned = contains(u, "Use the format:");
    if (reasoned || contains(u, "Do not output anything else.")) {
      std::string label = reasoned ? label_between(u, "Reasoning: <reasoning>. ") : std::string();
      if (label.empty()) {
        const auto lower = to_lower_ascii(u);
        label = contains(lower, "generate a rating")         ? "Rating"
                : contains(lower, "generate a review title") ? "Review title"
                                                             : "Review text";
      }
      auto payload = payload_for(label, {own, peers, sim});
      if (!reasoned) return payload;
      if (req.temperature > 0 && opt.malformed_rate > 0 &&
          static_cast<double>(fnv1a64(u + "#malformed") % 10000) < opt.malformed_rate * 10000.0)
        return "I would rather describe the product: " + payload;
      auto why = interleave({own, peers}, 5, offset);
      return "Reasoning: the profile stresses " + (why.empty() ? std::string("general impressions") : join(why, " ")) +
             ". " + label + ": " + payload;
    }

    return "fine";
  };
}

inline std::shared_ptr<MockBackend> make_offline_backend(OfflineMockOptions opt = {}, std::string name = "offline-mock") {
  return std::make_shared<MockBackend>(offline_responder(opt), std::move(name));
}

}  // namespace spgen
