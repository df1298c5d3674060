#pragma once

// Chat-completion client: a backend interface, an HTTP backend speaking the
// common /chat/completions wire format, a scripted mock, and a client wrapper
// that adds retries and an in-flight cap.

#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spgen/common.hpp"
#include "spgen/http.hpp"

namespace spgen {

struct ChatRequest {
  std::string system;
  std::string user;
  double temperature = 0.0;  // 0 requests greedy decoding
  int max_tokens = 512;
  int n_samples = 1;
  std::optional<std::int64_t> seed;
};

inline nlohmann::json to_json(const ChatRequest& r) {
  nlohmann::json j{{"system", r.system},
                   {"user", r.user},
                   {"temperature", r.temperature},
                   {"max_tokens", r.max_tokens},
                   {"n", r.n_samples}};
  if (r.seed) j["seed"] = *r.seed;
  return j;
}

inline std::string fingerprint(const ChatRequest& r) { return digest(to_json(r).dump()); }

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// One attempt. Must return exactly request.n_samples texts or throw.
  virtual std::vector<std::string> complete(const ChatRequest& request) = 0;
  virtual std::string model_name() const = 0;
};

/// Deterministic backend for tests and offline runs. Either replays a queue
/// of canned responses (n_samples popped per call) or evaluates a pure
/// function of (request, sample index).
class MockBackend final : public ChatBackend {
 public:
  using Responder = std::function<std::string(const ChatRequest&, int sample)>;

  explicit MockBackend(std::vector<std::string> script, std::string name = "mock")
      : queue_(script.begin(), script.end()), name_(std::move(name)) {}
  explicit MockBackend(Responder responder, std::string name = "mock")
      : responder_(std::move(responder)), name_(std::move(name)) {}

  std::vector<std::string> complete(const ChatRequest& request) override {
    std::vector<std::string> out;
    if (responder_) {
      {
        std::lock_guard lock(mu_);
        ++calls_;
      }
      for (int k = 0; k < request.n_samples; ++k) out.push_back(responder_(request, k));
      return out;
    }
    std::lock_guard lock(mu_);
    ++calls_;
    if (queue_.size() < static_cast<std::size_t>(request.n_samples))
      throw Error("mock script exhausted");
    for (int k = 0; k < request.n_samples; ++k) {
      out.push_back(std::move(queue_.front()));
      queue_.pop_front();
    }
    return out;
  }

  std::string model_name() const override { return name_; }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  mutable std::mutex mu_;
  std::deque<std::string> queue_;
  Responder responder_;
  std::string name_;
  std::size_t calls_ = 0;
};

/// POST {base_url}/chat/completions with messages [system, user] and
/// temperature / max_tokens / n. Servers that return fewer choices than asked
/// are queried again for the remainder.
class HttpChatBackend final : public ChatBackend {
 public:
  HttpChatBackend(HttpEndpoint endpoint, std::string model)
      : endpoint_(std::move(endpoint)), model_(std::move(model)) {}

  std::vector<std::string> complete(const ChatRequest& request) override {
    std::vector<std::string> out;
    int rounds = 0;
    while (static_cast<int>(out.size()) < request.n_samples) {
      if (rounds++ >= request.n_samples) throw Error("chat service returned too few choices");
      auto body = request_body(request, request.n_samples - static_cast<int>(out.size()));
      auto reply = post_json_once(endpoint_, "/chat/completions", body);
      try {
        for (const auto& choice : reply.at("choices")) {
          out.push_back(choice.at("message").at("content").get<std::string>());
          if (static_cast<int>(out.size()) == request.n_samples) break;
        }
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed chat response: ") + e.what());
      }
    }
    return out;
  }

  nlohmann::json request_body(const ChatRequest& r, int n) const {
    nlohmann::json messages = nlohmann::json::array();
    if (!r.system.empty()) messages.push_back({{"role", "system"}, {"content", r.system}});
    messages.push_back({{"role", "user"}, {"content", r.user}});
    nlohmann::json body{{"model", model_},
                        {"messages", messages},
                        {"temperature", r.temperature},
                        {"max_tokens", r.max_tokens},
                        {"n", n}};
    if (r.seed) body["seed"] = *r.seed;
    return body;
  }

  std::string model_name() const override { return model_; }

 private:
  HttpEndpoint endpoint_;
  std::string model_;
};

/// Caps the number of concurrent backend calls.
class InflightLimiter {
 public:
  explicit InflightLimiter(std::size_t cap) : cap_(cap ? cap : 1) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return inflight_ < cap_; });
    ++inflight_;
  }

  void release() {
    {
      std::lock_guard lock(mu_);
      --inflight_;
    }
    cv_.notify_one();
  }

  std::size_t cap() const { return cap_; }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t cap_;
  std::size_t inflight_ = 0;
};

class LlmClient {
 public:
  LlmClient(std::shared_ptr<ChatBackend> backend, RetryPolicy retry = {}, std::size_t max_inflight = 4)
      : backend_(std::move(backend)), retry_(std::move(retry)), limiter_(std::make_shared<InflightLimiter>(max_inflight)) {
    if (!backend_) throw ConfigError("LLM client needs a backend");
  }

  /// Exactly request.n_samples texts. The request is never modified between
  /// retries.
  std::vector<std::string> complete(const ChatRequest& request) const {
    if (request.n_samples < 1) throw ConfigError("n_samples must be >= 1");
    if (request.temperature < 0) throw ConfigError("temperature must be >= 0");
    limiter_->acquire();
    struct Release {
      InflightLimiter* l;
      ~Release() { l->release(); }
    } release{limiter_.get()};
    auto out = with_retries(retry_, [&] { return backend_->complete(request); });
    if (static_cast<int>(out.size()) != request.n_samples)
      throw Error("backend returned " + std::to_string(out.size()) + " samples, expected " +
                  std::to_string(request.n_samples));
    return out;
  }

  std::string complete_one(const ChatRequest& request) const {
    auto r = request;
    r.n_samples = 1;
    return complete(r).front();
  }

  std::string model_name() const { return backend_->model_name(); }
  ChatBackend& backend() const { return *backend_; }

 private:
  std::shared_ptr<ChatBackend> backend_;
  RetryPolicy retry_;
  std::shared_ptr<InflightLimiter> limiter_;
};

/// Splits a rendered "System: ...\n\n<body>" prompt into chat messages.
inline ChatRequest request_from_prompt(const std::string& prompt, double temperature, int n_samples = 1,
                                       int max_tokens = 512) {
  ChatRequest r;
  r.temperature = temperature;
  r.n_samples = n_samples;
  r.max_tokens = max_tokens;
  constexpr std::string_view prefix = "System: ";
  auto split = prompt.find("\n\n");
  if (prompt.rfind(prefix, 0) == 0 && split != std::string::npos) {
    r.system = prompt.substr(prefix.size(), split - prefix.size());
    r.user = prompt.substr(split + 2);
  } else {
    r.user = prompt;
  }
  return r;
}

}  // namespace spgen
