#pragma once

// Minimal JSON-over-HTTP plumbing shared by the LLM client and the external
// encoder. Transport failures are retried with exponential backoff; HTTP
// status failures are not.

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "httplib.h"

// <resolv.h> defines _res as a macro, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include "spgen/common.hpp"

namespace spgen {

class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what + " (after " + std::to_string(attempts) + " attempt" + (attempts == 1 ? "" : "s") + ")"),
        attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& body)
      : Error("HTTP " + std::to_string(status) + ": " + body.substr(0, 200)),
        status_(status),
        body_excerpt_(body.substr(0, 200)) {}
  int status() const noexcept { return status_; }
  const std::string& body_excerpt() const noexcept { return body_excerpt_; }

 private:
  int status_;
  std::string body_excerpt_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{5000};
  // Injected so tests do not sleep.
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

/// Runs `attempt` until it succeeds or throws something other than a
/// transport failure. Transport failures are retried `policy.max_retries`
/// times; the final one is rethrown with the attempt count.
template <typename F>
auto with_retries(const RetryPolicy& policy, F&& attempt) -> decltype(attempt()) {
  auto backoff = policy.initial_backoff;
  for (int tries = 1;; ++tries) {
    try {
      return attempt();
    } catch (const TransportError& e) {
      if (tries > policy.max_retries) throw TransportError(e.what(), tries);
      if (policy.sleep) policy.sleep(backoff);
      auto next = std::chrono::milliseconds(
          static_cast<std::int64_t>(static_cast<double>(backoff.count()) * policy.multiplier));
      backoff = std::min(next, policy.max_backoff);
    }
  }
}

struct Url {
  std::string scheme_host_port;  // e.g. "http://localhost:8080"
  std::string path_prefix;       // e.g. "/v1"
};

inline Url parse_url(const std::string& base) {
  auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL needs a scheme: " + base);
  auto path_begin = base.find('/', scheme_end + 3);
  Url u;
  u.scheme_host_port = base.substr(0, path_begin);
  u.path_prefix = path_begin == std::string::npos ? "" : base.substr(path_begin);
  while (!u.path_prefix.empty() && u.path_prefix.back() == '/') u.path_prefix.pop_back();
  return u;
}

struct HttpEndpoint {
  std::string base_url;
  std::string api_key;
  std::chrono::seconds timeout{60};
};

/// One POST attempt. Connection-level failures become TransportError(1).
inline nlohmann::json post_json_once(const HttpEndpoint& ep, const std::string& path,
                                     const nlohmann::json& body) {
  auto url = parse_url(ep.base_url);
  httplib::Client cli(url.scheme_host_port);
  cli.set_connection_timeout(ep.timeout);
  cli.set_read_timeout(ep.timeout);
  httplib::Headers headers;
  if (!ep.api_key.empty()) headers.emplace("Authorization", "Bearer " + ep.api_key);
  auto res = cli.Post(url.path_prefix + path, headers, body.dump(), "application/json");
  if (!res) throw TransportError("request to " + ep.base_url + path + " failed: " + httplib::to_string(res.error()), 1);
  if (res->status < 200 || res->status >= 300) throw HttpError(res->status, res->body);
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw ParseError("response body is not JSON: " + res->body.substr(0, 200));
  }
}

}  // namespace spgen
