#include <atomic>
#include <chrono>
#include <thread>

#include <gtest/gtest.h>

#include "spgen/llmclient.hpp"

using namespace spgen;

namespace {

RetryPolicy quiet_retries(int n, std::vector<std::chrono::milliseconds>* waits = nullptr) {
  RetryPolicy r;
  r.max_retries = n;
  r.sleep = [waits](std::chrono::milliseconds d) {
    if (waits) waits->push_back(d);
  };
  return r;
}

// Fails with a transport error `failures` times, then echoes the request.
class FlakyBackend final : public ChatBackend {
 public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  std::vector<std::string> complete(const ChatRequest& r) override {
    seen.push_back(fingerprint(r));
    if (failures_-- > 0) throw TransportError("connection refused", 1);
    return std::vector<std::string>(static_cast<std::size_t>(r.n_samples), r.user);
  }
  std::string model_name() const override { return "flaky"; }
  std::vector<std::string> seen;

 private:
  int failures_;
};

// Records the peak number of concurrent calls.
class GaugeBackend final : public ChatBackend {
 public:
  std::vector<std::string> complete(const ChatRequest& r) override {
    int now = ++inflight;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --inflight;
    return std::vector<std::string>(static_cast<std::size_t>(r.n_samples), "ok");
  }
  std::string model_name() const override { return "gauge"; }
  std::atomic<int> inflight{0};
  std::atomic<int> peak{0};
};

class LocalServer {
 public:
  explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

nlohmann::json choices(const std::vector<std::string>& texts) {
  nlohmann::json c = nlohmann::json::array();
  for (const auto& t : texts) c.push_back({{"message", {{"role", "assistant"}, {"content", t}}}});
  return {{"choices", c}};
}

}  // namespace

TEST(LlmClient, MockScriptReplaysInOrder) {
  auto mock = std::make_shared<MockBackend>(std::vector<std::string>{"A", "B", "C"});
  LlmClient c(mock);
  ChatRequest r;
  r.n_samples = 2;
  EXPECT_EQ(c.complete(r), (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(c.complete_one(r), "C");
  EXPECT_THROW(c.complete_one(r), Error);
}

TEST(LlmClient, MockResponderIsDeterministic) {
  auto responder = [](const ChatRequest& r, int k) { return fingerprint(r) + "#" + std::to_string(k); };
  LlmClient a(std::make_shared<MockBackend>(responder)), b(std::make_shared<MockBackend>(responder));
  ChatRequest r;
  r.user = "hello";
  r.n_samples = 3;
  auto x = a.complete(r);
  EXPECT_EQ(x.size(), 3u);
  EXPECT_EQ(x, b.complete(r));
  EXPECT_NE(x[0], x[1]);
}

TEST(LlmClient, RequestValidation) {
  LlmClient c(std::make_shared<MockBackend>(std::vector<std::string>{"A"}));
  ChatRequest r;
  r.n_samples = 0;
  EXPECT_THROW(c.complete(r), ConfigError);
  r.n_samples = 1;
  r.temperature = -0.1;
  EXPECT_THROW(c.complete(r), ConfigError);
  EXPECT_THROW(LlmClient(nullptr), ConfigError);
}

TEST(LlmClient, TransportFailuresAreRetriedWithBackoffAndUnchangedPayload) {
  auto flaky = std::make_shared<FlakyBackend>(2);
  std::vector<std::chrono::milliseconds> waits;
  LlmClient c(flaky, quiet_retries(3, &waits));
  ChatRequest r;
  r.user = "same";
  r.seed = 5;
  EXPECT_EQ(c.complete_one(r), "same");
  ASSERT_EQ(flaky->seen.size(), 3u);
  EXPECT_EQ(flaky->seen[0], flaky->seen[1]);
  EXPECT_EQ(flaky->seen[1], flaky->seen[2]);
  EXPECT_EQ(waits, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(200), std::chrono::milliseconds(400)}));
}

TEST(LlmClient, RetriesAreCapped) {
  auto flaky = std::make_shared<FlakyBackend>(10);
  LlmClient c(flaky, quiet_retries(2));
  try {
    c.complete_one(ChatRequest{});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(flaky->seen.size(), 3u);
}

TEST(LlmClient, InflightCapIsRespected) {
  auto gauge = std::make_shared<GaugeBackend>();
  LlmClient c(gauge, quiet_retries(0), 2);
  std::vector<std::thread> ts;
  for (int k = 0; k < 8; ++k) ts.emplace_back([&] { c.complete_one(ChatRequest{}); });
  for (auto& t : ts) t.join();
  EXPECT_LE(gauge->peak.load(), 2);
  EXPECT_GE(gauge->peak.load(), 1);
}

TEST(LlmClient, RequestFromPromptSplitsSystemLine) {
  auto r = request_from_prompt("System: be brief\n\nbody\n\nmore", 0.8, 5, 64);
  EXPECT_EQ(r.system, "be brief");
  EXPECT_EQ(r.user, "body\n\nmore");
  EXPECT_EQ(r.n_samples, 5);
  EXPECT_EQ(r.max_tokens, 64);
  EXPECT_EQ(request_from_prompt("plain", 0).user, "plain");
}

TEST(LlmClient, HttpBackendSpeaksChatCompletions) {
  nlohmann::json last;
  std::string auth;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    last = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    std::vector<std::string> out;
    for (int k = 0; k < last["n"].get<int>(); ++k) out.push_back("reply " + std::to_string(k));
    res.set_content(choices(out).dump(), "application/json");
  });
  LlmClient c(std::make_shared<HttpChatBackend>(HttpEndpoint{server.base_url(), "k123"}, "m1"), quiet_retries(0));
  ChatRequest r;
  r.system = "sys";
  r.user = "hi";
  r.temperature = 0.8;
  r.n_samples = 2;
  EXPECT_EQ(c.complete(r), (std::vector<std::string>{"reply 0", "reply 1"}));
  EXPECT_EQ(last["model"], "m1");
  EXPECT_EQ(last["messages"][0]["role"], "system");
  EXPECT_EQ(last["messages"][1]["content"], "hi");
  EXPECT_EQ(last["temperature"], 0.8);
  EXPECT_EQ(last["n"], 2);
  EXPECT_EQ(auth, "Bearer k123");
}

TEST(LlmClient, HttpBackendTopsUpShortChoiceLists) {
  int calls = 0;
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(choices({"only " + std::to_string(calls++)}).dump(), "application/json");
  });
  LlmClient c(std::make_shared<HttpChatBackend>(HttpEndpoint{server.base_url(), ""}, "m"), quiet_retries(0));
  ChatRequest r;
  r.n_samples = 3;
  EXPECT_EQ(c.complete(r), (std::vector<std::string>{"only 0", "only 1", "only 2"}));
}

TEST(LlmClient, HttpErrorCarriesStatusAndBody) {
  LocalServer server([](const httplib::Request&, httplib::Response& res) {
    res.status = 429;
    res.set_content("rate limited", "text/plain");
  });
  LlmClient c(std::make_shared<HttpChatBackend>(HttpEndpoint{server.base_url(), ""}, "m"), quiet_retries(0));
  try {
    c.complete_one(ChatRequest{});
    FAIL();
  } catch (const HttpError& e) {
    EXPECT_EQ(e.status(), 429);
    EXPECT_NE(e.body_excerpt().find("rate limited"), std::string::npos);
  }
}

TEST(LlmClient, MalformedReplyIsParseError) {
  LocalServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"text":"no message"}]})", "application/json");
  });
  LlmClient c(std::make_shared<HttpChatBackend>(HttpEndpoint{server.base_url(), ""}, "m"), quiet_retries(0));
  EXPECT_THROW(c.complete_one(ChatRequest{}), ParseError);
}

TEST(LlmClient, UnreachableServiceFailsAfterRetries) {
  LlmClient c(std::make_shared<HttpChatBackend>(HttpEndpoint{"http://127.0.0.1:9/v1", ""}, "m"), quiet_retries(2));
  try {
    c.complete_one(ChatRequest{});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
}
