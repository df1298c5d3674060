#pragma once

#include <string>

#include "spgen/encoder.hpp"
#include "spgen/http.hpp"

namespace spgen {

/// Encoder backed by an embeddings endpoint (`POST {base}/embeddings` with
/// `{"model", "input"}`, reading `data[0].embedding`). The returned vector is
/// checked against the handle's dimension and re-normalized.
class ExternalEncoder final : public TextEncoder {
 public:
  ExternalEncoder(EncoderHandle handle, std::string api_key = {}, RetryPolicy retry = {})
      : handle_(std::move(handle)), api_key_(std::move(api_key)), retry_(std::move(retry)) {
    if (!handle_.endpoint) throw ConfigError("external encoder needs an endpoint");
    if (handle_.dimension == 0) throw ConfigError("encoder dimension must be positive");
  }

  std::size_t dimension() const override { return handle_.dimension; }

  Embedding encode(const std::string& text) const override {
    if (trim(text).empty()) throw Error("cannot encode empty text");
    nlohmann::json body{{"model", handle_.model_name.value_or("")}, {"input", text}};
    HttpEndpoint ep{*handle_.endpoint, api_key_};
    auto reply = with_retries(retry_, [&] { return post_json_once(ep, "/embeddings", body); });
    Embedding v;
    try {
      v = reply.at("data").at(0).at("embedding").get<Embedding>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed embeddings response: ") + e.what());
    }
    if (v.size() != handle_.dimension)
      throw ConfigError("embedding service returned " + std::to_string(v.size()) + " values, expected " +
                        std::to_string(handle_.dimension));
    normalize_in_place(v);
    return v;
  }

 private:
  EncoderHandle handle_;
  std::string api_key_;
  RetryPolicy retry_;
};

}  // namespace spgen
