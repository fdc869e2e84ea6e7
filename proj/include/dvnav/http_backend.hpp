#pragma once

/**
 * Chat-completions HTTP client implementing the TextBackend contract.
 * Speaks the common /v1/chat/completions JSON shape, reads its bearer token
 * from the environment (never from config files or argv), and retries
 * transient failures with exponential backoff.
 */

#include <chrono>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dvnav/backend.hpp"

namespace dvnav::backend {

struct HttpBackendConfig {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::string model = "default";
  std::string api_key_env = "DVNAV_API_KEY";
  int timeout_seconds = 60;
  int max_retries = 2;        // extra attempts on transport errors and 429
  int retry_backoff_ms = 200; // doubles per retry

  void validate() const {
    if (base_url.find("://") == std::string::npos) {
      throw BackendError("HttpBackendConfig: base_url must include a scheme");
    }
    if (model.empty()) throw BackendError("HttpBackendConfig: empty model");
    if (timeout_seconds < 1) throw BackendError("HttpBackendConfig: timeout must be >= 1s");
    if (max_retries < 0) throw BackendError("HttpBackendConfig: max_retries must be >= 0");
    if (retry_backoff_ms < 0) throw BackendError("HttpBackendConfig: backoff must be >= 0");
  }
};

class HttpBackend final : public TextBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    config_.validate();
    // Split "scheme://host:port/prefix" into the client origin and a path prefix.
    const std::size_t scheme_end = config_.base_url.find("://") + 3;
    const std::size_t path_at = config_.base_url.find('/', scheme_end);
    if (path_at == std::string::npos) {
      origin_ = config_.base_url;
    } else {
      origin_ = config_.base_url.substr(0, path_at);
      path_prefix_ = config_.base_url.substr(path_at);
      while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  }

  BackendResponse generate(const std::string& prompt, const SamplingParams& params) override {
    auto batch = request(prompt, 1, params);
    return std::move(batch.front());
  }

  /// One request with n choices; the server fans out the sampling.
  std::vector<BackendResponse> generate_n(const std::string& prompt, int n,
                                          const SamplingParams& params) override {
    if (n < 1) throw std::invalid_argument("generate_n: n must be >= 1");
    auto batch = request(prompt, n, params);
    if (static_cast<int>(batch.size()) != n) {
      throw BackendError("http backend: expected " + std::to_string(n) + " choices, got " +
                         std::to_string(batch.size()));
    }
    return batch;
  }

  std::string id() const override { return "http:" + config_.model; }

 private:
  std::vector<BackendResponse> request(const std::string& prompt, int n,
                                       const SamplingParams& params) {
    params.validate();
    nlohmann::json body;
    body["model"] = config_.model;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = params.temperature;
    body["top_p"] = params.top_p;
    body["max_tokens"] = params.max_new_tokens;
    body["n"] = n;
    if (params.seed) body["seed"] = *params.seed;
    const std::string payload = body.dump();

    int backoff_ms = config_.retry_backoff_ms;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0 && backoff_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
        backoff_ms *= 2;
      }
      httplib::Client client(origin_);
      client.set_connection_timeout(config_.timeout_seconds, 0);
      client.set_read_timeout(config_.timeout_seconds, 0);
      client.set_write_timeout(config_.timeout_seconds, 0);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

      const auto start = std::chrono::steady_clock::now();
      auto res = client.Post(path_prefix_ + "/v1/chat/completions", headers, payload,
                             "application/json");
      const auto elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::steady_clock::now() - start);

      if (!res) {
        const auto err = res.error();
        last_error = httplib::to_string(err);
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
            err == httplib::Error::Write) {
          if (attempt == config_.max_retries) {
            throw TimeoutError("http backend: timed out after " +
                               std::to_string(attempt + 1) + " attempts: " + last_error);
          }
        } else if (attempt == config_.max_retries) {
          throw TransportError("http backend: " + last_error);
        }
        continue;
      }
      if (res->status == 429) {
        if (attempt == config_.max_retries) {
          throw RateLimitError("http backend: rate limited after " +
                               std::to_string(attempt + 1) + " attempts");
        }
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        throw BackendError("http backend: status " + std::to_string(res->status) + ": " +
                           res->body.substr(0, 200));
      }
      return parse_choices(res->body, elapsed);
    }
    throw TransportError("http backend: " + last_error);
  }

  std::vector<BackendResponse> parse_choices(const std::string& body,
                                             std::chrono::microseconds latency) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("http backend: malformed response JSON: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
      throw BackendError("http backend: response has no choices");
    }
    std::vector<BackendResponse> out;
    for (const auto& choice : j["choices"]) {
      BackendResponse r;
      if (choice.contains("message") && choice["message"].contains("content")) {
        r.text = choice["message"]["content"].get<std::string>();
      } else if (choice.contains("text")) {
        r.text = choice["text"].get<std::string>();  // completions-style fallback
      } else {
        throw BackendError("http backend: choice without content");
      }
      r.latency = latency;
      r.backend_id = id();
      out.push_back(std::move(r));
    }
    return out;
  }

  HttpBackendConfig config_;
  std::string origin_;
  std::string path_prefix_;
  std::string api_key_;
};

}  // namespace dvnav::backend
