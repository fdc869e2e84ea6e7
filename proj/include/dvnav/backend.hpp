#pragma once

/**
 * Text-generation backend contract plus the deterministic scripted backend
 * used as a test double. Backend instances must be safe for concurrent
 * generate calls.
 */

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dvnav/strings.hpp"

namespace dvnav::backend {

struct BackendError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TransportError : BackendError {
  using BackendError::BackendError;
};

struct TimeoutError : BackendError {
  using BackendError::BackendError;
};

struct RateLimitError : BackendError {
  using BackendError::BackendError;
};

/// A generate_n batch failed part-way; `index` is the failing sample.
struct BatchError : BackendError {
  std::size_t index;
  BatchError(std::size_t index_, const std::string& what_)
      : BackendError("sample " + std::to_string(index_) + ": " + what_), index(index_) {}
};

struct SamplingParams {
  double temperature = 0.7;
  double top_p = 0.95;
  int max_new_tokens = 256;
  std::optional<std::uint64_t> seed;

  void validate() const {
    if (temperature < 0) throw std::invalid_argument("temperature must be >= 0");
    if (!(top_p > 0 && top_p <= 1)) throw std::invalid_argument("top_p must be in (0,1]");
    if (max_new_tokens <= 0) throw std::invalid_argument("max_new_tokens must be positive");
  }
};

struct BackendResponse {
  std::string text;
  std::chrono::microseconds latency{0};
  std::string backend_id;
};

/// Stable fingerprint of a prompt: whitespace-collapsed, FNV-1a hashed.
/// Prompts are otherwise byte-significant.
inline std::string prompt_fingerprint(std::string_view prompt) {
  return strutil::hex64(strutil::fnv1a64(strutil::collapse_whitespace(prompt)));
}

class TextBackend {
 public:
  virtual ~TextBackend() = default;

  virtual BackendResponse generate(const std::string& prompt, const SamplingParams& params) = 0;

  /// n samples in decoding order (index 0 = first sample). A failure aborts
  /// the batch and reports the failing index.
  virtual std::vector<BackendResponse> generate_n(const std::string& prompt, int n,
                                                  const SamplingParams& params) {
    if (n < 1) throw std::invalid_argument("generate_n: n must be >= 1");
    std::vector<BackendResponse> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      try {
        out.push_back(generate(prompt, params));
      } catch (const BackendError& e) {
        throw BatchError(static_cast<std::size_t>(i), e.what());
      }
    }
    return out;
  }

  virtual std::string id() const = 0;
};

struct ScriptExhaustedError : BackendError {
  explicit ScriptExhaustedError(const std::string& fingerprint)
      : BackendError("scripted backend: response queue exhausted for fingerprint " + fingerprint) {}
};

struct UnknownPromptError : BackendError {
  std::string normalized_prompt;
  explicit UnknownPromptError(std::string normalized)
      : BackendError("scripted backend: no script for prompt: " + normalized),
        normalized_prompt(std::move(normalized)) {}
};

/**
 * Deterministic scripted backend keyed by prompt fingerprint. Every call is
 * appended to an ordered log so tests can assert on exact call sequences;
 * internal locking keeps transcripts deterministic under caller concurrency.
 */
class ScriptedBackend : public TextBackend {
 public:
  struct CallRecord {
    std::uint64_t sequence = 0;
    std::string prompt;
    SamplingParams params;
    std::string response;
  };

  ScriptedBackend() = default;

  /// Registers responses keyed by the prompt's fingerprint.
  void script(const std::string& prompt, std::vector<std::string> responses) {
    std::lock_guard lock(mutex_);
    auto& queue = scripts_[prompt_fingerprint(prompt)];
    for (auto& r : responses) queue.push_back(std::move(r));
  }

  /// Registers responses under an explicit fingerprint (for script files that
  /// store fingerprints rather than full prompts).
  void script_fingerprint(const std::string& fingerprint, std::vector<std::string> responses) {
    std::lock_guard lock(mutex_);
    auto& queue = scripts_[fingerprint];
    for (auto& r : responses) queue.push_back(std::move(r));
  }

  BackendResponse generate(const std::string& prompt, const SamplingParams& params) override {
    params.validate();
    if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
    std::lock_guard lock(mutex_);
    const std::string fp = prompt_fingerprint(prompt);
    auto it = scripts_.find(fp);
    if (it == scripts_.end()) throw UnknownPromptError(strutil::collapse_whitespace(prompt));
    if (it->second.empty()) throw ScriptExhaustedError(fp);
    BackendResponse resp;
    resp.text = std::move(it->second.front());
    it->second.pop_front();
    resp.backend_id = id();
    log_.push_back({next_sequence_++, prompt, params, resp.text});
    return resp;
  }

  std::string id() const override { return "scripted"; }

  std::vector<CallRecord> call_log() const {
    std::lock_guard lock(mutex_);
    return log_;
  }

  std::size_t call_count() const {
    std::lock_guard lock(mutex_);
    return log_.size();
  }

  void clear_log() {
    std::lock_guard lock(mutex_);
    log_.clear();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::deque<std::string>> scripts_;
  std::vector<CallRecord> log_;
  std::uint64_t next_sequence_ = 0;
};

}  // namespace dvnav::backend
