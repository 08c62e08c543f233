#pragma once

#include "asmalign/error.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace asmalign {

enum class CacheMode { live, record, replay };

CacheMode parse_cache_mode(std::string_view text);
std::string_view to_string(CacheMode mode);

// A JSON-over-HTTP style endpoint. `variant` distinguishes otherwise identical
// requests (independent trials, retries); it is never sent on the wire.
class JsonTransport {
 public:
  virtual ~JsonTransport() = default;
  virtual nlohmann::json post(std::string_view route, const nlohmann::json& body, int variant = 0) = 0;
};

// POSTs to <base_url><route>. The bearer token is read from `api_key_env`
// when that variable is set.
class HttpTransport final : public JsonTransport {
 public:
  explicit HttpTransport(std::string base_url, std::string api_key_env = "ASMALIGN_API_KEY",
                         int timeout_seconds = 120);

  nlohmann::json post(std::string_view route, const nlohmann::json& body, int variant = 0) override;

 private:
  std::string origin_;
  std::string path_prefix_;
  std::string api_key_env_;
  int timeout_seconds_;
};

/// Request/response cache in front of another transport.
///
/// Each request is stored in its own file named by the SHA-256 of the
/// canonical request (route, body with sorted keys, variant). In replay mode
/// the inner transport is never called and a miss is an error; record mode
/// serves hits from disk and writes misses; live mode bypasses the cache.
class CachingTransport final : public JsonTransport {
 public:
  CachingTransport(std::shared_ptr<JsonTransport> inner, std::filesystem::path cache_dir, CacheMode mode);

  nlohmann::json post(std::string_view route, const nlohmann::json& body, int variant = 0) override;

  static std::string cache_key(std::string_view route, const nlohmann::json& body, int variant);

  std::size_t hits() const noexcept { return hits_.load(); }
  std::size_t misses() const noexcept { return misses_.load(); }

 private:
  std::shared_ptr<JsonTransport> inner_;
  std::filesystem::path dir_;
  CacheMode mode_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

enum class ChatRole { system, user, assistant };

std::string_view to_string(ChatRole role);
ChatRole parse_chat_role(std::string_view text);

struct ChatTurn {
  ChatRole role = ChatRole::user;
  std::string content;

  bool operator==(const ChatTurn&) const = default;
};

struct ChatCompletion {
  std::string content;
  double cost_usd = 0.0;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatCompletion complete(const std::vector<ChatTurn>& messages, int variant = 0) = 0;
  virtual std::string model_name() const = 0;
};

struct ChatConfig {
  std::string model = "gpt-4-turbo";
  double temperature = 0.2;
  // USD per 1,000 tokens, applied to the usage block of each response.
  double prompt_price_per_1k = 0.01;
  double completion_price_per_1k = 0.03;
};

// OpenAI-compatible chat completions over a JsonTransport:
// {"model","messages":[{"role","content"}],"temperature"} -> choices[0].message.content
class OpenAiChatBackend final : public ChatBackend {
 public:
  OpenAiChatBackend(std::shared_ptr<JsonTransport> transport, ChatConfig config = {});

  ChatCompletion complete(const std::vector<ChatTurn>& messages, int variant = 0) override;
  std::string model_name() const override { return config_.model; }

  static nlohmann::json make_request(const ChatConfig& config, const std::vector<ChatTurn>& messages);

 private:
  std::shared_ptr<JsonTransport> transport_;
  ChatConfig config_;
};

// Calls fn(attempt) until it returns without throwing BackendError, at most
// max_attempts times; the last error propagates.
template <typename Fn>
auto with_retries(int max_attempts, Fn&& fn) -> decltype(fn(0)) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn(attempt);
    } catch (const BackendError&) {
      if (attempt + 1 >= max_attempts) throw;
    }
  }
}

}  // namespace asmalign
