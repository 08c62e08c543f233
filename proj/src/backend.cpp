#include "asmalign/backend.hpp"

#include "asmalign/hashing.hpp"
#include "asmalign/jsonl.hpp"

#include <cmath>

namespace asmalign {

CacheMode parse_cache_mode(std::string_view text) {
  if (text == "live") return CacheMode::live;
  if (text == "record") return CacheMode::record;
  if (text == "replay") return CacheMode::replay;
  throw ValidationError("unknown mode '" + std::string(text) + "' (expected live|record|replay)");
}

std::string_view to_string(CacheMode mode) {
  switch (mode) {
    case CacheMode::live: return "live";
    case CacheMode::record: return "record";
    case CacheMode::replay: return "replay";
  }
  return "live";
}

CachingTransport::CachingTransport(std::shared_ptr<JsonTransport> inner, std::filesystem::path cache_dir,
                                   CacheMode mode)
    : inner_(std::move(inner)), dir_(std::move(cache_dir)), mode_(mode) {
  if (mode_ != CacheMode::replay && !inner_) {
    throw ValidationError("mode " + std::string(to_string(mode_)) + " needs a backend");
  }
}

std::string CachingTransport::cache_key(std::string_view route, const nlohmann::json& body, int variant) {
  // nlohmann::json objects iterate in sorted key order, so dump() is canonical.
  nlohmann::json canonical;
  canonical["route"] = route;
  canonical["body"] = body;
  if (variant != 0) canonical["variant"] = variant;
  return sha256_hex(canonical.dump());
}

nlohmann::json CachingTransport::post(std::string_view route, const nlohmann::json& body, int variant) {
  if (mode_ == CacheMode::live) return inner_->post(route, body, variant);

  const auto key = cache_key(route, body, variant);
  const auto path = dir_ / (key + ".json");
  if (std::filesystem::exists(path)) {
    auto entry = nlohmann::json::parse(read_text_file(path));
    if (!entry.contains("response")) throw BackendError("corrupt cache entry " + path.string());
    ++hits_;
    return entry["response"];
  }
  ++misses_;
  if (mode_ == CacheMode::replay) {
    throw BackendError("replay cache miss for request " + key);
  }
  auto response = inner_->post(route, body, variant);
  nlohmann::json entry;
  entry["request"] = {{"route", route}, {"body", body}, {"variant", variant}};
  entry["response"] = response;
  write_text_file(path, entry.dump(1) + "\n");
  return response;
}

std::string_view to_string(ChatRole role) {
  switch (role) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
  }
  return "user";
}

ChatRole parse_chat_role(std::string_view text) {
  if (text == "system") return ChatRole::system;
  if (text == "user") return ChatRole::user;
  if (text == "assistant") return ChatRole::assistant;
  throw ValidationError("unknown chat role '" + std::string(text) + "'");
}

OpenAiChatBackend::OpenAiChatBackend(std::shared_ptr<JsonTransport> transport, ChatConfig config)
    : transport_(std::move(transport)), config_(std::move(config)) {}

nlohmann::json OpenAiChatBackend::make_request(const ChatConfig& config, const std::vector<ChatTurn>& messages) {
  nlohmann::json req;
  req["model"] = config.model;
  req["temperature"] = config.temperature;
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  req["messages"] = std::move(msgs);
  return req;
}

ChatCompletion OpenAiChatBackend::complete(const std::vector<ChatTurn>& messages, int variant) {
  const auto response = transport_->post("/chat/completions", make_request(config_, messages), variant);
  ChatCompletion out;
  try {
    out.content = response.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed chat response: ") + e.what());
  }
  if (response.contains("usage") && response["usage"].is_object()) {
    const auto& usage = response["usage"];
    const double prompt = usage.value("prompt_tokens", 0.0);
    const double completion = usage.value("completion_tokens", 0.0);
    out.cost_usd = prompt * config_.prompt_price_per_1k / 1000.0 +
                   completion * config_.completion_price_per_1k / 1000.0;
  }
  return out;
}

}  // namespace asmalign
