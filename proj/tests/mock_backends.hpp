#pragma once

#include "asmalign/backend.hpp"

#include <atomic>
#include <functional>
#include <string>

namespace asmalign::testing {

// Returns the same completion for every request.
class FixedBackend final : public ChatBackend {
 public:
  explicit FixedBackend(std::string text, double cost = 0.0) : text_(std::move(text)), cost_(cost) {}
  ChatCompletion complete(const std::vector<ChatTurn>& messages, int) override {
    last_request = messages;
    ++calls;
    return {text_, cost_};
  }
  std::string model_name() const override { return "mock-fixed"; }

  std::vector<ChatTurn> last_request;
  std::atomic<int> calls{0};

 private:
  std::string text_;
  double cost_;
};

// Completion computed from the request.
class FunctionBackend final : public ChatBackend {
 public:
  using Fn = std::function<std::string(const std::vector<ChatTurn>&, int)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  ChatCompletion complete(const std::vector<ChatTurn>& messages, int variant) override {
    return {fn_(messages, variant), 0.0};
  }
  std::string model_name() const override { return "mock-fn"; }

 private:
  Fn fn_;
};

class FlakyBackend final : public ChatBackend {
 public:
  FlakyBackend(int failures, std::string text) : failures_(failures), text_(std::move(text)) {}
  ChatCompletion complete(const std::vector<ChatTurn>&, int) override {
    if (calls++ < failures_) throw BackendError("transient failure");
    return {text_, 0.0};
  }
  std::string model_name() const override { return "mock-flaky"; }

  int calls = 0;

 private:
  int failures_;
  std::string text_;
};

// JsonTransport that answers chat requests with a fixed text and counts calls.
class CountingTransport final : public JsonTransport {
 public:
  explicit CountingTransport(std::string text) : text_(std::move(text)) {}
  nlohmann::json post(std::string_view, const nlohmann::json&, int variant) override {
    ++calls;
    return {{"choices", {{{"message", {{"role", "assistant"}, {"content", text_ + std::to_string(variant)}}}}}},
            {"usage", {{"prompt_tokens", 1000}, {"completion_tokens", 500}}}};
  }
  std::atomic<int> calls{0};

 private:
  std::string text_;
};

}  // namespace asmalign::testing
