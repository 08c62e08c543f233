#pragma once

#include "asmalign/backend.hpp"

#include <atomic>
#include <cstddef>
#include <string>
#include <string_view>

namespace asmalign {

/// Offline stand-in for an OpenAI-compatible service, used to record the
/// shipped replay fixtures and to exercise the pipeline without a network.
///
/// Chat answers are assembled from facts read off the listing in the prompt
/// (instruction count, callees, branches, frame setup), so they depend only
/// on the request. Judge requests are scored from the word overlap between
/// the two answers. /embeddings uses the local hash embedder. This is not a
/// language model; it only has to produce well-formed, deterministic output.
class RuleBasedTransport final : public JsonTransport {
 public:
  nlohmann::json post(std::string_view route, const nlohmann::json& body, int variant = 0) override;

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::atomic<std::size_t> calls_{0};
};

// Transport for replay runs: any request reaching it is a cache miss.
class OfflineTransport final : public JsonTransport {
 public:
  nlohmann::json post(std::string_view route, const nlohmann::json& body, int variant = 0) override;
};

}  // namespace asmalign
