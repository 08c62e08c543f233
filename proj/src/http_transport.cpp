#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "asmalign/backend.hpp"

#include <cstdlib>

namespace asmalign {

HttpTransport::HttpTransport(std::string base_url, std::string api_key_env, int timeout_seconds)
    : api_key_env_(std::move(api_key_env)), timeout_seconds_(timeout_seconds) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("backend URL needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    origin_ = base_url;
  } else {
    origin_ = base_url.substr(0, path_start);
    path_prefix_ = base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
}

nlohmann::json HttpTransport::post(std::string_view route, const nlohmann::json& body, int /*variant*/) {
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  httplib::Headers headers;
  if (const char* key = std::getenv(api_key_env_.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string path = path_prefix_ + std::string(route);
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) throw BackendError("request to " + origin_ + path + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw BackendError("request to " + origin_ + path + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BackendError(std::string("unparseable response body: ") + e.what());
  }
}

}  // namespace asmalign
