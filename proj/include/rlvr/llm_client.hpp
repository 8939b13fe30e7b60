#pragma once

#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include "json.hpp"

namespace rlvr {

// A remote model that answers a (system, user) prompt pair with raw text.
// Implementations are safe for concurrent queries.
class TextClient {
 public:
  virtual ~TextClient() = default;
  // Throws TransportError on timeout, connection failure, non-2xx, or a
  // malformed response body.
  virtual std::string query(const std::string& system, const std::string& user) = 0;
};

// Wire format: POST <endpoint> with body {"system": s, "user": u, "model": m}
// and Content-Type application/json; the reply body is {"text": "..."}.
// The bearer token, if any, is read from the environment variable named by
// apiKeyEnv at query time.
struct EndpointConfig {
  std::string endpoint;  // e.g. "http://127.0.0.1:8080/v1/judge"
  std::string model;
  double timeoutSeconds = 60.0;
  std::string apiKeyEnv;
};

// Loads {"endpoint","model","timeout_seconds","api_key_env"} from `file` (if
// given), then applies <PREFIX>_ENDPOINT, <PREFIX>_MODEL, <PREFIX>_TIMEOUT
// overrides. apiKeyEnv defaults to <PREFIX>_API_KEY.
EndpointConfig loadEndpointConfig(const std::optional<std::string>& file, const std::string& envPrefix);
EndpointConfig endpointConfigFromJson(const nlohmann::json& j, const std::string& envPrefix);

class HttpTextClient : public TextClient {
 public:
  explicit HttpTextClient(EndpointConfig config);
  std::string query(const std::string& system, const std::string& user) override;
  const EndpointConfig& config() const { return config_; }

 private:
  EndpointConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;
};

// Table-driven client for tests. A lookup miss with no fallback configured
// raises TransportError.
class StubTextClient : public TextClient {
 public:
  StubTextClient() = default;
  explicit StubTextClient(std::map<std::pair<std::string, std::string>, std::string> table)
      : table_(std::move(table)) {}

  void set(const std::string& system, const std::string& user, std::string reply);
  void setFallback(std::string reply);
  std::string query(const std::string& system, const std::string& user) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, std::string> table_;
  std::optional<std::string> fallback_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace rlvr
