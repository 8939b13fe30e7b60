#include "rlvr/llm_client.hpp"

#include <cstdlib>
#include <fstream>

#include "httplib.h"
#include "rlvr/error.hpp"

namespace rlvr {
namespace {

std::optional<std::string> env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str()); v != nullptr && *v != '\0') return std::string(v);
  return std::nullopt;
}

void applyEnv(EndpointConfig& cfg, const std::string& prefix) {
  if (auto v = env(prefix + "_ENDPOINT")) cfg.endpoint = *v;
  if (auto v = env(prefix + "_MODEL")) cfg.model = *v;
  if (auto v = env(prefix + "_TIMEOUT")) cfg.timeoutSeconds = std::stod(*v);
  if (cfg.apiKeyEnv.empty()) cfg.apiKeyEnv = prefix + "_API_KEY";
}

}  // namespace

EndpointConfig endpointConfigFromJson(const nlohmann::json& j, const std::string& envPrefix) {
  EndpointConfig cfg;
  cfg.endpoint = j.value("endpoint", "");
  cfg.model = j.value("model", "");
  cfg.timeoutSeconds = j.value("timeout_seconds", 60.0);
  cfg.apiKeyEnv = j.value("api_key_env", "");
  applyEnv(cfg, envPrefix);
  return cfg;
}

EndpointConfig loadEndpointConfig(const std::optional<std::string>& file, const std::string& envPrefix) {
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw IoError(*file, "cannot open endpoint config");
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError(*file, e.what());
    }
  }
  return endpointConfigFromJson(j, envPrefix);
}

HttpTextClient::HttpTextClient(EndpointConfig config) : config_(std::move(config)) {
  const std::string& url = config_.endpoint;
  const auto scheme = url.find("://");
  if (url.empty() || scheme == std::string::npos) throw InvalidSpec("endpoint must be an absolute URL: " + url);
  const auto slash = url.find('/', scheme + 3);
  origin_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
}

std::string HttpTextClient::query(const std::string& system, const std::string& user) {
  httplib::Client client(origin_);
  const auto secs = static_cast<time_t>(config_.timeoutSeconds);
  const auto usecs = static_cast<time_t>((config_.timeoutSeconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (auto key = env(config_.apiKeyEnv)) headers.emplace("Authorization", "Bearer " + *key);
  const nlohmann::json body = {{"system", system}, {"user", user}, {"model", config_.model}};
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw TransportError("request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw TransportError("request to " + config_.endpoint + " returned HTTP " + std::to_string(res->status));
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed reply body: ") + e.what());
  }
}

void StubTextClient::set(const std::string& system, const std::string& user, std::string reply) {
  std::lock_guard lock(mu_);
  table_[{system, user}] = std::move(reply);
}

void StubTextClient::setFallback(std::string reply) {
  std::lock_guard lock(mu_);
  fallback_ = std::move(reply);
}

std::string StubTextClient::query(const std::string& system, const std::string& user) {
  ++calls_;
  std::lock_guard lock(mu_);
  if (auto it = table_.find({system, user}); it != table_.end()) return it->second;
  if (fallback_) return *fallback_;
  throw TransportError("stub client has no reply for this prompt");
}

}  // namespace rlvr
