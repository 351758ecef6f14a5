#pragma once

#include <string>
#include <string_view>

namespace rcg::http {

// "http://host:port/v1/embeddings" -> {"http://host:port", "/v1/embeddings"}
struct Endpoint {
  std::string origin;
  std::string path;
};

// Throws ConfigError when the url has no scheme or host.
Endpoint parse_endpoint(std::string_view url);

// Reads a bearer token from the named environment variable, empty if unset.
std::string token_from_env(const std::string& var);

}  // namespace rcg::http
