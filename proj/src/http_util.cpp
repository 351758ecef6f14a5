#include "rcg/http_util.hpp"

#include <cstdlib>

#include "rcg/errors.hpp"

namespace rcg::http {

Endpoint parse_endpoint(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos || scheme_end == 0) {
    throw ConfigError("endpoint url has no scheme: " + std::string(url));
  }
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError("unsupported endpoint scheme: " + std::string(url));
  }
  auto host_begin = scheme_end + 3;
  auto path_begin = url.find('/', host_begin);
  if (path_begin == host_begin) {
    throw ConfigError("endpoint url has no host: " + std::string(url));
  }
  Endpoint ep;
  if (path_begin == std::string_view::npos) {
    ep.origin = std::string(url);
    ep.path = "/";
  } else {
    ep.origin = std::string(url.substr(0, path_begin));
    ep.path = std::string(url.substr(path_begin));
  }
  if (ep.origin.size() <= host_begin) {
    throw ConfigError("endpoint url has no host: " + std::string(url));
  }
  return ep;
}

std::string token_from_env(const std::string& var) {
  if (var.empty()) return {};
  const char* v = std::getenv(var.c_str());
  return v ? std::string(v) : std::string();
}

}  // namespace rcg::http
