#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace rpmcts {

struct HttpResponse {
  int status = 0;
  std::string body;
};

// Blocking JSON POST. Throws TransportError when no HTTP response arrives
// (connection refused, timeout, TLS failure).
HttpResponse http_post_json(const std::string& base_url, const std::string& path,
                            const std::string& body,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            std::chrono::milliseconds timeout);

}  // namespace rpmcts
