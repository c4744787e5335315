#include "rpmcts/http.hpp"

#include <httplib.h>

#include "rpmcts/error.hpp"

namespace rpmcts {

HttpResponse http_post_json(const std::string& base_url, const std::string& path,
                            const std::string& body,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            std::chrono::milliseconds timeout) {
  httplib::Client client(base_url);
  if (!client.is_valid()) throw TransportError("invalid endpoint URL: " + base_url);
  const auto secs = timeout.count() / 1000;
  const auto usecs = (timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers hdrs;
  for (const auto& [k, v] : headers) hdrs.emplace(k, v);
  auto res = client.Post(path, hdrs, body, "application/json");
  if (!res) {
    throw TransportError("POST " + base_url + path + " failed: " + httplib::to_string(res.error()));
  }
  return HttpResponse{res->status, res->body};
}

}  // namespace rpmcts
