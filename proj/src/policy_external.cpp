#include <httplib.h>

#include "floodsim/policy.hpp"

namespace floodsim::policy {

namespace {

struct Endpoint {
  std::string base;
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  const auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

ExternalBackend::ExternalBackend(ExternalOptions options) : options_(std::move(options)) {}

BackendResponse ExternalBackend::generate(const PolicyRequest& request) {
  if (options_.endpoint.empty()) throw Error(ErrorKind::BackendUnavailable, "no external endpoint configured");
  const auto ep = split_endpoint(options_.endpoint);
  httplib::Client client(ep.base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  const auto res = client.Post(ep.path, encode_request(request), "application/json");
  if (!res) throw Error(ErrorKind::BackendUnavailable, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error(ErrorKind::BackendUnavailable, "HTTP status " + std::to_string(res->status));
  return decode_response(res->body, request.vocabulary);
}

}  // namespace floodsim::policy
