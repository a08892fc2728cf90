#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#ifdef _res
#undef _res  // <resolv.h> macro
#endif

#include "nicekit/error.hpp"

namespace nicekit {

using Headers = std::vector<std::pair<std::string, std::string>>;

struct HttpResponse {
  int status = 0;
  std::string body;
  std::optional<double> retry_after_seconds;
};

/// Minimal POST-only transport. Implementations throw Error(kTimeout) or
/// Error(kEndpointError) for transport-level failures and return any HTTP
/// status as a response.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& url, const std::string& body,
                            const Headers& headers, std::chrono::milliseconds timeout) = 0;
};

class HttplibTransport final : public HttpTransport {
 public:
  HttpResponse post(const std::string& url, const std::string& body, const Headers& headers,
                    std::chrono::milliseconds timeout) override {
    auto [origin, path] = split_url(url);
    httplib::Client client(origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers hs;
    for (const auto& [k, v] : headers) hs.emplace(k, v);
    auto res = client.Post(path, hs, body, "application/json");
    if (!res) {
      auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
          err == httplib::Error::Write)
        throw Error(ErrorCode::kTimeout, url + ": " + httplib::to_string(err));
      throw Error(ErrorCode::kEndpointError, url + ": " + httplib::to_string(err));
    }
    HttpResponse out{res->status, res->body, std::nullopt};
    if (res->has_header("Retry-After")) {
      try {
        out.retry_after_seconds = std::stod(res->get_header_value("Retry-After"));
      } catch (const std::exception&) {
      }
    }
    return out;
  }

  // "http://host:8080/v1/chat" -> {"http://host:8080", "/v1/chat"}
  static std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
  }
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{30000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper default_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// POST with exponential backoff on timeouts, 429 and 5xx. Rate-limit hints
/// replace the computed delay. With a single attempt the underlying error
/// surfaces as-is; otherwise exhaustion reports ExhaustedRetries.
inline HttpResponse post_with_retry(HttpTransport& transport, const std::string& url,
                                    const std::string& body, const Headers& headers,
                                    std::chrono::milliseconds timeout, const RetryPolicy& policy,
                                    const Sleeper& sleep = default_sleeper()) {
  const int attempts = std::max(1, policy.max_attempts);
  auto delay = policy.base_delay;
  std::optional<Error> last;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    std::optional<std::chrono::milliseconds> hint;
    try {
      HttpResponse res = transport.post(url, body, headers, timeout);
      if (res.status >= 200 && res.status < 300) return res;
      if (res.status == 429) {
        std::string msg = url + ": rate limited";
        if (res.retry_after_seconds) {
          hint = std::chrono::milliseconds(
              static_cast<long long>(*res.retry_after_seconds * 1000.0));
          msg += ", retry after " + std::to_string(*res.retry_after_seconds) + "s";
          if (*hint > policy.max_delay) throw Error(ErrorCode::kRateLimited, msg);
        }
        last = Error(ErrorCode::kRateLimited, msg);
      } else if (res.status >= 500) {
        last = Error(ErrorCode::kEndpointError, url + ": status " + std::to_string(res.status));
      } else {
        throw Error(ErrorCode::kEndpointError,
                    url + ": status " + std::to_string(res.status) + ": " + res.body.substr(0, 200));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kTimeout) throw;
      last = e;
    }
    if (attempt == attempts) break;
    sleep(hint.value_or(delay));
    delay = std::min(policy.max_delay,
                     std::chrono::milliseconds(static_cast<long long>(
                         static_cast<double>(delay.count()) * policy.multiplier)));
  }
  if (attempts == 1) throw *last;
  throw Error(ErrorCode::kExhaustedRetries,
              std::to_string(attempts) + " attempts, last: " + last->what());
}

inline Headers bearer_headers(const std::string& token_env) {
  Headers hs;
  if (token_env.empty()) return hs;
  if (const char* token = std::getenv(token_env.c_str()); token && *token)
    hs.emplace_back("Authorization", std::string("Bearer ") + token);
  return hs;
}

}  // namespace nicekit
