#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "distflip/core/parallel.hpp"

namespace distflip::blackbox {

enum class Label { toxic, uncertain, non_toxic };

/// Strict thresholds: exactly 0.7 or 0.3 is uncertain.
inline Label label(double score) {
  if (score > 0.7) return Label::toxic;
  if (score < 0.3) return Label::non_toxic;
  return Label::uncertain;
}

inline const char* label_name(Label l) {
  switch (l) {
    case Label::toxic: return "toxic";
    case Label::uncertain: return "uncertain";
    case Label::non_toxic: return "non-toxic";
  }
  return "?";
}

class ApiError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wire format of the scoring endpoint. "local" is {"text"} -> {"toxicity"};
/// "perspective" speaks the comments:analyze request/response shape.
struct Protocol {
  std::string name = "local";

  std::string request_body(const std::string& text) const {
    if (name == "local") return nlohmann::json{{"text", text}}.dump();
    if (name == "perspective")
      return nlohmann::json{{"comment", {{"text", text}}},
                            {"requestedAttributes", {{"TOXICITY", nlohmann::json::object()}}},
                            {"doNotStore", true}}
          .dump();
    throw std::invalid_argument("unknown protocol '" + name + "'");
  }

  double parse_score(const std::string& body) const {
    const auto j = nlohmann::json::parse(body);
    double v = 0;
    if (name == "perspective")
      v = j.at("attributeScores").at("TOXICITY").at("summaryScore").at("value").get<double>();
    else
      v = j.at("toxicity").get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw ApiError("score " + std::to_string(v) + " outside [0,1]");
    return v;
  }
};

struct ApiConfig {
  std::string endpoint = "http://127.0.0.1:8089/score";
  double timeout_s = 10.0;
  std::size_t attempts = 3;
  double backoff_s = 0.25;  // doubled after each failed attempt
  double rate = 10.0;       // requests per second, 0 = unlimited
  std::size_t concurrency = 4;
  std::string token;  // bearer token, or ?key= for the perspective protocol
  std::string protocol = "local";
};

inline nlohmann::json to_json(const ApiConfig& c) {
  // the token stays out of artifacts
  return {{"endpoint", c.endpoint}, {"timeout_s", c.timeout_s}, {"attempts", c.attempts},
          {"backoff_s", c.backoff_s}, {"rate", c.rate}, {"concurrency", c.concurrency},
          {"protocol", c.protocol}, {"token_set", !c.token.empty()}};
}

/// Hands out evenly spaced send slots; callers sleep until theirs.
class RateLimiter {
 public:
  explicit RateLimiter(double rate) : rate_(rate) {}

  void acquire() {
    if (rate_ <= 0) return;
    const auto gap = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / rate_));
    Clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      const auto now = Clock::now();
      slot = std::max(now, next_);
      next_ = slot + gap;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  using Clock = std::chrono::steady_clock;
  double rate_;
  std::mutex mu_;
  Clock::time_point next_{};
};

/// Blocks while `limit` holders are inside.
class Gate {
 public:
  explicit Gate(std::size_t limit) : free_(std::max<std::size_t>(limit, 1)) {}
  void enter() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void leave() {
    {
      std::lock_guard lock(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t free_;
};

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.substr(0, scheme) != "http")
    throw std::invalid_argument("endpoint must be an http:// URL, got '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  Endpoint e;
  e.origin = url.substr(0, slash);
  e.path = slash == std::string::npos ? "/" : url.substr(slash);
  if (e.origin.size() == scheme + 3) throw std::invalid_argument("endpoint '" + url + "' has no host");
  return e;
}

/// Scores text against a remote endpoint with bounded retries, a rate limit
/// and a concurrency cap. Safe to share between threads.
class ApiClient {
 public:
  explicit ApiClient(ApiConfig cfg)
      : cfg_(std::move(cfg)), ep_(parse_endpoint(cfg_.endpoint)), proto_{cfg_.protocol}, limiter_(cfg_.rate),
        gate_(cfg_.concurrency) {
    proto_.request_body("");  // rejects unknown protocols up front
    if (cfg_.attempts == 0) throw std::invalid_argument("attempts must be positive");
  }

  const ApiConfig& config() const { return cfg_; }

  /// One logical call; may issue up to `attempts` HTTP requests.
  double score(const std::string& text) {
    calls_.fetch_add(1);
    std::string last = "no attempt made";
    double wait = cfg_.backoff_s;
    for (std::size_t attempt = 0; attempt < cfg_.attempts; ++attempt) {
      if (attempt) {
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
        wait *= 2;
      }
      gate_.enter();
      limiter_.acquire();
      requests_.fetch_add(1);
      try {
        const double v = send(text);
        gate_.leave();
        return v;
      } catch (const std::exception& e) {
        gate_.leave();
        last = e.what();
      }
    }
    failures_.fetch_add(1);
    throw ApiError("endpoint " + cfg_.endpoint + " failed after " + std::to_string(cfg_.attempts) +
                   " attempts: " + last);
  }

  /// Scores in parallel; failed entries come back empty. Order follows input.
  std::vector<std::optional<double>> score_all(const std::vector<std::string>& texts) {
    return parallel_map<std::optional<double>>(texts.size(), cfg_.concurrency,
                                               [&](std::size_t i) -> std::optional<double> {
                                                 try {
                                                   return score(texts[i]);
                                                 } catch (const ApiError&) {
                                                   return std::nullopt;
                                                 }
                                               });
  }

  std::size_t calls() const { return calls_.load(); }
  std::size_t requests() const { return requests_.load(); }
  std::size_t failed_calls() const { return failures_.load(); }

 private:
  double send(const std::string& text) {
    httplib::Client http(ep_.origin);
    const auto t = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(cfg_.timeout_s));
    http.set_connection_timeout(t);
    http.set_read_timeout(t);
    http.set_write_timeout(t);
    std::string path = ep_.path;
    if (!cfg_.token.empty()) {
      if (cfg_.protocol == "perspective")
        path += (path.find('?') == std::string::npos ? "?key=" : "&key=") + cfg_.token;
      else
        http.set_bearer_token_auth(cfg_.token);
    }
    auto res = http.Post(path, proto_.request_body(text), "application/json");
    if (!res) throw ApiError("request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw ApiError("HTTP " + std::to_string(res->status) + ": " + res->body);
    return proto_.parse_score(res->body);
  }

  ApiConfig cfg_;
  Endpoint ep_;
  Protocol proto_;
  RateLimiter limiter_;
  Gate gate_;
  std::atomic<std::size_t> calls_{0}, requests_{0}, failures_{0};
};

}  // namespace distflip::blackbox
