#pragma once

// JSON-over-HTTP clients for remote generator, NLI, task-model and keyword
// backends.
//
//   POST /v1/generate  {id, prefix, mode, top_p, max_tokens, count, seed, top_k, protocol_version}
//                      -> {id, sentences: [...]} | {id, topk: [[token, prob], ...]}
//   POST /v1/nli       {id, premise, hypothesis, protocol_version} -> {id, entail_prob}
//                      {id, pairs: [{id, premise, hypothesis}], protocol_version}
//                      -> {id, results: [{id, entail_prob}]}
//   POST /v1/infer     {id, input, control_code, protocol_version} -> {id, output}
//   POST /v1/keywords  {id, text, max_keywords, protocol_version} -> {id, keywords: [...]}
//
// Transport failures and 5xx responses are retried with exponential backoff
// under the same request id; 4xx responses and malformed bodies are
// protocol errors and are not retried.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "distill/config.hpp"
#include "distill/decoding.hpp"
#include "distill/error.hpp"
#include "distill/lmcore.hpp"
#include "distill/task_model.hpp"
#include "httplib.h"
#include "json.hpp"

namespace distill {

inline constexpr std::string_view kProtocolVersion = "v1";
inline constexpr std::size_t kDefaultTopK = 200;

struct HttpResult {
  int status = 0;
  std::string body;
};

/// One POST. Implementations throw TransportError when no HTTP response was
/// obtained (refused connection, timeout).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResult post(const std::string& path, const std::string& body) = 0;
};

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const EndpointConfig& cfg) : client_(cfg.base_url) {
    cfg.validate();
    const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);
    client_.set_connection_timeout(timeout);
    client_.set_read_timeout(timeout);
    client_.set_write_timeout(timeout);
    if (cfg.auth_token) client_.set_bearer_token_auth(*cfg.auth_token);
  }

  HttpResult post(const std::string& path, const std::string& body) override {
    std::lock_guard lock(mu_);
    auto res = client_.Post(path, body, "application/json");
    if (!res) throw TransportError("POST " + path + ": " + httplib::to_string(res.error()));
    return {res->status, res->body};
  }

 private:
  std::mutex mu_;
  httplib::Client client_;
};

/// Adapter over a callable; used to script failures.
class FunctionTransport final : public Transport {
 public:
  using Fn = std::function<HttpResult(const std::string&, const std::string&)>;
  explicit FunctionTransport(Fn fn) : fn_(std::move(fn)) {}
  HttpResult post(const std::string& path, const std::string& body) override { return fn_(path, body); }

 private:
  Fn fn_;
};

/// Replays recorded exchanges. A request must match a recorded one
/// byte-for-byte; each recording is served once, in recorded order among
/// identical requests.
class FixtureTransport final : public Transport {
 public:
  struct Exchange {
    std::string path;
    std::string request;
    int status = 200;
    std::string response;
  };

  void add(Exchange e) { exchanges_.push_back({std::move(e), false}); }

  HttpResult post(const std::string& path, const std::string& body) override {
    std::lock_guard lock(mu_);
    sent_.push_back(body);
    for (auto& [e, used] : exchanges_) {
      if (!used && e.path == path && e.request == body) {
        used = true;
        return {e.status, e.response};
      }
    }
    throw ProtocolError("no recorded exchange for POST " + path + " " + body);
  }

  const std::vector<std::string>& sent() const noexcept { return sent_; }
  std::size_t unused() const {
    std::size_t n = 0;
    for (const auto& [e, used] : exchanges_) n += !used;
    return n;
  }

 private:
  std::mutex mu_;
  std::vector<std::pair<Exchange, bool>> exchanges_;
  std::vector<std::string> sent_;
};

namespace detail {

class InflightLimiter {
 public:
  explicit InflightLimiter(std::size_t limit) : limit_(limit) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return active_ < limit_; });
    ++active_;
    peak_ = std::max(peak_, active_);
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      --active_;
    }
    cv_.notify_one();
  }
  std::size_t peak() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t limit_;
  std::size_t active_ = 0;
  std::size_t peak_ = 0;
};

}  // namespace detail

/// Request/response plumbing shared by the endpoint clients.
class WireClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  WireClient(EndpointConfig cfg, std::shared_ptr<Transport> transport, std::string id_prefix)
      : cfg_(std::move(cfg)), transport_(std::move(transport)), id_prefix_(std::move(id_prefix)),
        limiter_(cfg_.max_inflight) {
    cfg_.validate();
    if (!transport_) transport_ = std::make_shared<HttpTransport>(cfg_);
  }

  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }
  void set_backoff_base(std::chrono::milliseconds base) { backoff_base_ = base; }

  std::string next_id() { return id_prefix_ + "-" + std::to_string(counter_.fetch_add(1)); }

  /// Sends `request` (which must carry "id") and returns the parsed response
  /// after checking that it echoes the id.
  nlohmann::ordered_json call(const std::string& path, const nlohmann::ordered_json& request) {
    const std::string id = request.at("id").get<std::string>();
    const std::string body = request.dump();
    HttpResult res;
    for (std::uint32_t attempt = 0;; ++attempt) {
      bool retryable = false;
      std::string why;
      limiter_.acquire();
      try {
        res = transport_->post(path, body);
        limiter_.release();
        if (res.status >= 500) {
          retryable = true;
          why = "HTTP " + std::to_string(res.status);
        }
      } catch (const TransportError& e) {
        limiter_.release();
        retryable = true;
        why = e.what();
      } catch (...) {
        limiter_.release();
        throw;
      }
      if (!retryable) break;
      if (attempt >= cfg_.max_retries) {
        throw TransportError("POST " + path + " failed after " + std::to_string(attempt + 1) + " attempts: " + why);
      }
      ++retries_;
      sleeper_(backoff_base_ * (1LL << std::min<std::uint32_t>(attempt, 20)));
    }
    if (res.status < 200 || res.status >= 300) {
      throw ProtocolError("POST " + path + ": HTTP " + std::to_string(res.status) + ": " + res.body);
    }
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(res.body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ProtocolError("POST " + path + ": malformed JSON response: " + e.what());
    }
    if (!j.is_object()) throw ProtocolError("POST " + path + ": response is not an object");
    auto it = j.find("id");
    if (it == j.end() || !it->is_string() || it->get<std::string>() != id) {
      throw ProtocolError("POST " + path + ": response does not echo request id " + id);
    }
    if (auto v = j.find("protocol_version"); v != j.end() && *v != kProtocolVersion) {
      throw ProtocolError("POST " + path + ": unsupported protocol version " + v->dump());
    }
    return j;
  }

  std::size_t retries() const noexcept { return retries_.load(); }
  std::size_t peak_inflight() const { return limiter_.peak(); }
  const EndpointConfig& config() const noexcept { return cfg_; }

 private:
  EndpointConfig cfg_;
  std::shared_ptr<Transport> transport_;
  std::string id_prefix_;
  detail::InflightLimiter limiter_;
  std::atomic<std::uint64_t> counter_{0};
  std::atomic<std::size_t> retries_{0};
  std::chrono::milliseconds backoff_base_{100};
  Sleeper sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

namespace detail {

template <typename T>
T wire_field(const nlohmann::ordered_json& j, std::string_view key, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(std::string(what) + ": missing '" + std::string(key) + "'");
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError(std::string(what) + ": '" + std::string(key) + "' has the wrong type");
  }
}

inline EntailmentScore wire_score(const nlohmann::ordered_json& j, std::string_view what) {
  auto it = j.find("entail_prob");
  if (it == j.end() || !it->is_number()) throw ProtocolError(std::string(what) + ": missing numeric entail_prob");
  return EntailmentScore(it->get<double>());
}

}  // namespace detail

/// Generator backend. As a LanguageModel it asks for the top-K next-token
/// distribution and memoizes it per prefix; sampling stays client-side, so
/// runs are reproducible from the seed.
class RemoteGenerator final : public LanguageModel {
 public:
  RemoteGenerator(EndpointConfig cfg, std::shared_ptr<Transport> transport = nullptr, std::size_t top_k = kDefaultTopK)
      : client_(std::move(cfg), std::move(transport), "gen"), top_k_(top_k) {}

  TokenDistribution next_token_distribution(std::span<const std::string> prefix) const override {
    const std::string key = join_tokens(prefix);
    {
      std::shared_lock lock(mu_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    auto dist = distribution(key);
    std::unique_lock lock(mu_);
    memo_.insert_or_assign(key, dist);
    return dist;
  }

  /// Raw distribution-mode request, no memo.
  TokenDistribution distribution(const std::string& prefix) const {
    nlohmann::ordered_json req;
    req["id"] = client_.next_id();
    req["prefix"] = prefix;
    req["mode"] = "distribution";
    req["top_p"] = 1.0;
    req["max_tokens"] = 1;
    req["count"] = 1;
    req["seed"] = 0;
    req["top_k"] = top_k_;
    req["protocol_version"] = kProtocolVersion;
    const auto res = client_.call("/v1/generate", req);
    const auto it = res.find("topk");
    if (it == res.end() || !it->is_array()) throw ProtocolError("/v1/generate: missing topk");
    if (it->empty()) throw ProtocolError("/v1/generate: empty topk");
    if (it->size() > top_k_) throw ProtocolError("/v1/generate: more than top_k entries");
    std::vector<std::pair<std::string, double>> w;
    double sum = 0.0;
    for (const auto& e : *it) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_number()) {
        throw ProtocolError("/v1/generate: topk entries must be [token, prob]");
      }
      const double p = e[1].get<double>();
      if (!(p >= 0.0 && p <= 1.0)) throw ProtocolError("/v1/generate: probability outside [0,1]");
      sum += p;
      w.emplace_back(e[0].get<std::string>(), p);
    }
    if (sum > 1.0 + 1e-6) throw ProtocolError("/v1/generate: topk probabilities sum above 1");
    if (!(sum > 0.0)) throw ProtocolError("/v1/generate: topk carries no mass");
    return TokenDistribution::from_weights(std::move(w));
  }

  /// Sample-mode request: `count` sentences continuing `prefix`.
  std::vector<std::string> sample(const std::string& prefix, std::size_t count, const GenerationConfig& cfg) const {
    nlohmann::ordered_json req;
    req["id"] = client_.next_id();
    req["prefix"] = prefix;
    req["mode"] = "sample";
    req["top_p"] = cfg.top_p;
    req["max_tokens"] = cfg.max_tokens;
    req["count"] = count;
    req["seed"] = cfg.seed;
    req["top_k"] = top_k_;
    req["protocol_version"] = kProtocolVersion;
    const auto res = client_.call("/v1/generate", req);
    auto sentences = detail::wire_field<std::vector<std::string>>(res, "sentences", "/v1/generate");
    if (sentences.size() != count) throw ProtocolError("/v1/generate: expected " + std::to_string(count) + " sentences");
    return sentences;
  }

  WireClient& client() const noexcept { return client_; }

 private:
  mutable WireClient client_;
  std::size_t top_k_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<std::string, TokenDistribution> memo_;
};

class RemoteNliScorer final : public EntailmentScorer {
 public:
  explicit RemoteNliScorer(EndpointConfig cfg, std::shared_ptr<Transport> transport = nullptr)
      : client_(std::move(cfg), std::move(transport), "nli") {}

  EntailmentScore score(const TokenSeq& premise, const TokenSeq& hypothesis) const override {
    nlohmann::ordered_json req;
    req["id"] = client_.next_id();
    req["premise"] = premise.source_text;
    req["hypothesis"] = hypothesis.source_text;
    req["protocol_version"] = kProtocolVersion;
    return detail::wire_score(client_.call("/v1/nli", req), "/v1/nli");
  }

  /// One request for many pairs; results are matched to inputs by item id,
  /// so response order does not matter. Repeated items with the same score
  /// are collapsed.
  std::vector<EntailmentScore> score_batch(std::span<const std::pair<const TokenSeq*, const TokenSeq*>> pairs) const {
    if (pairs.empty()) return {};
    nlohmann::ordered_json req;
    req["id"] = client_.next_id();
    nlohmann::ordered_json items = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      nlohmann::ordered_json item;
      item["id"] = std::to_string(i);
      item["premise"] = pairs[i].first->source_text;
      item["hypothesis"] = pairs[i].second->source_text;
      items.push_back(std::move(item));
    }
    req["pairs"] = std::move(items);
    req["protocol_version"] = kProtocolVersion;
    const auto res = client_.call("/v1/nli", req);
    const auto it = res.find("results");
    if (it == res.end() || !it->is_array()) throw ProtocolError("/v1/nli: missing results");
    std::map<std::string, double> by_id;
    for (const auto& r : *it) {
      if (!r.is_object()) throw ProtocolError("/v1/nli: result is not an object");
      const auto id = detail::wire_field<std::string>(r, "id", "/v1/nli");
      const double p = detail::wire_score(r, "/v1/nli").value();
      auto [pos, inserted] = by_id.emplace(id, p);
      if (!inserted && pos->second != p) throw ProtocolError("/v1/nli: conflicting duplicate result " + id);
    }
    std::vector<EntailmentScore> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      auto f = by_id.find(std::to_string(i));
      if (f == by_id.end()) throw ProtocolError("/v1/nli: no result for item " + std::to_string(i));
      out.emplace_back(f->second);
    }
    if (by_id.size() != pairs.size()) throw ProtocolError("/v1/nli: results for unknown items");
    return out;
  }

  WireClient& client() const noexcept { return client_; }

 private:
  mutable WireClient client_;
};

/// Task model over /v1/infer. The raw x goes in `input`; the control code
/// travels in its own field.
class RemoteTaskModel final : public TaskModel {
 public:
  explicit RemoteTaskModel(EndpointConfig cfg, std::shared_ptr<Transport> transport = nullptr)
      : client_(std::move(cfg), std::move(transport), "infer") {}

  std::string infer(const std::string& x, std::string_view control_code) const override {
    nlohmann::ordered_json req;
    req["id"] = client_.next_id();
    req["input"] = x;
    req["control_code"] = control_code;
    req["protocol_version"] = kProtocolVersion;
    return detail::wire_field<std::string>(client_.call("/v1/infer", req), "output", "/v1/infer");
  }

  WireClient& client() const noexcept { return client_; }

 private:
  mutable WireClient client_;
};

class RemoteKeywordExtractor final : public KeywordExtractor {
 public:
  explicit RemoteKeywordExtractor(EndpointConfig cfg, std::shared_ptr<Transport> transport = nullptr)
      : client_(std::move(cfg), std::move(transport), "kw") {}

  std::vector<std::string> extract(const TokenSeq& x, std::size_t max_keywords) const override {
    nlohmann::ordered_json req;
    req["id"] = client_.next_id();
    req["text"] = x.source_text;
    req["max_keywords"] = max_keywords;
    req["protocol_version"] = kProtocolVersion;
    auto kws = detail::wire_field<std::vector<std::string>>(client_.call("/v1/keywords", req), "keywords",
                                                            "/v1/keywords");
    if (kws.size() > max_keywords) throw ProtocolError("/v1/keywords: more than max_keywords returned");
    return kws;
  }

 private:
  mutable WireClient client_;
};

}  // namespace distill
