#pragma once

// Run configuration and its key=value text format.
//
//   # comment
//   generation.k1 = 10
//   summarization.tau_entail = 0.9
//   endpoint.nli.base_url = http://localhost:8000
//
// Unknown keys are rejected. serialize() writes every key in a fixed order,
// so parse(serialize(c)) == c and serialize(parse(s)) is a fixed point.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "distill/decoding.hpp"
#include "distill/error.hpp"
#include "distill/filters.hpp"
#include "distill/pairgen.hpp"

namespace distill {

struct EndpointConfig {
  std::string base_url;
  std::uint32_t timeout_ms = 30000;
  std::uint32_t max_retries = 3;
  std::uint32_t max_inflight = 8;
  std::optional<std::string> auth_token;

  void validate() const {
    if (timeout_ms == 0) throw InputError("timeout_ms must be positive");
    if (max_inflight == 0) throw InputError("max_inflight must be positive");
  }

  friend bool operator==(const EndpointConfig&, const EndpointConfig&) = default;
};

inline EndpointConfig endpoint_at(std::string base_url) {
  EndpointConfig e;
  e.base_url = std::move(base_url);
  return e;
}

enum class Backend { toy, remote };

inline std::string_view to_string(Backend b) { return b == Backend::toy ? "toy" : "remote"; }

inline Backend parse_backend(std::string_view s) {
  if (s == "toy") return Backend::toy;
  if (s == "remote") return Backend::remote;
  throw InputError("unknown backend '" + std::string(s) + "'");
}

struct RunConfig {
  GenerationConfig generation;
  FilterConfig summarization = FilterConfig::summarization();
  FilterConfig paraphrase = FilterConfig::paraphrase();
  EndpointConfig generate_endpoint = endpoint_at("http://127.0.0.1:8000");
  EndpointConfig nli_endpoint = endpoint_at("http://127.0.0.1:8000");
  EndpointConfig infer_endpoint = endpoint_at("http://127.0.0.1:8000");
  Backend backend = Backend::toy;
  std::vector<Domain> domains{Domain::news, Domain::reddit, Domain::biomedical};
  std::size_t contexts = 50;
  std::size_t batch_size = 64;
  std::size_t workers = 1;
  std::size_t self_distill_inputs = 100;
  bool sequential = true;
  bool parallel = true;

  void validate() const {
    generation.validate();
    summarization.validate();
    paraphrase.validate();
    if (summarization.mode != TaskMode::summarization) throw InputError("summarization filter has wrong mode");
    if (paraphrase.mode != TaskMode::paraphrase) throw InputError("paraphrase filter has wrong mode");
    generate_endpoint.validate();
    nli_endpoint.validate();
    infer_endpoint.validate();
    if (domains.empty()) throw InputError("domains must not be empty");
    if (contexts < 1) throw InputError("contexts must be at least 1");
    if (batch_size < 1) throw InputError("batch_size must be at least 1");
    if (workers < 1) throw InputError("workers must be at least 1");
    if (!sequential && !parallel) throw InputError("at least one generation mode must be enabled");
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw InputError("cannot format number");
  return std::string(buf, end);
}

inline double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size()) {
    throw InputError("config key '" + std::string(key) + "': not a number: '" + std::string(v) + "'");
  }
  return out;
}

template <typename T>
T parse_uint(std::string_view key, std::string_view v) {
  T out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size()) {
    throw InputError("config key '" + std::string(key) + "': not a non-negative integer: '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw InputError("config key '" + std::string(key) + "': expected true or false");
}

struct ConfigKey {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

inline void add_filter_keys(std::vector<ConfigKey>& keys, const std::string& prefix, FilterConfig RunConfig::*f) {
  auto num = [&](std::string name, double FilterConfig::*m) {
    const std::string key = prefix + "." + name;
    keys.push_back({key, [f, m](const RunConfig& c) { return format_double(c.*f.*m); },
                    [f, m, key](RunConfig& c, std::string_view v) { c.*f.*m = parse_double(key, v); }});
  };
  num("tau_entail", &FilterConfig::tau_entail);
  num("tau_comp_ratio", &FilterConfig::tau_comp_ratio);
  num("tau_comp_lo", &FilterConfig::tau_comp_lo);
  num("tau_comp_hi", &FilterConfig::tau_comp_hi);
  num("tau_abstract", &FilterConfig::tau_abstract);
  const std::string key = prefix + ".diversity";
  keys.push_back({key, [f](const RunConfig& c) { return std::string((c.*f).diversity ? "true" : "false"); },
                  [f, key](RunConfig& c, std::string_view v) { (c.*f).diversity = parse_bool(key, v); }});
}

inline void add_endpoint_keys(std::vector<ConfigKey>& keys, const std::string& prefix,
                              EndpointConfig RunConfig::*e) {
  keys.push_back({prefix + ".base_url", [e](const RunConfig& c) { return (c.*e).base_url; },
                  [e](RunConfig& c, std::string_view v) { (c.*e).base_url = std::string(v); }});
  auto u32 = [&](std::string name, std::uint32_t EndpointConfig::*m) {
    const std::string key = prefix + "." + name;
    keys.push_back({key, [e, m](const RunConfig& c) { return std::to_string(c.*e.*m); },
                    [e, m, key](RunConfig& c, std::string_view v) { c.*e.*m = parse_uint<std::uint32_t>(key, v); }});
  };
  u32("timeout_ms", &EndpointConfig::timeout_ms);
  u32("max_retries", &EndpointConfig::max_retries);
  u32("max_inflight", &EndpointConfig::max_inflight);
  keys.push_back({prefix + ".auth_token", [e](const RunConfig& c) { return (c.*e).auth_token.value_or(""); },
                  [e](RunConfig& c, std::string_view v) {
                    if (v.empty()) {
                      (c.*e).auth_token.reset();
                    } else {
                      (c.*e).auth_token = std::string(v);
                    }
                  }});
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto size_key = [&](std::string name, auto getter) {
      k.push_back({name, [getter](const RunConfig& c) { return std::to_string(getter(const_cast<RunConfig&>(c))); },
                   [getter, name](RunConfig& c, std::string_view v) {
                     getter(c) = parse_uint<std::size_t>(name, v);
                   }});
    };
    size_key("generation.k1", [](RunConfig& c) -> std::size_t& { return c.generation.k1; });
    size_key("generation.k2", [](RunConfig& c) -> std::size_t& { return c.generation.k2; });
    k.push_back({"generation.top_p", [](const RunConfig& c) { return format_double(c.generation.top_p); },
                 [](RunConfig& c, std::string_view v) { c.generation.top_p = parse_double("generation.top_p", v); }});
    size_key("generation.beam_width", [](RunConfig& c) -> std::size_t& { return c.generation.beam_width; });
    size_key("generation.max_keywords", [](RunConfig& c) -> std::size_t& { return c.generation.max_keywords; });
    size_key("generation.context_sentences_min",
             [](RunConfig& c) -> std::size_t& { return c.generation.context_sentences.min; });
    size_key("generation.context_sentences_max",
             [](RunConfig& c) -> std::size_t& { return c.generation.context_sentences.max; });
    size_key("generation.max_tokens", [](RunConfig& c) -> std::size_t& { return c.generation.max_tokens; });
    k.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.generation.seed); },
                 [](RunConfig& c, std::string_view v) { c.generation.seed = parse_uint<std::uint64_t>("seed", v); }});
    add_filter_keys(k, "summarization", &RunConfig::summarization);
    add_filter_keys(k, "paraphrase", &RunConfig::paraphrase);
    add_endpoint_keys(k, "endpoint.generate", &RunConfig::generate_endpoint);
    add_endpoint_keys(k, "endpoint.nli", &RunConfig::nli_endpoint);
    add_endpoint_keys(k, "endpoint.infer", &RunConfig::infer_endpoint);
    k.push_back({"backend", [](const RunConfig& c) { return std::string(to_string(c.backend)); },
                 [](RunConfig& c, std::string_view v) { c.backend = parse_backend(v); }});
    k.push_back({"domains",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.domains.size(); ++i) {
                     if (i) s += ",";
                     s += to_string(c.domains[i]);
                   }
                   return s;
                 },
                 [](RunConfig& c, std::string_view v) {
                   c.domains.clear();
                   std::size_t pos = 0;
                   while (pos <= v.size()) {
                     auto comma = v.find(',', pos);
                     if (comma == std::string_view::npos) comma = v.size();
                     const auto item = trim(v.substr(pos, comma - pos));
                     if (!item.empty()) c.domains.push_back(parse_domain(item));
                     pos = comma + 1;
                   }
                 }});
    size_key("pipeline.contexts", [](RunConfig& c) -> std::size_t& { return c.contexts; });
    size_key("pipeline.batch_size", [](RunConfig& c) -> std::size_t& { return c.batch_size; });
    size_key("pipeline.workers", [](RunConfig& c) -> std::size_t& { return c.workers; });
    size_key("pipeline.self_distill_inputs", [](RunConfig& c) -> std::size_t& { return c.self_distill_inputs; });
    k.push_back({"pipeline.sequential", [](const RunConfig& c) { return std::string(c.sequential ? "true" : "false"); },
                 [](RunConfig& c, std::string_view v) { c.sequential = parse_bool("pipeline.sequential", v); }});
    k.push_back({"pipeline.parallel", [](const RunConfig& c) { return std::string(c.parallel ? "true" : "false"); },
                 [](RunConfig& c, std::string_view v) { c.parallel = parse_bool("pipeline.parallel", v); }});
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Applies `key = value` lines on top of `base`. Errors name the line.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  std::map<std::string_view, const detail::ConfigKey*> index;
  for (const auto& k : detail::config_keys()) index.emplace(k.name, &k);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
    const auto key = detail::trim(std::string_view(line).substr(0, eq));
    const auto value = detail::trim(std::string_view(line).substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw InputError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    try {
      it->second->set(base, value);
    } catch (const InputError& e) {
      throw InputError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

}  // namespace distill
