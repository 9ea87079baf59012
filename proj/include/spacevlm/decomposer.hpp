#pragma once

// Splits a caption P into an affirmative caption P_a and an optional negated
// caption P_n, both phrased affirmatively. Two interchangeable backends exist:
// a deterministic cue-table splitter and a JSON-over-HTTP language model.
// Results can be memoized in a JSON file keyed by SHA-256 of the caption.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
// glibc's resolv.h defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <json.hpp>

#include "spacevlm/atomic_file.hpp"
#include "spacevlm/error.hpp"
#include "spacevlm/sha256.hpp"

namespace spacevlm {

enum class Backend { Rules, Remote, Cache };

inline std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::Rules: return "rules";
    case Backend::Remote: return "remote";
    case Backend::Cache: return "cache";
  }
  return "rules";
}

inline Backend parse_backend(std::string_view s) {
  if (s == "rules") return Backend::Rules;
  if (s == "remote") return Backend::Remote;
  if (s == "cache") return Backend::Cache;
  throw Error(ErrorCode::InvalidArgument, "unknown backend '" + std::string(s) + "'");
}

struct DecomposedCaption {
  std::string original;
  std::string affirmative;
  std::optional<std::string> negated;
  Backend backend = Backend::Rules;
  /// Set when a remote request failed and the rules backend answered instead.
  bool fallback = false;

  friend bool operator==(const DecomposedCaption&, const DecomposedCaption&) = default;
};

using WarningSink = std::function<void(const std::string&)>;

inline void stderr_warning(const std::string& msg) {
  std::cerr << "[spacevlm] warning: " << msg << '\n';
}

struct DecomposerConfig {
  Backend backend = Backend::Rules;
  std::optional<std::string> endpoint;
  std::optional<std::string> auth_token;
  std::optional<std::filesystem::path> cache_path;
  std::chrono::milliseconds timeout{10000};
  int retries = 2;
  bool fallback_to_rules = true;
  std::size_t max_in_flight = 4;
  WarningSink warn = stderr_warning;

  /// Fills endpoint and token from SPACEVLM_LLM_ENDPOINT / SPACEVLM_LLM_TOKEN
  /// when they are not already set.
  DecomposerConfig& with_environment() {
    if (!endpoint) {
      if (const char* e = std::getenv("SPACEVLM_LLM_ENDPOINT"); e && *e) endpoint = e;
    }
    if (!auth_token) {
      if (const char* t = std::getenv("SPACEVLM_LLM_TOKEN"); t && *t) auth_token = t;
    }
    return *this;
  }

  void validate() const {
    if (backend == Backend::Remote && !endpoint) {
      throw Error(ErrorCode::InvalidArgument, "remote backend requires an endpoint");
    }
    if (backend == Backend::Cache) {
      throw Error(ErrorCode::InvalidArgument, "cache is not a selectable backend");
    }
    if (retries < 0) throw Error(ErrorCode::InvalidArgument, "retries must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Rules backend

/// Ordered cue table; on overlapping matches the earliest position wins and,
/// at the same position, the entry listed first.
inline const std::vector<std::string_view>& negation_cues() {
  static const std::vector<std::string_view> cues{
      "but not", "but no",  "and not",   "does not show", "do not",
      "not",     "without", "with no",   "excluding",     "no"};
  return cues;
}

namespace detail {

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'';
}
inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

/// Length of the cue match starting at `pos`, or 0. Cue tokens may be
/// separated by any run of whitespace.
inline std::size_t match_cue_at(std::string_view text, std::size_t pos, std::string_view cue) {
  if (pos > 0 && is_word_char(text[pos - 1])) return 0;
  std::size_t i = pos;
  std::size_t k = 0;
  while (k < cue.size()) {
    if (cue[k] == ' ') {
      if (i >= text.size() || !is_space(text[i])) return 0;
      while (i < text.size() && is_space(text[i])) ++i;
      ++k;
      continue;
    }
    if (i >= text.size() || lower(text[i]) != cue[k]) return 0;
    ++i;
    ++k;
  }
  if (i < text.size() && is_word_char(text[i])) return 0;
  return i - pos;
}

struct CueMatch {
  std::size_t pos;
  std::size_t len;
};

inline std::optional<CueMatch> find_first_cue(std::string_view text) {
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    for (auto cue : negation_cues()) {
      if (auto len = match_cue_at(text, pos, cue)) return CueMatch{pos, len};
    }
  }
  return std::nullopt;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string_view trim_punct(std::string_view s) {
  s = trim(s);
  while (!s.empty() && std::string_view(",;:.-!?").find(s.back()) != std::string_view::npos) {
    s.remove_suffix(1);
    s = trim(s);
  }
  while (!s.empty() && std::string_view(",;:-").find(s.front()) != std::string_view::npos) {
    s.remove_prefix(1);
    s = trim(s);
  }
  return s;
}

inline bool starts_with_word(std::string_view s, std::string_view word) {
  if (s.size() < word.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (lower(s[i]) != word[i]) return false;
  }
  return s.size() == word.size() || !is_word_char(s[word.size()]);
}

inline std::vector<std::string> lower_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : s) {
    if (is_word_char(c)) {
      cur.push_back(lower(c));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline bool has_depiction_verb(std::string_view s) {
  static constexpr std::string_view kVerbs[] = {
      "is",       "are",       "shows",    "show",     "showing", "depicts",  "depicting",
      "features", "featuring", "contains", "containing", "has",   "have",     "displays"};
  for (const auto& w : lower_words(s)) {
    if (std::find(std::begin(kVerbs), std::end(kVerbs), w) != std::end(kVerbs)) return true;
  }
  return false;
}

inline bool starts_with_article(std::string_view s) {
  return starts_with_word(s, "a") || starts_with_word(s, "an") || starts_with_word(s, "the") ||
         starts_with_word(s, "this") || starts_with_word(s, "there");
}

inline bool starts_with_template(std::string_view s) {
  static constexpr std::string_view kTemplates[] = {"a photo of", "an image of", "a picture of",
                                                     "this is a photo"};
  for (auto t : kTemplates) {
    if (match_cue_at(s, 0, t) != 0) return true;
  }
  return false;
}

inline std::string capitalize_first(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

inline std::string with_photo_template(std::string_view phrase) {
  std::string p(phrase);
  // Lower-case a leading capital unless the word looks like an acronym.
  if (p.size() > 1 && std::isupper(static_cast<unsigned char>(p[0])) &&
      std::islower(static_cast<unsigned char>(p[1]))) {
    p[0] = lower(p[0]);
  }
  return "A photo of " + p;
}

inline std::string_view strip_leading_prepositions(std::string_view s) {
  static constexpr std::string_view kWords[] = {"on",   "in",   "at",    "with", "by",
                                                "near", "under", "over", "from", "any",
                                                "containing", "including", "showing"};
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto w : kWords) {
      if (starts_with_word(s, w) && s.size() > w.size()) {
        s = trim(s.substr(w.size()));
        changed = true;
      }
    }
  }
  return s;
}

}  // namespace detail

inline DecomposedCaption decompose_rules(const std::string& caption) {
  const std::string_view text = detail::trim(caption);
  if (text.empty()) throw Error(ErrorCode::EmptyCaption, "caption is empty");

  DecomposedCaption out;
  out.original = caption;
  out.backend = Backend::Rules;

  const auto cue = detail::find_first_cue(text);
  if (!cue) {
    out.affirmative = caption;
    return out;
  }

  const std::string_view left = detail::trim_punct(text.substr(0, cue->pos));
  if (left.empty()) {
    out.affirmative = "This is a photo";
  } else if (detail::starts_with_article(left) || detail::has_depiction_verb(left)) {
    out.affirmative = std::string(left);
  } else {
    out.affirmative = detail::with_photo_template(left);
  }

  std::string_view tail = text.substr(cue->pos + cue->len);
  if (const auto next = detail::find_first_cue(tail)) tail = tail.substr(0, next->pos);
  tail = detail::strip_leading_prepositions(detail::trim_punct(tail));
  tail = detail::trim_punct(tail);
  if (!tail.empty()) {
    out.negated = detail::starts_with_template(tail) ? detail::capitalize_first(tail)
                                                     : detail::with_photo_template(tail);
  }
  return out;
}

/// True when `text` contains any cue from the table.
inline bool contains_negation_cue(std::string_view text) {
  return detail::find_first_cue(text).has_value();
}

// ---------------------------------------------------------------------------
// Cache

inline nlohmann::ordered_json to_json(const DecomposedCaption& d) {
  nlohmann::ordered_json j;
  j["original"] = d.original;
  j["affirmative"] = d.affirmative;
  j["negative"] = d.negated ? nlohmann::ordered_json(*d.negated) : nlohmann::ordered_json();
  j["backend"] = std::string(to_string(d.backend));
  if (d.fallback) j["fallback"] = true;
  return j;
}

inline DecomposedCaption decomposed_from_json(const nlohmann::json& j) {
  DecomposedCaption d;
  d.original = j.at("original").get<std::string>();
  d.affirmative = j.at("affirmative").get<std::string>();
  if (const auto& n = j.at("negative"); !n.is_null()) d.negated = n.get<std::string>();
  d.backend = parse_backend(j.at("backend").get<std::string>());
  d.fallback = j.value("fallback", false);
  return d;
}

/// JSON object keyed by lowercase hex SHA-256 of the exact caption bytes.
/// Inserts merge with whatever is on disk and replace the file atomically.
class DecompositionCache {
 public:
  explicit DecompositionCache(std::filesystem::path path, WarningSink warn = stderr_warning)
      : path_(std::move(path)), warn_(std::move(warn)) {
    entries_ = load();
  }

  std::optional<DecomposedCaption> lookup(const std::string& caption) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(sha256_hex(caption));
    if (it == entries_.end()) return std::nullopt;
    try {
      return decomposed_from_json(*it);
    } catch (const std::exception& e) {
      warn_("ignoring malformed cache entry: " + std::string(e.what()));
      return std::nullopt;
    }
  }

  void insert(const std::string& caption, const DecomposedCaption& result) {
    std::lock_guard lock(mu_);
    nlohmann::ordered_json merged = load();
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
      if (!merged.contains(it.key())) merged[it.key()] = it.value();
    }
    merged[sha256_hex(caption)] = to_json(result);
    write_file_atomic(path_, merged.dump(2) + "\n");
    entries_ = std::move(merged);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  nlohmann::ordered_json load() const {
    std::error_code ec;
    if (!std::filesystem::exists(path_, ec)) return nlohmann::ordered_json::object();
    std::string text;
    try {
      text = read_file(path_);
    } catch (const Error& e) {
      warn_(std::string("CacheCorrupt: ") + e.what() + "; starting from an empty cache");
      return nlohmann::ordered_json::object();
    }
    if (detail::trim(text).empty()) return nlohmann::ordered_json::object();
    try {
      auto j = nlohmann::ordered_json::parse(text);
      if (j.is_object()) return j;
    } catch (const nlohmann::json::exception&) {
    }
    warn_("CacheCorrupt: " + path_.string() + " is not a JSON object; rebuilding from empty");
    return nlohmann::ordered_json::object();
  }

  std::filesystem::path path_;
  WarningSink warn_;
  mutable std::mutex mu_;
  nlohmann::ordered_json entries_;
};

/// Returns the cached value for `caption` if present; otherwise stores
/// `result` and returns it.
inline DecomposedCaption cache_lookup_or_insert(const std::string& caption,
                                                const DecomposedCaption& result,
                                                const std::filesystem::path& cache_path,
                                                WarningSink warn = stderr_warning) {
  DecompositionCache cache(cache_path, std::move(warn));
  if (auto hit = cache.lookup(caption)) return *hit;
  cache.insert(caption, result);
  return result;
}

// ---------------------------------------------------------------------------
// Remote backend

inline constexpr std::string_view kDecomposerInstruction =
    "You split image captions for a retrieval system. Given a caption, return the part that "
    "must be present as \"affirmative\" and the part that must be absent as \"negative\". "
    "Phrase both affirmatively as short captions of the form \"A photo of ...\"; do not use "
    "negation words in either. If the caption contains no negation, copy it unchanged into "
    "\"affirmative\" and set \"negative\" to null. Reply with strict JSON only: "
    "{\"affirmative\": string, \"negative\": string or null}.";

inline nlohmann::ordered_json remote_request_body(const std::string& caption) {
  nlohmann::ordered_json body;
  body["messages"] = nlohmann::ordered_json::array(
      {{{"role", "system"}, {"content", std::string(kDecomposerInstruction)}},
       {{"role", "user"}, {"content", caption}}});
  body["temperature"] = 0;
  return body;
}

namespace detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "endpoint must be an http(s) URL: " + url);
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

/// Accepts either the bare reply object or an OpenAI-style chat completion
/// whose first choice carries the reply as a JSON string.
inline DecomposedCaption parse_remote_reply(const std::string& caption, const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
    if (j.is_object() && j.contains("choices")) {
      j = nlohmann::json::parse(j.at("choices").at(0).at("message").at("content").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedReply, std::string("reply is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::MalformedReply, "reply is not a JSON object");
  if (!j.contains("affirmative") || !j["affirmative"].is_string()) {
    throw Error(ErrorCode::MalformedReply, "reply lacks a string \"affirmative\"");
  }
  if (!j.contains("negative") || !(j["negative"].is_null() || j["negative"].is_string())) {
    throw Error(ErrorCode::MalformedReply, "reply lacks \"negative\" (string or null)");
  }
  DecomposedCaption out;
  out.original = caption;
  out.backend = Backend::Remote;
  out.affirmative = std::string(trim(j["affirmative"].get<std::string>()));
  if (out.affirmative.empty()) throw Error(ErrorCode::MalformedReply, "empty affirmative");
  if (j["negative"].is_string()) {
    const std::string neg(trim(j["negative"].get<std::string>()));
    if (!neg.empty()) out.negated = neg;
  }
  if (out.negated && contains_negation_cue(*out.negated)) {
    throw Error(ErrorCode::MalformedReply, "negative part still contains a negation cue");
  }
  return out;
}

}  // namespace detail

/// One remote decomposition with retries. `requests`, when given, is bumped
/// once per HTTP attempt.
inline DecomposedCaption decompose_remote(const std::string& caption,
                                          const DecomposerConfig& config,
                                          std::atomic<std::size_t>* requests = nullptr) {
  if (detail::trim(caption).empty()) throw Error(ErrorCode::EmptyCaption, "caption is empty");
  if (!config.endpoint) throw Error(ErrorCode::InvalidArgument, "remote backend needs endpoint");

  const auto ep = detail::split_endpoint(*config.endpoint);
  const std::string body = remote_request_body(caption).dump();
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
  const auto usecs =
      std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);

  ErrorCode last_code = ErrorCode::EndpointUnreachable;
  std::string last_error;
  for (int attempt = 0; attempt <= config.retries; ++attempt) {
    httplib::Client client(ep.origin);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (config.auth_token) headers.emplace("Authorization", "Bearer " + *config.auth_token);
    if (requests) requests->fetch_add(1);
    auto res = client.Post(ep.path, headers, body, "application/json");
    if (!res) {
      last_code = ErrorCode::EndpointUnreachable;
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_code = ErrorCode::EndpointUnreachable;
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      return detail::parse_remote_reply(caption, res->body);
    } catch (const Error& e) {
      last_code = e.code();
      last_error = e.what();
      config.warn(std::string("remote decomposer: ") + e.what());
    }
  }

  if (!config.fallback_to_rules) throw Error(last_code, last_error);
  config.warn("remote decomposer failed after " + std::to_string(config.retries + 1) +
              " attempt(s) (" + last_error + "); falling back to rules");
  DecomposedCaption out = decompose_rules(caption);
  out.fallback = true;
  return out;
}

// ---------------------------------------------------------------------------
// Facade

/// Dispatches to the configured backend and consults the cache first.
class Decomposer {
 public:
  explicit Decomposer(DecomposerConfig config = {}) : config_(std::move(config)) {
    config_.validate();
    if (!config_.warn) config_.warn = stderr_warning;
    if (config_.cache_path) cache_.emplace(*config_.cache_path, config_.warn);
  }

  DecomposedCaption decompose(const std::string& caption) {
    if (detail::trim(caption).empty()) throw Error(ErrorCode::EmptyCaption, "caption is empty");
    if (cache_) {
      if (auto hit = cache_->lookup(caption)) {
        hit->backend = Backend::Cache;
        return *hit;
      }
    }
    DecomposedCaption out = config_.backend == Backend::Remote
                                ? decompose_remote(caption, config_, &requests_)
                                : decompose_rules(caption);
    if (cache_) cache_->insert(caption, out);
    return out;
  }

  /// Decomposes many captions with at most `max_in_flight` concurrent calls.
  /// Output order follows input order.
  std::vector<DecomposedCaption> decompose_all(const std::vector<std::string>& captions) {
    std::vector<DecomposedCaption> out(captions.size());
    const std::size_t workers =
        config_.backend == Backend::Remote ? std::max<std::size_t>(1, config_.max_in_flight) : 1;
    if (workers == 1 || captions.size() < 2) {
      for (std::size_t i = 0; i < captions.size(); ++i) out[i] = decompose(captions[i]);
      return out;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < std::min(workers, captions.size()); ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < captions.size(); i = next++) {
            try {
              out[i] = decompose(captions[i]);
            } catch (...) {
              std::lock_guard lock(err_mu);
              if (!first_error) first_error = std::current_exception();
            }
          }
        });
      }
    }
    if (first_error) std::rethrow_exception(first_error);
    return out;
  }

  const DecomposerConfig& config() const noexcept { return config_; }
  std::size_t network_requests() const noexcept { return requests_.load(); }

 private:
  DecomposerConfig config_;
  std::optional<DecompositionCache> cache_;
  std::atomic<std::size_t> requests_{0};
};

}  // namespace spacevlm
