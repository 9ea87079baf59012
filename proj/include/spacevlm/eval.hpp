#pragma once

// Query construction, ranking, and the retrieval / multiple-choice metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "spacevlm/atomic_file.hpp"
#include "spacevlm/decomposer.hpp"
#include "spacevlm/error.hpp"
#include "spacevlm/sphere.hpp"
#include "spacevlm/store.hpp"

#ifndef SPACEVLM_VERSION
#define SPACEVLM_VERSION "0.0.0"
#endif

namespace spacevlm {

inline constexpr double kDefaultThreshold = 0.92;

using TextEmbedder = std::function<UnitVector(const std::string&)>;

/// Resolves captions against a precomputed text store: first by the item's
/// caption field, then by id.
class StoreTextEmbedder {
 public:
  explicit StoreTextEmbedder(const EmbeddingStore& store) : store_(&store) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (const auto& c = store.item(i).caption) by_caption_.emplace(*c, i);
    }
  }

  std::optional<std::size_t> find(const std::string& caption) const {
    if (auto it = by_caption_.find(caption); it != by_caption_.end()) return it->second;
    return store_->find(caption);
  }

  UnitVector operator()(const std::string& caption) const {
    if (auto i = find(caption)) return UnitVector::normalize(store_->row(*i));
    throw Error(ErrorCode::UnresolvableCaption, "no text embedding for \"" + caption + "\"");
  }

  std::size_t dim() const noexcept { return store_->dim(); }

 private:
  const EmbeddingStore* store_;
  std::unordered_map<std::string, std::size_t> by_caption_;
};

enum class Scorer {
  /// Decompose, then score along the negation-aware direction.
  NegationAware,
  /// Embed the full caption and score by plain dot product.
  Plain,
  /// Decompose and score against the affirmative part only.
  AffirmativeOnly,
};

inline std::string_view to_string(Scorer s) {
  switch (s) {
    case Scorer::NegationAware: return "negation-aware";
    case Scorer::Plain: return "plain";
    case Scorer::AffirmativeOnly: return "affirmative-only";
  }
  return "negation-aware";
}

inline Scorer parse_scorer(std::string_view s) {
  if (s == "negation-aware" || s == "spacevlm") return Scorer::NegationAware;
  if (s == "plain") return Scorer::Plain;
  if (s == "affirmative-only") return Scorer::AffirmativeOnly;
  throw Error(ErrorCode::InvalidArgument, "unknown scorer '" + std::string(s) + "'");
}

struct EvalConfig {
  double threshold_t = kDefaultThreshold;
  Variant variant = Variant::SlerpCenter;
  Scorer scorer = Scorer::NegationAware;
  std::vector<int> k_list{1, 5, 10};
  std::uint64_t seed = 0;
  DecomposerConfig decomposer;
  std::size_t threads = 1;
  bool per_query = false;

  void validate() const {
    detail::require_open_threshold(threshold_t);
    if (k_list.empty()) throw Error(ErrorCode::InvalidArgument, "k list is empty");
    for (int k : k_list) {
      if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    }
    if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  }

  nlohmann::ordered_json echo() const {
    nlohmann::ordered_json j;
    j["threshold_t"] = threshold_t;
    j["variant"] = std::string(to_string(variant));
    j["scorer"] = std::string(to_string(scorer));
    j["backend"] = std::string(to_string(decomposer.backend));
    j["k_list"] = k_list;
    j["seed"] = seed;
    j["version"] = SPACEVLM_VERSION;
    return j;
  }
};

/// Builds queries for one configuration, memoizing decompositions and
/// embeddings per caption.
class QueryBuilder {
 public:
  QueryBuilder(TextEmbedder embed, const EvalConfig& config)
      : embed_(std::move(embed)),
        t_(config.threshold_t),
        variant_(config.variant),
        scorer_(config.scorer),
        decomposer_(std::make_shared<Decomposer>(config.decomposer)) {}

  NegationQuery build(const std::string& caption) {
    if (scorer_ == Scorer::Plain) return NegationQuery::affirmative(embedding(caption));
    const DecomposedCaption& d = decomposition(caption);
    UnitVector e_a = embedding(d.affirmative);
    if (!d.negated || scorer_ == Scorer::AffirmativeOnly) {
      return NegationQuery::affirmative(std::move(e_a));
    }
    return NegationQuery::negated(std::move(e_a), embedding(*d.negated), t_, variant_);
  }

  const DecomposedCaption& decomposition(const std::string& caption) {
    auto it = decomposed_.find(caption);
    if (it == decomposed_.end()) it = decomposed_.emplace(caption, decomposer_->decompose(caption)).first;
    return it->second;
  }

  /// Decomposes a batch up front so a remote backend can work concurrently.
  void prefetch(const std::vector<std::string>& captions) {
    if (scorer_ == Scorer::Plain) return;
    std::vector<std::string> missing;
    std::set<std::string> seen;
    for (const auto& c : captions) {
      if (!decomposed_.count(c) && seen.insert(c).second) missing.push_back(c);
    }
    if (missing.empty()) return;
    auto out = decomposer_->decompose_all(missing);
    for (std::size_t i = 0; i < missing.size(); ++i) decomposed_.emplace(missing[i], std::move(out[i]));
  }

  void set_threshold(double t) {
    detail::require_open_threshold(t);
    t_ = t;
  }

 private:
  const UnitVector& embedding(const std::string& caption) {
    auto it = embedded_.find(caption);
    if (it == embedded_.end()) it = embedded_.emplace(caption, embed_(caption)).first;
    return it->second;
  }

  TextEmbedder embed_;
  double t_;
  Variant variant_;
  Scorer scorer_;
  std::shared_ptr<Decomposer> decomposer_;
  std::unordered_map<std::string, DecomposedCaption> decomposed_;
  std::unordered_map<std::string, UnitVector> embedded_;
};

inline NegationQuery build_query(const std::string& caption, const TextEmbedder& embed, double t,
                                 Variant variant = Variant::SlerpCenter,
                                 const DecomposerConfig& decomposer = {}) {
  EvalConfig cfg;
  cfg.threshold_t = t;
  cfg.variant = variant;
  cfg.decomposer = decomposer;
  QueryBuilder builder(embed, cfg);
  return builder.build(caption);
}

// ---------------------------------------------------------------------------
// Ranking

struct RankEntry {
  std::string_view id;
  double score;
  std::size_t index;
};

namespace detail {

inline bool rank_before(const RankEntry& a, const RankEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

inline std::vector<RankEntry> score_all(const NegationQuery& query, const EmbeddingStore& store,
                                        std::size_t threads) {
  require_same_dim(query.dim(), store.dim());
  const auto d = query.direction().components();
  std::vector<RankEntry> out(store.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      out[i] = RankEntry{store.item(i).id, dot(store.row(i), d), i};
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, store.size() / 4096 + 1));
  if (threads == 1) {
    work(0, store.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (store.size() + threads - 1) / threads;
    for (std::size_t lo = 0; lo < store.size(); lo += chunk) {
      pool.emplace_back(work, lo, std::min(store.size(), lo + chunk));
    }
  }
  return out;
}

}  // namespace detail

/// Every store item ordered by score (descending), ties by id (ascending).
/// The ids refer into `store`.
inline std::vector<RankEntry> rank(const NegationQuery& query, const EmbeddingStore& store,
                                   std::size_t threads = 1) {
  auto out = detail::score_all(query, store, threads);
  std::sort(out.begin(), out.end(), detail::rank_before);
  return out;
}

/// The first `k` entries of rank(query, store).
inline std::vector<RankEntry> rank_top(const NegationQuery& query, const EmbeddingStore& store,
                                       std::size_t k, std::size_t threads = 1) {
  auto out = detail::score_all(query, store, threads);
  k = std::min(k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k), out.end(),
                    detail::rank_before);
  out.resize(k);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

template <typename Ids>
int recall_at_k(const Ids& ranking, const std::set<std::string, std::less<>>& relevant, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  int seen = 0;
  for (const auto& id : ranking) {
    if (seen++ >= k) break;
    if (relevant.count(id)) return 1;
  }
  return 0;
}

inline int recall_at_k(const std::vector<RankEntry>& ranking,
                       const std::set<std::string, std::less<>>& relevant, int k) {
  std::vector<std::string_view> ids;
  ids.reserve(std::min<std::size_t>(ranking.size(), static_cast<std::size_t>(std::max(k, 0))));
  for (const auto& e : ranking) {
    if (ids.size() >= static_cast<std::size_t>(std::max(k, 0))) break;
    ids.push_back(e.id);
  }
  return recall_at_k(ids, relevant, k);
}

/// Index of the best-scoring candidate; the smallest index wins ties.
inline std::size_t mcq_select(std::span<const float> image,
                              const std::vector<NegationQuery>& candidates) {
  if (candidates.size() < 2) throw Error(ErrorCode::InvalidArgument, "need >= 2 candidates");
  std::size_t best = 0;
  double best_score = score(image, candidates[0]);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double s = score(image, candidates[i]);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

inline std::size_t mcq_select(const UnitVector& image, const std::vector<NegationQuery>& candidates) {
  if (candidates.size() < 2) throw Error(ErrorCode::InvalidArgument, "need >= 2 candidates");
  std::size_t best = 0;
  double best_score = score(image, candidates[0]);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double s = score(image, candidates[i]);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Tasks

struct RetrievalQuery {
  std::string query_id;
  std::string caption;
  std::vector<std::string> relevant_ids;
  bool is_negated = false;

  friend bool operator==(const RetrievalQuery&, const RetrievalQuery&) = default;
};

enum class Template { Affirmation, Negation, Hybrid };

inline std::string_view to_string(Template t) {
  switch (t) {
    case Template::Affirmation: return "affirmation";
    case Template::Negation: return "negation";
    case Template::Hybrid: return "hybrid";
  }
  return "affirmation";
}

inline Template parse_template(std::string_view s) {
  if (s == "affirmation") return Template::Affirmation;
  if (s == "negation") return Template::Negation;
  if (s == "hybrid") return Template::Hybrid;
  throw Error(ErrorCode::TaskFormat, "unknown template '" + std::string(s) + "'");
}

struct McqCandidate {
  std::string text;
  Template tmpl = Template::Affirmation;

  friend bool operator==(const McqCandidate&, const McqCandidate&) = default;
};

struct McqItem {
  std::string image_id;
  std::vector<McqCandidate> candidates;
  std::size_t answer_index = 0;

  friend bool operator==(const McqItem&, const McqItem&) = default;
};

inline void validate(const RetrievalQuery& q) {
  if (q.relevant_ids.empty()) {
    throw Error(ErrorCode::TaskFormat, "query '" + q.query_id + "' has no relevant ids");
  }
}

inline void validate(const McqItem& item) {
  if (item.candidates.size() < 2 || item.candidates.size() > 4) {
    throw Error(ErrorCode::TaskFormat, "item '" + item.image_id + "' needs 2-4 candidates");
  }
  if (item.answer_index >= item.candidates.size()) {
    throw Error(ErrorCode::TaskFormat, "item '" + item.image_id + "' answer out of range");
  }
}

inline nlohmann::ordered_json to_json(const RetrievalQuery& q) {
  nlohmann::ordered_json j;
  j["query_id"] = q.query_id;
  j["caption"] = q.caption;
  j["relevant_ids"] = q.relevant_ids;
  j["is_negated"] = q.is_negated;
  return j;
}

inline nlohmann::ordered_json to_json(const McqItem& item) {
  nlohmann::ordered_json j;
  j["image_id"] = item.image_id;
  auto cands = nlohmann::ordered_json::array();
  for (const auto& c : item.candidates) {
    cands.push_back({{"text", c.text}, {"template", std::string(to_string(c.tmpl))}});
  }
  j["candidates"] = std::move(cands);
  j["answer"] = item.answer_index;
  return j;
}

namespace detail {

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::istringstream in(read_file(path));
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::TaskFormat,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
std::string jsonl_text(const std::vector<T>& items) {
  std::string out;
  for (const auto& it : items) out += to_json(it).dump() + "\n";
  return out;
}

}  // namespace detail

inline std::vector<RetrievalQuery> read_retrieval_tasks(const std::filesystem::path& path) {
  return detail::read_jsonl<RetrievalQuery>(path, [](const nlohmann::json& j) {
    RetrievalQuery q;
    q.query_id = j.at("query_id").get<std::string>();
    q.caption = j.at("caption").get<std::string>();
    q.relevant_ids = j.at("relevant_ids").get<std::vector<std::string>>();
    q.is_negated = j.at("is_negated").get<bool>();
    validate(q);
    return q;
  });
}

inline std::vector<McqItem> read_mcq_tasks(const std::filesystem::path& path) {
  return detail::read_jsonl<McqItem>(path, [](const nlohmann::json& j) {
    McqItem item;
    item.image_id = j.at("image_id").get<std::string>();
    for (const auto& c : j.at("candidates")) {
      item.candidates.push_back(
          {c.at("text").get<std::string>(), parse_template(c.at("template").get<std::string>())});
    }
    const auto answer = j.at("answer").get<std::int64_t>();
    if (answer < 0) throw Error(ErrorCode::TaskFormat, "negative answer index");
    item.answer_index = static_cast<std::size_t>(answer);
    validate(item);
    return item;
  });
}

inline std::string retrieval_tasks_text(const std::vector<RetrievalQuery>& tasks) {
  return detail::jsonl_text(tasks);
}
inline std::string mcq_tasks_text(const std::vector<McqItem>& items) {
  return detail::jsonl_text(items);
}

// ---------------------------------------------------------------------------
// Reports

struct RecallBucket {
  std::size_t count = 0;
  std::map<int, std::size_t> hits;

  double recall(int k) const { return count ? static_cast<double>(hits.at(k)) / count : 0.0; }
};

struct McqBucket {
  std::size_t count = 0;
  std::size_t correct = 0;

  double accuracy() const { return count ? static_cast<double>(correct) / count : 0.0; }
};

struct EvalReport {
  enum class Kind { Retrieval, Mcq } kind = Kind::Retrieval;
  nlohmann::ordered_json config;
  std::vector<int> k_list;
  RecallBucket affirmative;
  RecallBucket negated;
  McqBucket affirmation;
  McqBucket negation;
  McqBucket hybrid;
  std::optional<nlohmann::ordered_json> per_query;

  const McqBucket& bucket(Template t) const {
    return t == Template::Affirmation ? affirmation : t == Template::Negation ? negation : hybrid;
  }
  McqBucket& bucket(Template t) {
    return t == Template::Affirmation ? affirmation : t == Template::Negation ? negation : hybrid;
  }

  /// Mean accuracy over the non-empty template buckets.
  std::optional<double> mcq_average() const {
    double sum = 0.0;
    int n = 0;
    for (auto t : {Template::Affirmation, Template::Negation, Template::Hybrid}) {
      if (bucket(t).count) {
        sum += bucket(t).accuracy();
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / n;
  }
};

inline double round4(double x) { return std::round(x * 1e4) / 1e4; }

/// Report body without the config echo; two runs are comparable through this.
inline nlohmann::ordered_json report_results_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json counts;
  if (r.kind == EvalReport::Kind::Retrieval) {
    counts["affirmative"] = r.affirmative.count;
    counts["negated"] = r.negated.count;
    j["counts"] = counts;
    nlohmann::ordered_json recall = nlohmann::ordered_json::object();
    for (const auto& [name, b] : {std::pair{"affirmative", &r.affirmative}, std::pair{"negated", &r.negated}}) {
      if (!b->count) continue;
      nlohmann::ordered_json per_k;
      for (int k : r.k_list) per_k[std::to_string(k)] = round4(b->recall(k));
      recall[name] = std::move(per_k);
    }
    j["recall_at_k"] = std::move(recall);
  } else {
    for (auto t : {Template::Affirmation, Template::Negation, Template::Hybrid}) {
      counts[std::string(to_string(t))] = r.bucket(t).count;
    }
    j["counts"] = counts;
    nlohmann::ordered_json acc = nlohmann::ordered_json::object();
    for (auto t : {Template::Affirmation, Template::Negation, Template::Hybrid}) {
      if (r.bucket(t).count) acc[std::string(to_string(t))] = round4(r.bucket(t).accuracy());
    }
    if (auto avg = r.mcq_average()) acc["average"] = round4(*avg);
    j["mcq_accuracy"] = std::move(acc);
  }
  if (r.per_query) j["per_query"] = *r.per_query;
  return j;
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["config"] = r.config;
  const auto body = report_results_json(r);
  for (const auto& [k, v] : body.items()) j[k] = v;
  return j;
}

inline std::string report_text(const EvalReport& r) { return report_json(r).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Runs

inline EvalReport run_retrieval_eval(const std::vector<RetrievalQuery>& tasks,
                                     const EmbeddingStore& store, const TextEmbedder& embed,
                                     const EvalConfig& config) {
  config.validate();
  EvalReport report;
  report.kind = EvalReport::Kind::Retrieval;
  report.config = config.echo();
  report.k_list = config.k_list;
  for (auto* b : {&report.affirmative, &report.negated}) {
    for (int k : config.k_list) b->hits[k] = 0;
  }
  if (config.per_query) report.per_query = nlohmann::ordered_json::array();

  const int kmax = *std::max_element(config.k_list.begin(), config.k_list.end());
  QueryBuilder builder(embed, config);
  std::vector<std::string> captions;
  for (const auto& q : tasks) captions.push_back(q.caption);
  builder.prefetch(captions);

  for (const auto& q : tasks) {
    validate(q);
    std::set<std::string, std::less<>> relevant(q.relevant_ids.begin(), q.relevant_ids.end());
    for (const auto& id : relevant) store.index_of(id);
    const NegationQuery query = builder.build(q.caption);
    const auto top = rank_top(query, store, static_cast<std::size_t>(kmax), config.threads);
    RecallBucket& b = q.is_negated ? report.negated : report.affirmative;
    ++b.count;
    nlohmann::ordered_json hits;
    for (int k : config.k_list) {
      const int hit = recall_at_k(top, relevant, k);
      b.hits[k] += static_cast<std::size_t>(hit);
      hits[std::to_string(k)] = hit;
    }
    if (report.per_query) {
      nlohmann::ordered_json pq;
      pq["query_id"] = q.query_id;
      pq["is_negated"] = q.is_negated;
      auto ids = nlohmann::ordered_json::array();
      for (const auto& e : top) ids.push_back(std::string(e.id));
      pq["top_ids"] = std::move(ids);
      pq["hits"] = std::move(hits);
      report.per_query->push_back(std::move(pq));
    }
  }
  return report;
}

inline EvalReport run_mcq_eval(const std::vector<McqItem>& items, const EmbeddingStore& store,
                               const TextEmbedder& embed, const EvalConfig& config) {
  config.validate();
  EvalReport report;
  report.kind = EvalReport::Kind::Mcq;
  report.config = config.echo();
  report.k_list = config.k_list;
  if (config.per_query) report.per_query = nlohmann::ordered_json::array();

  QueryBuilder builder(embed, config);
  std::vector<std::string> captions;
  for (const auto& it : items) {
    for (const auto& c : it.candidates) captions.push_back(c.text);
  }
  builder.prefetch(captions);

  for (const auto& item : items) {
    validate(item);
    const auto image = store.row(store.index_of(item.image_id));
    std::vector<NegationQuery> queries;
    queries.reserve(item.candidates.size());
    for (const auto& c : item.candidates) queries.push_back(builder.build(c.text));
    const std::size_t chosen = mcq_select(image, queries);
    const Template tmpl = item.candidates[item.answer_index].tmpl;
    McqBucket& b = report.bucket(tmpl);
    ++b.count;
    const bool correct = chosen == item.answer_index;
    b.correct += correct ? 1 : 0;
    if (report.per_query) {
      nlohmann::ordered_json pq;
      pq["image_id"] = item.image_id;
      pq["template"] = std::string(to_string(tmpl));
      pq["answer"] = item.answer_index;
      pq["selected"] = chosen;
      pq["correct"] = correct;
      report.per_query->push_back(std::move(pq));
    }
  }
  return report;
}

}  // namespace spacevlm
