#pragma once

// Threshold sweeps, top-k label entropy, and conditioning-vector export.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spacevlm/error.hpp"
#include "spacevlm/eval.hpp"
#include "spacevlm/sphere.hpp"
#include "spacevlm/store.hpp"

namespace spacevlm {

struct SweepResult {
  std::vector<double> t_values;
  std::vector<double> metric_per_t;
  double argmax_t = 0.0;
  /// max metric - min metric over the window.
  double max_drop = 0.0;

  /// max_drop as a fraction of the best metric (0 when the best is 0).
  double relative_drop() const {
    const double best = metric_per_t.empty() ? 0.0 : *std::max_element(metric_per_t.begin(), metric_per_t.end());
    return best > 0.0 ? max_drop / best : 0.0;
  }
};

/// Inclusive, evenly spaced grid over [t_min, t_max].
inline std::vector<double> threshold_grid(double t_min, double t_max, std::size_t steps) {
  if (steps < 2) throw Error(ErrorCode::InvalidArgument, "sweep needs at least 2 steps");
  if (!(t_min < t_max)) throw Error(ErrorCode::InvalidArgument, "sweep needs t_min < t_max");
  detail::require_open_threshold(t_min);
  detail::require_open_threshold(t_max);
  std::vector<double> grid(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    grid[i] = t_min + (t_max - t_min) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  grid.back() = t_max;
  return grid;
}

/// Evaluates `metric` at every grid point; the first maximum wins argmax.
inline SweepResult threshold_sweep(const std::function<double(double)>& metric, double t_min,
                                   double t_max, std::size_t steps) {
  SweepResult r;
  r.t_values = threshold_grid(t_min, t_max, steps);
  for (double t : r.t_values) r.metric_per_t.push_back(metric(t));
  const auto [lo, hi] = std::minmax_element(r.metric_per_t.begin(), r.metric_per_t.end());
  r.max_drop = *hi - *lo;
  r.argmax_t = r.t_values[static_cast<std::size_t>(
      std::distance(r.metric_per_t.begin(), std::max_element(r.metric_per_t.begin(), r.metric_per_t.end())))];
  return r;
}

enum class SweepMetric { McqAverage, McqNegation, RecallNegated, RecallAffirmative };

inline std::string_view to_string(SweepMetric m) {
  switch (m) {
    case SweepMetric::McqAverage: return "mcq-average";
    case SweepMetric::McqNegation: return "mcq-negation";
    case SweepMetric::RecallNegated: return "recall-negated";
    case SweepMetric::RecallAffirmative: return "recall-affirmative";
  }
  return "mcq-average";
}

inline SweepMetric parse_sweep_metric(std::string_view s) {
  if (s == "mcq-average") return SweepMetric::McqAverage;
  if (s == "mcq-negation") return SweepMetric::McqNegation;
  if (s == "recall-negated") return SweepMetric::RecallNegated;
  if (s == "recall-affirmative") return SweepMetric::RecallAffirmative;
  throw Error(ErrorCode::InvalidArgument, "unknown sweep metric '" + std::string(s) + "'");
}

/// MCQ sweep; the metric is the template average or the negation bucket.
inline SweepResult threshold_sweep(const std::vector<McqItem>& items, const EmbeddingStore& store,
                                   const TextEmbedder& embed, double t_min, double t_max,
                                   std::size_t steps, EvalConfig config,
                                   SweepMetric metric = SweepMetric::McqAverage) {
  if (metric != SweepMetric::McqAverage && metric != SweepMetric::McqNegation) {
    throw Error(ErrorCode::InvalidArgument, "MCQ sweeps take an MCQ metric");
  }
  return threshold_sweep(
      [&](double t) {
        config.threshold_t = t;
        const auto r = run_mcq_eval(items, store, embed, config);
        return metric == SweepMetric::McqNegation ? r.negation.accuracy() : r.mcq_average().value_or(0.0);
      },
      t_min, t_max, steps);
}

/// Retrieval sweep on R@k for the negated or affirmative bucket.
inline SweepResult threshold_sweep(const std::vector<RetrievalQuery>& tasks, const EmbeddingStore& store,
                                   const TextEmbedder& embed, double t_min, double t_max,
                                   std::size_t steps, EvalConfig config, int k = 1,
                                   SweepMetric metric = SweepMetric::RecallNegated) {
  if (metric != SweepMetric::RecallNegated && metric != SweepMetric::RecallAffirmative) {
    throw Error(ErrorCode::InvalidArgument, "retrieval sweeps take a recall metric");
  }
  config.k_list = {k};
  return threshold_sweep(
      [&](double t) {
        config.threshold_t = t;
        const auto r = run_retrieval_eval(tasks, store, embed, config);
        return (metric == SweepMetric::RecallNegated ? r.negated : r.affirmative).recall(k);
      },
      t_min, t_max, steps);
}

inline std::string sweep_csv(const SweepResult& r) {
  std::ostringstream out;
  out << "t,metric\n";
  char buf[64];
  for (std::size_t i = 0; i < r.t_values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", r.t_values[i], r.metric_per_t[i]);
    out << buf;
  }
  return out.str();
}

inline nlohmann::ordered_json to_json(const SweepResult& r) {
  nlohmann::ordered_json j;
  j["t_values"] = r.t_values;
  j["metric_per_t"] = r.metric_per_t;
  j["argmax_t"] = r.argmax_t;
  j["max_drop"] = r.max_drop;
  j["relative_drop"] = r.relative_drop();
  return j;
}

// ---------------------------------------------------------------------------
// Entropy

struct QueryEntropy {
  std::string caption;
  std::vector<std::string> top_k_labels;
  double entropy_bits = 0.0;
};

struct EntropyReport {
  std::vector<QueryEntropy> per_query;
  double mean_entropy = 0.0;
};

/// Shannon entropy in bits of the empirical distribution of `labels`.
inline double label_entropy_bits(const std::vector<std::string>& labels) {
  if (labels.empty()) return 0.0;
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (const auto& [label, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h == 0.0 ? 0.0 : h;
}

struct RankedQuery {
  std::string caption;
  std::vector<std::string> ranking;
};

/// Entropy of the first labels among each query's top-k ids.
inline EntropyReport topk_entropy(const std::vector<RankedQuery>& queries, const EmbeddingStore& store,
                                  std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  EntropyReport r;
  for (const auto& q : queries) {
    QueryEntropy e;
    e.caption = q.caption;
    for (std::size_t i = 0; i < std::min(k, q.ranking.size()); ++i) {
      const auto& labels = store.item(store.index_of(q.ranking[i])).labels;
      if (labels.empty()) throw Error(ErrorCode::UnlabeledItem, "item '" + q.ranking[i] + "' has no label");
      e.top_k_labels.push_back(labels.front());
    }
    e.entropy_bits = label_entropy_bits(e.top_k_labels);
    r.mean_entropy += e.entropy_bits;
    r.per_query.push_back(std::move(e));
  }
  if (!r.per_query.empty()) r.mean_entropy /= static_cast<double>(r.per_query.size());
  return r;
}

/// Ranks `captions` against `store` under `config` and reports top-k entropy.
inline EntropyReport entropy_for_captions(const std::vector<std::string>& captions,
                                          const EmbeddingStore& store, const TextEmbedder& embed,
                                          const EvalConfig& config, std::size_t k = 5) {
  config.validate();
  QueryBuilder builder(embed, config);
  std::vector<RankedQuery> ranked;
  for (const auto& c : captions) {
    RankedQuery rq{c, {}};
    for (const auto& e : rank_top(builder.build(c), store, k, config.threads)) rq.ranking.emplace_back(e.id);
    ranked.push_back(std::move(rq));
  }
  return topk_entropy(ranked, store, k);
}

inline nlohmann::ordered_json to_json(const EntropyReport& r) {
  nlohmann::ordered_json j;
  auto pq = nlohmann::ordered_json::array();
  for (const auto& q : r.per_query) {
    pq.push_back({{"caption", q.caption}, {"top_k_labels", q.top_k_labels}, {"entropy_bits", q.entropy_bits}});
  }
  j["per_query"] = std::move(pq);
  j["mean_entropy"] = r.mean_entropy;
  return j;
}

// ---------------------------------------------------------------------------
// Export

/// The scoring direction for `caption` as a single-row store.
inline EmbeddingStore query_vector_store(const std::string& caption, const TextEmbedder& embed,
                                         const EvalConfig& config) {
  config.validate();
  QueryBuilder builder(embed, config);
  const NegationQuery q = builder.build(caption);
  return EmbeddingStore::from_vectors({{"query", {}, caption}}, {q.direction()});
}

/// Writes the direction only after it has been computed, so failures leave
/// no files behind.
inline EmbeddingStore export_query_vector(const std::string& caption, const TextEmbedder& embed,
                                          const EvalConfig& config,
                                          const std::filesystem::path& vector_path,
                                          const std::filesystem::path& manifest_path) {
  auto store = query_vector_store(caption, embed, config);
  write_store(store, vector_path, manifest_path);
  return store;
}

}  // namespace spacevlm
