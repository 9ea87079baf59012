#pragma once

// Seeded synthetic geometry: planted concept clusters, benchmark task files,
// the single-vector margin bound, and cosine-similarity histograms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spacevlm/error.hpp"
#include "spacevlm/eval.hpp"
#include "spacevlm/sphere.hpp"
#include "spacevlm/store.hpp"

namespace spacevlm {

using Rng = std::mt19937_64;

/// Child seed for stream `index` of `seed` (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline UnitVector random_unit_vector(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> g;
  std::vector<double> v(dim);
  for (;;) {
    for (auto& x : v) x = g(rng);
    if (detail::norm(std::span<const double>(v)) > 1e-6) return UnitVector::normalize(v);
  }
}

/// Columns of the result are `count` orthonormal vectors in R^dim.
inline Eigen::MatrixXd random_orthonormal(Rng& rng, std::size_t dim, std::size_t count) {
  if (count > dim) throw Error(ErrorCode::InvalidArgument, "more orthonormal vectors than dims");
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(dim, count);
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = g(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                        static_cast<Eigen::Index>(count));
}

namespace detail {

inline UnitVector unit_from(const Eigen::VectorXd& v) {
  return UnitVector::normalize(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

inline Eigen::VectorXd to_eigen(const UnitVector& u) {
  return Eigen::Map<const Eigen::VectorXd>(u.vec().data(), static_cast<Eigen::Index>(u.dim()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Clusters

struct ClusterSpec {
  std::string label;
  UnitVector center;
  double angular_spread;
  std::size_t n_points;
  std::uint64_t seed;
};

/// Points normalize(center + g), g isotropic in the tangent space with
/// |g| ~= spread, so the typical angle to the center is about `spread`.
inline std::vector<UnitVector> sample_cluster(const ClusterSpec& spec) {
  if (!(spec.angular_spread > 0.0 && spec.angular_spread < std::numbers::pi / 2)) {
    throw Error(ErrorCode::InvalidArgument, "angular spread must lie in (0, pi/2)");
  }
  if (spec.n_points == 0) throw Error(ErrorCode::InvalidArgument, "n_points must be positive");
  const std::size_t dim = spec.center.dim();
  const double scale = spec.angular_spread / std::sqrt(static_cast<double>(dim - 1));
  Rng rng(spec.seed);
  std::normal_distribution<double> g;
  std::vector<UnitVector> out;
  out.reserve(spec.n_points);
  std::vector<double> p(dim);
  for (std::size_t n = 0; n < spec.n_points; ++n) {
    for (auto& x : p) x = g(rng);
    const double along = detail::dot(std::span<const double>(p), spec.center.components());
    for (std::size_t i = 0; i < dim; ++i) p[i] = spec.center[i] + scale * (p[i] - along * spec.center[i]);
    out.push_back(UnitVector::normalize(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Planted benchmark

inline std::string concept_name(std::size_t i) {
  static const char* kNames[] = {"apple",    "bicycle",   "castle",   "dolphin",   "eagle",
                                 "forest",   "guitar",    "horse",    "iceberg",   "jellyfish",
                                 "kangaroo", "lighthouse", "motorcycle", "octopus", "penguin",
                                 "rabbit",   "sailboat",  "tiger",    "umbrella",  "violin",
                                 "waterfall", "zebra"};
  if (i < std::size(kNames)) return kNames[i];
  return "concept" + std::to_string(i);
}

namespace captions {

inline std::string with_article(const std::string& noun) {
  const bool vowel = !noun.empty() && std::string_view("aeiou").find(noun[0]) != std::string_view::npos;
  return (vowel ? "an " : "a ") + noun;
}

inline std::string generic() { return "This is a photo"; }
inline std::string photo_of(const std::string& x) { return "A photo of " + with_article(x); }
inline std::string photo_of_both(const std::string& x, const std::string& y) {
  return "A photo of " + with_article(x) + " and " + with_article(y);
}
inline std::string but_not(const std::string& x, const std::string& y) {
  return "A photo of " + with_article(x) + " but not " + with_article(y);
}
inline std::string not_photo_of(const std::string& x) { return "Not a photo of " + with_article(x); }

}  // namespace captions

struct BenchmarkSpec {
  std::size_t labels = 10;
  std::size_t dim = 64;
  double spread = 0.08;
  std::size_t points_per_cluster = 40;
  std::uint64_t seed = 7;
  /// Cap threshold that defines "contains B" in the ground truth.
  double t_gen = 0.90;
  /// Weight of the shared "photo" direction in text and image embeddings.
  double text_shared_weight = 2.0;
  double image_shared_weight = 0.4;
  std::size_t mcq_per_template = 100;

  void validate() const {
    if (labels < 3) throw Error(ErrorCode::InvalidArgument, "need at least 3 labels");
    if (dim < labels + 1) {
      throw Error(ErrorCode::InvalidArgument, "dim must exceed the label count");
    }
    if (points_per_cluster == 0) throw Error(ErrorCode::InvalidArgument, "points_per_cluster = 0");
    detail::require_open_threshold(t_gen);
  }
};

struct PlantedBenchmark {
  BenchmarkSpec spec;
  std::vector<std::string> labels;
  EmbeddingStore images = EmbeddingStore::create(2, {}, {});
  EmbeddingStore scenes = EmbeddingStore::create(2, {}, {});
  EmbeddingStore text = EmbeddingStore::create(2, {}, {});
  std::vector<UnitVector> image_centers;
  std::map<std::string, UnitVector> text_anchors;
  std::vector<RetrievalQuery> retrieval;
  std::vector<McqItem> mcq;
  double min_center_angle = 0.0;

  /// Inter-center angle exceeds 2 arccos(t_gen) + 6 spread.
  bool separated() const {
    return min_center_angle > 2.0 * std::acos(spec.t_gen) + 6.0 * spec.spread;
  }
};

namespace detail {

/// Caption semantics for ground truth: concepts required and concepts excluded.
struct CaptionTruth {
  std::set<std::string> present;
  std::set<std::string> absent;

  bool holds_for(const std::set<std::string>& scene) const {
    for (const auto& p : present) {
      if (!scene.count(p)) return false;
    }
    for (const auto& a : absent) {
      if (scene.count(a)) return false;
    }
    return true;
  }
};

struct PlantedCandidate {
  std::string text;
  Template tmpl;
  CaptionTruth truth;
};

}  // namespace detail

inline PlantedBenchmark build_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  const std::size_t L = spec.labels;
  PlantedBenchmark b;
  b.spec = spec;
  for (std::size_t i = 0; i < L; ++i) b.labels.push_back(concept_name(i));

  Rng basis_rng(derive_seed(spec.seed, 0));
  const Eigen::MatrixXd q = random_orthonormal(basis_rng, spec.dim, L + 1);
  const Eigen::VectorXd u0 = q.col(0);
  auto concept_dir = [&](std::size_t i) -> Eigen::VectorXd { return q.col(static_cast<Eigen::Index>(i + 1)); };
  auto mix = [&](double w, const std::vector<std::size_t>& cs) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.dim));
    for (auto c : cs) v += concept_dir(c);
    v /= std::sqrt(static_cast<double>(cs.size()));
    return detail::unit_from(w * u0 + v);
  };

  // Text side.
  std::vector<StoreItem> text_items;
  std::vector<UnitVector> text_vecs;
  auto add_text = [&](std::string caption, std::vector<std::string> labels, UnitVector v) {
    text_items.push_back({"text/" + std::to_string(text_items.size()), std::move(labels), std::move(caption)});
    text_vecs.push_back(std::move(v));
  };
  add_text(captions::generic(), {}, detail::unit_from(u0));
  for (std::size_t i = 0; i < L; ++i) {
    UnitVector anchor = mix(spec.text_shared_weight, {i});
    b.text_anchors.emplace(b.labels[i], anchor);
    add_text(captions::photo_of(b.labels[i]), {b.labels[i]}, std::move(anchor));
  }
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      if (i == j) continue;
      add_text(captions::photo_of_both(b.labels[i], b.labels[j]), {b.labels[i], b.labels[j]},
               mix(spec.text_shared_weight, {i, j}));
    }
  }
  b.text = EmbeddingStore::from_vectors(std::move(text_items), text_vecs);

  // Image clusters.
  std::vector<StoreItem> image_items;
  std::vector<UnitVector> image_vecs;
  std::vector<std::vector<std::string>> members(L);
  for (std::size_t i = 0; i < L; ++i) {
    b.image_centers.push_back(mix(spec.image_shared_weight, {i}));
    const auto pts = sample_cluster(
        {b.labels[i], b.image_centers[i], spec.spread, spec.points_per_cluster, derive_seed(spec.seed, 100 + i)});
    for (std::size_t n = 0; n < pts.size(); ++n) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04zu", n);
      const std::string id = "img/" + b.labels[i] + "/" + buf;
      members[i].push_back(id);
      image_items.push_back({id, {b.labels[i]}, std::nullopt});
      image_vecs.push_back(pts[n]);
    }
  }
  b.images = EmbeddingStore::from_vectors(std::move(image_items), image_vecs);

  b.min_center_angle = std::numbers::pi;
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = i + 1; j < L; ++j) {
      b.min_center_angle = std::min(b.min_center_angle, angle_between(b.image_centers[i], b.image_centers[j]));
    }
  }

  // Retrieval queries; ground truth by exhaustive cap membership.
  for (std::size_t i = 0; i < L; ++i) {
    b.retrieval.push_back({"aff/" + b.labels[i], captions::photo_of(b.labels[i]), members[i], false});
  }
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      if (i == j) continue;
      std::vector<std::string> relevant;
      for (const auto& id : members[i]) {
        const auto row = b.images.row(b.images.index_of(id));
        if (detail::dot(row, b.image_centers[j].components()) < spec.t_gen) relevant.push_back(id);
      }
      if (relevant.empty()) continue;
      b.retrieval.push_back({"neg/" + b.labels[i] + "/" + b.labels[j],
                             captions::but_not(b.labels[i], b.labels[j]), std::move(relevant), true});
    }
  }

  // MCQ scenes hold two concepts each; one candidate per item is true.
  Rng mcq_rng(derive_seed(spec.seed, 1));
  std::vector<StoreItem> scene_items;
  std::vector<UnitVector> scene_vecs;
  const Template order[] = {Template::Affirmation, Template::Negation, Template::Hybrid};
  for (const Template tmpl : order) {
    for (std::size_t n = 0; n < spec.mcq_per_template; ++n) {
      std::vector<std::size_t> pick(L);
      std::iota(pick.begin(), pick.end(), 0);
      std::shuffle(pick.begin(), pick.end(), mcq_rng);
      const std::string& A = b.labels[pick[0]];
      const std::string& B = b.labels[pick[1]];
      const std::string& C = b.labels[pick[2]];

      const std::string id = "scene/" + std::string(to_string(tmpl)) + "/" + std::to_string(n);
      const UnitVector center = mix(spec.image_shared_weight, {pick[0], pick[2]});
      scene_items.push_back({id, {A, C}, std::nullopt});
      scene_vecs.push_back(
          sample_cluster({id, center, spec.spread, 1, mcq_rng()}).front());

      using detail::PlantedCandidate;
      std::vector<PlantedCandidate> cands;
      switch (tmpl) {
        case Template::Negation:
          cands = {{captions::not_photo_of(B), Template::Negation, {{}, {B}}},
                   {captions::not_photo_of(A), Template::Negation, {{}, {A}}},
                   {captions::not_photo_of(C), Template::Negation, {{}, {C}}},
                   {captions::photo_of(B), Template::Affirmation, {{B}, {}}}};
          break;
        case Template::Affirmation:
          cands = {{captions::photo_of_both(A, C), Template::Affirmation, {{A, C}, {}}},
                   {captions::but_not(A, C), Template::Hybrid, {{A}, {C}}},
                   {captions::not_photo_of(A), Template::Negation, {{}, {A}}},
                   {captions::photo_of_both(B, C), Template::Affirmation, {{B, C}, {}}}};
          break;
        case Template::Hybrid:
          cands = {{captions::but_not(A, B), Template::Hybrid, {{A}, {B}}},
                   {captions::but_not(B, A), Template::Hybrid, {{B}, {A}}},
                   {captions::photo_of_both(A, B), Template::Affirmation, {{A, B}, {}}},
                   {captions::not_photo_of(A), Template::Negation, {{}, {A}}}};
          break;
      }
      std::shuffle(cands.begin(), cands.end(), mcq_rng);

      const std::set<std::string> scene{A, C};
      McqItem item;
      item.image_id = id;
      std::size_t n_true = 0;
      for (std::size_t c = 0; c < cands.size(); ++c) {
        item.candidates.push_back({cands[c].text, cands[c].tmpl});
        if (cands[c].truth.holds_for(scene)) {
          item.answer_index = c;
          ++n_true;
        }
      }
      if (n_true != 1) throw Error(ErrorCode::InvalidArgument, "ambiguous planted MCQ item");
      b.mcq.push_back(std::move(item));
    }
  }
  b.scenes = EmbeddingStore::from_vectors(std::move(scene_items), scene_vecs);
  return b;
}

// ---------------------------------------------------------------------------
// Diversity world: "Not a photo of a <X>" over single-concept clusters. The
// text store maps the full negated caption to the concept anchor, which is
// what a negation-blind encoder produces.

struct DiversitySpec {
  std::size_t labels = 10;
  std::size_t dim = 64;
  double spread = 0.08;
  std::size_t points_per_cluster = 40;
  double text_shared_weight = 2.0;
  double image_shared_min = 1.0;
  double image_shared_max = 1.1;
  std::uint64_t seed = 11;

  void validate() const {
    if (labels < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 labels");
    if (dim < labels + 1) throw Error(ErrorCode::InvalidArgument, "dim must exceed the label count");
    if (points_per_cluster == 0) throw Error(ErrorCode::InvalidArgument, "points_per_cluster = 0");
  }
};

struct DiversityWorld {
  EmbeddingStore images = EmbeddingStore::create(2, {}, {});
  EmbeddingStore text = EmbeddingStore::create(2, {}, {});
  std::vector<std::string> queries;
};

inline DiversityWorld build_diversity_world(const DiversitySpec& spec) {
  spec.validate();
  const std::size_t L = spec.labels;
  Rng rng(derive_seed(spec.seed, 0));
  const Eigen::MatrixXd q = random_orthonormal(rng, spec.dim, L + 1);
  const Eigen::VectorXd u0 = q.col(0);

  DiversityWorld w;
  std::vector<StoreItem> text_items{{"text/generic", {}, captions::generic()}};
  std::vector<UnitVector> text_vecs{detail::unit_from(u0)};
  std::vector<StoreItem> image_items;
  std::vector<UnitVector> image_vecs;
  for (std::size_t i = 0; i < L; ++i) {
    const std::string label = concept_name(i);
    const Eigen::VectorXd v = q.col(static_cast<Eigen::Index>(i + 1));
    const UnitVector anchor = detail::unit_from(spec.text_shared_weight * u0 + v);
    text_items.push_back({"text/" + label, {label}, captions::photo_of(label)});
    text_vecs.push_back(anchor);
    text_items.push_back({"text/not/" + label, {label}, captions::not_photo_of(label)});
    text_vecs.push_back(anchor);
    w.queries.push_back(captions::not_photo_of(label));

    const double mu = L == 1 ? spec.image_shared_min
                             : spec.image_shared_min + (spec.image_shared_max - spec.image_shared_min) *
                                                           static_cast<double>(i) / static_cast<double>(L - 1);
    const auto pts = sample_cluster({label, detail::unit_from(mu * u0 + v), spec.spread,
                                     spec.points_per_cluster, derive_seed(spec.seed, 100 + i)});
    for (std::size_t n = 0; n < pts.size(); ++n) {
      image_items.push_back({"img/" + label + "/" + std::to_string(n), {label}, std::nullopt});
      image_vecs.push_back(pts[n]);
    }
  }
  w.text = EmbeddingStore::from_vectors(std::move(text_items), text_vecs);
  w.images = EmbeddingStore::from_vectors(std::move(image_items), image_vecs);
  return w;
}

// ---------------------------------------------------------------------------
// Single-vector margin bound

/// sqrt(m + gamma m (m-1)) / m: the largest beta + delta a single unit
/// vector can achieve against m unit vectors with pairwise dots <= gamma.
inline double margin_bound(std::size_t m, double gamma) {
  if (m < 1) throw Error(ErrorCode::InvalidArgument, "m must be >= 1");
  if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be >= 0");
  const double md = static_cast<double>(m);
  return std::sqrt(md + gamma * md * (md - 1.0)) / md;
}

enum class MarginConstruction { Random, Orthonormal };

inline std::string_view to_string(MarginConstruction c) {
  return c == MarginConstruction::Random ? "random" : "orthonormal";
}

struct MarginWitness {
  std::size_t m = 0;
  /// Max pairwise dot, clamped to >= 0.
  double gamma = 0.0;
  double gamma_raw = 0.0;
  double bound = 0.0;
  double empirical_best_margin = 0.0;

  bool holds(double tol = 1e-6) const { return empirical_best_margin <= bound + tol; }
};

struct MarginSearch {
  std::size_t restarts = 100;
  std::size_t refine_candidates = 4;
  std::size_t refine_steps = 300;
};

namespace detail {

/// Largest off-diagonal entry of U^T U, computed in column blocks.
inline double max_pairwise_dot(const Eigen::MatrixXd& u) {
  const Eigen::Index m = u.cols();
  constexpr Eigen::Index kBlock = 1024;
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i0 = 0; i0 < m; i0 += kBlock) {
    const Eigen::Index ni = std::min(kBlock, m - i0);
    for (Eigen::Index j0 = i0; j0 < m; j0 += kBlock) {
      const Eigen::Index nj = std::min(kBlock, m - j0);
      const Eigen::MatrixXd g = u.middleCols(i0, ni).transpose() * u.middleCols(j0, nj);
      for (Eigen::Index b = 0; b < nj; ++b) {
        const Eigen::Index a_end = i0 == j0 ? b : ni;
        for (Eigen::Index a = 0; a < a_end; ++a) best = std::max(best, g(a, b));
      }
    }
  }
  return best;
}

inline double min_dot(const Eigen::MatrixXd& u, const Eigen::VectorXd& n, Eigen::Index* arg = nullptr) {
  const Eigen::VectorXd s = u.transpose() * n;
  Eigen::Index idx = 0;
  const double v = s.minCoeff(&idx);
  if (arg) *arg = idx;
  return v;
}

/// Projected subgradient ascent on min_i n.u_i over the unit sphere.
inline double refine_separator(const Eigen::MatrixXd& u, Eigen::VectorXd n, std::size_t steps) {
  Eigen::Index arg = 0;
  double best = min_dot(u, n, &arg);
  for (std::size_t k = 0; k < steps; ++k) {
    const double eta = 0.5 / std::sqrt(static_cast<double>(k) + 1.0);
    n += eta * u.col(arg);
    const double len = n.norm();
    if (len < 1e-12) break;
    n /= len;
    best = std::max(best, min_dot(u, n, &arg));
  }
  return best;
}

}  // namespace detail

/// Best min_i n.u_i found for the columns of u (unit vectors).
inline double best_single_vector_margin(const Eigen::MatrixXd& u, Rng& rng,
                                        const MarginSearch& search = {}) {
  const auto dim = static_cast<std::size_t>(u.rows());
  std::vector<std::pair<double, Eigen::VectorXd>> cands;
  const Eigen::VectorXd mean = u.rowwise().sum();
  if (mean.norm() > 1e-9) {
    const Eigen::VectorXd n = mean.normalized();
    cands.emplace_back(detail::min_dot(u, n), n);
  }
  for (std::size_t r = 0; r < search.restarts; ++r) {
    const Eigen::VectorXd n = detail::to_eigen(random_unit_vector(rng, dim));
    cands.emplace_back(detail::min_dot(u, n), n);
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  double best = cands.front().first;
  for (std::size_t c = 0; c < std::min(search.refine_candidates, cands.size()); ++c) {
    best = std::max(best, detail::refine_separator(u, cands[c].second, search.refine_steps));
  }
  return best;
}

inline MarginWitness margin_witness(const Eigen::MatrixXd& u, Rng& rng,
                                    const MarginSearch& search = {}) {
  MarginWitness w;
  w.m = static_cast<std::size_t>(u.cols());
  w.gamma_raw = w.m > 1 ? detail::max_pairwise_dot(u) : 0.0;
  w.gamma = std::max(0.0, w.gamma_raw);
  w.bound = margin_bound(w.m, w.gamma);
  w.empirical_best_margin = best_single_vector_margin(u, rng, search);
  return w;
}

/// One witness per trial; each trial draws fresh vectors.
inline std::vector<MarginWitness> margin_empirical(std::size_t m, std::size_t dim, std::size_t trials,
                                                   std::uint64_t seed,
                                                   MarginConstruction construction = MarginConstruction::Random,
                                                   const MarginSearch& search = {}) {
  if (dim < 2) throw Error(ErrorCode::InvalidArgument, "dim must be >= 2");
  if (m < 1) throw Error(ErrorCode::InvalidArgument, "m must be >= 1");
  if (trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be >= 1");
  if (construction == MarginConstruction::Orthonormal && m > dim) {
    throw Error(ErrorCode::InvalidArgument, "orthonormal construction needs m <= dim");
  }
  std::vector<MarginWitness> out;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, t));
    Eigen::MatrixXd u(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(m));
    if (construction == MarginConstruction::Orthonormal) {
      u = random_orthonormal(rng, dim, m);
    } else {
      std::normal_distribution<double> g;
      for (Eigen::Index j = 0; j < u.cols(); ++j) {
        for (Eigen::Index i = 0; i < u.rows(); ++i) u(i, j) = g(rng);
        u.col(j).normalize();
      }
    }
    out.push_back(margin_witness(u, rng, search));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cosine histograms

inline constexpr std::size_t kHistogramBins = 100;
inline constexpr double kHistogramWidth = 0.02;

struct DivisibilityHistogram {
  /// Image-image pairs sharing a label.
  std::vector<std::size_t> intra = std::vector<std::size_t>(kHistogramBins);
  /// Text anchor of a label against that label's images.
  std::vector<std::size_t> text = std::vector<std::size_t>(kHistogramBins);
  /// Image-image pairs with different labels.
  std::vector<std::size_t> cross = std::vector<std::size_t>(kHistogramBins);
  bool empty_labels = false;

  static std::size_t bin(double c) {
    const double x = std::floor((std::clamp(c, -1.0, 1.0) + 1.0) / kHistogramWidth);
    return std::min<std::size_t>(kHistogramBins - 1, static_cast<std::size_t>(std::max(0.0, x)));
  }
};

inline DivisibilityHistogram divisibility_histogram(const EmbeddingStore& store,
                                                    const std::map<std::string, UnitVector>& anchors) {
  DivisibilityHistogram h;
  if (anchors.empty()) {
    h.empty_labels = true;
    return h;
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& labels = store.item(i).labels;
    if (!labels.empty() && anchors.count(labels.front())) groups[labels.front()].push_back(i);
  }
  for (const auto& [label, anchor] : anchors) {
    if (!groups.count(label)) throw Error(ErrorCode::UnknownLabel, "no images labeled '" + label + "'");
    detail::require_same_dim(anchor.dim(), store.dim());
  }
  std::vector<std::pair<std::size_t, const std::string*>> all;
  for (const auto& [label, idx] : groups) {
    for (auto i : idx) all.emplace_back(i, &label);
  }
  std::sort(all.begin(), all.end());
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      const double c = detail::dot(store.row(all[a].first), store.row(all[b].first));
      (*all[a].second == *all[b].second ? h.intra : h.cross)[DivisibilityHistogram::bin(c)]++;
    }
  }
  for (const auto& [label, idx] : groups) {
    const auto& anchor = anchors.at(label);
    for (auto i : idx) h.text[DivisibilityHistogram::bin(detail::dot(store.row(i), anchor.components()))]++;
  }
  return h;
}

inline std::string histogram_csv(const DivisibilityHistogram& h) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,intra,text,cross\n";
  if (h.empty_labels) return out.str();
  char buf[96];
  for (std::size_t b = 0; b < kHistogramBins; ++b) {
    const double lo = (2.0 * static_cast<double>(b) - 100.0) / 100.0;
    std::snprintf(buf, sizeof buf, "%.2f,%.2f,%zu,%zu,%zu\n", lo, lo + kHistogramWidth, h.intra[b],
                  h.text[b], h.cross[b]);
    out << buf;
  }
  return out.str();
}

}  // namespace spacevlm
