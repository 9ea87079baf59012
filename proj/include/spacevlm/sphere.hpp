#pragma once

// Spherical geometry on the unit d-sphere: unit vectors, caps, and the
// negation-aware scoring direction for "A but not N" queries.
//
// All arithmetic is carried out in double precision; 32-bit inputs (store
// rows) are widened element by element before accumulation.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spacevlm/error.hpp"

namespace spacevlm {

inline constexpr double kNearZeroNorm = 1e-12;
/// Minimum angle kept between e_a and e_n (and between e_a and -e_n).
inline constexpr double kMinConceptAngle = 1e-4;

namespace detail {

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return sum;
}

template <typename T>
double norm(std::span<const T> v) {
  return std::sqrt(dot(v, v));
}

inline void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::DimensionMismatch,
                "dimension " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace detail

/// An L2-normalized vector with at least two components.
class UnitVector {
 public:
  template <typename T>
  static UnitVector normalize(std::span<const T> v) {
    if (v.size() < 2) {
      throw Error(ErrorCode::InvalidArgument, "unit vectors need dim >= 2");
    }
    const double n = detail::norm(v);
    if (!(n > kNearZeroNorm)) {
      throw Error(ErrorCode::NearZeroVector, "norm " + std::to_string(n));
    }
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) / n;
    return UnitVector(std::move(out));
  }

  static UnitVector normalize(const std::vector<double>& v) {
    return normalize(std::span<const double>(v));
  }
  static UnitVector normalize(std::initializer_list<double> v) {
    return normalize(std::span<const double>(v.begin(), v.size()));
  }

  std::size_t dim() const noexcept { return c_.size(); }
  double operator[](std::size_t i) const { return c_[i]; }
  std::span<const double> components() const noexcept { return c_; }
  const std::vector<double>& vec() const noexcept { return c_; }

  friend bool operator==(const UnitVector&, const UnitVector&) = default;

 private:
  explicit UnitVector(std::vector<double> c) : c_(std::move(c)) {}
  std::vector<double> c_;
};

inline UnitVector normalize(std::span<const double> v) { return UnitVector::normalize(v); }

inline double dot(const UnitVector& a, const UnitVector& b) {
  detail::require_same_dim(a.dim(), b.dim());
  return detail::dot(a.components(), b.components());
}

/// Angle in [0, pi]; the dot product is clamped before arccos.
inline double angle_between(const UnitVector& u, const UnitVector& v) {
  const double c = std::clamp(dot(u, v), -1.0, 1.0);
  return std::acos(c);
}

/// Angular radius alpha of the cap {z : center . z >= t}.
inline double cap_radius(double t) {
  if (!(t >= -1.0 && t <= 1.0)) {
    throw Error(ErrorCode::ThresholdOutOfRange, "t = " + std::to_string(t));
  }
  return std::acos(t);
}

struct SphericalCap {
  UnitVector center;
  double threshold_t;

  SphericalCap(UnitVector c, double t) : center(std::move(c)), threshold_t(t) {
    cap_radius(t);
  }
  double alpha() const { return std::acos(threshold_t); }
};

inline bool cap_contains(const UnitVector& z, const SphericalCap& cap) {
  return dot(cap.center, z) >= cap.threshold_t;
}

enum class Variant {
  /// d = [sin(a + th/2) e_a - sin(a - th/2) e_n] / sin th: the great-circle point at
  /// signed angle th/2 - a from e_a toward e_n. Unit-norm before normalization.
  SlerpCenter,
  /// Same coefficients with "+" on the e_n term, then normalized.
  Eq3Literal,
};

inline std::string_view to_string(Variant v) {
  return v == Variant::SlerpCenter ? "slerp-center" : "eq3-literal";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "slerp-center") return Variant::SlerpCenter;
  if (s == "eq3-literal") return Variant::Eq3Literal;
  throw Error(ErrorCode::InvalidArgument, "unknown variant '" + std::string(s) + "'");
}

namespace detail {

inline double checked_concept_angle(const UnitVector& e_a, const UnitVector& e_n) {
  const double theta = angle_between(e_a, e_n);
  if (theta <= kMinConceptAngle) {
    throw Error(ErrorCode::ConceptsIndistinguishable, "theta = " + std::to_string(theta));
  }
  if (theta >= std::numbers::pi - kMinConceptAngle) {
    throw Error(ErrorCode::ConceptsAntipodal, "theta = " + std::to_string(theta));
  }
  return theta;
}

inline void require_open_threshold(double t) {
  if (!(t > -1.0 && t < 1.0)) {
    throw Error(ErrorCode::ThresholdOutOfRange, "t = " + std::to_string(t) + " not in (-1, 1)");
  }
}

}  // namespace detail

/// The combination of e_a and e_n before the final normalization.
inline std::vector<double> raw_negation_direction(const UnitVector& e_a, const UnitVector& e_n,
                                                  double t, Variant variant) {
  detail::require_same_dim(e_a.dim(), e_n.dim());
  detail::require_open_threshold(t);
  const double theta = detail::checked_concept_angle(e_a, e_n);
  const double alpha = std::acos(t);
  const double s = std::sin(theta);
  const double ca = std::sin(alpha + theta / 2.0) / s;
  const double sign = variant == Variant::SlerpCenter ? -1.0 : 1.0;
  const double cn = sign * std::sin(alpha - theta / 2.0) / s;

  std::vector<double> d(e_a.dim());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = ca * e_a[i] + cn * e_n[i];
  return d;
}

inline UnitVector negation_direction(const UnitVector& e_a, const UnitVector& e_n, double t,
                                     Variant variant = Variant::SlerpCenter) {
  return UnitVector::normalize(raw_negation_direction(e_a, e_n, t, variant));
}

/// A decomposed caption in embedding form together with its scoring direction.
class NegationQuery {
 public:
  /// Pass-through query: the direction is e_a itself.
  static NegationQuery affirmative(UnitVector e_a) {
    NegationQuery q(e_a);
    q.direction_ = std::move(e_a);
    return q;
  }

  static NegationQuery negated(UnitVector e_a, UnitVector e_n, double t,
                               Variant variant = Variant::SlerpCenter) {
    UnitVector d = negation_direction(e_a, e_n, t, variant);
    NegationQuery q(std::move(e_a));
    q.theta_ = angle_between(q.affirmative_, e_n);
    q.negated_ = std::move(e_n);
    q.threshold_t_ = t;
    q.variant_ = variant;
    q.direction_ = std::move(d);
    return q;
  }

  const UnitVector& affirmative_embedding() const noexcept { return affirmative_; }
  const std::optional<UnitVector>& negated_embedding() const noexcept { return negated_; }
  std::optional<double> theta() const noexcept { return theta_; }
  std::optional<double> threshold_t() const noexcept { return threshold_t_; }
  Variant variant() const noexcept { return variant_; }
  const UnitVector& direction() const noexcept { return *direction_; }
  std::size_t dim() const noexcept { return affirmative_.dim(); }

 private:
  explicit NegationQuery(UnitVector e_a) : affirmative_(std::move(e_a)) {}

  UnitVector affirmative_;
  std::optional<UnitVector> negated_;
  std::optional<double> theta_;
  std::optional<double> threshold_t_;
  Variant variant_ = Variant::SlerpCenter;
  std::optional<UnitVector> direction_;
};

/// s_neg(e_I, P) = e_I . d
inline double score(const UnitVector& image, const NegationQuery& query) {
  return dot(image, query.direction());
}

/// Same as above for a stored 32-bit row.
inline double score(std::span<const float> image, const NegationQuery& query) {
  detail::require_same_dim(image.size(), query.dim());
  return detail::dot(image, query.direction().components());
}

}  // namespace spacevlm
