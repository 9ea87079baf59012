#pragma once

// Brute-force locator for the centre of N(e_a) minus N(e_n) along the great
// circle through e_a and e_n. It only evaluates cap membership in the plane
// and never touches the closed-form direction, so it can be used to check it.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <vector>

#include "spacevlm/sphere.hpp"

namespace spacevlm {

inline constexpr std::size_t kDefaultArcSamples = std::size_t{1} << 17;

inline std::optional<UnitVector> feasible_arc_centroid_oracle(
    const UnitVector& e_a, const UnitVector& e_n, double t,
    std::size_t samples = kDefaultArcSamples) {
  detail::require_same_dim(e_a.dim(), e_n.dim());
  detail::require_open_threshold(t);
  const double theta = detail::checked_concept_angle(e_a, e_n);
  if (samples < 16) throw Error(ErrorCode::InvalidArgument, "too few samples");

  // In-plane coordinates: e_a = (1, 0), e_n = (cos th, sin th).
  const double nx = std::cos(theta);
  const double ny = std::sin(theta);
  auto feasible = [&](double phi) {
    const double zx = std::cos(phi);
    const double zy = std::sin(phi);
    return zx >= t && (zx * nx + zy * ny) < t;
  };

  const double step = 2.0 * std::numbers::pi / static_cast<double>(samples);
  auto angle_at = [&](std::size_t k) { return -std::numbers::pi + step * static_cast<double>(k); };

  std::vector<char> mask(samples);
  std::size_t any = 0;
  for (std::size_t k = 0; k < samples; ++k) {
    mask[k] = feasible(angle_at(k)) ? 1 : 0;
    any += mask[k];
  }
  if (any == 0) return std::nullopt;
  if (any == samples) return e_a;  // cannot happen for t > -1

  // Walk the circle starting just after an infeasible sample and keep the
  // longest feasible run.
  std::size_t start = 0;
  while (mask[start]) ++start;
  std::size_t best_begin = 0, best_len = 0, run_begin = 0, run_len = 0;
  for (std::size_t j = 1; j <= samples; ++j) {
    const std::size_t k = (start + j) % samples;
    if (mask[k]) {
      if (run_len == 0) run_begin = start + j;
      ++run_len;
      if (run_len > best_len) {
        best_len = run_len;
        best_begin = run_begin;
      }
    } else {
      run_len = 0;
    }
  }

  // Unwrapped sample positions; angle_at extends linearly past pi.
  auto unwrapped = [&](std::size_t pos) { return -std::numbers::pi + step * static_cast<double>(pos); };
  auto refine = [&](double inside, double outside) {
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (inside + outside);
      (feasible(mid) ? inside : outside) = mid;
    }
    return 0.5 * (inside + outside);
  };
  const double lo = refine(unwrapped(best_begin), unwrapped(best_begin) - step);
  const double hi = refine(unwrapped(best_begin + best_len - 1), unwrapped(best_begin + best_len));
  const double phi = 0.5 * (lo + hi);

  // Orthonormal in-plane partner of e_a.
  std::vector<double> w(e_a.dim());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = e_n[i] - nx * e_a[i];
  const UnitVector b2 = UnitVector::normalize(w);

  std::vector<double> z(e_a.dim());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::cos(phi) * e_a[i] + std::sin(phi) * b2[i];
  return UnitVector::normalize(z);
}

}  // namespace spacevlm
