#pragma once

// Group-level evaluation metrics. Every metric reads the ground truth as the
// identity matching (row i belongs with column i); use align_to_ground_truth
// for groups stored with a permuted pairing. Ties always evaluate to 0.

#include <boost/multiprecision/cpp_int.hpp>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "ttm/assignment.hpp"
#include "ttm/core.hpp"

namespace ttm {

/// Reorders columns so that ground-truth column gt[i] moves to position i;
/// unmatched columns follow in their original order.
inline SimilarityMatrix align_to_ground_truth(const SimilarityMatrix& s, const Matching& gt) {
  gt.validate(s.shape());
  if (gt.is_identity()) return s;
  std::vector<std::size_t> order = gt.assignment();
  std::vector<bool> used(s.cols(), false);
  for (std::size_t c : order) used[c] = true;
  for (std::size_t c = 0; c < s.cols(); ++c)
    if (!used[c]) order.push_back(c);
  std::vector<double> entries;
  entries.reserve(s.rows() * s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t c : order) entries.push_back(s(i, c));
  return SimilarityMatrix(s.shape(), std::move(entries));
}

/// Square: each diagonal entry strictly beats its row and column rivals.
/// Rectangular m x k: each diagonal entry strictly beats its row rivals.
inline int group_score(const SimilarityMatrix& s) {
  const std::size_t m = s.rows(), k = s.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double diag = s(i, i);
    for (std::size_t j = 0; j < k; ++j)
      if (j != i && !(diag > s(i, j))) return 0;
    if (s.shape().square())
      for (std::size_t j = 0; j < m; ++j)
        if (j != i && !(diag > s(j, i))) return 0;
  }
  return 1;
}

/// 1 iff the identity matching strictly beats every other injective matching.
inline int group_match(const SimilarityMatrix& s, std::uint64_t cap = kDefaultEnumerationCap) {
  const BestTwo two = best_two_matchings(s, cap);
  // The lexicographic tie-break can put the identity first among equals, so
  // the runner-up comparison is what enforces strictness.
  return two.best.is_identity() && two.best_total > two.second_total ? 1 : 0;
}

/// 1 x k specialization: the first column strictly maximizes the row.
inline int text_score(const SimilarityMatrix& s) {
  if (s.rows() != 1) fail(ErrorKind::kValidation, "text_score requires a 1xk matrix");
  for (std::size_t j = 1; j < s.cols(); ++j)
    if (!(s(0, 0) > s(0, j))) return 0;
  return 1;
}

/// Every row's strict argmax is its own column; injectivity not enforced.
inline int individual_match_score(const SimilarityMatrix& s) {
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j)
      if (j != i && !(s(i, i) > s(i, j))) return 0;
  return 1;
}

/// Best matching total minus runner-up total. +inf for 1x1 groups.
inline double margin(const SimilarityMatrix& s, std::uint64_t cap = kDefaultEnumerationCap) {
  const BestTwo two = best_two_matchings(s, cap);
  return two.best_total - two.second_total;
}

using Rational = boost::multiprecision::cpp_rational;

struct ClosedForm {
  Rational exact;
  double value = 0.0;  // NaN-free; 0 when the rational underflows double
};

namespace detail {

inline boost::multiprecision::cpp_int factorial(std::size_t n) {
  boost::multiprecision::cpp_int f = 1;
  for (std::size_t i = 2; i <= n; ++i) f *= i;
  return f;
}

inline ClosedForm make_closed_form(Rational r) {
  ClosedForm out{std::move(r), 0.0};
  out.value = out.exact.convert_to<double>();
  return out;
}

}  // namespace detail

/// Probability that i.i.d. continuous scores give GroupScore 1:
/// (k-1)!/(2k-1)! for square groups, 1/k^m for rectangular ones.
inline ClosedForm closed_form_random_group_score(const GroupShape& shape) {
  if (!shape.valid()) fail(ErrorKind::kValidation, "invalid shape " + to_string(shape));
  if (shape.square())
    return detail::make_closed_form(
        Rational(detail::factorial(shape.cols - 1), detail::factorial(2 * shape.cols - 1)));
  boost::multiprecision::cpp_int denom = 1;
  for (std::size_t i = 0; i < shape.rows; ++i) denom *= shape.cols;
  return detail::make_closed_form(Rational(1, denom));
}

/// Probability that i.i.d. continuous scores give GroupMatch 1: (k-m)!/k!.
inline ClosedForm closed_form_random_group_match(const GroupShape& shape) {
  if (!shape.valid()) fail(ErrorKind::kValidation, "invalid shape " + to_string(shape));
  return detail::make_closed_form(
      Rational(detail::factorial(shape.cols - shape.rows), detail::factorial(shape.cols)));
}

/// Dataset-level means, as percentages in [0, 100].
struct MetricSummary {
  double group_score = 0.0;
  double group_match = 0.0;
  double individual_match = 0.0;

  friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

/// Sums in sequential group order so results do not depend on scheduling.
inline MetricSummary summarize(std::span<const SimilarityMatrix> aligned) {
  MetricSummary out;
  if (aligned.empty()) return out;
  long score = 0, match = 0, individual = 0;
  for (const auto& s : aligned) {
    score += group_score(s);
    match += group_match(s);
    individual += individual_match_score(s);
  }
  const double n = static_cast<double>(aligned.size());
  out.group_score = 100.0 * static_cast<double>(score) / n;
  out.group_match = 100.0 * static_cast<double>(match) / n;
  out.individual_match = 100.0 * static_cast<double>(individual) / n;
  return out;
}

}  // namespace ttm
