#pragma once

// Exact maximum-weight injective matching: exhaustive enumeration for small
// groups (with the runner-up total needed for margins) and a Hungarian solver
// for large flattened instances. Maximization convention throughout.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "ttm/core.hpp"
#include "ttm/error.hpp"

namespace ttm {

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

/// k!/(k-m)!, saturating at UINT64_MAX.
inline std::uint64_t count_injective(const GroupShape& shape) {
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < shape.rows; ++i) {
    const std::uint64_t factor = shape.cols - i;
    if (count > std::numeric_limits<std::uint64_t>::max() / factor)
      return std::numeric_limits<std::uint64_t>::max();
    count *= factor;
  }
  return count;
}

namespace detail {

inline void check_enumerable(const GroupShape& shape, std::uint64_t cap) {
  if (!shape.valid()) fail(ErrorKind::kValidation, "invalid shape " + to_string(shape));
  if (count_injective(shape) > cap)
    fail(ErrorKind::kCapacity, "group too large for enumeration (" + to_string(shape) + ")");
}

// Visits every injective assignment in lexicographic order.
template <typename Visit>
void for_each_matching(const GroupShape& shape, Visit&& visit) {
  std::vector<std::size_t> current(shape.rows);
  std::vector<bool> used(shape.cols, false);
  auto recurse = [&](auto&& self, std::size_t row) -> void {
    if (row == shape.rows) {
      visit(static_cast<const std::vector<std::size_t>&>(current));
      return;
    }
    for (std::size_t c = 0; c < shape.cols; ++c) {
      if (used[c]) continue;
      used[c] = true;
      current[row] = c;
      self(self, row + 1);
      used[c] = false;
    }
  };
  recurse(recurse, 0);
}

}  // namespace detail

/// All injective matchings of the shape, lexicographic order.
inline std::vector<Matching> enumerate_matchings(const GroupShape& shape,
                                                 std::uint64_t cap = kDefaultEnumerationCap) {
  detail::check_enumerable(shape, cap);
  std::vector<Matching> out;
  out.reserve(static_cast<std::size_t>(count_injective(shape)));
  detail::for_each_matching(shape, [&](const std::vector<std::size_t>& a) { out.emplace_back(a); });
  return out;
}

struct BestTwo {
  Matching best;
  double best_total = 0.0;
  // -inf when the shape admits a single matching (1x1).
  double second_total = -std::numeric_limits<double>::infinity();
};

/// Argmax matching and the best total among all other matchings.
/// Ties keep the lexicographically smallest assignment as the best.
inline BestTwo best_two_matchings(const SimilarityMatrix& s,
                                  std::uint64_t cap = kDefaultEnumerationCap) {
  detail::check_enumerable(s.shape(), cap);
  BestTwo result;
  result.best_total = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best;
  detail::for_each_matching(s.shape(), [&](const std::vector<std::size_t>& a) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += s(i, a[i]);
    if (total > result.best_total) {
      result.second_total = result.best_total;
      result.best_total = total;
      best = a;
    } else if (total > result.second_total) {
      result.second_total = total;
    }
  });
  result.best = Matching(std::move(best));
  return result;
}

struct AssignmentResult {
  Matching matching;
  double total = 0.0;
};

/// Exact maximum-total injective matching in O(k^3) (shortest augmenting
/// paths with potentials). Rectangular inputs are padded with constant dummy
/// rows, which every completion scores identically.
inline AssignmentResult hungarian_max(const SimilarityMatrix& s) {
  const std::size_t m = s.rows();
  const std::size_t n = s.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Minimization on cost = -score; rows/cols are 1-based, 0 is the sentinel.
  auto cost = [&](std::size_t row, std::size_t col) -> double {
    return row <= m ? -s(row - 1, col - 1) : 0.0;
  };

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), min_slack(n + 1);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  std::vector<char> visited(n + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), kInf);
    std::fill(visited.begin(), visited.end(), 0);
    do {
      visited[col0] = 1;
      const std::size_t r0 = owner[col0];
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (visited[c]) continue;
        const double slack = cost(r0, c) - u[r0] - v[c];
        if (slack < min_slack[c]) {
          min_slack[c] = slack;
          way[c] = col0;
        }
        if (min_slack[c] < delta) {
          delta = min_slack[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (visited[c]) {
          u[owner[c]] += delta;
          v[c] -= delta;
        } else {
          min_slack[c] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<std::size_t> assignment(m);
  for (std::size_t c = 1; c <= n; ++c)
    if (owner[c] >= 1 && owner[c] <= m) assignment[owner[c] - 1] = c - 1;
  AssignmentResult result{Matching(std::move(assignment)), 0.0};
  result.total = matching_total(s, result.matching);
  return result;
}

}  // namespace ttm
