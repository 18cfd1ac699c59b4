#pragma once

// Monte Carlo estimates of metric probabilities under the random-guessing
// model (i.i.d. uniform [0, 1] scores), checked against the closed forms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "ttm/core.hpp"
#include "ttm/error.hpp"
#include "ttm/metrics.hpp"
#include "ttm/rng.hpp"

namespace ttm {

enum class RandomMetric { kGroupScore, kGroupMatch, kIndividualMatch };

inline const char* to_string(RandomMetric metric) {
  switch (metric) {
    case RandomMetric::kGroupScore:
      return "group_score";
    case RandomMetric::kGroupMatch:
      return "group_match";
    case RandomMetric::kIndividualMatch:
      return "individual_match";
  }
  return "?";
}

struct Estimate {
  std::uint64_t successes = 0;
  std::uint64_t trials = 0;
  double estimate = 0.0;
  double standard_error = 0.0;  // binomial: sqrt(p(1-p)/N)
};

inline Estimate make_estimate(std::uint64_t successes, std::uint64_t trials) {
  Estimate e{successes, trials, 0.0, 0.0};
  e.estimate = static_cast<double>(successes) / static_cast<double>(trials);
  e.standard_error = std::sqrt(e.estimate * (1.0 - e.estimate) / static_cast<double>(trials));
  return e;
}

/// Success counts for all three metrics over the same N random matrices.
struct JointEstimate {
  Estimate group_score;
  Estimate group_match;
  Estimate individual_match;
};

inline constexpr std::size_t kMonteCarloChunks = 64;

/// Trials are split into a fixed number of chunks, each with a derived seed,
/// so the counts do not depend on how many threads run them.
inline JointEstimate monte_carlo_all(const GroupShape& shape, std::uint64_t trials,
                                     std::uint64_t seed, unsigned threads = 0) {
  if (trials < 1) fail(ErrorKind::kValidation, "trials must be >= 1");
  if (!shape.valid()) fail(ErrorKind::kValidation, "invalid shape " + to_string(shape));
  struct Counts {
    std::uint64_t score = 0, match = 0, individual = 0;
  };
  std::vector<Counts> counts(kMonteCarloChunks);
  const Rng root(seed);
  auto run_chunk = [&](std::size_t c) {
    const std::uint64_t n = trials / kMonteCarloChunks + (c < trials % kMonteCarloChunks ? 1 : 0);
    Rng rng = root.split(c);
    std::vector<double> entries(shape.rows * shape.cols);
    Counts local;
    for (std::uint64_t t = 0; t < n; ++t) {
      for (double& x : entries) x = rng.uniform();
      const SimilarityMatrix s(shape, entries);
      local.score += static_cast<std::uint64_t>(group_score(s));
      local.match += static_cast<std::uint64_t>(group_match(s));
      local.individual += static_cast<std::uint64_t>(individual_match_score(s));
    }
    counts[c] = local;
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, kMonteCarloChunks);
  if (threads == 1) {
    for (std::size_t c = 0; c < kMonteCarloChunks; ++c) run_chunk(c);
  } else {
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < threads; ++w)
      workers.emplace_back([&, w] {
        for (std::size_t c = w; c < kMonteCarloChunks; c += threads) run_chunk(c);
      });
  }
  Counts total;
  for (const auto& c : counts) {
    total.score += c.score;
    total.match += c.match;
    total.individual += c.individual;
  }
  return {make_estimate(total.score, trials), make_estimate(total.match, trials),
          make_estimate(total.individual, trials)};
}

inline Estimate monte_carlo_metric(const GroupShape& shape, RandomMetric metric,
                                   std::uint64_t trials, std::uint64_t seed) {
  const JointEstimate joint = monte_carlo_all(shape, trials, seed);
  switch (metric) {
    case RandomMetric::kGroupScore:
      return joint.group_score;
    case RandomMetric::kGroupMatch:
      return joint.group_match;
    case RandomMetric::kIndividualMatch:
      return joint.individual_match;
  }
  return {};
}

struct PropositionRow {
  GroupShape shape;
  RandomMetric metric;
  Estimate estimate;
  ClosedForm expected;
  double deviation = 0.0;  // |estimate - expected| in units of stderr
  bool pass = false;
};

struct PropositionTable {
  std::vector<PropositionRow> rows;
  // Per shape: match estimate >= score estimate - 4 * combined stderr.
  std::vector<std::pair<GroupShape, bool>> ordering;

  bool all_pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; }) &&
           std::all_of(ordering.begin(), ordering.end(), [](const auto& o) { return o.second; });
  }
};

inline constexpr double kPropositionBand = 4.0;

inline PropositionRow compare(const GroupShape& shape, RandomMetric metric, const Estimate& est,
                              const ClosedForm& expected) {
  PropositionRow row{shape, metric, est, expected, 0.0, false};
  const double diff = std::abs(est.estimate - expected.value);
  if (est.standard_error > 0.0) {
    row.deviation = diff / est.standard_error;
    row.pass = diff <= kPropositionBand * est.standard_error;
  } else {
    row.deviation = diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    row.pass = diff == 0.0;
  }
  return row;
}

/// Square shapes 2..max_k plus the rectangular set {1x2, 1x4, 2x3, 2x4, 3x4}.
inline std::vector<GroupShape> proposition_shapes(std::size_t max_k) {
  std::vector<GroupShape> shapes;
  for (std::size_t k = 2; k <= max_k; ++k) shapes.push_back({k, k});
  for (GroupShape s : {GroupShape{1, 2}, GroupShape{1, 4}, GroupShape{2, 3}, GroupShape{2, 4},
                       GroupShape{3, 4}})
    shapes.push_back(s);
  return shapes;
}

/// GroupScore and GroupMatch estimates against their closed forms, every cell
/// within 4 standard errors. Beyond k = 5 square GroupScore is too rare to
/// estimate, so max_k is capped there.
inline PropositionTable check_propositions(std::size_t max_k, std::uint64_t trials,
                                           std::uint64_t seed) {
  if (max_k < 2 || max_k > 5) fail(ErrorKind::kValidation, "max_k must lie in [2, 5]");
  PropositionTable table;
  const auto shapes = proposition_shapes(max_k);
  for (std::size_t n = 0; n < shapes.size(); ++n) {
    const GroupShape shape = shapes[n];
    const JointEstimate joint = monte_carlo_all(shape, trials, derive_seed(seed, n));
    table.rows.push_back(compare(shape, RandomMetric::kGroupScore, joint.group_score,
                                 closed_form_random_group_score(shape)));
    table.rows.push_back(compare(shape, RandomMetric::kGroupMatch, joint.group_match,
                                 closed_form_random_group_match(shape)));
    const double combined = std::sqrt(joint.group_score.standard_error * joint.group_score.standard_error +
                                      joint.group_match.standard_error * joint.group_match.standard_error);
    table.ordering.emplace_back(shape, joint.group_match.estimate >=
                                           joint.group_score.estimate - kPropositionBand * combined);
  }
  return table;
}

}  // namespace ttm
