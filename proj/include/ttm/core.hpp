#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ttm/error.hpp"

namespace ttm {

/// Group dimensions: m images by k captions, with 1 <= m <= k.
struct GroupShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  constexpr bool valid() const noexcept { return rows >= 1 && cols >= 1 && rows <= cols; }
  constexpr bool square() const noexcept { return rows == cols; }

  friend constexpr bool operator==(const GroupShape&, const GroupShape&) = default;
};

inline std::string to_string(const GroupShape& shape) {
  return std::to_string(shape.rows) + "x" + std::to_string(shape.cols);
}

inline GroupShape make_shape(std::size_t rows, std::size_t cols) {
  const GroupShape shape{rows, cols};
  if (!shape.valid()) fail(ErrorKind::kValidation, "invalid shape " + to_string(shape));
  return shape;
}

/// Dense m-by-k score grid, row-major. Entries are always finite.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;

  SimilarityMatrix(GroupShape shape, std::vector<double> entries)
      : shape_(shape), entries_(std::move(entries)) {
    if (!shape_.valid()) fail(ErrorKind::kValidation, "invalid shape " + to_string(shape_));
    if (entries_.size() != shape_.rows * shape_.cols)
      fail(ErrorKind::kValidation, "shape mismatch: expected " +
                                       std::to_string(shape_.rows * shape_.cols) +
                                       " entries, got " + std::to_string(entries_.size()));
    for (double x : entries_)
      if (!std::isfinite(x)) fail(ErrorKind::kValidation, "non-finite entry in similarity matrix");
  }

  // Convenience for literals: {{0.9, 0.1}, {0.2, 0.8}}.
  SimilarityMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t k = m == 0 ? 0 : rows.begin()->size();
    std::vector<double> flat;
    flat.reserve(m * k);
    for (const auto& row : rows) {
      if (row.size() != k) fail(ErrorKind::kValidation, "shape mismatch: ragged rows");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    *this = SimilarityMatrix({m, k}, std::move(flat));
  }

  const GroupShape& shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return shape_.rows; }
  std::size_t cols() const noexcept { return shape_.cols; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * shape_.cols + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(entries_).subspan(i * shape_.cols, shape_.cols);
  }
  const std::vector<double>& entries() const noexcept { return entries_; }

  friend bool operator==(const SimilarityMatrix&, const SimilarityMatrix&) = default;

 private:
  GroupShape shape_;
  std::vector<double> entries_;
};

/// Injective map from rows to columns; assignment()[i] is the column of row i.
class Matching {
 public:
  Matching() = default;
  explicit Matching(std::vector<std::size_t> assignment) : assignment_(std::move(assignment)) {}

  static Matching identity(std::size_t m) {
    std::vector<std::size_t> a(m);
    for (std::size_t i = 0; i < m; ++i) a[i] = i;
    return Matching(std::move(a));
  }

  std::size_t size() const noexcept { return assignment_.size(); }
  std::size_t operator[](std::size_t i) const { return assignment_[i]; }
  const std::vector<std::size_t>& assignment() const noexcept { return assignment_; }

  bool is_identity() const noexcept {
    for (std::size_t i = 0; i < assignment_.size(); ++i)
      if (assignment_[i] != i) return false;
    return true;
  }

  // Returns a message describing the first violation, or nullopt.
  std::optional<std::string> check(const GroupShape& shape) const {
    if (assignment_.size() != shape.rows)
      return "shape mismatch: matching has " + std::to_string(assignment_.size()) +
             " rows, group has " + std::to_string(shape.rows);
    std::vector<bool> used(shape.cols, false);
    for (std::size_t c : assignment_) {
      if (c >= shape.cols) return "matching column " + std::to_string(c) + " out of range";
      if (used[c]) return "non-injective matching";
      used[c] = true;
    }
    return std::nullopt;
  }

  void validate(const GroupShape& shape) const {
    if (auto problem = check(shape)) fail(ErrorKind::kValidation, *problem);
  }

  // Only defined for bijections (m = k).
  Matching inverse() const {
    std::vector<std::size_t> inv(assignment_.size());
    for (std::size_t i = 0; i < assignment_.size(); ++i) inv.at(assignment_[i]) = i;
    return Matching(std::move(inv));
  }

  // (outer ∘ inner)(i) = outer[inner[i]].
  friend Matching compose(const Matching& outer, const Matching& inner) {
    std::vector<std::size_t> a(inner.size());
    for (std::size_t i = 0; i < inner.size(); ++i) a[i] = outer.assignment_.at(inner[i]);
    return Matching(std::move(a));
  }

  friend bool operator==(const Matching&, const Matching&) = default;
  friend auto operator<=>(const Matching& a, const Matching& b) {
    return a.assignment_ <=> b.assignment_;
  }

 private:
  std::vector<std::size_t> assignment_;
};

/// Sum of s[i, pi(i)], accumulated left to right.
inline double matching_total(const SimilarityMatrix& s, const Matching& pi) {
  double total = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) total += s(i, pi[i]);
  return total;
}

struct Group {
  std::string id;
  std::vector<std::string> image_ids;
  std::vector<std::string> caption_ids;
  // Hidden from the algorithms; used for evaluation and oracle selection.
  std::optional<Matching> ground_truth;

  GroupShape shape() const noexcept { return {image_ids.size(), caption_ids.size()}; }
  Matching truth_or_identity() const {
    return ground_truth ? *ground_truth : Matching::identity(image_ids.size());
  }

  friend bool operator==(const Group&, const Group&) = default;
};

struct GroupedDataset {
  GroupShape shape;
  std::vector<Group> groups;

  bool has_ground_truth() const noexcept {
    for (const auto& g : groups)
      if (!g.ground_truth) return false;
    return !groups.empty();
  }

  friend bool operator==(const GroupedDataset&, const GroupedDataset&) = default;
};

/// Non-grouped variant: every image competes for every caption.
struct FlatDataset {
  std::vector<std::string> image_ids;
  std::vector<std::string> caption_ids;
  // Image index -> caption index.
  std::optional<Matching> ground_truth;

  GroupShape shape() const noexcept { return {image_ids.size(), caption_ids.size()}; }

  friend bool operator==(const FlatDataset&, const FlatDataset&) = default;
};

/// Frozen embedding vectors keyed by entity id. Stored in 64-bit.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) fail(ErrorKind::kValidation, "embedding dim must be positive");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  void add(const std::string& id, std::span<const double> values) {
    if (values.size() != dim_)
      fail(ErrorKind::kValidation, "embedding for '" + id + "' has length " +
                                       std::to_string(values.size()) + ", expected " +
                                       std::to_string(dim_));
    for (double x : values)
      if (!std::isfinite(x)) fail(ErrorKind::kValidation, "non-finite entry in embedding '" + id + "'");
    if (!index_.emplace(id, ids_.size()).second)
      fail(ErrorKind::kValidation, "duplicate id '" + id + "' in embedding table");
    ids_.push_back(id);
    data_.insert(data_.end(), values.begin(), values.end());
  }

  bool contains(const std::string& id) const { return index_.contains(id); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail(ErrorKind::kValidation, "unresolvable id '" + id + "'");
    return it->second;
  }

  std::span<const double> row(std::size_t index) const {
    return std::span<const double>(data_).subspan(index * dim_, dim_);
  }
  std::span<const double> operator[](const std::string& id) const { return row(index_of(id)); }

  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.data_ == b.data_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> data_;
};

/// Precomputed per-group similarity matrices (score-only ingestion path).
using ScoreStore = std::unordered_map<std::string, SimilarityMatrix>;

enum class ViolationKind {
  kInvalidShape,
  kShapeMismatch,
  kDuplicateId,
  kNonInjectiveMatching,
  kUnresolvableId,
  kNonFiniteEntry,
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

namespace detail {

inline std::optional<Violation> check_structure(const GroupedDataset& dataset) {
  if (!dataset.shape.valid())
    return Violation{ViolationKind::kInvalidShape, "invalid shape " + to_string(dataset.shape)};
  std::unordered_set<std::string> group_ids;
  for (const auto& g : dataset.groups) {
    if (!group_ids.insert(g.id).second)
      return Violation{ViolationKind::kDuplicateId, "duplicate id: group '" + g.id + "'"};
    if (g.shape() != dataset.shape)
      return Violation{ViolationKind::kShapeMismatch,
                       "shape mismatch in group '" + g.id + "': " + to_string(g.shape()) +
                           " vs dataset " + to_string(dataset.shape)};
    std::unordered_set<std::string> seen;
    for (const auto& id : g.image_ids)
      if (!seen.insert(id).second)
        return Violation{ViolationKind::kDuplicateId,
                         "duplicate id '" + id + "' in group '" + g.id + "'"};
    for (const auto& id : g.caption_ids)
      if (!seen.insert(id).second)
        return Violation{ViolationKind::kDuplicateId,
                         "duplicate id '" + id + "' in group '" + g.id + "'"};
    if (g.ground_truth) {
      if (auto problem = g.ground_truth->check(dataset.shape)) {
        const auto kind = problem->starts_with("non-injective") ? ViolationKind::kNonInjectiveMatching
                                                                 : ViolationKind::kShapeMismatch;
        return Violation{kind, *problem + " in group '" + g.id + "'"};
      }
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// First invariant violation of the dataset against an embedding table, if any.
inline std::optional<Violation> validate_dataset(const GroupedDataset& dataset,
                                                 const EmbeddingTable& table) {
  if (auto v = detail::check_structure(dataset)) return v;
  for (const auto& g : dataset.groups) {
    for (const auto* ids : {&g.image_ids, &g.caption_ids})
      for (const auto& id : *ids)
        if (!table.contains(id))
          return Violation{ViolationKind::kUnresolvableId,
                           "unresolvable id '" + id + "' in group '" + g.id + "'"};
  }
  return std::nullopt;
}

/// First invariant violation of the dataset against a score store, if any.
inline std::optional<Violation> validate_dataset(const GroupedDataset& dataset,
                                                 const ScoreStore& scores) {
  if (auto v = detail::check_structure(dataset)) return v;
  for (const auto& g : dataset.groups) {
    auto it = scores.find(g.id);
    if (it == scores.end())
      return Violation{ViolationKind::kUnresolvableId, "no scores for group '" + g.id + "'"};
    if (it->second.shape() != dataset.shape)
      return Violation{ViolationKind::kShapeMismatch,
                       "shape mismatch in scores for group '" + g.id + "'"};
    for (double x : it->second.entries())
      if (!std::isfinite(x))
        return Violation{ViolationKind::kNonFiniteEntry,
                         "non-finite entry in scores for group '" + g.id + "'"};
  }
  return std::nullopt;
}

/// Structural checks only (no store).
inline std::optional<Violation> validate_dataset(const GroupedDataset& dataset) {
  return detail::check_structure(dataset);
}

inline void require_valid(const std::optional<Violation>& v) {
  if (v) fail(ErrorKind::kValidation, v->message);
}

inline std::optional<Violation> validate_flat(const FlatDataset& flat) {
  if (flat.image_ids.empty() || flat.image_ids.size() > flat.caption_ids.size())
    return Violation{ViolationKind::kInvalidShape,
                     "invalid shape " + to_string(flat.shape()) + " for flat dataset"};
  if (flat.ground_truth) {
    if (auto problem = flat.ground_truth->check(flat.shape()))
      return Violation{problem->starts_with("non-injective") ? ViolationKind::kNonInjectiveMatching
                                                              : ViolationKind::kShapeMismatch,
                       *problem};
  }
  return std::nullopt;
}

}  // namespace ttm
