#pragma once

// Planted-structure synthetic data. Each group shares an anchor vector (the
// confusable common content); each caption slot j has a concept c_j; image i
// depicts concept c_i:
//
//   u_i = normalize(anchor_weight * a + signal * c_i     + noise * e_i)
//   v_j = normalize(anchor_weight * a + signal * M c_j   + noise * e'_j)
//
// with M = (1 - modality_mix) I + modality_mix R for one random rotation R
// shared by the whole dataset. modality_mix = 0 gives matching image and
// caption spaces; larger values hide part of the signal behind a dataset-wide
// linear distortion that an adapter can learn to undo.

#include <Eigen/Dense>
#include <Eigen/QR>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ttm/core.hpp"
#include "ttm/error.hpp"
#include "ttm/metrics.hpp"
#include "ttm/rng.hpp"
#include "ttm/scorer.hpp"

namespace ttm {

struct SynthConfig {
  std::size_t n_groups = 400;
  GroupShape shape{2, 2};
  std::size_t dim = 64;
  double anchor_weight = 2.0;
  double signal = 1.0;
  double noise = 1.0;
  double modality_mix = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_groups < 1) fail(ErrorKind::kValidation, "n_groups must be >= 1");
    if (!shape.valid()) fail(ErrorKind::kValidation, "invalid shape " + to_string(shape));
    if (dim < 2) fail(ErrorKind::kValidation, "dim must be >= 2");
    if (!(signal > 0.0)) fail(ErrorKind::kValidation, "signal must be > 0");
    if (!(noise >= 0.0)) fail(ErrorKind::kValidation, "noise must be >= 0");
    if (!(anchor_weight >= 0.0)) fail(ErrorKind::kValidation, "anchor_weight must be >= 0");
    if (!(modality_mix >= 0.0 && modality_mix <= 1.0))
      fail(ErrorKind::kValidation, "modality_mix must lie in [0, 1]");
  }
};

struct SynthData {
  GroupedDataset dataset;
  EmbeddingTable table;
};

namespace detail {

inline Eigen::MatrixXd random_rotation(std::size_t dim, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

inline Eigen::VectorXd normal_vector(std::size_t dim, Rng& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

// Unit vector, rounded to float32 so the exported file reproduces it exactly.
inline std::vector<double> export_unit(const Eigen::VectorXd& v) {
  const double n = v.norm();
  std::vector<double> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<double>(static_cast<float>(n > 0.0 ? v(i) / n : v(i)));
  return out;
}

inline std::string padded(std::size_t value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", value);
  return buf;
}

}  // namespace detail

/// Deterministic given config.seed; each group draws from its own derived
/// stream so generation order does not matter.
inline SynthData generate(const SynthConfig& config) {
  config.validate();
  const Rng root(config.seed);
  Rng rotation_rng = root.split(0);
  const auto d = static_cast<Eigen::Index>(config.dim);
  Eigen::MatrixXd modality = (1.0 - config.modality_mix) * Eigen::MatrixXd::Identity(d, d);
  if (config.modality_mix > 0.0)
    modality += config.modality_mix * detail::random_rotation(config.dim, rotation_rng);

  SynthData out{GroupedDataset{config.shape, {}}, EmbeddingTable(config.dim)};
  out.dataset.groups.reserve(config.n_groups);
  const std::size_t m = config.shape.rows, k = config.shape.cols;
  for (std::size_t g = 0; g < config.n_groups; ++g) {
    Rng rng = root.split(g + 1);
    const Eigen::VectorXd anchor = detail::normal_vector(config.dim, rng);
    std::vector<Eigen::VectorXd> concepts;
    for (std::size_t j = 0; j < k; ++j) concepts.push_back(detail::normal_vector(config.dim, rng));

    Group group;
    group.id = "g" + detail::padded(g);
    for (std::size_t i = 0; i < m; ++i) {
      const Eigen::VectorXd u = config.anchor_weight * anchor + config.signal * concepts[i] +
                                config.noise * detail::normal_vector(config.dim, rng);
      group.image_ids.push_back(group.id + "/i" + std::to_string(i));
      out.table.add(group.image_ids.back(), detail::export_unit(u));
    }
    for (std::size_t j = 0; j < k; ++j) {
      const Eigen::VectorXd v = config.anchor_weight * anchor +
                                config.signal * (modality * concepts[j]) +
                                config.noise * detail::normal_vector(config.dim, rng);
      group.caption_ids.push_back(group.id + "/c" + std::to_string(j));
      out.table.add(group.caption_ids.back(), detail::export_unit(v));
    }
    group.ground_truth = Matching::identity(m);
    out.dataset.groups.push_back(std::move(group));
  }
  return out;
}

/// Concatenates all groups into one image set and one caption set, carrying
/// the ground truth over as a global injective map.
inline FlatDataset flatten(const GroupedDataset& dataset) {
  if (!dataset.has_ground_truth()) fail(ErrorKind::kValidation, "flatten requires ground truth");
  FlatDataset flat;
  std::vector<std::size_t> truth;
  std::unordered_set<std::string> seen;
  for (const auto& g : dataset.groups) {
    const std::size_t offset = flat.caption_ids.size();
    for (const auto& id : g.image_ids) {
      if (!seen.insert(id).second) fail(ErrorKind::kValidation, "duplicate id '" + id + "' across groups");
      flat.image_ids.push_back(id);
    }
    for (const auto& id : g.caption_ids) {
      if (!seen.insert(id).second) fail(ErrorKind::kValidation, "duplicate id '" + id + "' across groups");
      flat.caption_ids.push_back(id);
    }
    for (std::size_t c : g.ground_truth->assignment()) truth.push_back(offset + c);
  }
  flat.ground_truth = Matching(std::move(truth));
  return flat;
}

/// Raw metrics under plain cosine similarity (identity adapter).
inline MetricSummary raw_metrics(const SynthData& data) {
  const AdapterParams plain = AdapterParams::identity(data.table.dim(), 1.0, 0.0);
  std::vector<SimilarityMatrix> scores;
  for (const auto& g : data.dataset.groups) scores.push_back(score_group(plain, g, data.table));
  std::vector<SimilarityMatrix> aligned;
  for (std::size_t i = 0; i < scores.size(); ++i)
    aligned.push_back(align_to_ground_truth(scores[i], data.dataset.groups[i].truth_or_identity()));
  return summarize(aligned);
}

struct NoiseCalibration {
  double noise = 0.0;
  double raw_group_score = 0.0;
  std::vector<std::pair<double, double>> sweep;  // (noise, raw group score)
};

/// Picks the noise level whose raw GroupScore is closest to the middle of
/// [low, high] among candidates that land inside it.
inline NoiseCalibration calibrate_noise(SynthConfig config, std::span<const double> candidates,
                                        double low = 10.0, double high = 30.0) {
  NoiseCalibration out;
  bool found = false;
  const double target = 0.5 * (low + high);
  for (double sigma : candidates) {
    config.noise = sigma;
    const double gs = raw_metrics(generate(config)).group_score;
    out.sweep.emplace_back(sigma, gs);
    if (gs >= low && gs <= high &&
        (!found || std::abs(gs - target) < std::abs(out.raw_group_score - target))) {
      out.noise = sigma;
      out.raw_group_score = gs;
      found = true;
    }
  }
  if (!found) fail(ErrorKind::kValidation, "no candidate noise level lands in the target range");
  return out;
}

}  // namespace ttm
