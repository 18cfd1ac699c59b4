#pragma once

// Learnable similarity model over frozen embeddings:
//
//   s(u, v) = exp(log_temperature) * <normalize(A u), normalize(B v)> + bias
//
// plus the pseudo-label loss with its analytic gradient and an AdamW
// finetuning loop with a cosine learning-rate decay.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "ttm/core.hpp"
#include "ttm/error.hpp"
#include "ttm/rng.hpp"

namespace ttm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AdapterParams {
  Eigen::MatrixXd image_map;    // A, d x d
  Eigen::MatrixXd caption_map;  // B, d x d
  double log_temperature = 0.0;
  double bias = 0.0;

  static AdapterParams identity(std::size_t dim, double temperature = 10.0, double bias = -10.0) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {Eigen::MatrixXd::Identity(d, d), Eigen::MatrixXd::Identity(d, d), std::log(temperature),
            bias};
  }

  static AdapterParams zeros_like(const AdapterParams& p) {
    return {Eigen::MatrixXd::Zero(p.image_map.rows(), p.image_map.cols()),
            Eigen::MatrixXd::Zero(p.caption_map.rows(), p.caption_map.cols()), 0.0, 0.0};
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(image_map.rows()); }
  double temperature() const { return std::exp(log_temperature); }

  bool finite() const {
    return image_map.allFinite() && caption_map.allFinite() && std::isfinite(log_temperature) &&
           std::isfinite(bias);
  }

  friend bool operator==(const AdapterParams& a, const AdapterParams& b) {
    return a.image_map.rows() == b.image_map.rows() && a.caption_map.rows() == b.caption_map.rows() &&
           a.image_map == b.image_map && a.caption_map == b.caption_map &&
           a.log_temperature == b.log_temperature && a.bias == b.bias;
  }
};

namespace detail {

inline Eigen::VectorXd mapped_unit(const Eigen::MatrixXd& map, std::span<const double> x) {
  const Eigen::Map<const Eigen::VectorXd> vec(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::VectorXd y = map * vec;
  const double norm = y.norm();
  if (!(norm > 0.0)) fail(ErrorKind::kValidation, "degenerate embedding: zero norm after mapping");
  return y / norm;
}

}  // namespace detail

inline double score_pair(const AdapterParams& params, std::span<const double> image,
                         std::span<const double> caption) {
  if (image.size() != params.dim() || caption.size() != params.dim())
    fail(ErrorKind::kValidation, "embedding length does not match adapter dim");
  const Eigen::VectorXd x = detail::mapped_unit(params.image_map, image);
  const Eigen::VectorXd y = detail::mapped_unit(params.caption_map, caption);
  return params.temperature() * x.dot(y) + params.bias;
}

/// Scores every (image, caption) pair between two lists of table rows.
/// Entry (i, j) is computed exactly as score_pair would.
inline SimilarityMatrix score_rows(const AdapterParams& params, std::span<const std::size_t> images,
                                   std::span<const std::size_t> captions,
                                   const EmbeddingTable& table) {
  std::vector<Eigen::VectorXd> xs, ys;
  xs.reserve(images.size());
  ys.reserve(captions.size());
  for (std::size_t r : images) xs.push_back(detail::mapped_unit(params.image_map, table.row(r)));
  for (std::size_t r : captions) ys.push_back(detail::mapped_unit(params.caption_map, table.row(r)));
  const double t = params.temperature();
  std::vector<double> entries;
  entries.reserve(xs.size() * ys.size());
  for (const auto& x : xs)
    for (const auto& y : ys) entries.push_back(t * x.dot(y) + params.bias);
  return SimilarityMatrix({images.size(), captions.size()}, std::move(entries));
}

inline SimilarityMatrix score_group(const AdapterParams& params, const Group& group,
                                    const EmbeddingTable& table) {
  std::vector<std::size_t> images, captions;
  for (const auto& id : group.image_ids) images.push_back(table.index_of(id));
  for (const auto& id : group.caption_ids) captions.push_back(table.index_of(id));
  return score_rows(params, images, captions, table);
}

/// Whole-dataset score matrix via one matrix product (flattened instances).
inline RowMatrix score_dense(const AdapterParams& params, std::span<const std::size_t> images,
                             std::span<const std::size_t> captions, const EmbeddingTable& table) {
  const auto d = static_cast<Eigen::Index>(table.dim());
  RowMatrix u(static_cast<Eigen::Index>(images.size()), d);
  RowMatrix v(static_cast<Eigen::Index>(captions.size()), d);
  for (std::size_t i = 0; i < images.size(); ++i)
    u.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(table.row(images[i]).data(), d);
  for (std::size_t j = 0; j < captions.size(); ++j)
    v.row(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const Eigen::RowVectorXd>(table.row(captions[j]).data(), d);
  RowMatrix x = u * params.image_map.transpose();
  RowMatrix y = v * params.caption_map.transpose();
  const Eigen::VectorXd nx = x.rowwise().norm();
  const Eigen::VectorXd ny = y.rowwise().norm();
  if (!((nx.array() > 0.0).all() && (ny.array() > 0.0).all()))
    fail(ErrorKind::kValidation, "degenerate embedding: zero norm after mapping");
  x = nx.cwiseInverse().asDiagonal() * x;
  y = ny.cwiseInverse().asDiagonal() * y;
  RowMatrix s = params.temperature() * (x * y.transpose());
  s.array() += params.bias;
  return s;
}

/// One unit of supervision: a set of images, a set of captions, and the
/// positive pairing between them. Every other pair in the block is a negative.
struct TrainingBlock {
  std::vector<std::size_t> image_rows;
  std::vector<std::size_t> caption_rows;
  Matching positives;
};

inline TrainingBlock make_block(const Group& group, const Matching& matching,
                                const EmbeddingTable& table) {
  matching.validate(group.shape());
  TrainingBlock block;
  for (const auto& id : group.image_ids) block.image_rows.push_back(table.index_of(id));
  for (const auto& id : group.caption_ids) block.caption_rows.push_back(table.index_of(id));
  block.positives = matching;
  return block;
}

/// Concatenates blocks into one, so each positive sees every other caption in
/// the batch as a negative.
inline TrainingBlock merge_blocks(std::span<const TrainingBlock> blocks) {
  TrainingBlock merged;
  std::vector<std::size_t> assignment;
  for (const auto& b : blocks) {
    const std::size_t offset = merged.caption_rows.size();
    merged.image_rows.insert(merged.image_rows.end(), b.image_rows.begin(), b.image_rows.end());
    merged.caption_rows.insert(merged.caption_rows.end(), b.caption_rows.begin(),
                               b.caption_rows.end());
    for (std::size_t c : b.positives.assignment()) assignment.push_back(offset + c);
  }
  merged.positives = Matching(std::move(assignment));
  return merged;
}

enum class LossKind {
  kSigmoid,  // pairwise -log sigmoid(z * s), z = +1 on positives, -1 otherwise
  kSoftmax,  // symmetric cross-entropy over rows and matched columns
};

struct LossAndGradient {
  double loss = 0.0;
  AdapterParams gradient;
};

namespace detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline RowMatrix gather(std::span<const std::size_t> rows, const EmbeddingTable& table) {
  const auto d = static_cast<Eigen::Index>(table.dim());
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(table.row(rows[i]).data(), d);
  return out;
}

// Fills dL/ds for one block given its scores; returns the block's summed loss
// and the number of terms it contributes to the mean.
inline std::pair<double, double> block_loss(const RowMatrix& s, const Matching& positives,
                                            LossKind kind, RowMatrix& dscore) {
  const Eigen::Index m = s.rows(), k = s.cols();
  dscore.setZero(m, k);
  double total = 0.0;
  if (kind == LossKind::kSigmoid) {
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < k; ++j) {
        const double z = positives[static_cast<std::size_t>(i)] == static_cast<std::size_t>(j) ? 1.0 : -1.0;
        total += softplus(-z * s(i, j));
        dscore(i, j) = -z * sigmoid(-z * s(i, j));
      }
    return {total, static_cast<double>(m * k)};
  }
  // Image -> caption: softmax over each row.
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto target = static_cast<Eigen::Index>(positives[static_cast<std::size_t>(i)]);
    const double mx = s.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (s.row(i).array() - mx).exp();
    const double z = e.sum();
    total += -(s(i, target) - mx) + std::log(z);
    dscore.row(i) += e / z;
    dscore(i, target) -= 1.0;
  }
  // Caption -> image: softmax over each matched column.
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto c = static_cast<Eigen::Index>(positives[static_cast<std::size_t>(i)]);
    const double mx = s.col(c).maxCoeff();
    const Eigen::VectorXd e = (s.col(c).array() - mx).exp();
    const double z = e.sum();
    total += -(s(i, c) - mx) + std::log(z);
    dscore.col(c) += e / z;
    dscore(i, c) -= 1.0;
  }
  return {total, static_cast<double>(2 * m)};
}

}  // namespace detail

/// Mean pseudo-label loss over the blocks and its exact gradient with respect
/// to A, B, log_temperature and bias.
inline LossAndGradient pseudo_label_loss(const AdapterParams& params,
                                         std::span<const TrainingBlock> blocks,
                                         const EmbeddingTable& table,
                                         LossKind kind = LossKind::kSigmoid) {
  if (blocks.empty()) fail(ErrorKind::kValidation, "pseudo_label_loss requires a nonempty batch");

  // Stack every block's rows so the maps are applied with two products.
  std::vector<std::size_t> image_rows, caption_rows;
  for (const auto& b : blocks) {
    b.positives.validate({b.image_rows.size(), b.caption_rows.size()});
    image_rows.insert(image_rows.end(), b.image_rows.begin(), b.image_rows.end());
    caption_rows.insert(caption_rows.end(), b.caption_rows.begin(), b.caption_rows.end());
  }
  const RowMatrix u = detail::gather(image_rows, table);
  const RowMatrix v = detail::gather(caption_rows, table);
  const RowMatrix x = u * params.image_map.transpose();
  const RowMatrix y = v * params.caption_map.transpose();
  const Eigen::VectorXd nx = x.rowwise().norm();
  const Eigen::VectorXd ny = y.rowwise().norm();
  if (!((nx.array() > 0.0).all() && (ny.array() > 0.0).all()))
    fail(ErrorKind::kValidation, "degenerate embedding: zero norm after mapping");
  const RowMatrix xh = nx.cwiseInverse().asDiagonal() * x;
  const RowMatrix yh = ny.cwiseInverse().asDiagonal() * y;

  const double t = params.temperature();
  RowMatrix dxh = RowMatrix::Zero(xh.rows(), xh.cols());
  RowMatrix dyh = RowMatrix::Zero(yh.rows(), yh.cols());
  double loss_sum = 0.0, terms = 0.0, dlogt = 0.0, dbias = 0.0;

  struct Part {
    Eigen::Index row0, rows, col0, cols;
  };
  std::vector<Part> parts;
  std::vector<RowMatrix> dscores;
  Eigen::Index row0 = 0, col0 = 0;
  for (const auto& b : blocks) {
    const Part p{row0, static_cast<Eigen::Index>(b.image_rows.size()), col0,
                 static_cast<Eigen::Index>(b.caption_rows.size())};
    const RowMatrix cosine = xh.middleRows(p.row0, p.rows) * yh.middleRows(p.col0, p.cols).transpose();
    RowMatrix s = t * cosine;
    s.array() += params.bias;
    RowMatrix ds;
    const auto [sum, count] = detail::block_loss(s, b.positives, kind, ds);
    loss_sum += sum;
    terms += count;
    parts.push_back(p);
    dscores.push_back(std::move(ds));
    row0 += p.rows;
    col0 += p.cols;
  }
  const double inv = 1.0 / terms;
  for (std::size_t n = 0; n < parts.size(); ++n) {
    const Part& p = parts[n];
    const RowMatrix ds = dscores[n] * inv;
    const RowMatrix cosine = xh.middleRows(p.row0, p.rows) * yh.middleRows(p.col0, p.cols).transpose();
    dlogt += t * (ds.array() * cosine.array()).sum();
    dbias += ds.sum();
    dxh.middleRows(p.row0, p.rows) += t * ds * yh.middleRows(p.col0, p.cols);
    dyh.middleRows(p.col0, p.cols) += t * ds.transpose() * xh.middleRows(p.row0, p.rows);
  }

  // Back through the normalization: d(x/|x|) projects out the radial part.
  RowMatrix dx(dxh.rows(), dxh.cols()), dy(dyh.rows(), dyh.cols());
  for (Eigen::Index i = 0; i < dx.rows(); ++i)
    dx.row(i) = (dxh.row(i) - dxh.row(i).dot(xh.row(i)) * xh.row(i)) / nx(i);
  for (Eigen::Index j = 0; j < dy.rows(); ++j)
    dy.row(j) = (dyh.row(j) - dyh.row(j).dot(yh.row(j)) * yh.row(j)) / ny(j);

  LossAndGradient out;
  out.loss = loss_sum * inv;
  out.gradient.image_map = dx.transpose() * u;
  out.gradient.caption_map = dy.transpose() * v;
  out.gradient.log_temperature = dlogt;
  out.gradient.bias = dbias;
  return out;
}

struct TrainConfig {
  int epochs = 20;
  int batch_size = 50;  // groups (or pairs, for in-batch-negative training)
  double learning_rate = 1e-3;
  double restart_factor = 0.95;  // lr_t = learning_rate * restart_factor^(t-1)
  bool reset_optimizer = true;
  LossKind loss = LossKind::kSigmoid;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || !(learning_rate > 0.0) || !(restart_factor > 0.0) ||
        restart_factor > 1.0 || weight_decay < 0.0)
      fail(ErrorKind::kValidation, "invalid training configuration");
  }
};

/// AdamW state with moments shaped like the parameters.
struct OptimizerState {
  AdapterParams first_moment;
  AdapterParams second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  double learning_rate = 1e-3;  // base rate for the current restart
  double epsilon = 1e-8;

  static OptimizerState fresh(const AdapterParams& params, const TrainConfig& config,
                              double learning_rate) {
    OptimizerState s;
    s.first_moment = AdapterParams::zeros_like(params);
    s.second_moment = AdapterParams::zeros_like(params);
    s.beta1 = config.beta1;
    s.beta2 = config.beta2;
    s.weight_decay = config.weight_decay;
    s.learning_rate = learning_rate;
    s.epsilon = config.epsilon;
    return s;
  }
};

/// One AdamW update at rate lr. Weight decay is decoupled and touches only
/// the two maps.
inline void adamw_step(AdapterParams& params, OptimizerState& state, const AdapterParams& grad,
                       double lr) {
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * state.weight_decay;

  auto update_matrix = [&](Eigen::MatrixXd& p, Eigen::MatrixXd& m, Eigen::MatrixXd& v,
                           const Eigen::MatrixXd& g) {
    p *= decay;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  };
  auto update_scalar = [&](double& p, double& m, double& v, double g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    p -= lr * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
  };
  update_matrix(params.image_map, state.first_moment.image_map, state.second_moment.image_map,
                grad.image_map);
  update_matrix(params.caption_map, state.first_moment.caption_map,
                state.second_moment.caption_map, grad.caption_map);
  update_scalar(params.log_temperature, state.first_moment.log_temperature,
                state.second_moment.log_temperature, grad.log_temperature);
  update_scalar(params.bias, state.first_moment.bias, state.second_moment.bias, grad.bias);
}

/// Cosine decay from base to 0 over total_steps.
inline double cosine_lr(double base, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return base;
  return base * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

struct FinetuneResult {
  AdapterParams params;
  std::vector<double> losses;  // one per optimizer step
};

/// Shuffled mini-batch AdamW over the pseudo-labels for config.epochs epochs.
/// The rate decays from state.learning_rate to 0 along a cosine across all
/// steps of the call. With in_batch_negatives each batch is merged into a
/// single block. Throws kDivergence on a non-finite loss.
inline FinetuneResult finetune(AdapterParams params, OptimizerState& state,
                               std::span<const TrainingBlock> pseudo_labels,
                               const TrainConfig& config, const EmbeddingTable& table, Rng& rng,
                               bool in_batch_negatives = false) {
  config.validate();
  if (pseudo_labels.empty()) fail(ErrorKind::kValidation, "finetune requires pseudo-labels");

  const std::size_t n = pseudo_labels.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const auto total_steps = static_cast<std::int64_t>(batches_per_epoch) * config.epochs;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  FinetuneResult result;
  result.losses.reserve(static_cast<std::size_t>(total_steps));
  std::int64_t step = 0;
  std::vector<TrainingBlock> chunk;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch) {
      chunk.clear();
      for (std::size_t i = start; i < std::min(n, start + batch); ++i)
        chunk.push_back(pseudo_labels[order[i]]);
      if (in_batch_negatives) {
        TrainingBlock merged = merge_blocks(chunk);
        chunk.assign(1, std::move(merged));
      }
      const LossAndGradient lg = pseudo_label_loss(params, chunk, table, config.loss);
      if (!std::isfinite(lg.loss) || !lg.gradient.finite())
        fail(ErrorKind::kDivergence, "divergence: non-finite loss at step " + std::to_string(step));
      result.losses.push_back(lg.loss);
      adamw_step(params, state, lg.gradient, cosine_lr(state.learning_rate, step, total_steps));
      ++step;
    }
  }
  if (!params.finite()) fail(ErrorKind::kDivergence, "divergence: non-finite parameters");
  result.params = std::move(params);
  return result;
}

}  // namespace ttm
