#pragma once

// On-disk formats:
//   manifest    JSON {shape: {m, k}, groups: [{id, image_ids, caption_ids, ground_truth?}]}
//   embeddings  JSON sidecar {magic: "TTME1", dim, count, ids} plus a raw file of
//               count * dim little-endian float32 values, same stem, ".bin"
//   scores      CSV "group_id,row,col,score", one line per (group, row, col)
//   run report  JSON, doubles at round-trip precision

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttm/core.hpp"
#include "ttm/error.hpp"
#include "ttm/test_time_matching.hpp"
#include "ttm/validate.hpp"

namespace ttm::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr std::string_view kEmbeddingMagic = "TTME1";
inline constexpr std::string_view kScoresHeader = "group_id,row,col,score";

namespace detail {

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

inline json parse_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kIo, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline std::string shortest(double x) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), end);
}

// JSON has no infinities; encode them as strings.
inline json number(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

inline double to_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  fail(ErrorKind::kIo, "expected a number, got '" + s + "'");
}

inline json optional_number(const std::optional<double>& x) {
  return x ? number(*x) : json(nullptr);
}

inline std::optional<double> to_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return to_number(j.at(key));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Manifest

inline json manifest_to_json(const GroupedDataset& dataset) {
  json groups = json::array();
  for (const auto& g : dataset.groups) {
    json jg = {{"id", g.id}, {"image_ids", g.image_ids}, {"caption_ids", g.caption_ids}};
    if (g.ground_truth) jg["ground_truth"] = g.ground_truth->assignment();
    groups.push_back(std::move(jg));
  }
  return {{"shape", {{"m", dataset.shape.rows}, {"k", dataset.shape.cols}}}, {"groups", groups}};
}

inline GroupedDataset manifest_from_json(const json& j) {
  GroupedDataset dataset;
  try {
    const auto& shape = j.at("shape");
    const auto m = shape.at("m").get<long long>();
    const auto k = shape.at("k").get<long long>();
    if (m < 1 || k < 1 || m > k)
      fail(ErrorKind::kValidation,
           "invalid shape " + std::to_string(m) + "x" + std::to_string(k) + " in manifest");
    dataset.shape = {static_cast<std::size_t>(m), static_cast<std::size_t>(k)};
    for (const auto& jg : j.at("groups")) {
      Group g;
      g.id = jg.at("id").get<std::string>();
      g.image_ids = jg.at("image_ids").get<std::vector<std::string>>();
      g.caption_ids = jg.at("caption_ids").get<std::vector<std::string>>();
      if (jg.contains("ground_truth") && !jg.at("ground_truth").is_null()) {
        std::vector<long long> raw = jg.at("ground_truth").get<std::vector<long long>>();
        std::vector<std::size_t> a;
        for (long long c : raw) {
          if (c < 0)
            fail(ErrorKind::kValidation, "negative ground-truth index in group '" + g.id + "'");
          a.push_back(static_cast<std::size_t>(c));
        }
        g.ground_truth = Matching(std::move(a));
      }
      dataset.groups.push_back(std::move(g));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("malformed manifest: ") + e.what());
  }
  require_valid(validate_dataset(dataset));
  return dataset;
}

inline GroupedDataset load_manifest(const fs::path& path) {
  return manifest_from_json(detail::parse_json(path));
}

inline void save_manifest(const fs::path& path, const GroupedDataset& dataset) {
  detail::write_text(path, manifest_to_json(dataset).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingPaths {
  fs::path sidecar;
  fs::path data;
};

/// Accepts the sidecar, the binary, or the bare stem.
inline EmbeddingPaths embedding_paths(const fs::path& path) {
  fs::path stem = path;
  if (path.extension() == ".json" || path.extension() == ".bin") stem.replace_extension();
  fs::path sidecar = stem, data = stem;
  sidecar += ".json";
  data += ".bin";
  return {sidecar, data};
}

/// Values are narrowed to float32.
inline void save_embeddings(const fs::path& path, const EmbeddingTable& table) {
  const auto paths = embedding_paths(path);
  const json sidecar = {{"magic", kEmbeddingMagic},
                        {"dim", table.dim()},
                        {"count", table.size()},
                        {"ids", table.ids()}};
  detail::write_text(paths.sidecar, sidecar.dump(2) + "\n");
  std::string bytes;
  bytes.reserve(table.data().size() * 4);
  for (double x : table.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
  detail::write_text(paths.data, bytes);
}

inline EmbeddingTable load_embeddings(const fs::path& path) {
  const auto paths = embedding_paths(path);
  const json sidecar = detail::parse_json(paths.sidecar);
  std::size_t dim = 0, count = 0;
  std::vector<std::string> ids;
  try {
    if (sidecar.at("magic").get<std::string>() != kEmbeddingMagic)
      fail(ErrorKind::kIo, "bad magic in '" + paths.sidecar.string() + "'");
    dim = sidecar.at("dim").get<std::size_t>();
    count = sidecar.at("count").get<std::size_t>();
    ids = sidecar.at("ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("malformed embedding sidecar: ") + e.what());
  }
  if (dim == 0) fail(ErrorKind::kIo, "embedding dim must be positive");
  if (ids.size() != count) fail(ErrorKind::kIo, "embedding sidecar count does not match ids");
  const std::string bytes = detail::read_text(paths.data);
  if (bytes.size() != count * dim * 4)
    fail(ErrorKind::kIo, "embedding data has " + std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(count * dim * 4));
  EmbeddingTable table(dim);
  std::vector<double> row(dim);
  std::size_t offset = 0;
  for (const auto& id : ids) {
    for (std::size_t c = 0; c < dim; ++c) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset++])) << (8 * b);
      row[c] = static_cast<double>(std::bit_cast<float>(bits));
    }
    table.add(id, row);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Similarity scores

inline void save_scores(const fs::path& path, const GroupedDataset& dataset, const ScoreStore& store) {
  std::string out(kScoresHeader);
  out += '\n';
  for (const auto& g : dataset.groups) {
    const auto& s = store.at(g.id);
    for (std::size_t i = 0; i < s.rows(); ++i)
      for (std::size_t j = 0; j < s.cols(); ++j)
        out += g.id + ',' + std::to_string(i) + ',' + std::to_string(j) + ',' +
               detail::shortest(s(i, j)) + '\n';
  }
  detail::write_text(path, out);
}

/// Parses a score CSV; every (row, col) of every group must appear exactly once.
inline ScoreStore parse_scores(std::string_view text, const GroupedDataset& dataset) {
  std::unordered_map<std::string, std::size_t> group_index;
  for (std::size_t n = 0; n < dataset.groups.size(); ++n) group_index.emplace(dataset.groups[n].id, n);
  const std::size_t m = dataset.shape.rows, k = dataset.shape.cols;
  std::vector<std::vector<double>> values(dataset.groups.size(), std::vector<double>(m * k));
  std::vector<std::vector<std::size_t>> seen_line(dataset.groups.size(), std::vector<std::size_t>(m * k, 0));

  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kScoresHeader)
        fail(ErrorKind::kIo, "line 1: expected header '" + std::string(kScoresHeader) + "'");
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    std::array<std::string_view, 4> fields;
    std::size_t start = 0;
    for (std::size_t f = 0; f < 4; ++f) {
      const std::size_t comma = f < 3 ? line.find(',', start) : std::string_view::npos;
      if (f < 3 && comma == std::string_view::npos)
        fail(ErrorKind::kIo, where + "unparseable row (expected 4 fields)");
      fields[f] = line.substr(start, f < 3 ? comma - start : std::string_view::npos);
      start = comma + 1;
    }
    if (fields[3].find(',') != std::string_view::npos)
      fail(ErrorKind::kIo, where + "unparseable row (expected 4 fields)");
    auto it = group_index.find(std::string(fields[0]));
    if (it == group_index.end())
      fail(ErrorKind::kValidation, where + "unknown group id '" + std::string(fields[0]) + "'");
    std::size_t row = 0, col = 0;
    double score = 0.0;
    auto parse_index = [&](std::string_view f, std::size_t& out) {
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), out);
      if (ec != std::errc() || p != f.data() + f.size())
        fail(ErrorKind::kIo, where + "unparseable index '" + std::string(f) + "'");
    };
    parse_index(fields[1], row);
    parse_index(fields[2], col);
    {
      auto [p, ec] = std::from_chars(fields[3].data(), fields[3].data() + fields[3].size(), score);
      if (ec != std::errc() || p != fields[3].data() + fields[3].size())
        fail(ErrorKind::kIo, where + "unparseable score '" + std::string(fields[3]) + "'");
    }
    if (!std::isfinite(score)) fail(ErrorKind::kValidation, where + "non-finite score");
    if (row >= m || col >= k)
      fail(ErrorKind::kValidation, where + "index (" + std::to_string(row) + "," +
                                       std::to_string(col) + ") outside shape " +
                                       to_string(dataset.shape));
    auto& seen = seen_line[it->second][row * k + col];
    if (seen != 0)
      fail(ErrorKind::kValidation, where + "duplicate pair for group '" + it->first + "' (" +
                                       std::to_string(row) + "," + std::to_string(col) +
                                       "), first on line " + std::to_string(seen));
    seen = line_no;
    values[it->second][row * k + col] = score;
  }
  if (!header_seen) fail(ErrorKind::kIo, "line 1: expected header '" + std::string(kScoresHeader) + "'");

  ScoreStore store;
  for (std::size_t n = 0; n < dataset.groups.size(); ++n) {
    for (std::size_t e = 0; e < m * k; ++e)
      if (seen_line[n][e] == 0)
        fail(ErrorKind::kValidation, "missing pair for group '" + dataset.groups[n].id + "' (" +
                                         std::to_string(e / k) + "," + std::to_string(e % k) + ")");
    store.emplace(dataset.groups[n].id, SimilarityMatrix(dataset.shape, std::move(values[n])));
  }
  return store;
}

inline ScoreStore load_scores(const fs::path& path, const GroupedDataset& dataset) {
  return parse_scores(detail::read_text(path), dataset);
}

// ---------------------------------------------------------------------------
// Run report

inline std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kConstant:
      return "constant";
    case ScheduleKind::kLinearDecay:
      return "linear-decay";
    case ScheduleKind::kCosineDecay:
      return "cosine-decay";
    case ScheduleKind::kLinearAscend:
      return "linear-ascend";
  }
  return "?";
}

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "constant") return ScheduleKind::kConstant;
  if (s == "linear-decay" || s == "linear" || s == "decay") return ScheduleKind::kLinearDecay;
  if (s == "cosine-decay" || s == "cosine") return ScheduleKind::kCosineDecay;
  if (s == "linear-ascend" || s == "ascend") return ScheduleKind::kLinearAscend;
  fail(ErrorKind::kValidation, "unknown schedule kind '" + s + "'");
}

inline std::string to_string(ThresholdMode mode) {
  return mode == ThresholdMode::kPercentile ? "percentile" : "absolute-margin";
}

inline ThresholdMode parse_threshold_mode(const std::string& s) {
  if (s == "percentile") return ThresholdMode::kPercentile;
  if (s == "absolute-margin") return ThresholdMode::kAbsoluteMargin;
  fail(ErrorKind::kValidation, "unknown threshold mode '" + s + "'");
}

inline std::string to_string(LossKind kind) { return kind == LossKind::kSoftmax ? "softmax" : "sigmoid"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "sigmoid") return LossKind::kSigmoid;
  if (s == "softmax") return LossKind::kSoftmax;
  fail(ErrorKind::kValidation, "unknown loss '" + s + "'");
}

inline json config_to_json(const TtmConfig& c) {
  using detail::number;
  return {
      {"schedule",
       {{"kind", to_string(c.schedule.kind)},
        {"tau_start", number(c.schedule.start)},
        {"tau_end", number(c.schedule.end)},
        {"iterations", c.schedule.iterations},
        {"mode", to_string(c.schedule.mode)}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", number(c.train.learning_rate)},
        {"restart_factor", number(c.train.restart_factor)},
        {"reset_optimizer", c.train.reset_optimizer},
        {"loss", to_string(c.train.loss)},
        {"weight_decay", number(c.train.weight_decay)},
        {"beta1", number(c.train.beta1)},
        {"beta2", number(c.train.beta2)},
        {"epsilon", number(c.train.epsilon)}}},
      {"oracle_mode", c.oracle_mode},
      {"global_mode", c.global_mode},
      {"seed", c.seed},
      {"calibrate_fraction", detail::optional_number(c.calibrate_fraction)},
      {"init_temperature", number(c.init_temperature)},
      {"init_bias", number(c.init_bias)},
  };
}

inline TtmConfig config_from_json(const json& j) {
  using detail::to_number;
  TtmConfig c;
  const auto& s = j.at("schedule");
  c.schedule.kind = parse_schedule_kind(s.at("kind").get<std::string>());
  c.schedule.start = to_number(s.at("tau_start"));
  c.schedule.end = to_number(s.at("tau_end"));
  c.schedule.iterations = s.at("iterations").get<int>();
  c.schedule.mode = parse_threshold_mode(s.at("mode").get<std::string>());
  const auto& t = j.at("train");
  c.train.epochs = t.at("epochs").get<int>();
  c.train.batch_size = t.at("batch_size").get<int>();
  c.train.learning_rate = to_number(t.at("learning_rate"));
  c.train.restart_factor = to_number(t.at("restart_factor"));
  c.train.reset_optimizer = t.at("reset_optimizer").get<bool>();
  c.train.loss = parse_loss_kind(t.at("loss").get<std::string>());
  c.train.weight_decay = to_number(t.at("weight_decay"));
  c.train.beta1 = to_number(t.at("beta1"));
  c.train.beta2 = to_number(t.at("beta2"));
  c.train.epsilon = to_number(t.at("epsilon"));
  c.oracle_mode = j.at("oracle_mode").get<bool>();
  c.global_mode = j.at("global_mode").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.calibrate_fraction = detail::to_optional(j, "calibrate_fraction");
  c.init_temperature = to_number(j.at("init_temperature"));
  c.init_bias = to_number(j.at("init_bias"));
  return c;
}

inline json summary_to_json(const RunSummary& s) {
  using detail::optional_number;
  return {{"group_score", optional_number(s.group_score)},
          {"group_match", optional_number(s.group_match)},
          {"individual_match", optional_number(s.individual_match)},
          {"assignment_accuracy", optional_number(s.assignment_accuracy)}};
}

inline RunSummary summary_from_json(const json& j) {
  using detail::to_optional;
  return {to_optional(j, "group_score"), to_optional(j, "group_match"),
          to_optional(j, "individual_match"), to_optional(j, "assignment_accuracy")};
}

inline json report_to_json(const RunReport& r, bool include_timing = false) {
  using detail::number;
  using detail::optional_number;
  json iterations = json::array();
  for (const auto& it : r.iterations)
    iterations.push_back({{"iteration", it.iteration},
                          {"tau", number(it.tau)},
                          {"selected", it.selected},
                          {"selection_fraction", number(it.selection_fraction)},
                          {"precision", optional_number(it.precision)},
                          {"group_score", optional_number(it.group_score)},
                          {"group_match", optional_number(it.group_match)},
                          {"individual_match", optional_number(it.individual_match)},
                          {"assignment_accuracy", optional_number(it.assignment_accuracy)},
                          {"mean_margin", optional_number(it.mean_margin)},
                          {"final_loss", optional_number(it.final_loss)}});
  json out = {{"config", config_to_json(r.config)},
              {"seed", r.seed},
              {"baseline", summary_to_json(r.baseline)},
              {"iterations", iterations},
              {"final", summary_to_json(r.final_metrics)},
              {"aborted", r.aborted ? json(*r.aborted) : json(nullptr)}};
  if (include_timing && r.wall_clock_seconds) out["wall_clock_seconds"] = number(*r.wall_clock_seconds);
  return out;
}

inline RunReport report_from_json(const json& j) {
  using detail::to_number;
  using detail::to_optional;
  RunReport r;
  try {
    r.config = config_from_json(j.at("config"));
    r.seed = j.at("seed").get<std::uint64_t>();
    r.baseline = summary_from_json(j.at("baseline"));
    for (const auto& ji : j.at("iterations")) {
      IterationStats it;
      it.iteration = ji.at("iteration").get<int>();
      it.tau = to_number(ji.at("tau"));
      it.selected = ji.at("selected").get<std::size_t>();
      it.selection_fraction = to_number(ji.at("selection_fraction"));
      it.precision = to_optional(ji, "precision");
      it.group_score = to_optional(ji, "group_score");
      it.group_match = to_optional(ji, "group_match");
      it.individual_match = to_optional(ji, "individual_match");
      it.assignment_accuracy = to_optional(ji, "assignment_accuracy");
      it.mean_margin = to_optional(ji, "mean_margin");
      it.final_loss = to_optional(ji, "final_loss");
      r.iterations.push_back(it);
    }
    r.final_metrics = summary_from_json(j.at("final"));
    if (!j.at("aborted").is_null()) r.aborted = j.at("aborted").get<std::string>();
    r.wall_clock_seconds = to_optional(j, "wall_clock_seconds");
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("malformed run report: ") + e.what());
  }
  return r;
}

inline void save_report(const fs::path& path, const RunReport& r, bool include_timing = false) {
  detail::write_text(path, report_to_json(r, include_timing).dump(2) + "\n");
}

inline RunReport load_report(const fs::path& path) { return report_from_json(detail::parse_json(path)); }

inline json propositions_to_json(const PropositionTable& table) {
  using detail::number;
  json rows = json::array();
  for (const auto& r : table.rows) {
    std::ostringstream exact;
    exact << r.expected.exact;
    rows.push_back({{"m", r.shape.rows},
                    {"k", r.shape.cols},
                    {"metric", ttm::to_string(r.metric)},
                    {"estimate", number(r.estimate.estimate)},
                    {"stderr", number(r.estimate.standard_error)},
                    {"expected", exact.str()},
                    {"expected_value", number(r.expected.value)},
                    {"deviation", number(r.deviation)},
                    {"pass", r.pass}});
  }
  json ordering = json::array();
  for (const auto& [shape, ok] : table.ordering)
    ordering.push_back({{"m", shape.rows}, {"k", shape.cols}, {"match_ge_score", ok}});
  return {{"rows", rows}, {"ordering", ordering}, {"all_pass", table.all_pass()}};
}

}  // namespace ttm::io
