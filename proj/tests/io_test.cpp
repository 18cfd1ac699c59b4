#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "ttm/io.hpp"
#include "ttm/synth.hpp"

namespace ttm {
namespace {

namespace fs = std::filesystem;

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ttm_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

GroupedDataset two_groups() {
  return {{2, 2},
          {{"a", {"a/i0", "a/i1"}, {"a/c0", "a/c1"}, Matching({0, 1})},
           {"b", {"b/i0", "b/i1"}, {"b/c0", "b/c1"}, Matching({1, 0})}}};
}

template <class F>
void expect_error(F&& f, ErrorKind kind, const std::string& fragment) {
  try {
    f();
    FAIL() << "expected an error containing '" << fragment << "'";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST_F(IoTest, ManifestRoundTrip) {
  const auto ds = two_groups();
  io::save_manifest(dir_ / "m.json", ds);
  const auto back = io::load_manifest(dir_ / "m.json");
  EXPECT_EQ(back.shape, ds.shape);
  ASSERT_EQ(back.groups.size(), 2u);
  EXPECT_EQ(back.groups[1].caption_ids, ds.groups[1].caption_ids);
  EXPECT_EQ(*back.groups[1].ground_truth, Matching({1, 0}));
}

TEST_F(IoTest, ManifestRejectsWideShape) {
  const nlohmann::json j = {{"shape", {{"m", 3}, {"k", 2}}}, {"groups", nlohmann::json::array()}};
  expect_error([&] { io::manifest_from_json(j); }, ErrorKind::kValidation, "invalid shape");
}

TEST_F(IoTest, ManifestMalformed) {
  std::ofstream(dir_ / "bad.json") << "{ not json";
  expect_error([&] { io::load_manifest(dir_ / "bad.json"); }, ErrorKind::kIo, "");
  expect_error([&] { io::load_manifest(dir_ / "missing.json"); }, ErrorKind::kIo, "");
  auto ds = two_groups();
  ds.groups[1].image_ids[0] = "b/i1";
  io::save_manifest(dir_ / "dup.json", ds);
  expect_error([&] { io::load_manifest(dir_ / "dup.json"); }, ErrorKind::kValidation, "duplicate");
}

TEST_F(IoTest, EmbeddingsRoundTripAsFloat32) {
  SynthConfig cfg;
  cfg.n_groups = 3;
  cfg.dim = 8;
  const auto data = generate(cfg);
  io::save_embeddings(dir_ / "emb.json", data.table);
  EXPECT_TRUE(fs::exists(dir_ / "emb.bin"));
  const auto back = io::load_embeddings(dir_ / "emb");
  EXPECT_EQ(back.ids(), data.table.ids());
  EXPECT_EQ(back.data(), data.table.data());  // synth output is already float32-exact
}

TEST_F(IoTest, EmbeddingsTruncatedBinary) {
  EmbeddingTable t(2);
  t.add("x", std::vector<double>{1.0, 0.0});
  t.add("y", std::vector<double>{0.0, 1.0});
  io::save_embeddings(dir_ / "emb.json", t);
  fs::resize_file(dir_ / "emb.bin", 12);
  expect_error([&] { io::load_embeddings(dir_ / "emb.json"); }, ErrorKind::kIo, "");
}

TEST_F(IoTest, ScoresRoundTrip) {
  const auto ds = two_groups();
  ScoreStore store;
  store.emplace("a", SimilarityMatrix{{0.9, 0.1}, {0.2, 0.8}});
  store.emplace("b", SimilarityMatrix{{0.1 + 0.2, -1e-300}, {1.0 / 3.0, 7.0}});
  io::save_scores(dir_ / "s.csv", ds, store);
  const auto back = io::load_scores(dir_ / "s.csv", ds);
  EXPECT_EQ(back.at("a"), store.at("a"));
  EXPECT_EQ(back.at("b"), store.at("b"));
}

const char* kEightRows =
    "group_id,row,col,score\n"
    "a,0,0,0.9\na,0,1,0.1\na,1,0,0.2\na,1,1,0.8\n"
    "b,0,0,0.6\nb,0,1,0.7\nb,1,0,0.1\nb,1,1,0.8\n";

TEST_F(IoTest, ScoresParse) {
  const auto store = io::parse_scores(kEightRows, two_groups());
  EXPECT_EQ(store.size(), 2u);
  EXPECT_EQ(store.at("b"), (SimilarityMatrix{{0.6, 0.7}, {0.1, 0.8}}));
}

TEST_F(IoTest, ScoresMissingPair) {
  std::string text = kEightRows;
  text.erase(text.rfind("b,1,1"));
  expect_error([&] { io::parse_scores(text, two_groups()); }, ErrorKind::kValidation,
               "missing pair for group 'b' (1,1)");
}

TEST_F(IoTest, ScoresDuplicatePairNamesLine) {
  const std::string text = std::string(kEightRows) + "a,0,1,0.3\n";
  expect_error([&] { io::parse_scores(text, two_groups()); }, ErrorKind::kValidation, "line 10");
}

TEST_F(IoTest, ScoresBadInput) {
  expect_error([&] { io::parse_scores("g,r,c,s\n", two_groups()); }, ErrorKind::kIo, "header");
  expect_error([&] { io::parse_scores("group_id,row,col,score\na,0,0,abc\n", two_groups()); },
               ErrorKind::kIo, "line 2");
  expect_error([&] { io::parse_scores("group_id,row,col,score\na,0,5,1\n", two_groups()); },
               ErrorKind::kValidation, "outside shape");
  expect_error([&] { io::parse_scores("group_id,row,col,score\nzz,0,0,1\n", two_groups()); },
               ErrorKind::kValidation, "unknown group");
}

TEST_F(IoTest, ReportRoundTripWithInfiniteThreshold) {
  RunReport r;
  r.config.schedule.kind = ScheduleKind::kConstant;
  r.config.schedule.start = std::numeric_limits<double>::infinity();
  r.config.schedule.end = std::numeric_limits<double>::infinity();
  r.config.calibrate_fraction = 0.2;
  r.config.train.loss = LossKind::kSoftmax;
  r.seed = 12;
  r.baseline = {20.5, 70.25, 80.0, std::nullopt};
  IterationStats it;
  it.iteration = 1;
  it.tau = std::numeric_limits<double>::infinity();
  it.mean_margin = 0.1 + 0.2;
  r.iterations.push_back(it);
  r.final_metrics = r.baseline;
  r.aborted = "diverged";
  r.wall_clock_seconds = 1.5;

  io::save_report(dir_ / "r.json", r);
  const auto back = io::load_report(dir_ / "r.json");
  EXPECT_EQ(back.config.schedule.start, r.config.schedule.start);
  EXPECT_EQ(back.config.schedule.kind, ScheduleKind::kConstant);
  EXPECT_EQ(back.config.calibrate_fraction, r.config.calibrate_fraction);
  EXPECT_EQ(back.config.train.loss, LossKind::kSoftmax);
  EXPECT_EQ(back.seed, 12u);
  EXPECT_EQ(back.baseline, r.baseline);
  EXPECT_EQ(back.iterations, r.iterations);
  EXPECT_EQ(back.final_metrics, r.final_metrics);
  EXPECT_EQ(back.aborted, r.aborted);
  EXPECT_FALSE(back.wall_clock_seconds);

  io::save_report(dir_ / "t.json", r, true);
  EXPECT_EQ(io::load_report(dir_ / "t.json").wall_clock_seconds, 1.5);
}

TEST_F(IoTest, EnumNames) {
  EXPECT_EQ(io::parse_schedule_kind(io::to_string(ScheduleKind::kCosineDecay)), ScheduleKind::kCosineDecay);
  EXPECT_EQ(io::parse_loss_kind("softmax"), LossKind::kSoftmax);
  EXPECT_THROW(io::parse_schedule_kind("sideways"), Error);
}

}  // namespace
}  // namespace ttm
