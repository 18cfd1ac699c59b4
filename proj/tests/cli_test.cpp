#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(TTM_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ttm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void synth(const std::string& extra = "") {
    const auto r = run("synth --groups 40 --dim 16 --sigma 1.2 --modality-mix 0.8 --seed 3 --out " +
                       path("data") + " " + extra);
    ASSERT_EQ(r.code, 0) << r.output;
  }
  fs::path dir_;
};

TEST_F(CliTest, HelpAndUnknownFlag) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("eval --bogus").code, 1);
  EXPECT_EQ(run("").code, 1);
}

TEST_F(CliTest, HandcraftedScoresEval) {
  std::ofstream(path("m.json"))
      << R"({"shape":{"m":2,"k":2},"groups":[)"
      << R"({"id":"a","image_ids":["a0","a1"],"caption_ids":["ac0","ac1"],"ground_truth":[0,1]},)"
      << R"({"id":"b","image_ids":["b0","b1"],"caption_ids":["bc0","bc1"],"ground_truth":[0,1]}]})";
  std::ofstream(path("s.csv")) << "group_id,row,col,score\n"
                                  "a,0,0,0.9\na,0,1,0.1\na,1,0,0.2\na,1,1,0.8\n"
                                  "b,0,0,0.6\nb,0,1,0.7\nb,1,0,0.1\nb,1,1,0.8\n";
  const auto r = run("eval " + path("m.json") + " --scores " + path("s.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("group_score       50.00"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("group_match       100.00"), std::string::npos) << r.output;
  const auto only = run("eval " + path("m.json") + " --scores " + path("s.csv") + " --metric group-match");
  EXPECT_EQ(only.output.find("group_score"), std::string::npos) << only.output;
}

TEST_F(CliTest, ErrorExitCodes) {
  synth();
  const std::string m = path("data/manifest.json"), e = path("data/embeddings.json");
  EXPECT_EQ(run("eval " + path("missing.json") + " --embeddings " + e).code, 3);
  EXPECT_EQ(run("eval " + m).code, 1);
  EXPECT_EQ(run("ttm " + m + " --scores " + path("x.csv")).code, 1);
  EXPECT_EQ(run("ttm " + m + " --embeddings " + e + " --schedule sideways").code, 1);
  std::ofstream(path("bad.csv")) << "group_id,row,col,score\ng00000,0,0,x\n";
  EXPECT_EQ(run("eval " + m + " --scores " + path("bad.csv")).code, 3);
  std::ofstream(path("wide.json")) << R"({"shape":{"m":3,"k":2},"groups":[]})";
  const auto wide = run("eval " + path("wide.json") + " --scores " + path("bad.csv"));
  EXPECT_EQ(wide.code, 1);
  EXPECT_NE(wide.output.find("invalid shape"), std::string::npos) << wide.output;
}

TEST_F(CliTest, SynthThenSimpleMatch) {
  synth();
  EXPECT_TRUE(fs::exists(path("data/embeddings.bin")));
  const auto r = run("simple-match " + path("data/manifest.json") + " --embeddings " +
                     path("data/embeddings.json") + " --overfit-check");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("SimpleMatch (GroupMatch)"), std::string::npos);
  EXPECT_NE(r.output.find("Overfit GroupScore"), std::string::npos);
}

TEST_F(CliTest, TtmReportsAreByteIdentical) {
  synth();
  const std::string base = "ttm " + path("data/manifest.json") + " --embeddings " +
                           path("data/embeddings.json") + " --iters 3 --epochs 2 --seed 5 --out ";
  ASSERT_EQ(run(base + path("r1.json")).code, 0);
  ASSERT_EQ(run(base + path("r2.json")).code, 0);
  const auto a = slurp(path("r1.json"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(path("r2.json")));
  EXPECT_EQ(a.find("wall_clock"), std::string::npos);
}

TEST_F(CliTest, OutDirRefusesOverwrite) {
  synth();
  const std::string cmd = "ttm-global " + path("data/manifest.json") + " --embeddings " +
                          path("data/embeddings.json") + " --iters 2 --epochs 1 --record-timing --out-dir " +
                          path("reports");
  ASSERT_EQ(run(cmd).code, 0);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(path("reports"))) {
    ++files;
    EXPECT_NE(slurp(entry.path()).find("wall_clock_seconds"), std::string::npos);
  }
  EXPECT_EQ(files, 1u);
}

TEST_F(CliTest, ValidateProps) {
  const auto r = run("validate-props --max-k 3 --trials 20000 --seed 2 --json " + path("p.json"));
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(path("p.json")));
  EXPECT_EQ(run("validate-props --max-k 9").code, 1);
}

}  // namespace
