// Copyright 2026 The saecv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

const fs::path kCli = SAECV_CLI;
const fs::path kConfigs = fs::path(SAECV_SOURCE_DIR) / "configs";

int run(const std::string& args) {
  const std::string cmd = kCli.string() + " -q " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int lines(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("saecv_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateMinimal) {
  const auto minimal = (kConfigs / "minimal.toml").string();
  ASSERT_EQ(run("simulate -c " + minimal + " -o " + (dir_ / "a").string()), 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "a")) files += e.is_regular_file();
  EXPECT_EQ(files, 4);
  EXPECT_EQ(lines(dir_ / "a" / "truth.csv"), 3);
  ASSERT_EQ(run("simulate -c " + minimal + " -o " + (dir_ / "b").string()), 0);
  for (const char* f : {"frame.csv", "population.csv", "truth.csv", "population.json"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
}

TEST_F(Cli, SimulateTenAreas) {
  ASSERT_EQ(run("simulate -c " + (kConfigs / "acceptance.toml").string() + " -o " + dir_.string()), 0);
  EXPECT_EQ(lines(dir_ / "truth.csv"), 11);
}

TEST_F(Cli, SurveyFitCompareStudyReport) {
  const auto minimal = (kConfigs / "minimal.toml").string();
  const auto d = dir_.string();
  ASSERT_EQ(run("survey -c " + minimal + " -o " + d), 0);
  const auto survey = (dir_ / "survey.csv").string();
  ASSERT_EQ(run("fit -c " + minimal + " -i " + survey + " -m fh -o " + d), 0);
  EXPECT_EQ(lines(dir_ / "estimates_fh.csv"), 3);
  ASSERT_EQ(run("compare -c " + minimal + " -i " + survey + " -o " + d + " --scheme psu --k 2"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "verdict_bb_vs_fh.json"));
  EXPECT_TRUE(fs::exists(dir_ / "verdict_bb_vs_fh.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "scores_bb_vs_fh.csv"));
  ASSERT_EQ(run("study -c " + minimal + " -o " + (dir_ / "s").string()), 0);
  for (const char* f : {"replicates.csv", "areas.csv", "summary.json"}) EXPECT_TRUE(fs::exists(dir_ / "s" / f));
  ASSERT_EQ(run("report -i " + (dir_ / "s").string()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "s" / "report.md"));
}

TEST_F(Cli, StudyJobsAndSeedOverride) {
  const auto minimal = (kConfigs / "minimal.toml").string();
  ASSERT_EQ(run("study -c " + minimal + " -o " + (dir_ / "j1").string() + " --jobs 1"), 0);
  ASSERT_EQ(run("study -c " + minimal + " -o " + (dir_ / "j8").string() + " --jobs 8"), 0);
  ASSERT_EQ(run("study -c " + minimal + " -o " + (dir_ / "s9").string() + " --seed 9"), 0);
  EXPECT_EQ(slurp(dir_ / "j1" / "areas.csv"), slurp(dir_ / "j8" / "areas.csv"));
  EXPECT_NE(slurp(dir_ / "j1" / "areas.csv"), slurp(dir_ / "s9" / "areas.csv"));
}

TEST_F(Cli, ExitCodes) {
  std::ofstream(dir_ / "bad.toml") << "[scenario]\nreplicatez = 3\n";
  EXPECT_EQ(run("study -c " + (dir_ / "bad.toml").string() + " -o " + dir_.string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("fit -c " + (kConfigs / "minimal.toml").string() + " -i " + (dir_ / "none.csv").string()), 3);
  std::ofstream(dir_ / "bad.csv") << "stratum,psu,ssu,area,weight,y\ns,p,h,A,1,2\n";
  EXPECT_EQ(run("fit -c " + (kConfigs / "minimal.toml").string() + " -i " + (dir_ / "bad.csv").string()), 4);
}
