#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cngp/config.hpp"

using namespace cngp;
namespace fs = std::filesystem;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_run_config(is, "test.ini");
}

fs::path configs_dir() { return fs::path(CNGP_TEST_DATA).parent_path().parent_path() / "configs"; }

struct SeedEnvGuard {
  SeedEnvGuard() { ::unsetenv("CNGP_SEED"); }
  ~SeedEnvGuard() { ::unsetenv("CNGP_SEED"); }
};

}  // namespace

TEST(RunConfig, EmptyInputIsDeskProfile) {
  SeedEnvGuard g;
  const RunConfig rc = parse("");
  const RunConfig desk = desk_profile();
  EXPECT_EQ(rc.grid, desk.grid);
  EXPECT_EQ(rc.net, desk.net);
  EXPECT_EQ(rc.train.lr, 1e-2);
  EXPECT_EQ(rc.train.epochs, 10);
  EXPECT_EQ(rc.train.batch_rays, 4096);
  EXPECT_EQ(canonical(rc), canonical(desk));
}

TEST(RunConfig, ShippedDeskFileMatchesBuiltIn) {
  SeedEnvGuard g;
  const RunConfig rc = load_run_config(configs_dir() / "desk.ini");
  EXPECT_EQ(fingerprint(rc), fingerprint(desk_profile()));
}

TEST(RunConfig, ShippedPaperFileSelectsPaperProfile) {
  SeedEnvGuard g;
  const RunConfig rc = load_run_config(configs_dir() / "paper.ini");
  EXPECT_EQ(rc.profile, "paper");
  EXPECT_EQ(rc.grid.levels, 16);
  EXPECT_EQ(rc.grid.log2_table_size, 19);
  EXPECT_EQ(rc.net.width, 64);
  EXPECT_EQ(rc.net.feature_dim, 15);
  EXPECT_EQ(fingerprint(rc).rfind("paper-", 0), 0u);
}

TEST(RunConfig, OverridesApply) {
  SeedEnvGuard g;
  const RunConfig rc = parse(
      "[train]\nepochs = 3\nlr = 0.005\nseed = 9\n[loss]\nentropy_normalized = false\n"
      "[replay]\nmode = offline\nk = 4\n[model]\nmode = coord_label\n[render]\nnear = 0.2\n");
  EXPECT_EQ(rc.train.epochs, 3);
  EXPECT_EQ(rc.train.lr, 0.005);
  EXPECT_EQ(rc.train.seed, 9u);
  EXPECT_FALSE(rc.train.loss.entropy_normalized);
  EXPECT_EQ(rc.train.replay_mode, ReplayMode::Offline);
  EXPECT_EQ(rc.train.replay_k, 4);
  EXPECT_EQ(rc.mode, ConditioningMode::CoordLabel);
  EXPECT_EQ(rc.near, 0.2);
}

TEST(RunConfig, UnknownKeysAndSectionsRejected) {
  SeedEnvGuard g;
  EXPECT_THROW(parse("[train]\nepoch = 3\n"), ValidationError);
  EXPECT_THROW(parse("[optimizer]\nlr = 1\n"), ValidationError);
  EXPECT_THROW(parse("lr = 1\n"), ValidationError);
}

TEST(RunConfig, BadValuesRejected) {
  SeedEnvGuard g;
  EXPECT_THROW(parse("[train]\nepochs = ten\n"), ValidationError);
  EXPECT_THROW(parse("[train]\nlr = -1\n"), ValidationError);
  EXPECT_THROW(parse("[loss]\nentropy_normalized = maybe\n"), ValidationError);
  EXPECT_THROW(parse("[profile]\nname = huge\n"), ValidationError);
  EXPECT_THROW(parse("[grid]\nn_min = 512\n"), ValidationError);
  EXPECT_THROW(parse("[train\nepochs = 1\n"), FormatError);
}

TEST(RunConfig, SeedEnvironmentOverride) {
  SeedEnvGuard g;
  ::setenv("CNGP_SEED", "1234", 1);
  EXPECT_EQ(parse("[train]\nseed = 5\n").train.seed, 1234u);
  ::setenv("CNGP_SEED", "12x", 1);
  EXPECT_THROW(parse(""), ValidationError);
}

TEST(RunConfig, FingerprintTracksSettingsButNotThreads) {
  SeedEnvGuard g;
  const RunConfig a = parse("");
  const RunConfig b = parse("[train]\nthreads = 4\n");
  const RunConfig c = parse("[train]\nepochs = 11\n");
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  EXPECT_NE(fingerprint(a), fingerprint(c));
  EXPECT_EQ(fingerprint(a).size(), std::string("desk-").size() + 16);
}

TEST(RunConfig, MissingFileIsFormatError) {
  EXPECT_THROW(load_run_config("/nonexistent/cngp.ini"), FormatError);
}
