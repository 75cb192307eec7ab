#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
  auto p = fs::temp_directory_path() / ("voxbayes_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args)
{
  std::string cmd = std::string(VOXBAYES_CLI) + " " + args + " >/dev/null 2>&1";
  int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// small and fast pipeline settings
const char* kQuick = "--set saem.burn_in=20 --set saem.iterations=40 --set chain.burn_in=20 --set chain.iterations=100 "
                     "--set anneal.steps=5 --set omega=2";

}  // namespace

TEST(Cli, UsageErrors)
{
  auto d = scratch("usage");
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("--out " + d.string() + " bogus"), 2);
  EXPECT_EQ(run("--out " + d.string() + " --nope 1 simulate"), 2);
  EXPECT_EQ(run("--out " + d.string() + " --set no.such=1 simulate"), 2);
  EXPECT_EQ(run("--out " + d.string() + " --mode exact-SU simulate"), 2);
  EXPECT_TRUE(fs::exists(d / "error.json"));
  auto e = nlohmann::json::parse(slurp(d / "error.json"));
  EXPECT_EQ(e["error"]["code"], "mode-mismatch");
  EXPECT_EQ(e["error"]["exit_code"], 2);
}

TEST(Cli, MissingInputIsDataError)
{
  auto d = scratch("missing");
  EXPECT_EQ(run("--out " + d.string() + " fit --data " + (d / "nope.json").string()), 3);
  EXPECT_EQ(run("--out " + d.string() + " randthresh --input " + (d / "nope.vol").string()), 3);
}

TEST(Cli, SimulateSelectReproducible)
{
  auto sim = scratch("sim");
  ASSERT_EQ(run("--seed 4 --out " + sim.string() + " --set phantom.dims=10x10 --set phantom.n=5 --set phantom.diameter=5 simulate"), 0);
  ASSERT_TRUE(fs::exists(sim / "manifest.json"));
  ASSERT_TRUE(fs::exists(sim / "provenance.json"));
  auto before = slurp(sim / "subject0_effects.vol");

  std::string csv[2];
  for (int t = 0; t < 2; ++t) {
    auto out = scratch("select" + std::to_string(t));
    ASSERT_EQ(run("--seed 7 --mode no-SU --out " + out.string() + " " + kQuick + " select --data " + (sim / "manifest.json").string()), 0);
    csv[t] = slurp(out / "regions.csv");
    EXPECT_TRUE(fs::exists(out / "posterior.pgm"));
    EXPECT_TRUE(fs::exists(out / "mu_mean.vol"));
    auto prov = nlohmann::json::parse(slurp(out / "provenance.json"));
    EXPECT_EQ(prov["seed"], 7);
    EXPECT_EQ(prov["command"], "select");
    EXPECT_EQ(prov["settings"]["omega"], "2");
  }
  EXPECT_FALSE(csv[0].empty());
  EXPECT_EQ(csv[0], csv[1]);
  // inputs untouched
  EXPECT_EQ(slurp(sim / "subject0_effects.vol"), before);

  auto ev = scratch("evidence");
  EXPECT_EQ(run("--mode posterior-mode-SU --out " + ev.string() + " evidence --data " + (sim / "manifest.json").string()), 2);
}

TEST(Cli, RandthreshOnSparseMeans)
{
  auto sim = scratch("sparse");
  ASSERT_EQ(run("--out " + sim.string() + " --set phantom.kind=sparse --set sparse.size=2000 --set sparse.active=200 "
                "--set sparse.a=4 --set sparse.b=8 simulate"), 0);
  auto out = scratch("rt");
  ASSERT_EQ(run("--out " + out.string() + " --set threshold.window=varying randthresh --input " + (sim / "statistic.vol").string()), 0);
  auto j = nlohmann::json::parse(slurp(out / "threshold.json"));
  EXPECT_GT(j["k_hat"].get<int>(), 100);
  EXPECT_TRUE(fs::exists(out / "mask.vol"));
  EXPECT_TRUE(fs::exists(out / "eta_profile.csv"));
  auto g = scratch("ggm");
  EXPECT_EQ(run("--out " + g.string() + " --set threshold.method=ggm randthresh --input " + (sim / "statistic.vol").string()), 0);
}

TEST(Cli, BaselineAndReport)
{
  auto sim = scratch("bsim");
  ASSERT_EQ(run("--out " + sim.string() + " --set phantom.dims=12x12 --set phantom.n=8 simulate"), 0);
  auto out = scratch("baseline");
  ASSERT_EQ(run("--out " + out.string() + " --set baseline.reps=50 baseline --data " + (sim / "manifest.json").string()), 0);
  EXPECT_TRUE(fs::exists(out / "baseline.csv"));
  EXPECT_TRUE(fs::exists(out / "tmap.pgm"));
  auto rep = scratch("report");
  ASSERT_EQ(run("--out " + rep.string() + " report --input " + out.string()), 0);
  auto j = nlohmann::json::parse(slurp(rep / "report.json"));
  EXPECT_TRUE(j["tables"].contains("baseline.csv"));
  EXPECT_TRUE(j.contains("provenance"));
}

TEST(Cli, FitSampleSaAndCompare)
{
  auto sim = scratch("fsim");
  ASSERT_EQ(run("--out " + sim.string() + " --set phantom.dims=10x10 --set phantom.n=4 simulate"), 0);
  auto m = (sim / "manifest.json").string();
  auto a = scratch("fit"), b = scratch("sample"), c = scratch("sa"), d = scratch("cmp");
  EXPECT_EQ(run("--out " + a.string() + " " + kQuick + " fit --data " + m), 0);
  EXPECT_TRUE(fs::exists(a / "params.csv"));
  EXPECT_EQ(run("--out " + b.string() + " " + kQuick + " sample --data " + m), 0);
  EXPECT_TRUE(fs::exists(b / "trace.csv"));
  EXPECT_EQ(run("--out " + c.string() + " " + kQuick + " sa --data " + m), 0);
  EXPECT_TRUE(fs::exists(c / "weights.vol"));
  EXPECT_EQ(run("--out " + c.string() + " --mode no-SU sa --data " + m), 2);
  auto p = (sim / "parcellation.vol").string();
  EXPECT_EQ(run("--mode no-SU --out " + d.string() + " " + kQuick + " compare-parcellations --data " + m +
                " --parcellation " + p + " --parcellation " + p), 0);
  EXPECT_TRUE(fs::exists(d / "parcellations.csv"));
}
