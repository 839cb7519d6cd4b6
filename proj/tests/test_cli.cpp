#include <doctest.h>

#include <array>
#include <cstdio>
#include <map>
#include <sys/wait.h>

#include "json.hpp"
#include "test_util.hpp"
#include "xcb/collector.hpp"

using testutil::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run xcbench(const std::string& args) {
  const std::string cmd = std::string(XCBENCH_BIN) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string config(const std::string& name) { return (fs::path(XCB_CONFIG_DIR) / name).string(); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[e.path().lexically_relative(dir).string()] = testutil::read_file(e.path());
  return out;
}

std::size_t csv_count(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ".csv";
  return n;
}

// Small default-fleet dataset shared by the analysis subcommands.
const fs::path& small_farm() {
  static TempDir dir("cli-farm");
  static const bool made = [] {
    const auto r = xcbench("simulate --config " + config("default_farm.json") + " --samples-per-device 20 --out " +
                           q(dir.path()));
    return r.code == 0;
  }();
  REQUIRE(made);
  return dir.path();
}

}  // namespace

TEST_CASE("collect on a simulated device appends the requested rows") {
  TempDir out("cli-collect");
  const auto r = xcbench("collect --config " + config("sim-device.json") + " --samples 3 --out " + q(out.path()));
  CHECK_MESSAGE(r.code == 0, r.output);
  const auto csv = out / "dc:a6:32:00:00:01.csv";
  REQUIRE(fs::exists(csv));
  CHECK(testutil::count_lines(testutil::read_file(csv)) == 4);
  CHECK(testutil::read_file(out / "MAC-Model.txt") == "dc:a6:32:00:00:01,RPi4like\n");
  CHECK(fs::exists(out / "dc:a6:32:00:00:01.session.jsonl"));
}

TEST_CASE("collect with a missing config names the path") {
  const auto r = xcbench("collect --config /nonexistent/dir/sim.json");
  CHECK(r.code == 1);
  CHECK(r.output.find("/nonexistent/dir/sim.json") != std::string::npos);
}

TEST_CASE("collect on a degraded host refuses without --allow-degraded") {
  const auto report = xcb::preflight(xcb::SessionConfig{}, xcb::HostSystemView{});
  if (!report.degraded()) {
    MESSAGE("host is fully tuned; refusal path not exercised");
    return;
  }
  TempDir out("cli-host");
  const auto r = xcbench("collect --config " + config("host-device.json") +
                         " --samples 1 --out " + q(out.path()));
  CHECK(r.code == 1);
  CHECK(r.output.find("refused") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "MAC-Model.txt"));
}

TEST_CASE("simulate writes the default fleet") {
  const auto& dir = small_farm();
  CHECK(csv_count(dir) == 45);
  CHECK(testutil::count_lines(testutil::read_file(dir / "MAC-Model.txt")) == 45);
  CHECK(fs::exists(dir / "farm.json"));
}

TEST_CASE("simulate rejects zero samples per device") {
  TempDir out("cli-zero");
  const auto r = xcbench("simulate --samples-per-device 0 --out " + q(out.path()));
  CHECK(r.code == 1);
  CHECK(csv_count(out.path()) == 0);
}

TEST_CASE("simulate with the same seed gives identical trees") {
  TempDir a("cli-sim-a");
  TempDir b("cli-sim-b");
  TempDir c("cli-sim-c");
  const std::string args = "simulate --config " + config("default_farm.json") + " --samples-per-device 2 --seed 5 --out ";
  REQUIRE(xcbench(args + q(a.path())).code == 0);
  REQUIRE(xcbench(args + q(b.path())).code == 0);
  CHECK(tree(a.path()) == tree(b.path()));
  const std::string other = "simulate --config " + config("default_farm.json") + " --samples-per-device 2 --seed 6 --out ";
  REQUIRE(xcbench(other + q(c.path())).code == 0);
  CHECK(tree(a.path()) != tree(c.path()));
}

TEST_CASE("cluster reports purity 1 on the default fleet") {
  TempDir out("cli-cluster");
  const auto& data = small_farm();
  const auto before = tree(data);
  const auto r = xcbench("cluster --k 4 --data " + q(data) + " --out " + q(out.path()));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto j = nlohmann::json::parse(testutil::read_file(out / "cluster.json"));
  CHECK(j["purity"].get<double>() == 1.0);
  CHECK(testutil::count_lines(testutil::read_file(out / "projection.csv")) == 45 * 20 + 1);
  CHECK(tree(data) == before);
}

TEST_CASE("identify writes a JSON report and a confusion CSV") {
  TempDir out("cli-identify");
  const auto r = xcbench("identify --algo random_forest --seed 3 --data " + q(small_farm()) + " --out " + q(out.path()));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto j = nlohmann::json::parse(testutil::read_file(out / "identify_random_forest.json"));
  CHECK(j["classes"].size() == 45);
  CHECK(j["macro"]["f1"].get<double>() > 0.5);
  const auto confusion = testutil::read_file(out / "confusion_random_forest.csv");
  CHECK(testutil::count_lines(confusion) == 46);

  TempDir again("cli-identify-2");
  REQUIRE(xcbench("identify --algo random_forest --seed 3 --data " + q(small_farm()) + " --out " + q(again.path()))
              .code == 0);
  CHECK(tree(out.path()) == tree(again.path()));
  CHECK(xcbench("identify --algo svm --data " + q(small_farm())).code == 1);
}

TEST_CASE("density writes a per-device histogram CSV") {
  TempDir out("cli-density");
  const auto r = xcbench("density --feature cpu_sleep_120s --model RPi4like --data " + q(small_farm()) + " --out " +
                         q(out.path()));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto csv = testutil::read_file(out / "density_cpu_sleep_120s_RPi4like.csv");
  CHECK(csv.rfind("mac,bin,lower,upper,count\n", 0) == 0);
  CHECK(testutil::count_lines(csv) == 15 * 100 + 1);
}

TEST_CASE("correlate and inspect") {
  TempDir out("cli-correlate");
  const auto r = xcbench("correlate --model RPi3like --data " + q(small_farm()) + " --out " + q(out.path()));
  // 20 samples per device is below the 30-row minimum.
  CHECK(r.code == 1);

  const auto i = xcbench("inspect --data " + q(small_farm()));
  CHECK(i.code == 0);
  CHECK(i.output.find("devices 45") != std::string::npos);
  CHECK(xcbench("inspect --data /nonexistent").code == 1);
  CHECK(xcbench("bogus").code == 1);
}
