#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = SHEAFALIGN_CLI;
const std::string kConfig = std::string(SHEAFALIGN_CONFIG_DIR) + "/synthetic3.json";
const std::string kQuick = " --set train.epochs=3 --set data.generator.samples_per_class=60 --set data.train_per_class=40";

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + kCli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sheafalign_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("check passes on a fresh build") { CHECK(run("check") == 0); }

TEST_CASE("usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("eval -c " + kConfig + " -o /tmp/x.json") == 2);
  CHECK(run("train -c " + kConfig + " -o /tmp/x --set train.tau=0") == 2);
  CHECK(run("train -c " + kConfig + " -o /tmp/x --set train.nope=1") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("runtime errors exit with 1") {
  const fs::path dir = scratch("missing");
  CHECK(run("eval -c " + kConfig + " --checkpoint " + (dir / "none.bin").string() + " -o " +
            (dir / "r.json").string()) == 1);
}

TEST_CASE("gen writes a dataset and a config snapshot") {
  const fs::path dir = scratch("gen");
  fs::create_directories(dir);
  const fs::path out = dir / "data.shaf";
  REQUIRE(run("gen -c " + kConfig + " -o " + out.string() + kQuick) == 0);
  CHECK(slurp(out).substr(0, 5) == "SHAF1");
  CHECK(fs::exists(dir / "data.shaf.config.json"));
  const fs::path again = dir / "again.shaf";
  REQUIRE(run("gen -c " + kConfig + " -o " + again.string() + kQuick) == 0);
  CHECK(slurp(out) == slurp(again));
}

TEST_CASE("train is deterministic across runs and thread counts") {
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  REQUIRE(run("train -c " + kConfig + " --seed 7 -o " + a.string() + kQuick) == 0);
  REQUIRE(run("train -c " + kConfig + " --seed 7 -o " + b.string() + kQuick, "SHEAF_THREADS=2") == 0);
  CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(fs::exists(a / "config.resolved.json"));

  std::ifstream metrics(a / "metrics.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "total", "lap", "contrast", "recon", "bytes_cum"}) CHECK(j.contains(key));
    ++lines;
  }
  CHECK(lines == 3);
}

TEST_CASE("resume continues an interrupted run bit-exactly") {
  const fs::path straight = scratch("straight"), split = scratch("split");
  REQUIRE(run("train -c " + kConfig + " -o " + straight.string() + kQuick) == 0);
  REQUIRE(run("train -c " + kConfig + " -o " + split.string() + kQuick + " --set train.epochs=1") == 0);
  REQUIRE(run("train -c " + kConfig + " -o " + split.string() + kQuick + " --resume") == 0);
  CHECK(slurp(straight / "checkpoint.bin") == slurp(split / "checkpoint.bin"));
  CHECK(slurp(straight / "metrics.jsonl") == slurp(split / "metrics.jsonl"));
}

TEST_CASE("eval and infer write reports") {
  const fs::path dir = scratch("eval");
  REQUIRE(run("train -c " + kConfig + " -o " + dir.string() + kQuick) == 0);
  const std::string ckpt = " --checkpoint " + (dir / "checkpoint.bin").string();
  REQUIRE(run("eval -c " + kConfig + ckpt + " -o " + (dir / "eval.json").string() + kQuick) == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "eval.json"));
  CHECK(report["retrieval"]["pairs"].size() == 6);
  CHECK(report["retrieval"]["mean"].contains("r1"));
  CHECK(report["probe"]["0"].contains("1"));
  CHECK(report["zero_shot"]["targets"].size() == 2);
  CHECK(fs::exists(dir / "eval.json.config.json"));

  REQUIRE(run("infer -c " + kConfig + ckpt + " -o " + (dir / "infer.json").string() + kQuick) == 0);
  const auto inf = nlohmann::json::parse(slurp(dir / "infer.json"));
  REQUIRE(inf.size() == 2);
  CHECK(inf[1]["p_drop"] == 0.1);
  CHECK(inf[1].contains("bytes"));

  // A checkpoint from a different graph is refused.
  CHECK(run("eval -c " + kConfig + ckpt + " -o " + (dir / "bad.json").string() + kQuick +
            " --set graph.edges=[[0,1],[1,2]]") == 1);
}
