#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>

#include "ddr/dataset.hpp"
#include "ddr/toy_policy.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"

using namespace ddr;
using namespace ddr::testing;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

/// Runs the CLI through the shell, capturing stdout and stderr together.
Result ddr_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" + std::string(DDR_CLI_PATH) + "' " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("ingest writes a synthetic corpus and validates input") {
  TempDir dir;
  auto r = ddr_cli("ingest --synthetic 6 --docs 100 --synthetic-seed 2 --out " + q(dir / "d.jsonl"));
  REQUIRE(r.code == 0);
  const auto data = load_dataset(dir / "d.jsonl");
  CHECK(data.size() == 6);
  CHECK(data[0].docs.size() == 100);

  r = ddr_cli("ingest --input " + q(dir / "d.jsonl") + " --out " + q(dir / "copy.jsonl"));
  CHECK(r.code == 0);
  CHECK(read_file(dir / "copy.jsonl") == read_file(dir / "d.jsonl"));

  write_file(dir / "bad.jsonl", R"({"id":"x","query":"q","answers":[],"task":"qa-accuracy","docs":[]})" "\n");
  r = ddr_cli("ingest --input " + q(dir / "bad.jsonl") + " --out " + q(dir / "o.jsonl"));
  CHECK(r.code == 1);
  CHECK(r.out.find("ddr: line 1") != std::string::npos);
}

TEST_CASE("unknown flags and missing subcommands fail") {
  CHECK(ddr_cli("eval --bogus").code != 0);
  CHECK(ddr_cli("").code != 0);
  CHECK(ddr_cli("frobnicate").code != 0);
  const auto r = ddr_cli("eval --dataset /nonexistent/x.jsonl");
  CHECK(r.code == 1);
  CHECK(r.out.rfind("ddr: ", 0) == 0);
}

TEST_CASE("mining is reproducible for a fixed seed") {
  TempDir dir;
  REQUIRE(ddr_cli("ingest --synthetic 5 --docs 5 --out " + q(dir / "d.jsonl")).code == 0);
  const std::string base = "mine-gen --dataset " + q(dir / "d.jsonl") + " --seed 7 ";
  REQUIRE(ddr_cli(base + "--out " + q(dir / "a.jsonl") + " --candidates " + q(dir / "ca.jsonl")).code == 0);
  REQUIRE(ddr_cli(base + "--out " + q(dir / "b.jsonl") + " --candidates " + q(dir / "cb.jsonl")).code == 0);
  CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
  CHECK(read_file(dir / "ca.jsonl") == read_file(dir / "cb.jsonl"));
  CHECK(line_count(read_file(dir / "ca.jsonl")) == 5 * 50);

  REQUIRE(ddr_cli("mine-kr --dataset " + q(dir / "d.jsonl") + " --out " + q(dir / "t.jsonl")).code == 0);
  const auto r = ddr_cli("train --dataset " + q(dir / "d.jsonl") + " --module refiner --pairs " + q(dir / "t.jsonl") +
                         " --out " + q(dir / "kr.ckpt") + " --trace " + q(dir / "trace.jsonl"));
  CHECK(r.code == 0);
  CHECK_NOTHROW(load_checkpoint(dir / "kr.ckpt"));
}

TEST_CASE("training the generator writes a checkpoint and trace") {
  TempDir dir;
  REQUIRE(ddr_cli("ingest --synthetic 5 --docs 5 --out " + q(dir / "d.jsonl")).code == 0);
  REQUIRE(ddr_cli("mine-gen --dataset " + q(dir / "d.jsonl") + " --out " + q(dir / "p.jsonl")).code == 0);
  const auto pairs = line_count(read_file(dir / "p.jsonl"));
  const auto r = ddr_cli("train --dataset " + q(dir / "d.jsonl") + " --module generator --pairs " + q(dir / "p.jsonl") +
                         " --out " + q(dir / "g.ckpt") + " --trace " + q(dir / "trace.jsonl") +
                         " --lr 0.1 --batch-size 1 --epochs 2");
  REQUIRE(r.code == 0);
  CHECK(line_count(read_file(dir / "trace.jsonl")) == 2 * pairs);
  const auto ev = ddr_cli("eval --dataset " + q(dir / "d.jsonl") + " --generator-checkpoint " + q(dir / "g.ckpt"));
  CHECK(ev.code == 0);
  CHECK(nlohmann::json::parse(ev.out).contains("overall"));
  CHECK(ddr_cli("train --dataset " + q(dir / "d.jsonl") + " --module critic --pairs " + q(dir / "p.jsonl") +
                " --out " + q(dir / "x.ckpt"))
            .code != 0);
}

TEST_CASE("noise sweep writes one report per level") {
  TempDir dir;
  REQUIRE(ddr_cli("ingest --synthetic 4 --docs 100 --out " + q(dir / "d.jsonl")).code == 0);
  const auto r = ddr_cli("noise-sweep --dataset " + q(dir / "d.jsonl") + " --n 0..4 --out-dir " + q(dir / "noise"));
  REQUIRE(r.code == 0);
  CHECK(line_count(r.out) == 6);
  for (int n = 0; n <= 4; ++n) CHECK(std::filesystem::exists(dir / "noise" / ("noise-n" + std::to_string(n) + ".eval.json")));
  CHECK(ddr_cli("noise-sweep --dataset " + q(dir / "d.jsonl") + " --n 0..7").code == 1);
}

TEST_CASE("config comes from the environment and flags override it") {
  TempDir dir;
  REQUIRE(ddr_cli("ingest --synthetic 3 --docs 5 --out " + q(dir / "d.jsonl")).code == 0);
  write_file(dir / "cfg.json", R"({"dataset": "missing.jsonl", "rounds": 1})");
  CHECK(ddr_cli("eval", "DDR_CONFIG=" + q(dir / "cfg.json")).code == 1);
  const auto r = ddr_cli("eval --dataset " + q(dir / "d.jsonl"), "DDR_CONFIG=" + q(dir / "cfg.json"));
  CHECK(r.code == 0);
  const auto s = ddr_cli("scenario --dataset " + q(dir / "d.jsonl"));
  CHECK(s.code == 0);
  CHECK(nlohmann::json::parse(s.out).contains("internal_knowledge"));
  const auto ret = ddr_cli("retention --dataset " + q(dir / "d.jsonl"));
  CHECK(ret.code == 0);
  const auto dbg = ddr_cli("rollout-debug --dataset " + q(dir / "d.jsonl") + " --query-id " +
                           load_dataset(dir / "d.jsonl")[0].id);
  CHECK(dbg.code == 0);
  CHECK(dbg.out.find("single_doc_rewards") != std::string::npos);
}

TEST_CASE("run executes the schedule into the output directory") {
  TempDir dir;
  REQUIRE(ddr_cli("ingest --synthetic 4 --docs 5 --out " + q(dir / "d.jsonl")).code == 0);
  const auto r = ddr_cli("run --dataset " + q(dir / "d.jsonl") + " --output " + q(dir / "run") + " --rounds 1");
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "run" / "config.json"));
  CHECK(std::filesystem::exists(dir / "run" / "reports" / "r1-s4-train-kr.eval.json"));
  CHECK(ddr_cli("run --dataset " + q(dir / "d.jsonl") + " --output " + q(dir / "run")).code == 1);
}
