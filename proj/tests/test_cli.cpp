#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>

#include "distill/cli.hpp"

using namespace distill;

namespace {

namespace fs = std::filesystem;

const fs::path kDir = fs::temp_directory_path() / "distill_cli_test";

struct Run {
  int code = -1;
  std::string output;
};

// Runs the installed binary with stdout and stderr merged.
Run cli(const std::string& args) {
  fs::create_directories(kDir);
  const std::string cmd = "cd '" + kDir.string() + "' && '" + DISTILL_CLI_PATH + "' " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), p)) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& name) { return read_file(kDir / name); }

std::size_t lines(const std::string& name) {
  const auto s = slurp(name);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(Cli, DistillIsByteIdenticalAcrossRunsAndWorkers) {
  for (const char* out : {"r1.jsonl", "r2.jsonl", "r3.jsonl"}) {
    auto r = cli(std::string("--backend toy --contexts 50 --seed 7 --out ") + out + " distill");
    ASSERT_EQ(r.code, 0) << r.output;
  }
  auto r = cli("--backend toy --contexts 50 --seed 7 --workers 4 --out r4.jsonl distill");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto d0 = slurp("r1.jsonl");
  const auto report = slurp("r1.jsonl.report.json");
  EXPECT_FALSE(d0.empty());
  for (const char* out : {"r2.jsonl", "r3.jsonl", "r4.jsonl"}) {
    EXPECT_EQ(slurp(out), d0) << out;
    EXPECT_EQ(slurp(std::string(out) + ".report.json"), report) << out;
    EXPECT_EQ(slurp(std::string(out) + ".histogram.csv"), slurp("r1.jsonl.histogram.csv")) << out;
  }
}

TEST(Cli, ValidateAcceptsOutputAndRejectsTamperedRecord) {
  ASSERT_EQ(cli("--contexts 6 --seed 3 --out v.jsonl distill").code, 0);
  auto ok = cli("validate v.jsonl");
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_EQ(cli("validate v.jsonl --rescore").code, 0);

  auto records = read_dataset(kDir / "v.jsonl");
  std::size_t target = records.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (task_mode(*records[i].group) == TaskMode::summarization) {
      target = i;
      break;
    }
  }
  ASSERT_LT(target, records.size());
  records[target].comp = 0.9;
  write_dataset(kDir / "tampered.jsonl", records);
  auto bad = cli("validate tampered.jsonl");
  EXPECT_EQ(bad.code, 3) << bad.output;
  EXPECT_NE(bad.output.find(records[target].pair_id), std::string::npos) << bad.output;
  EXPECT_NE(bad.output.find(":" + std::to_string(target + 1) + ":"), std::string::npos) << bad.output;
}

TEST(Cli, ValidateCatchesForgedEntailment) {
  ASSERT_EQ(cli("--contexts 4 --seed 5 --out e.jsonl distill").code, 0);
  auto records = read_dataset(kDir / "e.jsonl");
  ASSERT_FALSE(records.empty());
  records[0].scores.entail_xy = 0.5;
  write_dataset(kDir / "e_bad.jsonl", records);
  EXPECT_EQ(cli("validate e_bad.jsonl").code, 3);
  records[0].scores.entail_xy = 0.95;
  write_dataset(kDir / "e_forged.jsonl", records);
  EXPECT_EQ(cli("validate e_forged.jsonl --rescore").code, 3);
}

TEST(Cli, UnknownSubcommandPrintsUsage) {
  auto r = cli("frobnicate");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("Subcommands:"), std::string::npos) << r.output;
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, InputErrorsExitOne) {
  EXPECT_EQ(cli("validate missing.jsonl").code, 1);
  EXPECT_EQ(cli("--backend nope distill").code, 1);
  EXPECT_EQ(cli("--config missing.cfg distill").code, 1);
  write_file(kDir / "bad.cfg", "generation.k2 = 0\n");
  EXPECT_EQ(cli("--config bad.cfg --out x.jsonl distill").code, 1);
  write_file(kDir / "garbage.jsonl", "{\"pair_id\":\n");
  auto r = cli("stats garbage.jsonl");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("line 1"), std::string::npos) << r.output;
}

TEST(Cli, UnreachableBackendExitsTwo) {
  write_file(kDir / "remote.cfg",
             "backend = remote\n"
             "endpoint.generate.base_url = http://127.0.0.1:1\n"
             "endpoint.generate.max_retries = 0\n"
             "endpoint.nli.base_url = http://127.0.0.1:1\n"
             "endpoint.nli.max_retries = 0\n"
             "endpoint.infer.base_url = http://127.0.0.1:1\n"
             "endpoint.infer.max_retries = 0\n");
  auto r = cli("--config remote.cfg --contexts 2 --out remote.jsonl distill");
  EXPECT_EQ(r.code, 2) << r.output;
  r = cli("--config remote.cfg --backend toy --out sd.jsonl self-distill --task-model remote --inputs 2");
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST(Cli, StepwiseCommandsChain) {
  ASSERT_EQ(cli("--contexts 3 --seed 2 --out c.jsonl gen-contexts").code, 0);
  EXPECT_EQ(lines("c.jsonl"), 3u);
  auto r = cli("--seed 2 --out p.jsonl gen-pairs --in c.jsonl");
  ASSERT_EQ(r.code, 0) << r.output;
  r = cli("--out fs.jsonl filter --in p.jsonl --mode summarization");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto census = ojson::parse(r.output);
  EXPECT_EQ(census.at("mode"), "summarization");
  r = cli("--out ds.jsonl quantize --in fs.jsonl --training train.jsonl");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(cli("validate ds.jsonl").code, 0);
  EXPECT_EQ(lines("train.jsonl"), lines("ds.jsonl"));
  r = cli("stats ds.jsonl");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(ojson::parse(r.output).contains("diversity"));
}

TEST(Cli, StatsReportsEfficiencyFromRunReport) {
  ASSERT_EQ(cli("--contexts 5 --out s.jsonl distill").code, 0);
  auto r = cli("stats s.jsonl --run-report s.jsonl.report.json");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = ojson::parse(r.output);
  EXPECT_TRUE(j.at("sample_efficiency").at("summarization").contains("total"));
}

TEST(Cli, ResumeAfterInterruption) {
  fs::remove(kDir / "chunk.cfg");
  ASSERT_EQ(cli("--contexts 8 --out full.jsonl --config chunk.cfg distill").code, 1);
  write_file(kDir / "chunk.cfg", "pipeline.batch_size = 3\n");
  ASSERT_EQ(cli("--contexts 8 --config chunk.cfg --out full.jsonl distill").code, 0);
  auto r = cli("--contexts 8 --config chunk.cfg --out part.jsonl distill --max-batches 1");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("--resume"), std::string::npos);
  ASSERT_EQ(cli("--contexts 8 --config chunk.cfg --out part.jsonl distill --resume").code, 0);
  EXPECT_EQ(slurp("part.jsonl"), slurp("full.jsonl"));
  EXPECT_EQ(slurp("part.jsonl.report.json"), slurp("full.jsonl.report.json"));
}

TEST(Cli, SelfDistillStubs) {
  auto r = cli("--out id.jsonl self-distill --inputs 10");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_dataset(kDir / "id.jsonl").size(), 0u);
  const auto report = ojson::parse(slurp("id.jsonl.report.json"));
  EXPECT_EQ(report.at("counters").at("census").at("summarization").at("total").at("passed"), 0);
  r = cli("--out half.jsonl self-distill --inputs 10 --task-model truncate-half");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(cli("validate half.jsonl").code, 0);
}

TEST(Cli, InProcessDispatch) {
  std::ostringstream out, err;
  const char* argv[] = {"distill", "bogus"};
  EXPECT_EQ(cli_dispatch(2, argv, out, err), kExitInput);
  EXPECT_NE(err.str().find("Usage"), std::string::npos);
}
