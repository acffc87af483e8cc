// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "branchpar/errors.hpp"
#include "commands.hpp"
#include "run_config.hpp"
#include "suites.hpp"

namespace branchpar::cli {
namespace {

namespace fs = std::filesystem;

const fs::path kConfigDir = BRANCHPAR_CONFIG_DIR;
const std::string kCli = BRANCHPAR_CLI_PATH;

std::string toy_text() {
  std::ifstream in(kConfigDir / "toy.cfg");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg");
}

std::string parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args) {
  const fs::path dir = fs::temp_directory_path() / ("branchpar_cli_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string cmd = kCli + " " + args + " > " + (dir / "out").string() + " 2> " + (dir / "err").string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream o(dir / "out"), e(dir / "err");
  std::stringstream so, se;
  so << o.rdbuf();
  se << e.rdbuf();
  r.out = so.str();
  r.err = se.str();
  return r;
}

fs::path write_temp(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / (name + "_" + std::to_string(::getpid()) + ".cfg");
  std::ofstream(p) << text;
  return p;
}

TEST(RunConfig, ParsesToyPreset) {
  const RunConfig cfg = parse(toy_text());
  EXPECT_EQ(cfg.model.s, 8);
  EXPECT_EQ(cfg.model.r, 16);
  EXPECT_EQ(cfg.model.variant, Variant::parallel);
  EXPECT_EQ(cfg.layout.bp, 2);
  EXPECT_EQ(cfg.layout.dap, 2);
  EXPECT_EQ(cfg.run.seed, 32u);
  EXPECT_EQ(cfg.run.precision, Precision::f64);
  EXPECT_EQ(cfg.run.mode, Mode::verify);
}

TEST(RunConfig, DefaultsForMissingKeys) {
  const RunConfig cfg = parse("model.r = 32\n");
  EXPECT_EQ(cfg.model.r, 32);
  EXPECT_EQ(cfg.model.s, EvoConfig{}.s);
  EXPECT_EQ(cfg.run.steps, RunSection{}.steps);
  EXPECT_EQ(cfg.device.compute_rate, DeviceModel{}.compute_rate);
  for (const auto& k : config_keys()) EXPECT_FALSE(k.default_value.empty()) << k.key;
}

TEST(RunConfig, DiagnosticsCarryLineNumbers) {
  EXPECT_NE(parse_error("model.r = 8\nmodel.colour = red\n").find("test.cfg:2"), std::string::npos);
  EXPECT_NE(parse_error("model.r = eight\n").find("test.cfg:1"), std::string::npos);
  EXPECT_NE(parse_error("model.r = 8\nmodel.r = 9\n").find("test.cfg:2"), std::string::npos);
  EXPECT_NE(parse_error("run.precision = f16\n").find("run.precision"), std::string::npos);
  EXPECT_NE(parse_error("layout.bp\n").find("test.cfg:1"), std::string::npos);
}

TEST(RunConfig, CrossFieldValidation) {
  EXPECT_NE(parse_error("layout.bp = 3\n").find("branch"), std::string::npos);
  EXPECT_FALSE(parse_error("layout.dap = 3\n").empty());
  EXPECT_FALSE(parse_error("model.variant = af2\nlayout.bp = 2\n").empty());
  EXPECT_FALSE(parse_error("device.link_bandwidth = 0\n").empty());
  EXPECT_TRUE(parse_error("# comment only\n\n").empty());
}

TEST(RunConfig, WriteParseRoundTrip) {
  for (const char* name : {"toy.cfg", "large_toy.cfg", "initial_training.cfg", "fine_tuning.cfg"}) {
    const RunConfig cfg = load_config((kConfigDir / name).string());
    std::ostringstream out;
    write_config(out, cfg);
    EXPECT_TRUE(parse(out.str()) == cfg) << name;
  }
}

TEST(RunConfig, ShippedPresetsMatchProductionShapes) {
  const RunConfig init = load_config((kConfigDir / "initial_training.cfg").string());
  EXPECT_EQ(init.model.s, 128);
  EXPECT_EQ(init.model.r, 256);
  EXPECT_EQ(init.model.n_blocks, 52);
  const RunConfig fine = load_config((kConfigDir / "fine_tuning.cfg").string());
  EXPECT_EQ(fine.model.s, 512);
  EXPECT_EQ(fine.model.r, 384);
}

TEST(Overrides, Applied) {
  RunConfig cfg = parse(toy_text());
  Overrides o;
  o.seed = 7;
  o.precision = Precision::f32;
  apply_overrides(cfg, o);
  EXPECT_EQ(cfg.run.seed, 7u);
  EXPECT_EQ(cfg.run.precision, Precision::f32);
  o.repeat = 0;
  EXPECT_THROW(apply_overrides(cfg, o), ConfigError);
}

TEST(Suites, VerifyToyPasses) {
  const auto rows = verify_suite(parse(toy_text()));
  EXPECT_TRUE(suite_passed(rows));
  bool bp_exact = false;
  for (const auto& r : rows) {
    if (r.check == "oracle" && r.subject == (ParallelLayout{1, 2, 1}.name())) bp_exact = r.passed && r.threshold == 0.0;
  }
  EXPECT_TRUE(bp_exact);
}

TEST(Suites, GradcheckPassFailStableAcrossSeeds) {
  RunConfig cfg = parse(toy_text());
  for (std::uint64_t seed : {32u, 101u}) {
    cfg.run.seed = seed;
    const auto rows = gradcheck_suite(cfg);
    EXPECT_EQ(rows.size(), 10u);
    EXPECT_TRUE(suite_passed(rows)) << "seed " << seed;
    for (const auto& r : rows) EXPECT_LE(r.value, 1e-5) << r.subject;
  }
}

TEST(Suites, CsvMarksInformationalRows) {
  std::ostringstream out;
  write_rows_csv(out, {{"a", "x", 1.0, 2.0, true, false, ""}, {"b", "y", 3.0, 0.0, false, true, "n"}});
  EXPECT_EQ(out.str(), "check,subject,value,threshold,result,note\na,x,1,2,PASS,\"\"\nb,y,3,0,info,\"n\"\n");
}

TEST(Cli, VerifyToyExitsZero) {
  const auto r = run_cli("verify " + (kConfigDir / "toy.cfg").string());
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("check,subject,value,threshold,result,note"), std::string::npos);
}

TEST(Cli, BranchDegreeThreeIsUsageError) {
  std::string text = toy_text();
  text.replace(text.find("layout.bp = 2"), 13, "layout.bp = 3");
  const auto p = write_temp("bp3", text);
  const auto r = run_cli("verify " + p.string());
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("branch"), std::string::npos) << r.err;
}

TEST(Cli, AxialDegreeThreeIsUsageError) {
  std::string text = toy_text();
  text.replace(text.find("layout.dap = 2"), 14, "layout.dap = 3");
  const auto p = write_temp("dap3", text);
  EXPECT_EQ(run_cli("verify " + p.string()).code, kExitUsage);
  EXPECT_EQ(run_cli("cost " + p.string()).code, kExitUsage);
}

TEST(Cli, UnknownKeyAndMissingFile) {
  const auto p = write_temp("unknown", toy_text() + "model.depth = 3\n");
  const auto r = run_cli("gradcheck " + p.string());
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("model.depth"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli("verify /nonexistent/x.cfg").code, kExitUsage);
  EXPECT_EQ(run_cli("frobnicate").code, kExitUsage);
}

TEST(Cli, BenchRejectsWarmupNotBelowSteps) {
  const auto p = write_temp("warm", toy_text() + "run.steps = 2\nrun.warmup = 2\n");
  EXPECT_EQ(run_cli("bench " + p.string()).code, kExitUsage);
}

TEST(Cli, BenchOmitsWarmupRows) {
  std::string text = toy_text();
  text.replace(text.find("layout.dap = 2"), 14, "layout.dap = 1");
  const auto p = write_temp("bench", text + "run.steps = 2\nrun.warmup = 1\n");
  const auto r = run_cli("bench " + p.string() + " --repeat 2");
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "layout,s/step,speedup%");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);  // bp=1 and bp=2, one row each
}

TEST(Cli, CostReportsFractionAndBytes) {
  const auto out = fs::temp_directory_path() / ("cost_" + std::to_string(::getpid()) + ".csv");
  const auto r = run_cli("cost " + (kConfigDir / "initial_training.cfg").string() + " --out " + out.string());
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.err.find("evoformer_fraction"), std::string::npos);
  std::ifstream in(out);
  std::string header, baseline, bp;
  std::getline(in, header);
  std::getline(in, baseline);
  std::getline(in, bp);
  EXPECT_EQ(header, "layout,dp,bp,dap,s/step,protein/s,speedup%,evoformer_fraction,bp_bytes,dap_bytes,dp_bytes");
  EXPECT_NE(baseline.find(",0,"), std::string::npos);

  // The BP bytes column is the closed-form volume times the element width.
  const RunConfig cfg = load_config((kConfigDir / "initial_training.cfg").string());
  const auto volume = total_elements(expected_comm_volume(cfg.model, {1, 2, 1}));
  const auto width = static_cast<std::int64_t>(cfg.device.bytes_per_element);
  std::vector<std::string> cells;
  std::stringstream ss(bp);
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  ASSERT_EQ(cells.size(), 11u);
  EXPECT_EQ(cells[0], (ParallelLayout{1, 2, 1}.name()));
  EXPECT_EQ(std::stoll(cells[8]), volume * width);
}

TEST(Cli, GradcheckF32IsInformational) {
  const auto r = run_cli("gradcheck " + (kConfigDir / "toy.cfg").string() + " --precision f32");
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.err.find("1e-2"), std::string::npos) << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace branchpar::cli
