#include <gtest/gtest.h>

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"

namespace {

const std::string kDir = KPAC_SCENARIO_DIR;

struct Result {
  int status;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "kpac");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int st = kpac::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {st, out.str(), err.str()};
}

std::vector<nlohmann::json> records(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST(Cli, RunReportsOutcomeAndStatus) {
  auto r = invoke({"run", "--scheme", "proposed", kDir + "/lr-overwrite.scn"});
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("AuthFault"), std::string::npos);
  r = invoke({"run", "--scheme", "none", kDir + "/lr-overwrite.scn"});
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("Hijacked"), std::string::npos);
}

TEST(Cli, RunMismatchIsStatusOne) {
  // With PAuth missing the kernel runs unprotected and the overwrite lands.
  const auto r = invoke({"run", "--pre83", kDir + "/lr-overwrite.scn"});
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("MISMATCH"), std::string::npos);
}

TEST(Cli, UsageErrorsAreStatusTwo) {
  EXPECT_EQ(invoke({"run", kDir + "/missing.scn"}).status, 2);
  EXPECT_EQ(invoke({}).status, 2);
  EXPECT_EQ(invoke({"frobnicate"}).status, 2);
  EXPECT_EQ(invoke({"--scheme", "bogus", "run", kDir + "/lr-overwrite.scn"}).status, 2);
  EXPECT_EQ(invoke({"--va-bits", "60", "pac", "strip", "--ptr", "0"}).status, 2);
  EXPECT_EQ(invoke({"pac", "sign", "--key", "ga", "--ptr", "0"}).status, 2);
  EXPECT_EQ(invoke({"pac", "sign", "--ptr", "0x0123000000000000"}).status, 2);
  EXPECT_EQ(invoke({"analyze", "forgery", "--bits", "0"}).status, 2);
  EXPECT_EQ(invoke({"--help"}).status, 0);
}

TEST(Cli, VerifyFlagsKeyRead) {
  auto r = invoke({"verify", kDir + "/attack.ir"});
  EXPECT_EQ(r.status, 0);
  // The IR embedded in the exfiltration scenario, extracted to a file.
  const std::string ir = "/tmp/kpac_cli_test_leak.ir";
  {
    std::ofstream f(ir);
    f << "syscall 1 = s\nfunc s\n  asm \"mrs x0, apiakeyhi_el1\"\nend\n";
  }
  r = invoke({"verify", ir});
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("apiakeyhi_el1"), std::string::npos);
}

TEST(Cli, PacSignMatchesOracle) {
  const std::vector<std::string> base{"--key", "ib", "--ptr", "0xffff000008123456", "--mod", "0x0800f0d008123456",
                                      "--key-value", "0x0123456789abcdef:0xfedcba9876543210"};
  auto args = base;
  args.insert(args.begin(), {"pac", "sign"});
  auto r = invoke(args);
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(r.out, "0x55f3000008123456\n");

  args = base;
  args[3] = "0x55f3000008123456";
  args.insert(args.begin(), {"--format", "jsonl", "pac", "auth"});
  r = invoke(args);
  EXPECT_EQ(r.status, 0);
  const auto j = records(r.out).at(0);
  EXPECT_EQ(j["result"], "0xffff000008123456");
  EXPECT_EQ(j["ok"], true);

  args[7] = "0x55f3000008123457";
  r = invoke(args);
  EXPECT_EQ(r.status, 1);

  r = invoke({"pac", "strip", "--ptr", "0x55f3000008123456"});
  EXPECT_EQ(r.out, "0xffff000008123456\n");
  // A disabled key leaves the pointer alone.
  r = invoke({"--disable", "ib", "pac", "sign", "--key", "ib", "--ptr", "0xffff000008123456"});
  EXPECT_EQ(r.out, "0xffff000008123456\n");
}

TEST(Cli, BenchTableOrdering) {
  const auto r = invoke({"--format", "jsonl", "bench", "--schemes", "all", kDir + "/bench.ir"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rows = records(r.out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0]["scheme"], "none");
  for (size_t i = 1; i < rows.size(); ++i)
    EXPECT_LT(rows[i - 1]["per_call_delta"].get<double>(), rows[i]["per_call_delta"].get<double>());
  EXPECT_EQ(rows[2]["key_switch_per_syscall"].get<double>(), 54.0);
}

TEST(Cli, AnalyzeEmitsOneRecordPerRow) {
  auto r = invoke({"--format", "jsonl", "analyze", "forgery", "--bits", "4,8", "--trials", "2000"});
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(records(r.out).size(), 2u);
  r = invoke({"--format", "jsonl", "--scheme", "parts-like", "analyze", "collision", "--bases",
            "0xffff800010000000,0xffff800010010000"});
  EXPECT_EQ(r.status, 0);
  const auto rows = records(r.out);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0]["matching_rate"].get<double>(), 1.0);
  r = invoke({"--format", "jsonl", "analyze", "replay"});
  EXPECT_EQ(records(r.out).size(), 20u);
}

TEST(Cli, CompileEmitsAssemblableText) {
  const auto r = invoke({"--scheme", "proposed", "compile", kDir + "/fileops.ir"});
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("pacib x30, x16"), std::string::npos);
}

TEST(Cli, SameSeedSameBytes) {
  const std::vector<std::vector<std::string>> cmds = {
      {"--format", "jsonl", "--seed", "5", "run", "--trace", "--scheme", "all", kDir + "/brute-force.scn"},
      {"--format", "jsonl", "--seed", "5", "analyze", "forgery", "--trials", "3000"},
      {"--format", "jsonl", "--seed", "5", "analyze", "collision", "--threads", "4", "--detail"},
      {"--format", "jsonl", "--seed", "5", "bench", kDir + "/bench.ir"},
  };
  for (const auto& c : cmds) {
    const auto a = invoke(c);
    const auto b = invoke(c);
    EXPECT_EQ(a.status, b.status);
    EXPECT_EQ(a.out, b.out);
    EXPECT_FALSE(a.out.empty());
  }
}
