#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "rsopuf/experiments.hpp"

using namespace rsopuf;
namespace ex = rsopuf::experiments;
namespace fs = std::filesystem;

namespace {

class Workdir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("rsopuf_cli_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(RSOPUF_CLI_PATH) + ' ' + args + " >" + path("stdout") + " 2>" + path("stderr");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const std::string& name) const {
    std::ifstream in(path(name));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

}  // namespace

TEST(Experiments, GenCalibratesFlipRate) {
  ex::GenConfig c;
  c.n = 64;
  c.seed = 7;
  const auto r = ex::cmd_gen(c);
  EXPECT_GE(r.measured_flip_rate, 0.045);
  EXPECT_LE(r.measured_flip_rate, 0.055);
  const auto rec = parse_record(r.file);
  EXPECT_EQ(rec.instance, r.instance);
  EXPECT_EQ(ex::cmd_gen(c).file, r.file);
}

TEST(Experiments, CollectRsoRecordCountAndConfig) {
  const auto inst = ex::cmd_gen(ex::GenConfig{32, 3}).instance;
  ex::CollectConfig c;
  c.mode = ex::CollectMode::Rso;
  c.m = 8;
  c.count = 1000;
  c.seed = 4;
  const auto r = ex::cmd_collect(inst, c);
  EXPECT_EQ(r.dataset.size() % 32, 0u);
  EXPECT_GE(r.dataset.size(), 1000u);
  EXPECT_EQ(r.sessions, r.dataset.size() / 32);
  EXPECT_EQ(r.dataset.provenance, attacks::Provenance::Rso);
  const auto cfg = ex::dataset_config(r.file);
  ASSERT_TRUE(cfg.has_value());
  EXPECT_EQ(cfg->at("m").get<int>(), 8);
  EXPECT_EQ(attacks::parse_dataset(r.file).records, r.dataset.records);
  EXPECT_EQ(ex::cmd_collect(inst, c).file, r.file);
}

TEST(Experiments, CollectWithUpdatesNeedsBanks) {
  const auto inst = ex::cmd_gen(ex::GenConfig{64, 5}).instance;
  EXPECT_EQ(ex::banks_needed(1, 64, 2600), 1u);
  EXPECT_EQ(ex::banks_needed(41, 64, 2600), 1u);
  EXPECT_EQ(ex::banks_needed(42, 64, 2600), 2u);
  ex::CollectConfig c;
  c.mode = ex::CollectMode::Rso;
  c.count = 64 * 100;
  c.updates = true;
  const auto r = ex::cmd_collect(inst, c);
  EXPECT_EQ(r.sessions, 100u);
  EXPECT_EQ(r.updates, 99u / 41u);
}

TEST(Experiments, AttackOnRawDataWithReference) {
  const auto inst = ex::cmd_gen(ex::GenConfig{64, 6}).instance;
  ex::CollectConfig c;
  c.count = 10000;
  const auto ds = ex::cmd_collect(inst, c).dataset;
  ex::AttackConfig a;
  const auto r = ex::cmd_attack(ds, a, &inst);
  EXPECT_EQ(r.report.test_size, 10000u);
  EXPECT_EQ(r.report.train_size, 7000u);
  EXPECT_GE(r.report.accuracy, 0.95);
  const auto csv = ex::append_report({}, r.report, ex::to_json(a));
  const auto twice = ex::append_report(csv, r.report, ex::to_json(a));
  EXPECT_EQ(twice.find(attacks::attack_csv_header()), csv.find(attacks::attack_csv_header()));
  EXPECT_EQ(twice.rfind(attacks::attack_csv_header()), csv.find(attacks::attack_csv_header()));
}

TEST(Experiments, AuthStatsContract) {
  ex::AuthStatsConfig c{64, 0.498, 0.048, EerRule::Crossing, "2"};
  const auto r = ex::cmd_authstats(c);
  EXPECT_EQ(r.row.quality.n_eer, 13u);
  EXPECT_NE(r.csv.find("# config="), std::string::npos);
  c.p_intra = 1.5;
  EXPECT_THROW(ex::cmd_authstats(c), ContractViolation);
  EXPECT_THROW(ex::parse_eer_rule("median"), ContractViolation);
}

TEST(Experiments, ProtocolReport) {
  const auto inst = ex::cmd_gen(ex::GenConfig{64, 8}).instance;
  ex::ProtocolConfig c;
  c.sessions = 120;
  c.noisy = false;
  c.tau = 0.0;
  const auto r = ex::cmd_protocol(inst, c);
  EXPECT_EQ(r.report.accepts, 120u);
  EXPECT_EQ(r.n_min, 2600u);
  EXPECT_EQ(r.report.updates.size(), 119u / 41u);
  const auto j = nlohmann::json::parse(r.report_json);
  EXPECT_EQ(j.at("n_min_rso").get<int>(), 2600);
  EXPECT_EQ(j.at("exposed_crps").get<int>(), 120 * 64);
  std::istringstream lines(r.transcript);
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto t = nlohmann::json::parse(line);
    EXPECT_EQ(t.at("server_verdict").get<std::string>(), "accept");
    ++count;
  }
  EXPECT_EQ(count, 120u);
}

TEST_F(Workdir, PipelineIsDeterministic) {
  ASSERT_EQ(run("gen --n 32 --seed 11 --out " + path("a.puf")), 0);
  ASSERT_EQ(run("gen --n 32 --seed 11 --out " + path("b.puf")), 0);
  EXPECT_EQ(slurp("a.puf"), slurp("b.puf"));
  for (const char* tag : {"x", "y"}) {
    ASSERT_EQ(run("collect --instance " + path("a.puf") + " --mode rso --m 4 --count 640 --seed 3 --out " +
                  path(std::string(tag) + ".crp") + " --transcript " + path(std::string(tag) + ".jsonl")),
              0);
  }
  EXPECT_EQ(slurp("x.crp"), slurp("y.crp"));
  EXPECT_EQ(slurp("x.jsonl"), slurp("y.jsonl"));
  const auto ds = attacks::parse_dataset(slurp("x.crp"));
  EXPECT_EQ(ds.size() % 32, 0u);

  ASSERT_EQ(run("attack --dataset " + path("x.crp") + " --method lr --out " + path("r.csv")), 0);
  ASSERT_EQ(run("attack --dataset " + path("x.crp") + " --method cmaes --generations 20 --out " + path("r.csv")), 0);
  const auto csv = slurp("r.csv");
  EXPECT_NE(csv.find("\nlr,32,4,"), std::string::npos);
  EXPECT_NE(csv.find("\ncmaes,32,4,"), std::string::npos);

  ASSERT_EQ(run("protocol --instance " + path("a.puf") + " --sessions 20 --out " + path("p.json")), 0);
  const auto report = nlohmann::json::parse(slurp("p.json"));
  EXPECT_EQ(report.at("sessions").get<int>(), 20);
}

TEST_F(Workdir, AuthStatsPrintsRow) {
  ASSERT_EQ(run("authstats --n 64 --p-inter 0.498 --p-intra 0.048 --row 2"), 0);
  const auto out = slurp("stdout");
  EXPECT_NE(out.find("\n2,0.498,0.048,64,13,"), std::string::npos);
}

TEST_F(Workdir, EnvironmentOverridesFlags) {
  ASSERT_EQ(run("gen --n 16 --seed 5 --out " + path("a.puf")), 0);
  ASSERT_EQ(run("gen --n 16 --out " + path("b.puf")), 0);
  EXPECT_NE(slurp("a.puf"), slurp("b.puf"));
  const std::string cmd = "RSOPUF_SEED=5 " + std::string(RSOPUF_CLI_PATH) + " gen --n 16 --out " + path("c.puf") + " 2>/dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_EQ(slurp("a.puf"), slurp("c.puf"));
}

TEST_F(Workdir, ExitCodes) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen --n 16"), 2);  // missing --out
  EXPECT_EQ(run("attack --dataset " + path("missing.crp")), 3);
  {
    std::ofstream(path("junk.crp")) << "this is not a dataset\n";
  }
  EXPECT_EQ(run("attack --dataset " + path("junk.crp")), 3);
  EXPECT_EQ(run("authstats --n 64 --p-inter 0.5 --p-intra 2.0"), 4);
  ASSERT_EQ(run("gen --n 16 --seed 1 --out " + path("a.puf")), 0);
  EXPECT_EQ(run("collect --instance " + path("a.puf") + " --mode rso --m 1 --count 16 --out " + path("x.crp")), 4);
  EXPECT_EQ(run("--help"), 0);
}
