#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "njode/cli.hpp"
#include "njode/run_io.hpp"
#include "njode/sde.hpp"

namespace fs = std::filesystem;
using namespace njode;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome njode_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double field(const std::string& line, const std::string& key) {
  const auto at = line.find(key + "=");
  if (at == std::string::npos) return std::nan("");
  return std::stod(line.substr(at + key.size() + 1));
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("njode_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string make_ou(int n = 100) {
    const auto data = path("ou");
    const auto r = njode_cli({"generate", "--model", "ornstein_uhlenbeck", "--n", std::to_string(n), "--grid", "20",
                              "--seed", "4", "--obs-prob", "0.2", "--out", data});
    EXPECT_EQ(r.code, 0) << r.err;
    return data;
  }

  std::vector<std::string> quick_train(const std::string& data, const std::string& out, int epochs = 2) {
    return {"train", "--data", data, "--out", out, "--epochs", std::to_string(epochs), "--batch", "20",
            "--hidden", "8", "--latent", "3", "--seed", "1"};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenerateWritesReloadableDataset) {
  const auto data = make_ou(30);
  const Dataset ds = read_dataset(data);
  EXPECT_EQ(ds.size(), 30u);
  EXPECT_EQ(ds.grid.steps(), 20);
  EXPECT_EQ(ds.model, SdeModel::ornstein_uhlenbeck());
  EXPECT_EQ(ds, generate_dataset(SdeModel::ornstein_uhlenbeck(), TimeGrid(1.0, 20), 30, 4, 0.2));
}

TEST_F(CliTest, GenerateHestonTwoDimensional) {
  const auto r = njode_cli({"generate", "--model", "heston_nofeller", "--dim", "2", "--n", "5", "--grid", "10",
                            "--out", path("h")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_dataset(path("h")).dim(), 2);
}

TEST_F(CliTest, GenerateRejectsBadArguments) {
  EXPECT_EQ(njode_cli({"generate", "--model", "ornstein_uhlenbeck", "--obs-prob", "1.5", "--out", path("x")}).code, 2);
  EXPECT_EQ(njode_cli({"generate", "--model", "ornstein_uhlenbeck", "--bogus", "--out", path("x")}).code, 2);
  EXPECT_EQ(njode_cli({"generate", "--model", "nope", "--out", path("x")}).code, 2);
  EXPECT_EQ(njode_cli({"generate", "--model", "black_scholes", "--param", "sigma", "--out", path("x")}).code, 2);
  EXPECT_EQ(njode_cli({}).code, 2);
}

TEST_F(CliTest, HelpExitsZero) {
  const auto r = njode_cli({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--epochs"), std::string::npos);
}

TEST_F(CliTest, TrainRequiresData) {
  EXPECT_EQ(njode_cli({"train", "--out", path("run")}).code, 2);
  EXPECT_EQ(njode_cli({"train", "--data", path("missing"), "--out", path("run")}).code, 3);
}

TEST_F(CliTest, TrainZeroEpochsWritesCheckpoint) {
  const auto data = make_ou(40);
  const auto r = njode_cli(quick_train(data, path("run"), 0));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("run/checkpoint.json")));
  EXPECT_TRUE(fs::exists(path("run/checkpoint.csv")));
  EXPECT_TRUE(parse_curves_csv(slurp(path("run/curves.csv"))).empty());
}

TEST_F(CliTest, TrainBatchTooLargeIsUsageError) {
  const auto data = make_ou(40);
  auto args = quick_train(data, path("run"));
  args.push_back("--batch");
  args.push_back("33");  // 32 training paths
  EXPECT_EQ(njode_cli(args).code, 2);
}

TEST_F(CliTest, EvalReproducesFinalCurveRow) {
  const auto data = make_ou();
  const auto tr = njode_cli(quick_train(data, path("run"), 3));
  ASSERT_EQ(tr.code, 0) << tr.err;
  const auto curve = parse_curves_csv(slurp(path("run/curves.csv")));
  ASSERT_EQ(curve.size(), 3u);
  const auto predictions = slurp(path("run/predictions.csv"));
  EXPECT_EQ(predictions.substr(0, predictions.find('\n')), "path_id,t,coord,y,xhat_oracle,observed");

  const auto e1 = njode_cli({"eval", "--run", path("run"), "--data", data, "--out", path("p1.csv")});
  const auto e2 = njode_cli({"eval", "--run", path("run"), "--data", data, "--out", path("p2.csv"), "--workers", "3"});
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_EQ(slurp(path("p1.csv")), slurp(path("p2.csv")));
  EXPECT_EQ(slurp(path("p1.csv")), predictions);
  EXPECT_EQ(field(e1.out, "paths"), 20.0);
  EXPECT_DOUBLE_EQ(field(e1.out, "test_loss"), curve.back().test_loss);
  EXPECT_DOUBLE_EQ(field(e1.out, "oracle_loss"), curve.back().oracle_loss);
  EXPECT_DOUBLE_EQ(field(e1.out, "eval_metric"), curve.back().eval_metric);
}

TEST_F(CliTest, MetricWithoutOracleIsRejected) {
  const auto data = make_ou(40);
  ASSERT_EQ(njode_cli(quick_train(data, path("run"), 1)).code, 0);
  Dataset ext = read_dataset(data);
  ext.model = SdeModel::external(1);
  write_dataset(ext, path("ext"));
  const auto r = njode_cli({"eval", "--run", path("run"), "--data", path("ext"), "--metric", "--out", path("p.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("oracle"), std::string::npos);
  // Without --metric the loss is still reported.
  const auto plain = njode_cli({"eval", "--run", path("run"), "--data", path("ext"), "--out", path("p.csv")});
  EXPECT_EQ(plain.code, 0) << plain.err;
  EXPECT_NE(plain.out.find("test_loss="), std::string::npos);
}

TEST_F(CliTest, StudyTableShapeAndDeterminism) {
  const auto data = make_ou(500);
  const std::vector<std::string> args{"study", "--data", data, "--out", path("s"), "--n1", "200,400", "--m", "10,20",
                                      "--repeats", "2", "--n2", "50", "--epochs", "1", "--batch", "100", "--latent", "3"};
  const auto r = njode_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = slurp(path("s/study.csv"));
  EXPECT_EQ(table, r.out);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 9);
  EXPECT_EQ(table.substr(0, table.find('\n')), "n1,m,repeat,min_metric,last_metric,mean_metric");
  auto again = args;
  again[4] = path("s2");
  EXPECT_EQ(njode_cli(again).out, r.out);

  auto too_big = args;
  too_big[6] = "200,460";  // 500 - 50 = 450 available
  EXPECT_EQ(njode_cli(too_big).code, 2);
}

TEST_F(CliTest, ExportWritesPredictions) {
  const auto data = make_ou(40);
  ASSERT_EQ(njode_cli(quick_train(data, path("run"), 1)).code, 0);
  const auto r = njode_cli({"export", "--run", path("run"), "--data", data, "--split", "all", "--limit", "3", "--out",
                            path("x.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(path("x.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "path_id,t,coord,y,xhat_oracle,observed");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 21);
}
