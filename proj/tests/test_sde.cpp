#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "njode/errors.hpp"
#include "njode/sde.hpp"
#include "njode/text_table.hpp"

namespace fs = std::filesystem;
using namespace njode;

namespace {

std::string temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("njode_test_" + name);
  fs::remove_all(dir);
  return dir.string();
}

double sample_mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double sample_se(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1) / v.size());
}

}  // namespace

TEST(TimeGrid, PointsAndMesh) {
  const TimeGrid g(1.0, 100);
  EXPECT_EQ(g.points(), 101);
  EXPECT_NEAR(g.mesh() * g.steps(), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(g.time(0), 0.0);
  EXPECT_THROW(TimeGrid(1.0, 0), PreconditionError);
}

TEST(EulerStep, OuDriftOnly) {
  const auto ou = SdeModel::ornstein_uhlenbeck(2.0, 4.0, 0.3);
  const std::vector<double> x{1.0}, dw{0.0};
  EXPECT_NEAR(euler_maruyama_step(ou, 0.0, x, 0.01, dw)[0], 1.06, 1e-15);
}

TEST(EulerStep, BlackScholesZeroIsAbsorbing) {
  const auto bs = SdeModel::black_scholes(2.0, 0.3);
  const std::vector<double> x{0.0};
  for (double w : {-1.0, 0.0, 0.7}) EXPECT_EQ(euler_maruyama_step(bs, 0.3, x, 0.01, std::vector<double>{w})[0], 0.0);
}

TEST(EulerStep, HestonNoFellerClampsVariance) {
  auto h = SdeModel::heston_no_feller(2);
  h.set_param("k", 2.0);
  h.set_param("m", 1.0);
  h.set_param("sigma", 3.0);
  const std::vector<double> x{1.0, 0.001};
  const double raw = 0.001 + 2.0 * 0.999 * 0.01 + 3.0 * std::sqrt(0.001) * (-0.05);
  EXPECT_NEAR(raw, 0.0162, 1e-4);
  EXPECT_NEAR(euler_maruyama_step(h, 0.0, x, 0.01, std::vector<double>{0.0, -0.05})[1], raw, 1e-15);
  // 0.001 + 0.01998 - 0.0949 * 3 < 0: clamped.
  EXPECT_EQ(euler_maruyama_step(h, 0.0, x, 0.01, std::vector<double>{0.0, -0.3})[1], 0.0);
}

TEST(EulerStep, RejectsNonFiniteState) {
  const auto ou = SdeModel::ornstein_uhlenbeck();
  const std::vector<double> x{std::nan("")};
  try {
    euler_maruyama_step(ou, 0.0, x, 0.01, std::vector<double>{0.0});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("numeric blow-up"), std::string::npos);
  }
}

TEST(EulerStep, ShapeAndStepPreconditions) {
  const auto ou = SdeModel::ornstein_uhlenbeck();
  const std::vector<double> x{1.0};
  EXPECT_THROW(euler_maruyama_step(ou, 0.0, x, 0.0, std::vector<double>{0.0}), PreconditionError);
  EXPECT_THROW(euler_maruyama_step(ou, 0.0, x, 0.01, std::vector<double>{0.0, 0.0}), PreconditionError);
}

TEST(Simulate, DeterministicOuFollowsEulerRecursion) {
  const auto ou = SdeModel::ornstein_uhlenbeck(2.0, 4.0, 0.0);
  const TimeGrid g(1.0, 100);
  const auto paths = simulate_paths(ou, g, 5, 11);
  double x = 1.0;
  for (int i = 0; i <= 100; ++i) {
    for (const auto& p : paths) EXPECT_EQ(p[i], x) << "index " << i;
    x = x + (-2.0 * (x - 4.0)) * 0.01;
  }
}

TEST(Simulate, OuTerminalMeanWithinThreeStandardErrors) {
  const auto ou = SdeModel::ornstein_uhlenbeck(2.0, 4.0, 0.3);
  const TimeGrid g(1.0, 100);
  const auto paths = simulate_paths(ou, g, 10000, 5);
  std::vector<double> xt;
  for (const auto& p : paths) xt.push_back(p.back());
  const double exact = std::exp(-2.0) + 4.0 * (1.0 - std::exp(-2.0));
  EXPECT_NEAR(exact, 3.5940, 1e-4);
  // Euler mean: m - (m - x0)(1 - k dt)^K; its O(dt) bias (~0.008) exceeds 3 SE here.
  const double euler = 4.0 - 3.0 * std::pow(1.0 - 2.0 * 0.01, 100);
  EXPECT_LE(std::abs(sample_mean(xt) - euler), 3.0 * sample_se(xt));
  EXPECT_LE(std::abs(sample_mean(xt) - exact), 3.0 * sample_se(xt) + std::abs(euler - exact));
}

TEST(Simulate, DriftlessBlackScholesIsMartingale) {
  const auto bs = SdeModel::black_scholes(0.0, 0.3, 1.0);
  const auto paths = simulate_paths(bs, TimeGrid(1.0, 100), 10000, 9);
  std::vector<double> xt;
  for (const auto& p : paths) xt.push_back(p.back());
  EXPECT_LE(std::abs(sample_mean(xt) - 1.0), 3.0 * sample_se(xt));
}

TEST(Simulate, WorkerCountDoesNotChangeOutput) {
  const auto h = SdeModel::heston(2);
  const TimeGrid g(1.0, 100);
  EXPECT_EQ(simulate_paths(h, g, 64, 3, 1), simulate_paths(h, g, 64, 3, 8));
  EXPECT_EQ(generate_dataset(h, g, 40, 3, 0.1, {}, 1), generate_dataset(h, g, 40, 3, 0.1, {}, 8));
}

TEST(Simulate, PathDependsOnlyOnSeedAndId) {
  const auto ou = SdeModel::ornstein_uhlenbeck();
  const TimeGrid g(1.0, 50);
  const auto all = simulate_paths(ou, g, 10, 77);
  EXPECT_EQ(simulate_path(ou, g, 77, 7), all[7]);
  EXPECT_NE(all[6], all[7]);
}

TEST(Simulate, HestonNoFellerVarianceNonNegative) {
  const auto h = SdeModel::heston_no_feller(2);
  const auto ds = generate_dataset(h, TimeGrid(1.0, 100), 500, 21);
  bool hit_zero = false;
  for (const auto& p : ds.paths)
    for (int i = 0; i < p.points(); ++i) {
      ASSERT_GE(p.value(1, i), 0.0);
      hit_zero = hit_zero || p.value(1, i) == 0.0;
    }
  EXPECT_TRUE(hit_zero) << "parameters violate the Feller condition, zero should be reached";
}

TEST(Simulate, RegimeSwitchContinuesFromOuEndpoint) {
  auto r = SdeModel::regime_switch();
  r.set_param("sigma", 0.0);
  r.set_param("sigma_bs", 0.0);
  const TimeGrid g(1.0, 100);
  const auto p = simulate_path(r, g, 1, 0);
  double x = 1.0;
  for (int i = 0; i < 100; ++i) {
    EXPECT_NEAR(p[i], x, 1e-12) << i;
    x = i < 50 ? x - 2.0 * (x - 10.0) * 0.01 : x + 2.0 * x * 0.01;
  }
}

TEST(Schedule, CertainInclusion) {
  const auto s = sample_observation_times(TimeGrid(1.0, 100), 1.0, 1, MaskMode::full(), 4);
  ASSERT_EQ(s.count(), 101);
  for (int i = 0; i <= 100; ++i) EXPECT_EQ(s.indices[i], i);
}

TEST(Schedule, MeanCountMatchesBinomial) {
  const TimeGrid g(1.0, 100);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto s = sample_observation_times(g, 0.1, 1, MaskMode::full(), seed);
    ASSERT_EQ(s.indices.front(), 0);
    total += s.count();
  }
  const double mean = total / 10000.0;
  EXPECT_GE(mean, 10.7);
  EXPECT_LE(mean, 11.3);
}

TEST(Schedule, FullMasksAreAllOnes) {
  const auto s = sample_observation_times(TimeGrid(1.0, 100), 0.3, 2, MaskMode::full(), 8);
  EXPECT_TRUE(s.all_observed());
  EXPECT_EQ(s.masks.size(), 2u * s.count());
}

TEST(Schedule, BernoulliMasksHaveAtLeastOneBit) {
  const TimeGrid g(1.0, 100);
  int zeros = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = sample_observation_times(g, 0.5, 3, MaskMode::bernoulli_coords(0.2), seed);
    s.validate(g);
    for (int o = 0; o < s.count(); ++o) {
      const auto m = s.mask(o);
      EXPECT_GE(m[0] + m[1] + m[2], 1);
      zeros += (m[0] == 0) + (m[1] == 0) + (m[2] == 0);
    }
  }
  EXPECT_GT(zeros, 0);
}

TEST(Schedule, RejectsBadProbability) {
  EXPECT_THROW(sample_observation_times(TimeGrid(), 0.0, 1, {}, 0), PreconditionError);
  EXPECT_THROW(sample_observation_times(TimeGrid(), 1.5, 1, {}, 0), PreconditionError);
  EXPECT_THROW(MaskMode::parse("bernoulli:0"), PreconditionError);
  EXPECT_EQ(MaskMode::parse("bernoulli:0.25"), MaskMode::bernoulli_coords(0.25));
}

TEST(Oracle, ZeroHorizonReturnsObservation) {
  for (auto kind : {SdeKind::kBlackScholes, SdeKind::kOrnsteinUhlenbeck, SdeKind::kHeston, SdeKind::kHestonNoFeller,
                    SdeKind::kRegimeSwitch, SdeKind::kSineDriftBS}) {
    const auto m = SdeModel::make_default(kind, 1);
    const std::vector<double> x{1.7};
    EXPECT_EQ(true_conditional_expectation(m, x, 0.3, 0.3), x) << kind_name(kind);
  }
}

TEST(Oracle, ClosedFormValues) {
  const std::vector<double> one{1.0};
  EXPECT_NEAR(true_conditional_expectation(SdeModel::ornstein_uhlenbeck(2.0, 4.0), one, 0.0, 0.5)[0],
              std::exp(-1.0) + 4.0 * (1.0 - std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(true_conditional_expectation(SdeModel::ornstein_uhlenbeck(2.0, 4.0), one, 0.0, 0.5)[0], 2.8964, 1e-4);
  EXPECT_NEAR(true_conditional_expectation(SdeModel::black_scholes(2.0), one, 0.2, 0.3)[0], 1.2214, 1e-4);

  auto h = SdeModel::heston(2);
  h.set_param("m", 1.0);
  const auto y = true_conditional_expectation(h, std::vector<double>{1.0, 0.5}, 0.0, 0.25);
  EXPECT_NEAR(y[0], 1.6487, 1e-4);
  EXPECT_NEAR(y[1], 0.6967, 1e-4);
}

TEST(Oracle, SineDriftMatchesQuadrature) {
  const auto s = SdeModel::sine_drift(2.0 * M_PI);
  const double t0 = 0.13, t1 = 0.71;
  // Composite Simpson on the drift rate (alpha/2)(sin(beta u) + 1).
  const int n = 2000;
  const double h = (t1 - t0) / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double u = t0 + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    integral += w * 0.5 * 2.0 * (std::sin(2.0 * M_PI * u) + 1.0);
  }
  integral *= h / 3.0;
  EXPECT_NEAR(true_conditional_expectation(s, std::vector<double>{1.3}, t0, t1)[0], 1.3 * std::exp(integral), 1e-10);
}

TEST(Oracle, RegimeSwitchChainsAcrossSwitch) {
  const auto r = SdeModel::regime_switch();
  const std::vector<double> x{2.0};
  const double ou_leg = 2.0 * std::exp(-2.0 * 0.2) + 10.0 * (1.0 - std::exp(-2.0 * 0.2));
  EXPECT_NEAR(true_conditional_expectation(r, x, 0.3, 0.8)[0], ou_leg * std::exp(2.0 * 0.3), 1e-12);
  EXPECT_NEAR(true_conditional_expectation(r, x, 0.6, 0.8)[0], 2.0 * std::exp(2.0 * 0.2), 1e-12);
  EXPECT_NEAR(true_conditional_expectation(r, x, 0.1, 0.4)[0],
              2.0 * std::exp(-0.6) + 10.0 * (1.0 - std::exp(-0.6)), 1e-12);
}

TEST(Oracle, Preconditions) {
  const std::vector<double> x{1.0};
  EXPECT_THROW(true_conditional_expectation(SdeModel::black_scholes(), x, 0.5, 0.4), PreconditionError);
  EXPECT_THROW(true_conditional_expectation(SdeModel::external(1), x, 0.0, 0.4), PreconditionError);
}

TEST(Oracle, GridProcessIsRightContinuousAtObservations) {
  const auto ou = SdeModel::ornstein_uhlenbeck();
  const TimeGrid g(1.0, 100);
  const auto ds = generate_dataset(ou, g, 3, 2, 0.2);
  for (const auto& p : ds.paths) {
    const auto xhat = oracle_on_grid(ou, p, g);
    for (int idx : p.schedule.indices) EXPECT_EQ(xhat[idx], p.value(0, idx));
  }
}

TEST(DatasetIo, EmptyRoundTrip) {
  const auto ds = generate_dataset(SdeModel::ornstein_uhlenbeck(), TimeGrid(1.0, 10), 0, 3);
  const auto dir = temp_dir("empty");
  write_dataset(ds, dir);
  const auto back = read_dataset(dir);
  EXPECT_EQ(back.paths.size(), 0u);
  EXPECT_EQ(back, ds);
}

TEST(DatasetIo, RoundTripIsBitwise) {
  for (auto model : {SdeModel::ornstein_uhlenbeck(), SdeModel::heston_no_feller(2)}) {
    const auto ds = generate_dataset(model, TimeGrid(1.0, 100), 3, 12, 0.3, MaskMode::bernoulli_coords(0.5));
    const auto dir = temp_dir("roundtrip");
    write_dataset(ds, dir);
    EXPECT_EQ(read_dataset(dir), ds);
  }
}

TEST(DatasetIo, CorruptIndexNamesPath) {
  const auto ds = generate_dataset(SdeModel::ornstein_uhlenbeck(), TimeGrid(1.0, 20), 3, 4, 0.5);
  const auto dir = temp_dir("corrupt");
  write_dataset(ds, dir);
  const auto obs_file = (fs::path(dir) / "observations.csv").string();
  std::string csv = text::read_file(obs_file);
  // Swap two observation rows of path 2 so its indices decrease.
  std::vector<std::string> lines;
  std::size_t start = 0;
  for (std::size_t pos; (pos = csv.find('\n', start)) != std::string::npos; start = pos + 1)
    lines.push_back(csv.substr(start, pos - start));
  std::size_t first = 0;
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (lines[i].rfind("2,", 0) == 0 && lines[i] != "2,0,1") {
      first = i;
      break;
    }
  ASSERT_GT(first, 0u);
  ASSERT_LT(first + 1, lines.size());
  std::swap(lines[first], lines[first + 1]);
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  text::write_file(obs_file, out);
  try {
    read_dataset(dir);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("path_id 2"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MissingFileIsDataError) {
  const auto dir = temp_dir("missing");
  fs::create_directories(dir);
  EXPECT_THROW(read_dataset(dir), DataError);
}

TEST(Split, SizesPartitionAndDeterminism) {
  const auto ds = generate_dataset(SdeModel::black_scholes(), TimeGrid(1.0, 10), 10, 1);
  const auto [a, b] = split_dataset(ds, 0.8, 5);
  EXPECT_EQ(a.paths.size(), 8u);
  EXPECT_EQ(b.paths.size(), 2u);
  std::set<std::int64_t> ids;
  for (const auto& p : a.paths) ids.insert(p.path_id);
  for (const auto& p : b.paths) EXPECT_TRUE(ids.insert(p.path_id).second);
  EXPECT_EQ(ids.size(), 10u);
  const auto [a2, b2] = split_dataset(ds, 0.8, 5);
  EXPECT_EQ(a, a2);
  EXPECT_EQ(b, b2);
  EXPECT_THROW(split_dataset(ds, 1.0, 5), PreconditionError);
}
