#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace njode {

// Equidistant grid t_i = i * T / K, i = 0..K.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, int steps);

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  double mesh() const { return mesh_; }
  int points() const { return steps_ + 1; }
  double time(int index) const { return index * mesh_; }

  bool operator==(const TimeGrid&) const = default;

 private:
  double horizon_ = 1.0;
  int steps_ = 100;
  double mesh_ = 0.01;
};

enum class SdeKind {
  kBlackScholes,
  kOrnsteinUhlenbeck,
  kHeston,
  kHestonNoFeller,
  kRegimeSwitch,
  kSineDriftBS,
  // Data of unknown origin loaded from disk: no dynamics, no oracle.
  kExternal,
};

std::string_view kind_name(SdeKind kind);
SdeKind kind_from_name(std::string_view name);

// Parameters for every supported kind. Only the fields listed by
// SdeModel::param_names() are meaningful for a given kind.
struct SdeParams {
  double mu = 0.0;
  double sigma = 0.0;
  double x0 = 1.0;
  double k = 0.0;
  double m = 0.0;
  double v0 = 0.0;
  double rho = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double sigma_bs = 0.0;  // Black-Scholes leg of the regime switch
  double t_switch = 0.5;

  bool operator==(const SdeParams&) const = default;
};

class SdeModel {
 public:
  SdeModel() = default;
  SdeModel(SdeKind kind, SdeParams params, int dim);

  // Defaults used throughout the experiments.
  static SdeModel black_scholes(double mu = 2.0, double sigma = 0.3, double x0 = 1.0);
  static SdeModel ornstein_uhlenbeck(double k = 2.0, double m = 4.0, double sigma = 0.3, double x0 = 1.0);
  static SdeModel heston(int dim = 1);
  static SdeModel heston_no_feller(int dim = 2);
  static SdeModel regime_switch();
  static SdeModel sine_drift(double beta = 6.283185307179586);
  static SdeModel external(int dim);
  static SdeModel make_default(SdeKind kind, int dim);

  SdeKind kind() const { return kind_; }
  const SdeParams& params() const { return params_; }
  // Number of observed coordinates d_X.
  int dim() const { return dim_; }
  // Internal state size (Heston carries the variance even when d_X = 1).
  int state_dim() const;
  // Number of Brownian drivers.
  int noise_dim() const;
  bool is_heston() const { return kind_ == SdeKind::kHeston || kind_ == SdeKind::kHestonNoFeller; }
  bool has_dynamics() const { return kind_ != SdeKind::kExternal; }
  bool has_oracle() const { return kind_ != SdeKind::kExternal; }

  std::vector<std::pair<std::string, double>> named_params() const;
  void set_param(std::string_view name, double value);
  std::vector<double> initial_state() const;

  void validate() const;

  bool operator==(const SdeModel&) const = default;

 private:
  SdeKind kind_ = SdeKind::kBlackScholes;
  SdeParams params_{};
  int dim_ = 1;
};

// One Euler-Maruyama step from (t, x) with Brownian increments dW (already
// correlated for Heston: dW = (dW_price, dZ_variance)). Writes the new state
// into `out` (same size as x).
void euler_maruyama_step(const SdeModel& model, double t, std::span<const double> x, double dt,
                         std::span<const double> dW, std::span<double> out);
std::vector<double> euler_maruyama_step(const SdeModel& model, double t, std::span<const double> x,
                                        double dt, std::span<const double> dW);

// Simulates the full internal state from `start_state` at grid index
// `start_index` up to the end of the grid, writing observed coordinates
// into `values` (d_X x (K+1), row-major; entries before start_index are
// left untouched). Noise is keyed on (seed, path_id, step).
void simulate_into(const SdeModel& model, const TimeGrid& grid, int start_index,
                   std::span<const double> start_state, std::uint64_t seed, std::uint64_t path_id,
                   std::span<double> values);

// Returns the observed-coordinate values of one path, d_X x (K+1) row-major.
std::vector<double> simulate_path(const SdeModel& model, const TimeGrid& grid, std::uint64_t master_seed,
                                  std::uint64_t path_id);

std::vector<std::vector<double>> simulate_paths(const SdeModel& model, const TimeGrid& grid, int n_paths,
                                                std::uint64_t master_seed, int workers = 1);

struct MaskMode {
  bool bernoulli = false;
  double p_coord = 1.0;

  static MaskMode full() { return {}; }
  static MaskMode bernoulli_coords(double p) { return {true, p}; }
  std::string to_string() const;
  static MaskMode parse(std::string_view text);
  bool operator==(const MaskMode&) const = default;
};

struct ObservationSchedule {
  std::vector<int> indices;
  // n x d_X flattened, 0/1 entries.
  std::vector<std::uint8_t> masks;
  int dim = 1;

  int count() const { return static_cast<int>(indices.size()); }
  std::span<const std::uint8_t> mask(int obs) const {
    return {masks.data() + static_cast<std::size_t>(obs) * dim, static_cast<std::size_t>(dim)};
  }
  bool all_observed() const;
  // Throws PreconditionError if an invariant is violated.
  void validate(const TimeGrid& grid) const;

  bool operator==(const ObservationSchedule&) const = default;
};

ObservationSchedule sample_observation_times(const TimeGrid& grid, double obs_prob, int dim, MaskMode mask_mode,
                                             std::uint64_t seed);

struct Path {
  // d_X x (K+1), row-major.
  std::vector<double> values;
  ObservationSchedule schedule;
  std::int64_t path_id = 0;
  int dim = 1;

  int points() const { return static_cast<int>(values.size()) / dim; }
  double value(int coord, int index) const { return values[static_cast<std::size_t>(coord) * points() + index]; }
  std::vector<double> state_at(int index) const;
  std::vector<double> observation(int obs) const { return state_at(schedule.indices[obs]); }

  bool operator==(const Path&) const = default;
};

struct Dataset {
  SdeModel model;
  TimeGrid grid;
  std::vector<Path> paths;
  std::uint64_t master_seed = 0;
  double obs_prob = 0.1;
  MaskMode mask_mode{};

  int dim() const { return model.dim(); }
  std::size_t size() const { return paths.size(); }
  bool operator==(const Dataset&) const = default;
};

// Simulates paths and samples observation schedules. Path j uses noise keyed
// on (master_seed, j) and schedule keyed on (master_seed, j).
Dataset generate_dataset(const SdeModel& model, const TimeGrid& grid, int n_paths, std::uint64_t master_seed,
                         double obs_prob = 0.1, MaskMode mask_mode = {}, int workers = 1);

// E[X_t | X_{t_obs} = x_obs]. For Heston with d_X = 2, x_obs is (price, variance).
std::vector<double> true_conditional_expectation(const SdeModel& model, std::span<const double> x_obs,
                                                 double t_obs, double t);

// Oracle process on the grid, right-continuous at observations:
// d_X x (K+1), row-major.
std::vector<double> oracle_on_grid(const SdeModel& model, const Path& path, const TimeGrid& grid);

// Disjoint deterministic partition: floor(N * train_frac) paths first.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_frac, std::uint64_t seed);

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

}  // namespace njode
