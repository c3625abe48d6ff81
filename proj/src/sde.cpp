#include "njode/sde.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "njode/errors.hpp"
#include "njode/parallel.hpp"
#include "njode/rng.hpp"

namespace njode {

namespace {

struct KindEntry {
  SdeKind kind;
  std::string_view name;
};

constexpr std::array<KindEntry, 7> kKinds{{
    {SdeKind::kBlackScholes, "black_scholes"},
    {SdeKind::kOrnsteinUhlenbeck, "ornstein_uhlenbeck"},
    {SdeKind::kHeston, "heston"},
    {SdeKind::kHestonNoFeller, "heston_nofeller"},
    {SdeKind::kRegimeSwitch, "regime_switch"},
    {SdeKind::kSineDriftBS, "sine_drift_bs"},
    {SdeKind::kExternal, "external"},
}};

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::string format_state(std::span<const double> x) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ')';
  return os.str();
}

double ou_mean(double x, double k, double m, double s) {
  const double decay = std::exp(-k * s);
  return x * decay + m * (1.0 - decay);
}

}  // namespace

TimeGrid::TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
  if (steps < 1) throw PreconditionError("time grid needs at least one step");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw PreconditionError("time grid horizon must be positive");
  mesh_ = horizon / steps;
}

std::string_view kind_name(SdeKind kind) {
  for (const auto& e : kKinds)
    if (e.kind == kind) return e.name;
  return "unknown";
}

SdeKind kind_from_name(std::string_view name) {
  for (const auto& e : kKinds)
    if (e.name == name) return e.kind;
  // Short aliases accepted on the command line.
  if (name == "bs") return SdeKind::kBlackScholes;
  if (name == "ou") return SdeKind::kOrnsteinUhlenbeck;
  if (name == "regime") return SdeKind::kRegimeSwitch;
  if (name == "sine" || name == "sine_drift") return SdeKind::kSineDriftBS;
  throw PreconditionError("unknown model kind '" + std::string(name) + "'");
}

SdeModel::SdeModel(SdeKind kind, SdeParams params, int dim) : kind_(kind), params_(params), dim_(dim) { validate(); }

SdeModel SdeModel::black_scholes(double mu, double sigma, double x0) {
  SdeParams p;
  p.mu = mu;
  p.sigma = sigma;
  p.x0 = x0;
  return {SdeKind::kBlackScholes, p, 1};
}

SdeModel SdeModel::ornstein_uhlenbeck(double k, double m, double sigma, double x0) {
  SdeParams p;
  p.k = k;
  p.m = m;
  p.sigma = sigma;
  p.x0 = x0;
  return {SdeKind::kOrnsteinUhlenbeck, p, 1};
}

SdeModel SdeModel::heston(int dim) {
  SdeParams p;
  p.mu = 2.0;
  p.sigma = 0.3;
  p.x0 = 1.0;
  p.k = 2.0;
  p.m = 4.0;
  p.v0 = 4.0;
  p.rho = 0.5;
  return {SdeKind::kHeston, p, dim};
}

SdeModel SdeModel::heston_no_feller(int dim) {
  SdeParams p;
  p.mu = 2.0;
  p.sigma = 3.0;
  p.x0 = 1.0;
  p.k = 2.0;
  p.m = 1.0;
  p.v0 = 0.5;
  p.rho = 0.5;
  return {SdeKind::kHestonNoFeller, p, dim};
}

SdeModel SdeModel::regime_switch() {
  SdeParams p;
  p.k = 2.0;
  p.m = 10.0;
  p.sigma = 0.3;
  p.x0 = 1.0;
  p.mu = 2.0;
  p.sigma_bs = 0.3;
  p.t_switch = 0.5;
  return {SdeKind::kRegimeSwitch, p, 1};
}

SdeModel SdeModel::sine_drift(double beta) {
  SdeParams p;
  p.alpha = 2.0;
  p.beta = beta;
  p.sigma = 0.3;
  p.x0 = 1.0;
  return {SdeKind::kSineDriftBS, p, 1};
}

SdeModel SdeModel::external(int dim) { return {SdeKind::kExternal, SdeParams{}, dim}; }

SdeModel SdeModel::make_default(SdeKind kind, int dim) {
  switch (kind) {
    case SdeKind::kBlackScholes: return black_scholes();
    case SdeKind::kOrnsteinUhlenbeck: return ornstein_uhlenbeck();
    case SdeKind::kHeston: return heston(dim);
    case SdeKind::kHestonNoFeller: return heston_no_feller(dim);
    case SdeKind::kRegimeSwitch: return regime_switch();
    case SdeKind::kSineDriftBS: return sine_drift();
    case SdeKind::kExternal: return external(dim);
  }
  throw PreconditionError("unknown model kind");
}

int SdeModel::state_dim() const {
  if (is_heston()) return 2;
  return kind_ == SdeKind::kExternal ? dim_ : 1;
}

int SdeModel::noise_dim() const { return is_heston() ? 2 : 1; }

std::vector<std::pair<std::string, double>> SdeModel::named_params() const {
  const auto& p = params_;
  switch (kind_) {
    case SdeKind::kBlackScholes: return {{"mu", p.mu}, {"sigma", p.sigma}, {"x0", p.x0}};
    case SdeKind::kOrnsteinUhlenbeck: return {{"k", p.k}, {"m", p.m}, {"sigma", p.sigma}, {"x0", p.x0}};
    case SdeKind::kHeston:
    case SdeKind::kHestonNoFeller:
      return {{"mu", p.mu}, {"sigma", p.sigma}, {"x0", p.x0}, {"k", p.k},
              {"m", p.m},   {"v0", p.v0},       {"rho", p.rho}};
    case SdeKind::kSineDriftBS: return {{"alpha", p.alpha}, {"beta", p.beta}, {"sigma", p.sigma}, {"x0", p.x0}};
    case SdeKind::kRegimeSwitch:
      return {{"k", p.k},   {"m", p.m},   {"sigma", p.sigma}, {"x0", p.x0}, {"mu", p.mu}, {"sigma_bs", p.sigma_bs},
              {"t_switch", p.t_switch}};
    case SdeKind::kExternal: return {};
  }
  return {};
}

void SdeModel::set_param(std::string_view name, double value) {
  bool known = false;
  for (const auto& [n, v] : named_params()) known = known || n == name;
  if (!known)
    throw PreconditionError("parameter '" + std::string(name) + "' does not apply to model " +
                            std::string(kind_name(kind_)));
  auto& p = params_;
  if (name == "mu") p.mu = value;
  else if (name == "sigma") p.sigma = value;
  else if (name == "x0") p.x0 = value;
  else if (name == "k") p.k = value;
  else if (name == "m") p.m = value;
  else if (name == "v0") p.v0 = value;
  else if (name == "rho") p.rho = value;
  else if (name == "alpha") p.alpha = value;
  else if (name == "beta") p.beta = value;
  else if (name == "sigma_bs") p.sigma_bs = value;
  else if (name == "t_switch") p.t_switch = value;
}

std::vector<double> SdeModel::initial_state() const {
  if (is_heston()) return {params_.x0, params_.v0};
  if (kind_ == SdeKind::kExternal) throw PreconditionError("external model has no initial state");
  return {params_.x0};
}

void SdeModel::validate() const {
  for (const auto& [name, v] : named_params())
    if (!std::isfinite(v)) throw PreconditionError("parameter " + name + " is not finite");
  const auto& p = params_;
  // Zero diffusion is accepted so that degenerate (deterministic) datasets can be built.
  if (p.sigma < 0.0 && kind_ != SdeKind::kExternal) throw PreconditionError("sigma must be non-negative");
  switch (kind_) {
    case SdeKind::kBlackScholes:
    case SdeKind::kOrnsteinUhlenbeck:
    case SdeKind::kSineDriftBS:
      if (dim_ != 1) throw PreconditionError(std::string(kind_name(kind_)) + " is one-dimensional");
      if (kind_ == SdeKind::kSineDriftBS && !(p.alpha > 0.0 && p.beta > 0.0))
        throw PreconditionError("sine drift needs alpha > 0 and beta > 0");
      break;
    case SdeKind::kRegimeSwitch:
      if (dim_ != 1) throw PreconditionError("regime_switch is one-dimensional");
      if (p.sigma_bs < 0.0) throw PreconditionError("sigma_bs must be non-negative");
      if (!(p.t_switch > 0.0)) throw PreconditionError("t_switch must be positive");
      break;
    case SdeKind::kHeston:
    case SdeKind::kHestonNoFeller:
      if (dim_ != 1 && dim_ != 2) throw PreconditionError("heston dimension must be 1 or 2");
      if (!(p.k > 0.0 && p.m > 0.0 && p.v0 > 0.0)) throw PreconditionError("heston needs k, m, v0 > 0");
      if (std::abs(p.rho) > 1.0) throw PreconditionError("|rho| must not exceed 1");
      break;
    case SdeKind::kExternal:
      if (dim_ < 1) throw PreconditionError("dimension must be positive");
      break;
  }
}

void euler_maruyama_step(const SdeModel& model, double t, std::span<const double> x, double dt,
                         std::span<const double> dW, std::span<double> out) {
  if (!model.has_dynamics()) throw PreconditionError("model has no dynamics");
  if (!(dt > 0.0)) throw PreconditionError("step size must be positive");
  if (static_cast<int>(x.size()) != model.state_dim() || out.size() != x.size())
    throw PreconditionError("state size mismatch");
  if (static_cast<int>(dW.size()) != model.noise_dim()) throw PreconditionError("noise size mismatch");
  if (!all_finite(x)) throw NumericError("numeric blow-up: non-finite state " + format_state(x));

  const auto& p = model.params();
  switch (model.kind()) {
    case SdeKind::kBlackScholes: out[0] = x[0] + p.mu * x[0] * dt + p.sigma * x[0] * dW[0]; break;
    case SdeKind::kOrnsteinUhlenbeck: out[0] = x[0] - p.k * (x[0] - p.m) * dt + p.sigma * dW[0]; break;
    case SdeKind::kSineDriftBS: {
      const double drift = 0.5 * p.alpha * (std::sin(p.beta * t) + 1.0);
      out[0] = x[0] + drift * x[0] * dt + p.sigma * x[0] * dW[0];
      break;
    }
    case SdeKind::kRegimeSwitch:
      if (t < p.t_switch - 1e-12 * std::max(1.0, p.t_switch))
        out[0] = x[0] - p.k * (x[0] - p.m) * dt + p.sigma * dW[0];
      else
        out[0] = x[0] + p.mu * x[0] * dt + p.sigma_bs * x[0] * dW[0];
      break;
    case SdeKind::kHeston:
    case SdeKind::kHestonNoFeller: {
      const double v = x[1];
      const double vol = std::sqrt(std::max(v, 0.0));
      out[0] = x[0] + p.mu * x[0] * dt + vol * x[0] * dW[0];
      out[1] = v - p.k * (v - p.m) * dt + p.sigma * vol * dW[1];
      if (model.kind() == SdeKind::kHestonNoFeller) out[1] = std::max(out[1], 0.0);
      break;
    }
    case SdeKind::kExternal: break;
  }
  if (!all_finite(out)) throw NumericError("numeric blow-up: non-finite state after step at t=" + std::to_string(t));
}

std::vector<double> euler_maruyama_step(const SdeModel& model, double t, std::span<const double> x, double dt,
                                        std::span<const double> dW) {
  std::vector<double> out(x.size());
  euler_maruyama_step(model, t, x, dt, dW, out);
  return out;
}

void simulate_into(const SdeModel& model, const TimeGrid& grid, int start_index, std::span<const double> start_state,
                   std::uint64_t seed, std::uint64_t path_id, std::span<double> values) {
  const int d = model.dim();
  const int points = grid.points();
  if (static_cast<int>(values.size()) != d * points) throw PreconditionError("value buffer has wrong size");
  if (start_index < 0 || start_index >= points) throw PreconditionError("start index outside grid");
  if (static_cast<int>(start_state.size()) != model.state_dim()) throw PreconditionError("start state size mismatch");

  const CounterRng rng(mix_keys({seed, tag(StreamTag::kPathNoise), path_id}));
  const double dt = grid.mesh();
  const double sqrt_dt = std::sqrt(dt);
  const double rho = model.params().rho;
  const double rho_perp = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  const bool two_noises = model.noise_dim() == 2;

  std::array<double, 2> state{};
  std::array<double, 2> next{};
  const auto n = start_state.size();
  std::copy(start_state.begin(), start_state.end(), state.begin());
  for (int c = 0; c < d; ++c) values[static_cast<std::size_t>(c) * points + start_index] = state[c];

  for (int i = start_index; i < grid.steps(); ++i) {
    const auto [z1, z2] = rng.normal_pair(static_cast<std::uint64_t>(i));
    std::array<double, 2> dw{z1 * sqrt_dt, 0.0};
    if (two_noises) dw[1] = (rho * z1 + rho_perp * z2) * sqrt_dt;
    try {
      euler_maruyama_step(model, grid.time(i), std::span<const double>(state.data(), n), dt,
                          std::span<const double>(dw.data(), two_noises ? 2 : 1), std::span<double>(next.data(), n));
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (path " + std::to_string(path_id) + ", step " +
                         std::to_string(i) + ")");
    }
    state = next;
    for (int c = 0; c < d; ++c) values[static_cast<std::size_t>(c) * points + i + 1] = state[c];
  }
}

std::vector<double> simulate_path(const SdeModel& model, const TimeGrid& grid, std::uint64_t master_seed,
                                  std::uint64_t path_id) {
  std::vector<double> values(static_cast<std::size_t>(model.dim()) * grid.points());
  const auto x0 = model.initial_state();
  simulate_into(model, grid, 0, x0, master_seed, path_id, values);
  return values;
}

std::vector<std::vector<double>> simulate_paths(const SdeModel& model, const TimeGrid& grid, int n_paths,
                                                std::uint64_t master_seed, int workers) {
  if (n_paths < 1) throw PreconditionError("n_paths must be at least 1");
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n_paths));
  parallel_for(out.size(), workers, [&](std::size_t j) { out[j] = simulate_path(model, grid, master_seed, j); });
  return out;
}

std::string MaskMode::to_string() const {
  if (!bernoulli) return "full";
  std::ostringstream os;
  os.precision(17);
  os << "bernoulli:" << p_coord;
  return os.str();
}

MaskMode MaskMode::parse(std::string_view text) {
  if (text == "full") return full();
  constexpr std::string_view prefix = "bernoulli:";
  if (text.starts_with(prefix)) {
    const std::string rest(text.substr(prefix.size()));
    std::size_t used = 0;
    double p = 0.0;
    try {
      p = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != rest.size() || !(p > 0.0 && p <= 1.0))
      throw PreconditionError("mask mode '" + std::string(text) + "': coordinate probability must lie in (0, 1]");
    return bernoulli_coords(p);
  }
  throw PreconditionError("mask mode must be 'full' or 'bernoulli:<p>'");
}

bool ObservationSchedule::all_observed() const {
  return std::all_of(masks.begin(), masks.end(), [](std::uint8_t b) { return b == 1; });
}

void ObservationSchedule::validate(const TimeGrid& grid) const {
  if (indices.empty() || indices.front() != 0) throw PreconditionError("observation schedule must start at index 0");
  for (std::size_t i = 1; i < indices.size(); ++i)
    if (indices[i] <= indices[i - 1]) throw PreconditionError("observation indices must be strictly increasing");
  if (indices.back() > grid.steps()) throw PreconditionError("observation index beyond the grid");
  if (masks.size() != indices.size() * static_cast<std::size_t>(dim))
    throw PreconditionError("mask count does not match observation count");
  for (int o = 0; o < count(); ++o) {
    const auto m = mask(o);
    if (std::none_of(m.begin(), m.end(), [](std::uint8_t b) { return b == 1; }))
      throw PreconditionError("observation mask without any observed coordinate");
    if (std::any_of(m.begin(), m.end(), [](std::uint8_t b) { return b > 1; }))
      throw PreconditionError("mask entries must be 0 or 1");
  }
}

ObservationSchedule sample_observation_times(const TimeGrid& grid, double obs_prob, int dim, MaskMode mask_mode,
                                             std::uint64_t seed) {
  if (!(obs_prob > 0.0 && obs_prob <= 1.0)) throw PreconditionError("obs_prob must lie in (0, 1]");
  if (dim < 1) throw PreconditionError("dimension must be positive");
  if (mask_mode.bernoulli && !(mask_mode.p_coord > 0.0 && mask_mode.p_coord <= 1.0))
    throw PreconditionError("coordinate observation probability must lie in (0, 1]");

  ObservationSchedule s;
  s.dim = dim;
  s.indices.push_back(0);
  const CounterRng times(mix_keys({seed, tag(StreamTag::kObservationTimes)}));
  for (int i = 1; i <= grid.steps(); ++i)
    if (times.uniform(static_cast<std::uint64_t>(i)) < obs_prob) s.indices.push_back(i);

  s.masks.assign(s.indices.size() * static_cast<std::size_t>(dim), 1);
  if (mask_mode.bernoulli) {
    for (int o = 0; o < s.count(); ++o) {
      auto* m = s.masks.data() + static_cast<std::size_t>(o) * dim;
      for (std::uint64_t attempt = 0;; ++attempt) {
        const CounterRng bits(mix_keys({seed, tag(StreamTag::kObservationMasks), static_cast<std::uint64_t>(o), attempt}));
        bool any = false;
        for (int c = 0; c < dim; ++c) {
          m[c] = bits.uniform(static_cast<std::uint64_t>(c)) < mask_mode.p_coord ? 1 : 0;
          any = any || m[c] == 1;
        }
        if (any) break;
      }
    }
  }
  return s;
}

std::vector<double> Path::state_at(int index) const {
  std::vector<double> x(static_cast<std::size_t>(dim));
  for (int c = 0; c < dim; ++c) x[c] = value(c, index);
  return x;
}

Dataset generate_dataset(const SdeModel& model, const TimeGrid& grid, int n_paths, std::uint64_t master_seed,
                         double obs_prob, MaskMode mask_mode, int workers) {
  model.validate();
  if (!model.has_dynamics()) throw PreconditionError("cannot simulate an external model");
  if (n_paths < 0) throw PreconditionError("n_paths must be non-negative");
  if (!(obs_prob > 0.0 && obs_prob <= 1.0)) throw PreconditionError("obs_prob must lie in (0, 1]");
  Dataset ds;
  ds.model = model;
  ds.grid = grid;
  ds.master_seed = master_seed;
  ds.obs_prob = obs_prob;
  ds.mask_mode = mask_mode;
  ds.paths.resize(static_cast<std::size_t>(n_paths));
  parallel_for(ds.paths.size(), workers, [&](std::size_t j) {
    Path& p = ds.paths[j];
    p.path_id = static_cast<std::int64_t>(j);
    p.dim = model.dim();
    p.values = simulate_path(model, grid, master_seed, j);
    p.schedule = sample_observation_times(grid, obs_prob, model.dim(), mask_mode, mix_keys({master_seed, j}));
  });
  return ds;
}

std::vector<double> true_conditional_expectation(const SdeModel& model, std::span<const double> x_obs, double t_obs,
                                                 double t) {
  if (!model.has_oracle()) throw PreconditionError("no conditional-expectation oracle for model kind external");
  if (!(t >= t_obs)) throw PreconditionError("oracle requires t >= t_obs");
  if (static_cast<int>(x_obs.size()) != model.dim()) throw PreconditionError("observation size mismatch");
  const auto& p = model.params();
  const double s = t - t_obs;
  std::vector<double> out(x_obs.begin(), x_obs.end());
  switch (model.kind()) {
    case SdeKind::kBlackScholes: out[0] = x_obs[0] * std::exp(p.mu * s); break;
    case SdeKind::kOrnsteinUhlenbeck: out[0] = ou_mean(x_obs[0], p.k, p.m, s); break;
    case SdeKind::kHeston:
    case SdeKind::kHestonNoFeller:
      out[0] = x_obs[0] * std::exp(p.mu * s);
      if (model.dim() == 2) out[1] = ou_mean(x_obs[1], p.k, p.m, s);
      break;
    case SdeKind::kSineDriftBS: {
      const double integral =
          0.5 * p.alpha * ((std::cos(p.beta * t_obs) - std::cos(p.beta * t)) / p.beta + s);
      out[0] = x_obs[0] * std::exp(integral);
      break;
    }
    case SdeKind::kRegimeSwitch:
      if (t <= p.t_switch) {
        out[0] = ou_mean(x_obs[0], p.k, p.m, s);
      } else if (t_obs < p.t_switch) {
        out[0] = ou_mean(x_obs[0], p.k, p.m, p.t_switch - t_obs) * std::exp(p.mu * (t - p.t_switch));
      } else {
        out[0] = x_obs[0] * std::exp(p.mu * s);
      }
      break;
    case SdeKind::kExternal: break;
  }
  return out;
}

std::vector<double> oracle_on_grid(const SdeModel& model, const Path& path, const TimeGrid& grid) {
  const int d = path.dim;
  const int points = grid.points();
  std::vector<double> out(static_cast<std::size_t>(d) * points);
  const auto& idx = path.schedule.indices;
  std::size_t obs = 0;
  std::vector<double> x_last = path.state_at(idx[0]);
  for (int i = 0; i < points; ++i) {
    while (obs + 1 < idx.size() && idx[obs + 1] <= i) {
      ++obs;
      x_last = path.state_at(idx[obs]);
    }
    const auto xhat = true_conditional_expectation(model, x_last, grid.time(idx[obs]), grid.time(i));
    for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(c) * points + i] = xhat[c];
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw PreconditionError("train_frac must lie in (0, 1)");
  const std::size_t n = ds.paths.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_frac));
  const auto perm = random_permutation(n, mix_keys({seed, tag(StreamTag::kSplit)}));
  std::vector<std::size_t> train_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto subset = [&](const std::vector<std::size_t>& idx) {
    Dataset out;
    out.model = ds.model;
    out.grid = ds.grid;
    out.master_seed = ds.master_seed;
    out.obs_prob = ds.obs_prob;
    out.mask_mode = ds.mask_mode;
    out.paths.reserve(idx.size());
    for (auto i : idx) out.paths.push_back(ds.paths[i]);
    return out;
  };
  return {subset(train_idx), subset(test_idx)};
}

}  // namespace njode
