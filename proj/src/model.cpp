#include "njode/model.hpp"

#include <cmath>
#include <filesystem>

#include "json.hpp"

#include "njode/errors.hpp"
#include "njode/parallel.hpp"
#include "njode/rng.hpp"
#include "njode/text_table.hpp"

namespace njode {

using nn::Matrix;
using nn::Tape;
using nn::Var;

namespace {

constexpr const char* kCheckpointVersion = "njode-checkpoint-1";

// Dropout site tags within one grid index.
enum SiteTag : std::uint64_t {
  kSiteField = 0,
  kSiteJump = 1,
  kSiteReadoutLeft = 2,
  kSiteReadoutJump = 3,
};

std::uint64_t site(std::uint64_t index, SiteTag tag) { return index * 8 + tag; }

nn::DropoutContext dropout_context(const ForwardMode& mode, std::uint64_t site_id) {
  return {mode.nn.seed, mode.row_keys, site_id};
}

}  // namespace

std::string_view input_mode_name(InputMode mode) { return mode == InputMode::kMasked ? "masked" : "full"; }

InputMode input_mode_from_name(std::string_view name) {
  if (name == "full") return InputMode::kFull;
  if (name == "masked") return InputMode::kMasked;
  throw PreconditionError("mode must be 'full' or 'masked'");
}

void NjodeConfig::validate() const {
  if (input_dim < 1 || latent_dim < 1 || hidden < 1) throw PreconditionError("network dimensions must be positive");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw PreconditionError("integration step must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw PreconditionError("dropout rate must lie in [0, 1)");
}

NjodeModel::NjodeModel(const NjodeConfig& config) : config_(config) {
  config_.validate();
  const int d_x = config_.input_dim;
  const int d_h = config_.latent_dim;
  const int m = config_.hidden;
  const int jump_in = masked() ? 2 * d_x : d_x;
  ode_field_ = nn::init_weights({d_h + d_x + 2, m, m, d_h}, mix_keys({config_.seed, 1}), config_.dropout, false,
                                "ode_field");
  jump_ = nn::init_weights({jump_in, m, m, d_h}, mix_keys({config_.seed, 2}), config_.dropout, false, "jump");
  readout_ = nn::init_weights({d_h, m, m, d_x}, mix_keys({config_.seed, 3}), config_.dropout, false, "readout");
}

std::vector<nn::Parameter*> NjodeModel::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto* net : {&ode_field_, &jump_, &readout_})
    for (auto* p : net->parameters()) out.push_back(p);
  return out;
}

std::vector<const nn::Parameter*> NjodeModel::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (const auto* net : {&ode_field_, &jump_, &readout_})
    for (const auto* p : net->parameters()) out.push_back(p);
  return out;
}

std::size_t NjodeModel::parameter_count() const {
  return ode_field_.parameter_count() + jump_.parameter_count() + readout_.parameter_count();
}

void NjodeModel::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
  auto net_doc = [](const nn::FeedForwardNet& net) {
    return nlohmann::json{{"widths", net.widths()}, {"dropout", net.dropout()}, {"residual", net.residual()}};
  };
  const nlohmann::json meta{
      {"format_version", kCheckpointVersion},
      {"input_dim", config_.input_dim},
      {"latent_dim", config_.latent_dim},
      {"hidden", config_.hidden},
      {"dropout", config_.dropout},
      {"mode", std::string(input_mode_name(config_.mode))},
      {"dt", config_.dt},
      {"residual_shortcut", config_.residual},
      {"seed", config_.seed},
      {"nets", {{"ode_field", net_doc(ode_field_)}, {"jump", net_doc(jump_)}, {"readout", net_doc(readout_)}}},
  };
  text::write_file((fs::path(dir) / "checkpoint.json").string(), meta.dump(2) + "\n");
  const auto params = parameters();
  text::write_file((fs::path(dir) / "checkpoint.csv").string(), nn::parameters_to_csv(params));
}

NjodeModel NjodeModel::load(const std::string& dir) {
  namespace fs = std::filesystem;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text::read_file((fs::path(dir) / "checkpoint.json").string()));
    if (meta.at("format_version").get<std::string>() != kCheckpointVersion)
      throw DataError("checkpoint.json: unsupported format_version");
    NjodeConfig cfg;
    cfg.input_dim = meta.at("input_dim").get<int>();
    cfg.latent_dim = meta.at("latent_dim").get<int>();
    cfg.hidden = meta.at("hidden").get<int>();
    cfg.dropout = meta.at("dropout").get<double>();
    cfg.mode = input_mode_from_name(meta.at("mode").get<std::string>());
    cfg.dt = meta.at("dt").get<double>();
    cfg.residual = meta.at("residual_shortcut").get<bool>();
    cfg.seed = meta.at("seed").get<std::uint64_t>();
    NjodeModel model(cfg);
    auto params = model.parameters();
    nn::parameters_from_csv(text::read_file((fs::path(dir) / "checkpoint.csv").string()), params);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint.json: ") + e.what());
  } catch (const PreconditionError& e) {
    throw DataError(std::string("checkpoint.json: ") + e.what());
  }
}

Var jump_update(const NjodeModel& model, Tape& tape, Var x_obs, const Matrix* mask, const ForwardMode& mode,
                std::uint64_t site_id) {
  const Matrix& x = tape.value(x_obs);
  if (x.cols() != model.input_dim())
    throw PreconditionError("jump_update: observation width " + std::to_string(x.cols()) + ", expected " +
                            std::to_string(model.input_dim()));
  if (!x.allFinite()) throw NumericError("jump_update: non-finite observation");
  if (model.masked() != (mask != nullptr))
    throw PreconditionError(model.masked() ? "jump_update: masked model needs a mask" : "jump_update: unexpected mask");
  if (mask != nullptr && (mask->rows() != x.rows() || mask->cols() != x.cols()))
    throw PreconditionError("jump_update: mask shape");
  Var in = tape.tanh(x_obs);
  if (mask != nullptr) {
    in = tape.concat_cols({in, tape.constant(*mask)});
  }
  const auto ctx = dropout_context(mode, site_id);
  Var h = model.jump().forward(tape, in, mode.nn.train ? &ctx : nullptr);
  if (model.config().residual) h = tape.add_leading_cols(h, x_obs);
  return h;
}

void evolve_latent(const NjodeModel& model, Tape& tape, LatentCarry& carry, double t_from, double t_to,
                   const ForwardMode& mode, std::uint64_t& step_counter) {
  const double dt = model.config().dt;
  if (!(t_to >= t_from)) throw PreconditionError("evolve_latent: t_to < t_from");
  const double span = t_to - t_from;
  const auto steps = static_cast<long long>(std::llround(span / dt));
  if (std::abs(static_cast<double>(steps) * dt - span) > 1e-9 * std::max(1.0, span))
    throw PreconditionError("evolve_latent: interval is not a multiple of the integration step");
  const Eigen::Index rows = tape.value(carry.h).rows();
  if (static_cast<Eigen::Index>(carry.tau.size()) != rows) throw PreconditionError("evolve_latent: tau size");

  const Var x_squashed = tape.tanh(carry.x_last);
  for (long long k = 0; k < steps; ++k) {
    const double s = t_from + static_cast<double>(k) * dt;
    Matrix times(rows, 2);
    for (Eigen::Index r = 0; r < rows; ++r) {
      times(r, 0) = carry.tau[static_cast<std::size_t>(r)];
      times(r, 1) = s - carry.tau[static_cast<std::size_t>(r)];
    }
    const Var in = tape.concat_cols({tape.tanh(carry.h), x_squashed, tape.constant(std::move(times))});
    const auto ctx = dropout_context(mode, site(step_counter, kSiteField));
    const Var f = model.ode_field().forward(tape, in, mode.nn.train ? &ctx : nullptr);
    carry.h = tape.axpy(carry.h, dt, f);
    ++step_counter;
    if (!tape.value(carry.h).allFinite())
      throw NumericError("latent blow-up at t=" + std::to_string(s + dt));
  }
}

Var readout(const NjodeModel& model, Tape& tape, Var h, const ForwardMode& mode, std::uint64_t site_id) {
  if (tape.value(h).cols() != model.latent_dim()) throw PreconditionError("readout: latent width mismatch");
  if (!tape.value(h).allFinite()) throw NumericError("readout: non-finite latent state");
  const auto ctx = dropout_context(mode, site_id);
  Var y = model.readout().forward(tape, tape.tanh(h), mode.nn.train ? &ctx : nullptr);
  if (model.config().residual) y = tape.add_leading_cols(y, h);
  return y;
}

BatchForward::BatchForward(const NjodeModel& model, const TimeGrid& grid, std::span<const Path* const> paths,
                           const ForwardOptions& options)
    : model_(model), grid_(grid), paths_(paths.begin(), paths.end()), options_(options) {
  if (paths_.empty()) throw PreconditionError("forward: empty batch");
  run();
}

void BatchForward::run() {
  const auto rows = static_cast<int>(paths_.size());
  const int d = model_.input_dim();
  const int points = grid_.points();
  const double ratio = grid_.mesh() / model_.config().dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 1.0)
    throw PreconditionError("integration step must divide the grid mesh");

  // Observation (row, ordinal) pairs per grid index.
  std::vector<std::vector<std::pair<int, int>>> at(static_cast<std::size_t>(points));
  row_keys_.resize(paths_.size());
  for (int r = 0; r < rows; ++r) {
    const Path& p = *paths_[static_cast<std::size_t>(r)];
    if (p.dim != d) throw PreconditionError("forward: path dimension does not match the model");
    if (p.points() != points) throw PreconditionError("forward: path length does not match the grid");
    p.schedule.validate(grid_);
    row_keys_[static_cast<std::size_t>(r)] = static_cast<std::uint64_t>(p.path_id);
    for (int o = 0; o < p.schedule.count(); ++o)
      at[static_cast<std::size_t>(p.schedule.indices[o])].emplace_back(r, o);
  }
  left_.assign(paths_.size(), {});
  jump_.assign(paths_.size(), {});
  input_.assign(paths_.size(), {});
  for (int r = 0; r < rows; ++r) {
    const auto n = static_cast<std::size_t>(paths_[static_cast<std::size_t>(r)]->schedule.count());
    left_[static_cast<std::size_t>(r)].resize(n);
    jump_[static_cast<std::size_t>(r)].resize(n);
    input_[static_cast<std::size_t>(r)].resize(n);
  }
  if (options_.record_grid) grid_values_.assign(paths_.size(), Matrix(points, d));

  const bool masked = model_.masked();
  auto subset_mode = [&](const std::vector<int>& subset, std::vector<std::uint64_t>& keys) {
    keys.resize(subset.size());
    for (std::size_t i = 0; i < subset.size(); ++i) keys[i] = row_keys_[static_cast<std::size_t>(subset[i])];
    return ForwardMode{options_.nn, keys};
  };
  const ForwardMode all_rows{options_.nn, row_keys_};

  LatentCarry carry;
  carry.tau.assign(paths_.size(), 0.0);
  std::uint64_t step_counter = 0;
  std::vector<std::uint64_t> keys;

  for (int i = 0; i < points; ++i) {
    const auto& obs = at[static_cast<std::size_t>(i)];
    const double t = grid_.time(i);
    if (i > 0) evolve_latent(model_, tape_, carry, grid_.time(i - 1), t, all_rows, step_counter);

    std::vector<int> obs_rows;
    for (const auto& [r, o] : obs) obs_rows.push_back(r);
    const auto n_obs = static_cast<Eigen::Index>(obs_rows.size());

    Var y_pre;
    if (i > 0 && options_.record_grid) y_pre = readout(model_, tape_, carry.h, all_rows, site(i, kSiteReadoutLeft));

    if (n_obs > 0) {
      const ForwardMode obs_mode = subset_mode(obs_rows, keys);
      Matrix x(n_obs, d);
      Matrix mask(n_obs, d);
      for (Eigen::Index k = 0; k < n_obs; ++k) {
        const auto& [r, o] = obs[static_cast<std::size_t>(k)];
        const Path& p = *paths_[static_cast<std::size_t>(r)];
        const auto m = p.schedule.mask(o);
        for (int c = 0; c < d; ++c) {
          x(k, c) = p.value(c, i);
          mask(k, c) = m[static_cast<std::size_t>(c)];
        }
      }

      Var y_left;
      if (i > 0) {
        y_left = options_.record_grid ? tape_.gather_rows(y_pre, obs_rows)
                                      : readout(model_, tape_, tape_.gather_rows(carry.h, obs_rows), obs_mode,
                                                site(i, kSiteReadoutLeft));
      }

      Var x_in;
      if (!masked) {
        x_in = tape_.constant(x);
      } else {
        // x~ = m .* x + (1 - m) .* y_left; nothing to impute from before t_0.
        const Matrix observed = mask.cwiseProduct(x);
        if (i == 0) {
          x_in = tape_.constant(observed);
        } else {
          x_in = tape_.affine_const(y_left, Matrix::Ones(n_obs, d) - mask, observed);
        }
      }

      const Var h_new = jump_update(model_, tape_, x_in, masked ? &mask : nullptr, obs_mode, site(i, kSiteJump));
      const Var y_jump = readout(model_, tape_, h_new, obs_mode, site(i, kSiteReadoutJump));
      if (i == 0) {
        carry.h = h_new;
        carry.x_last = masked ? y_jump : x_in;
      } else {
        carry.h = tape_.scatter_rows(carry.h, obs_rows, h_new);
        carry.x_last = tape_.scatter_rows(carry.x_last, obs_rows, masked ? y_jump : x_in);
      }
      for (Eigen::Index k = 0; k < n_obs; ++k) {
        const auto& [r, o] = obs[static_cast<std::size_t>(k)];
        const auto rr = static_cast<std::size_t>(r);
        carry.tau[rr] = t;
        jump_[rr][static_cast<std::size_t>(o)] = {y_jump, static_cast<int>(k)};
        left_[rr][static_cast<std::size_t>(o)] = i == 0 ? ObsRef{y_jump, static_cast<int>(k)}
                                                         : ObsRef{y_left, static_cast<int>(k)};
        input_[rr][static_cast<std::size_t>(o)] = {x_in, static_cast<int>(k)};
      }
      if (options_.record_grid) {
        const Matrix& yj = tape_.value(y_jump);
        for (Eigen::Index k = 0; k < n_obs; ++k)
          grid_values_[static_cast<std::size_t>(obs_rows[static_cast<std::size_t>(k)])].row(i) = yj.row(k);
      }
    }
    if (i > 0 && options_.record_grid) {
      const Matrix& yp = tape_.value(y_pre);
      std::vector<bool> jumped(paths_.size(), false);
      for (int r : obs_rows) jumped[static_cast<std::size_t>(r)] = true;
      for (int r = 0; r < rows; ++r)
        if (!jumped[static_cast<std::size_t>(r)]) grid_values_[static_cast<std::size_t>(r)].row(i) = yp.row(r);
    }
    if (i == 0 && static_cast<int>(obs_rows.size()) != rows)
      throw PreconditionError("forward: every path must be observed at t_0");
  }
  h_final_ = tape_.value(carry.h);
}

ForwardTrace BatchForward::trace(std::size_t row) const {
  ForwardTrace tr;
  const auto& left = left_[row];
  const int d = model_.input_dim();
  const auto n = static_cast<Eigen::Index>(left.size());
  tr.y_left.resize(n, d);
  tr.y_jump.resize(n, d);
  tr.x_input.resize(n, d);
  for (Eigen::Index o = 0; o < n; ++o) {
    const auto oo = static_cast<std::size_t>(o);
    tr.y_left.row(o) = tape_.value(left[oo].var).row(left[oo].row);
    tr.y_jump.row(o) = tape_.value(jump_[row][oo].var).row(jump_[row][oo].row);
    tr.x_input.row(o) = tape_.value(input_[row][oo].var).row(input_[row][oo].row);
  }
  if (options_.record_grid) tr.y_grid = grid_values_[row];
  const auto r = static_cast<Eigen::Index>(row);
  tr.h_final.assign(static_cast<std::size_t>(h_final_.cols()), 0.0);
  for (Eigen::Index c = 0; c < h_final_.cols(); ++c) tr.h_final[static_cast<std::size_t>(c)] = h_final_(r, c);
  return tr;
}

void BatchForward::seed_observation(std::size_t row, int obs, std::span<const double> d_jump,
                                    std::span<const double> d_left) {
  const auto o = static_cast<std::size_t>(obs);
  const auto& j = jump_[row][o];
  const auto& l = left_[row][o];
  Matrix& gj = tape_.grad(j.var);
  for (std::size_t c = 0; c < d_jump.size(); ++c) gj(j.row, static_cast<Eigen::Index>(c)) += d_jump[c];
  Matrix& gl = tape_.grad(l.var);
  for (std::size_t c = 0; c < d_left.size(); ++c) gl(l.row, static_cast<Eigen::Index>(c)) += d_left[c];
}

void BatchForward::backward() { tape_.backward(); }

std::vector<Matrix> BatchForward::parameter_grads() const {
  std::vector<Matrix> out;
  for (const nn::Parameter* p : model_.parameters()) {
    const Matrix* g = tape_.parameter_grad(*p);
    out.push_back(g ? *g : Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  return out;
}

ForwardTrace forward_path(const NjodeModel& model, const Path& path, const TimeGrid& grid,
                          const ForwardOptions& options) {
  const Path* p = &path;
  BatchForward fwd(model, grid, std::span<const Path* const>(&p, 1), options);
  return fwd.trace(0);
}

std::vector<ForwardTrace> forward_paths(const NjodeModel& model, std::span<const Path> paths, const TimeGrid& grid,
                                        int workers, bool record_grid) {
  std::vector<ForwardTrace> out(paths.size());
  const std::size_t chunks = (paths.size() + kChunkRows - 1) / kChunkRows;
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows;
    const std::size_t end = std::min(paths.size(), begin + kChunkRows);
    std::vector<const Path*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&paths[i]);
    ForwardOptions opts;
    opts.record_grid = record_grid;
    BatchForward fwd(model, grid, ptrs, opts);
    for (std::size_t i = begin; i < end; ++i) out[i] = fwd.trace(i - begin);
  });
  return out;
}

}  // namespace njode
