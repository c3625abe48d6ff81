#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "njode/net.hpp"
#include "njode/sde.hpp"

namespace njode {

enum class InputMode {
  kFull,
  // Self-imputation: unobserved coordinates are filled with the model's own
  // pre-jump prediction and the mask is fed to the jump network.
  kMasked,
};

std::string_view input_mode_name(InputMode mode);
InputMode input_mode_from_name(std::string_view name);

struct NjodeConfig {
  int input_dim = 1;    // d_X, equal to the output dimension d_Y
  int latent_dim = 10;  // d_H
  int hidden = 50;      // width M of both hidden layers in every network
  double dropout = 0.1;
  InputMode mode = InputMode::kFull;
  double dt = 0.01;  // Euler step, must divide the data grid mesh
  // Shortcut from the raw network input onto the leading output coordinates
  // of the jump and readout networks.
  bool residual = true;
  std::uint64_t seed = 0;

  void validate() const;
};

class NjodeModel {
 public:
  NjodeModel() = default;
  explicit NjodeModel(const NjodeConfig& config);

  const NjodeConfig& config() const { return config_; }
  int input_dim() const { return config_.input_dim; }
  int latent_dim() const { return config_.latent_dim; }
  bool masked() const { return config_.mode == InputMode::kMasked; }

  // f: (tanh h, tanh x_last, tau, t - tau) -> dh/dt
  nn::FeedForwardNet& ode_field() { return ode_field_; }
  const nn::FeedForwardNet& ode_field() const { return ode_field_; }
  // rho: tanh x (or (tanh x~, mask)) -> h
  nn::FeedForwardNet& jump() { return jump_; }
  const nn::FeedForwardNet& jump() const { return jump_; }
  // g: tanh h -> y
  nn::FeedForwardNet& readout() { return readout_; }
  const nn::FeedForwardNet& readout() const { return readout_; }

  // Fixed order: ode_field, jump, readout.
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  std::size_t parameter_count() const;

  // checkpoint.json (metadata) + checkpoint.csv (parameter table).
  void save(const std::string& dir) const;
  static NjodeModel load(const std::string& dir);

 private:
  NjodeConfig config_;
  nn::FeedForwardNet ode_field_;
  nn::FeedForwardNet jump_;
  nn::FeedForwardNet readout_;
};

// Dropout keys for the rows of a batch: row r uses row_keys[r] (the path id).
struct ForwardMode {
  nn::NetMode nn = nn::NetMode::eval();
  std::span<const std::uint64_t> row_keys;
};

// Latent state carried between observations, one row per path.
struct LatentCarry {
  nn::Var h;       // B x d_H
  nn::Var x_last;  // B x d_X, raw observation (full) or post-jump output (masked)
  std::vector<double> tau;  // time of the last observation per row
};

// h = rho(tanh x) in full mode, h = rho(tanh x~ ++ mask) in masked mode.
nn::Var jump_update(const NjodeModel& model, nn::Tape& tape, nn::Var x_obs, const nn::Matrix* mask,
                    const ForwardMode& mode, std::uint64_t site);

// Euler steps h <- h + dt * f(tanh h, tanh x_last, tau, s - tau) from t_from
// to t_to. `step_counter` numbers the steps (used for dropout keys).
void evolve_latent(const NjodeModel& model, nn::Tape& tape, LatentCarry& carry, double t_from, double t_to,
                   const ForwardMode& mode, std::uint64_t& step_counter);

// y = g(tanh h) + h[:, :d_Y]
nn::Var readout(const NjodeModel& model, nn::Tape& tape, nn::Var h, const ForwardMode& mode, std::uint64_t site);

struct ForwardTrace {
  nn::Matrix y_grid;   // (K+1) x d_Y right limits; empty when grid recording is off
  nn::Matrix y_left;   // n x d_Y, Y_{t_i-}; row 0 equals y_jump row 0
  nn::Matrix y_jump;   // n x d_Y, Y_{t_i}
  nn::Matrix x_input;  // n x d_X, observation fed to the jump network (x~ in masked mode)
  std::vector<double> h_final;
};

struct ForwardOptions {
  nn::NetMode nn = nn::NetMode::eval();
  bool record_grid = true;
};

// Runs a batch of paths through one tape. All paths must live on `grid`.
class BatchForward {
 public:
  BatchForward(const NjodeModel& model, const TimeGrid& grid, std::span<const Path* const> paths,
               const ForwardOptions& options);

  std::size_t size() const { return paths_.size(); }
  ForwardTrace trace(std::size_t row) const;

  // Adds dL/dY_{t_o} and dL/dY_{t_o-} for observation o of path `row`.
  void seed_observation(std::size_t row, int obs, std::span<const double> d_jump, std::span<const double> d_left);
  void backward();
  // Gradients in NjodeModel::parameters() order (zeros for unused ones).
  std::vector<nn::Matrix> parameter_grads() const;
  nn::Tape& tape() { return tape_; }

 private:
  struct ObsRef {
    nn::Var var;
    int row = 0;
  };

  void run();

  const NjodeModel& model_;
  TimeGrid grid_;
  std::vector<const Path*> paths_;
  ForwardOptions options_;
  std::vector<std::uint64_t> row_keys_;
  nn::Tape tape_;
  std::vector<std::vector<ObsRef>> left_;
  std::vector<std::vector<ObsRef>> jump_;
  std::vector<std::vector<ObsRef>> input_;
  std::vector<nn::Matrix> grid_values_;
  nn::Matrix h_final_;
};

ForwardTrace forward_path(const NjodeModel& model, const Path& path, const TimeGrid& grid,
                          const ForwardOptions& options = {});

// Paths are processed in fixed chunks of this many rows; chunking never
// depends on the worker count.
inline constexpr std::size_t kChunkRows = 25;

// Eval-mode traces for many paths, computed chunk by chunk.
std::vector<ForwardTrace> forward_paths(const NjodeModel& model, std::span<const Path> paths, const TimeGrid& grid,
                                        int workers = 1, bool record_grid = true);

}  // namespace njode
