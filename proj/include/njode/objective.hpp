#pragma once

#include <span>
#include <vector>

#include "njode/model.hpp"
#include "njode/sde.hpp"

namespace njode {

struct LossReport {
  int epoch = 0;
  double train_loss = 0.0;  // mean minibatch loss during the epoch (dropout active)
  double test_loss = 0.0;   // eval-mode loss on the test split
  double oracle_loss = 0.0;
  // (test_loss - oracle_loss) / oracle_loss, both on the test split.
  double relative_difference = 0.0;
  double eval_metric = 0.0;
  // Standard error of the per-path difference (model term - oracle term);
  // not exported to curves.csv.
  double gap_se = 0.0;
};

// One observation's contribution (|x - y| + |y - y_-|)^2, with the mask
// applied inside both norms when `mask` is non-empty.
double observation_term(std::span<const double> x, std::span<const double> y_jump, std::span<const double> y_left,
                        std::span<const std::uint8_t> mask = {});

// Per-path term of the objective: average over observations after t_0,
// zero when there are none.
double path_loss_term(const Path& path, const ForwardTrace& trace, bool masked = false);

std::vector<double> path_losses(std::span<const Path> paths, std::span<const ForwardTrace> traces,
                                bool masked = false);
double empirical_loss(std::span<const Path> paths, std::span<const ForwardTrace> traces);
double masked_loss(std::span<const Path> paths, std::span<const ForwardTrace> traces);

// Adds weight * d(path term)/dY for every batch row into `fwd` and returns
// sum_r weight * term_r. Call fwd.backward() afterwards.
double seed_loss_gradients(BatchForward& fwd, std::span<const Path* const> paths, bool masked, double weight);

// Splits a long path into consecutive two-observation segments re-based to
// start at t = 0, each on a common grid of `max gap` steps. Grid values past
// a segment's second observation repeat its last value and are never used.
struct ErgodicSegments {
  TimeGrid grid;
  std::vector<Path> segments;
};
ErgodicSegments ergodic_segments(const Path& path, const TimeGrid& grid);

// Mean over segments of the single post-initial observation term.
double ergodic_loss(std::span<const Path> segments, std::span<const ForwardTrace> traces);

// oracle: per path d_X x (K+1) row-major. Grid average of the squared error,
// summed over coordinates, then averaged over paths.
double evaluation_metric(std::span<const std::vector<double>> oracle, std::span<const ForwardTrace> traces);
std::vector<double> path_metrics(std::span<const std::vector<double>> oracle, std::span<const ForwardTrace> traces);

// Objective evaluated at the true conditional expectation: left limits from
// the oracle restarted at the previous observation, post-jump values x_i.
std::vector<double> oracle_path_losses(std::span<const Path> paths, const SdeModel& model, const TimeGrid& grid,
                                       bool masked = false);
double oracle_loss(std::span<const Path> paths, const SdeModel& model, const TimeGrid& grid, bool masked = false);

double relative_difference(double loss, double oracle);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample standard deviation / sqrt(n)
};
MeanSe mean_and_se(std::span<const double> values);

}  // namespace njode
