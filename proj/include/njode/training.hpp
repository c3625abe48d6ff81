#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "njode/model.hpp"
#include "njode/objective.hpp"
#include "njode/sde.hpp"

namespace njode {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 200;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  int hidden = 50;
  int latent = 10;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  InputMode mode = InputMode::kFull;
  int eval_every = 1;
  int workers = 1;
  double train_frac = 0.8;
  double dt = 0.0;  // 0: use the data grid mesh
  bool residual = true;

  void validate() const;
};

NjodeConfig model_config(const TrainConfig& cfg, int input_dim, const TimeGrid& grid);

// Seeds derived from the run seed.
std::uint64_t split_seed(std::uint64_t run_seed);
std::uint64_t init_seed(std::uint64_t run_seed);
std::uint64_t shuffle_seed(std::uint64_t run_seed, int epoch);
std::uint64_t dropout_seed(std::uint64_t run_seed, int epoch);

struct EpochStats {
  double loss = 0.0;  // mean of batch losses weighted by batch size
  int batches = 0;
};

// One pass over `train` in shuffled minibatches, one Adam step per batch.
// Batches are cut into fixed chunks of kChunkRows paths whose gradients are
// summed in chunk order, so results do not depend on `cfg.workers`.
// `batch_ids`, when given, receives the path ids of every batch.
EpochStats train_epoch(NjodeModel& model, nn::AdamState& adam, std::span<const Path> train, const TimeGrid& grid,
                       const TrainConfig& cfg, int epoch, std::vector<std::vector<std::int64_t>>* batch_ids = nullptr);

// Test split with its oracle quantities computed once.
class EvalSet {
 public:
  EvalSet(std::vector<Path> paths, const SdeModel& sde, const TimeGrid& grid, bool masked);

  const std::vector<Path>& paths() const { return paths_; }
  bool has_oracle() const { return has_oracle_; }
  const std::vector<std::vector<double>>& oracle_grids() const { return oracle_grids_; }
  double oracle_loss() const { return oracle_loss_; }
  const std::vector<double>& oracle_terms() const { return oracle_terms_; }

  struct Result {
    double loss = 0.0;
    double oracle_loss = 0.0;
    double relative_difference = 0.0;
    double eval_metric = 0.0;
    double gap_se = 0.0;
    std::vector<ForwardTrace> traces;
  };
  Result evaluate(const NjodeModel& model, int workers, bool keep_traces = false) const;

 private:
  std::vector<Path> paths_;
  TimeGrid grid_;
  bool masked_ = false;
  bool has_oracle_ = false;
  std::vector<std::vector<double>> oracle_grids_;
  std::vector<double> oracle_terms_;
  double oracle_loss_ = 0.0;
};

struct TrainResult {
  NjodeModel model;
  std::vector<LossReport> curve;
  std::vector<std::int64_t> train_ids;
  std::vector<std::int64_t> test_ids;
  std::size_t audited_batches = 0;
};

using EpochCallback = std::function<void(const LossReport&)>;

// 80/20 split (cfg.train_frac), training, and evaluation on the test split
// every eval_every epochs and after the last one.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Same loop on an explicit train/test partition.
TrainResult train_on(const Dataset& train_set, const EvalSet& test_set, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {});

// Throws PreconditionError if any batch holds a test id.
void audit_test_isolation(const std::vector<std::vector<std::int64_t>>& batch_ids,
                          std::span<const std::int64_t> test_ids);

struct StudyGrid {
  std::vector<int> n1_values;
  std::vector<int> m_values;
  int repeats = 5;
  int n2 = 4000;

  void validate() const;
};

struct StudyRow {
  int n1 = 0;
  int m = 0;
  int repeat = 0;
  double min_metric = 0.0;
  double last_metric = 0.0;
  double mean_metric = 0.0;
};

// Fixed test set of n2 paths; nested training subsets drawn from one fixed
// permutation of the remaining pool. Repeat r uses run seed
// study_repeat_seed(cfg.seed, r) in every cell.
std::uint64_t study_repeat_seed(std::uint64_t run_seed, int repeat);
std::vector<StudyRow> convergence_study(const Dataset& base, const StudyGrid& grid, const TrainConfig& cfg,
                                        const std::function<void(const StudyRow&)>& on_row = {});

}  // namespace njode
