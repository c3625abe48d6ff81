#include "njode/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "njode/errors.hpp"
#include "njode/parallel.hpp"
#include "njode/rng.hpp"

namespace njode {

void TrainConfig::validate() const {
  if (epochs < 0) throw PreconditionError("epochs must be >= 0");
  if (batch_size < 1) throw PreconditionError("batch size must be >= 1");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw PreconditionError("lr and weight decay must be >= 0");
  if (hidden < 1 || latent < 1) throw PreconditionError("hidden width and latent dimension must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw PreconditionError("dropout rate must lie in [0, 1)");
  if (eval_every < 1) throw PreconditionError("eval_every must be >= 1");
  if (workers < 1) throw PreconditionError("workers must be >= 1");
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw PreconditionError("train fraction must lie in (0, 1)");
  if (!(dt >= 0.0)) throw PreconditionError("integration step must be >= 0");
}

NjodeConfig model_config(const TrainConfig& cfg, int input_dim, const TimeGrid& grid) {
  NjodeConfig mc;
  mc.input_dim = input_dim;
  mc.latent_dim = cfg.latent;
  mc.hidden = cfg.hidden;
  mc.dropout = cfg.dropout;
  mc.mode = cfg.mode;
  mc.dt = cfg.dt > 0.0 ? cfg.dt : grid.mesh();
  mc.residual = cfg.residual;
  mc.seed = init_seed(cfg.seed);
  return mc;
}

std::uint64_t split_seed(std::uint64_t run_seed) { return mix_keys({run_seed, tag(StreamTag::kSplit)}); }
std::uint64_t init_seed(std::uint64_t run_seed) { return mix_keys({run_seed, tag(StreamTag::kInit)}); }
std::uint64_t shuffle_seed(std::uint64_t run_seed, int epoch) {
  return mix_keys({run_seed, tag(StreamTag::kShuffle), static_cast<std::uint64_t>(epoch)});
}
std::uint64_t dropout_seed(std::uint64_t run_seed, int epoch) {
  return mix_keys({run_seed, tag(StreamTag::kDropout), static_cast<std::uint64_t>(epoch)});
}

EpochStats train_epoch(NjodeModel& model, nn::AdamState& adam, std::span<const Path> train, const TimeGrid& grid,
                       const TrainConfig& cfg, int epoch, std::vector<std::vector<std::int64_t>>* batch_ids) {
  cfg.validate();
  if (train.empty()) throw PreconditionError("train_epoch: empty training set");
  if (static_cast<std::size_t>(cfg.batch_size) > train.size())
    throw PreconditionError("batch size " + std::to_string(cfg.batch_size) + " exceeds the training set size " +
                            std::to_string(train.size()));
  const std::size_t n = train.size();
  const auto order = random_permutation(n, shuffle_seed(cfg.seed, epoch));
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const bool masked = model.masked();
  ForwardOptions opts;
  opts.nn = nn::NetMode::training(dropout_seed(cfg.seed, epoch));
  opts.record_grid = false;
  auto params = model.parameters();

  EpochStats stats;
  double weighted = 0.0;
  for (std::size_t begin = 0; begin < n; begin += batch) {
    const std::size_t size = std::min(batch, n - begin);
    std::vector<const Path*> rows(size);
    for (std::size_t i = 0; i < size; ++i) rows[i] = &train[order[begin + i]];
    if (batch_ids != nullptr) {
      auto& ids = batch_ids->emplace_back();
      for (const Path* p : rows) ids.push_back(p->path_id);
    }

    const std::size_t chunks = (size + kChunkRows - 1) / kChunkRows;
    std::vector<std::vector<nn::Matrix>> grads(chunks);
    std::vector<double> losses(chunks, 0.0);
    const double weight = 1.0 / static_cast<double>(size);
    parallel_for(chunks, cfg.workers, [&](std::size_t c) {
      const std::size_t lo = c * kChunkRows;
      const std::size_t count = std::min(kChunkRows, size - lo);
      const std::span<const Path* const> part(rows.data() + lo, count);
      BatchForward fwd(model, grid, part, opts);
      losses[c] = seed_loss_gradients(fwd, part, masked, weight);
      fwd.backward();
      grads[c] = fwd.parameter_grads();
    });

    double loss = 0.0;
    std::vector<nn::Matrix> total = std::move(grads[0]);
    loss += losses[0];
    for (std::size_t c = 1; c < chunks; ++c) {
      loss += losses[c];
      for (std::size_t k = 0; k < total.size(); ++k) total[k] += grads[c][k];
    }
    if (!std::isfinite(loss))
      throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(stats.batches) + " (first path id " + std::to_string(rows[0]->path_id) + ")");
    adam.step(params, total);
    weighted += loss * static_cast<double>(size);
    ++stats.batches;
  }
  stats.loss = weighted / static_cast<double>(n);
  return stats;
}

EvalSet::EvalSet(std::vector<Path> paths, const SdeModel& sde, const TimeGrid& grid, bool masked)
    : paths_(std::move(paths)), grid_(grid), masked_(masked), has_oracle_(sde.has_oracle()) {
  if (paths_.empty()) throw PreconditionError("evaluation set is empty");
  if (!has_oracle_) {
    oracle_loss_ = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  oracle_grids_.reserve(paths_.size());
  for (const Path& p : paths_) oracle_grids_.push_back(oracle_on_grid(sde, p, grid));
  oracle_terms_ = oracle_path_losses(paths_, sde, grid, masked);
  oracle_loss_ = mean_and_se(oracle_terms_).mean;
}

EvalSet::Result EvalSet::evaluate(const NjodeModel& model, int workers, bool keep_traces) const {
  Result r;
  auto traces = forward_paths(model, paths_, grid_, workers, has_oracle_ || keep_traces);
  const auto terms = path_losses(paths_, traces, masked_);
  r.loss = mean_and_se(terms).mean;
  if (has_oracle_) {
    r.oracle_loss = oracle_loss_;
    r.relative_difference = relative_difference(r.loss, oracle_loss_);
    r.eval_metric = evaluation_metric(oracle_grids_, traces);
    std::vector<double> gap(terms.size());
    for (std::size_t j = 0; j < terms.size(); ++j) gap[j] = terms[j] - oracle_terms_[j];
    r.gap_se = mean_and_se(gap).se;
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.oracle_loss = r.relative_difference = r.eval_metric = r.gap_se = nan;
  }
  if (keep_traces) r.traces = std::move(traces);
  return r;
}

void audit_test_isolation(const std::vector<std::vector<std::int64_t>>& batch_ids,
                          std::span<const std::int64_t> test_ids) {
  std::vector<std::int64_t> sorted(test_ids.begin(), test_ids.end());
  std::sort(sorted.begin(), sorted.end());
  for (const auto& ids : batch_ids)
    for (auto id : ids)
      if (std::binary_search(sorted.begin(), sorted.end(), id))
        throw PreconditionError("test path " + std::to_string(id) + " appeared in a training batch");
}

TrainResult train_on(const Dataset& train_set, const EvalSet& test_set, const TrainConfig& cfg,
                     const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.paths.empty()) throw PreconditionError("training set is empty");
  TrainResult out;
  out.model = NjodeModel(model_config(cfg, train_set.dim(), train_set.grid));
  for (const Path& p : train_set.paths) out.train_ids.push_back(p.path_id);
  for (const Path& p : test_set.paths()) out.test_ids.push_back(p.path_id);

  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  nn::AdamState adam(ac);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::vector<std::int64_t>> batch_ids;
    const EpochStats stats = train_epoch(out.model, adam, train_set.paths, train_set.grid, cfg, epoch, &batch_ids);
    audit_test_isolation(batch_ids, out.test_ids);
    out.audited_batches += batch_ids.size();
    if (epoch % cfg.eval_every != 0 && epoch != cfg.epochs) continue;
    const auto ev = test_set.evaluate(out.model, cfg.workers);
    LossReport rep;
    rep.epoch = epoch;
    rep.train_loss = stats.loss;
    rep.test_loss = ev.loss;
    rep.oracle_loss = ev.oracle_loss;
    rep.relative_difference = ev.relative_difference;
    rep.eval_metric = ev.eval_metric;
    rep.gap_se = ev.gap_se;
    out.curve.push_back(rep);
    if (on_epoch) on_epoch(rep);
  }
  return out;
}

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  auto [train_set, test_split] = split_dataset(dataset, cfg.train_frac, split_seed(cfg.seed));
  if (train_set.paths.empty() || test_split.paths.empty())
    throw PreconditionError("dataset too small for a train/test split");
  const EvalSet test_set(std::move(test_split.paths), dataset.model, dataset.grid, cfg.mode == InputMode::kMasked);
  return train_on(train_set, test_set, cfg, on_epoch);
}

void StudyGrid::validate() const {
  if (n1_values.empty() || m_values.empty()) throw PreconditionError("study grid needs n1 and m values");
  if (!std::is_sorted(n1_values.begin(), n1_values.end()) || !std::is_sorted(m_values.begin(), m_values.end()))
    throw PreconditionError("study grid values must be sorted ascending");
  if (n1_values.front() < 1 || m_values.front() < 1) throw PreconditionError("study grid values must be positive");
  if (repeats < 1) throw PreconditionError("repeats must be >= 1");
  if (n2 < 1) throw PreconditionError("test set size must be >= 1");
}

std::uint64_t study_repeat_seed(std::uint64_t run_seed, int repeat) {
  return mix_keys({run_seed, tag(StreamTag::kStudy), static_cast<std::uint64_t>(repeat)});
}

std::vector<StudyRow> convergence_study(const Dataset& base, const StudyGrid& grid, const TrainConfig& cfg,
                                        const std::function<void(const StudyRow&)>& on_row) {
  grid.validate();
  cfg.validate();
  const std::size_t needed = static_cast<std::size_t>(grid.n1_values.back()) + static_cast<std::size_t>(grid.n2);
  if (base.paths.size() < needed)
    throw PreconditionError("study needs " + std::to_string(needed) + " paths (max n1 + n2), dataset has " +
                            std::to_string(base.paths.size()));
  const auto perm = random_permutation(base.paths.size(), mix_keys({cfg.seed, tag(StreamTag::kStudy)}));
  const auto n2 = static_cast<std::size_t>(grid.n2);
  std::vector<std::size_t> test_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n2));
  std::sort(test_idx.begin(), test_idx.end());
  std::vector<Path> test_paths;
  for (auto i : test_idx) test_paths.push_back(base.paths[i]);
  const EvalSet test_set(std::move(test_paths), base.model, base.grid, cfg.mode == InputMode::kMasked);

  std::vector<StudyRow> rows;
  for (int n1 : grid.n1_values) {
    // Prefix of the pool permutation: smaller n1 sets nest in larger ones.
    std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(n2),
                                 perm.begin() + static_cast<std::ptrdiff_t>(n2 + static_cast<std::size_t>(n1)));
    std::sort(idx.begin(), idx.end());
    Dataset train_set;
    train_set.model = base.model;
    train_set.grid = base.grid;
    train_set.master_seed = base.master_seed;
    train_set.obs_prob = base.obs_prob;
    train_set.mask_mode = base.mask_mode;
    for (auto i : idx) train_set.paths.push_back(base.paths[i]);

    for (int m : grid.m_values) {
      for (int r = 0; r < grid.repeats; ++r) {
        TrainConfig c = cfg;
        c.hidden = m;
        c.seed = study_repeat_seed(cfg.seed, r);
        c.batch_size = std::min(cfg.batch_size, n1);
        const auto res = train_on(train_set, test_set, c);
        StudyRow row{n1, m, r, 0.0, 0.0, 0.0};
        if (!res.curve.empty()) {
          row.min_metric = std::numeric_limits<double>::infinity();
          double sum = 0.0;
          for (const auto& rep : res.curve) {
            row.min_metric = std::min(row.min_metric, rep.eval_metric);
            sum += rep.eval_metric;
          }
          row.last_metric = res.curve.back().eval_metric;
          row.mean_metric = sum / static_cast<double>(res.curve.size());
        }
        rows.push_back(row);
        if (on_row) on_row(row);
      }
    }
  }
  return rows;
}

}  // namespace njode
