#include "njode/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "njode/errors.hpp"

namespace njode {

namespace {

void require_pairs(std::size_t paths, std::size_t traces) {
  if (paths != traces) throw PreconditionError("paths and traces differ in length");
  if (paths == 0) throw PreconditionError("loss of an empty set of paths");
}

double masked_norm(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> mask) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    if (!mask.empty() && mask[c] == 0) continue;
    const double d = a[c] - b[c];
    s += d * d;
  }
  return std::sqrt(s);
}

std::span<const double> row_span(const nn::Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Observed values at observation o (raw data, not the imputed input).
std::vector<double> observed(const Path& path, int o) { return path.observation(o); }

double fixed_order_mean(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

double observation_term(std::span<const double> x, std::span<const double> y_jump, std::span<const double> y_left,
                        std::span<const std::uint8_t> mask) {
  if (x.size() != y_jump.size() || x.size() != y_left.size() || (!mask.empty() && mask.size() != x.size()))
    throw PreconditionError("observation_term: size mismatch");
  const double s = masked_norm(x, y_jump, mask) + masked_norm(y_jump, y_left, mask);
  return s * s;
}

double path_loss_term(const Path& path, const ForwardTrace& trace, bool masked) {
  const int n = path.schedule.count();
  if (trace.y_jump.rows() != n || trace.y_left.rows() != n || trace.y_jump.cols() != path.dim)
    throw PreconditionError("trace does not belong to path " + std::to_string(path.path_id));
  if (n <= 1) return 0.0;
  double sum = 0.0;
  for (int o = 1; o < n; ++o) {
    const auto x = observed(path, o);
    sum += observation_term(x, row_span(trace.y_jump, o), row_span(trace.y_left, o),
                            masked ? path.schedule.mask(o) : std::span<const std::uint8_t>{});
  }
  return sum / static_cast<double>(n - 1);
}

std::vector<double> path_losses(std::span<const Path> paths, std::span<const ForwardTrace> traces, bool masked) {
  require_pairs(paths.size(), traces.size());
  std::vector<double> out(paths.size());
  for (std::size_t j = 0; j < paths.size(); ++j) out[j] = path_loss_term(paths[j], traces[j], masked);
  return out;
}

double empirical_loss(std::span<const Path> paths, std::span<const ForwardTrace> traces) {
  return fixed_order_mean(path_losses(paths, traces, false));
}

double masked_loss(std::span<const Path> paths, std::span<const ForwardTrace> traces) {
  return fixed_order_mean(path_losses(paths, traces, true));
}

double seed_loss_gradients(BatchForward& fwd, std::span<const Path* const> paths, bool masked, double weight) {
  if (paths.size() != fwd.size()) throw PreconditionError("seed_loss_gradients: batch size mismatch");
  double total = 0.0;
  for (std::size_t r = 0; r < paths.size(); ++r) {
    const Path& path = *paths[r];
    const ForwardTrace tr = fwd.trace(r);
    const int n = path.schedule.count();
    if (n <= 1) continue;
    const double scale = weight / static_cast<double>(n - 1);
    const auto d = static_cast<std::size_t>(path.dim);
    std::vector<double> d_jump(d), d_left(d);
    double term_sum = 0.0;
    for (int o = 1; o < n; ++o) {
      const auto x = observed(path, o);
      const auto mask = path.schedule.mask(o);
      const auto yj = row_span(tr.y_jump, o);
      const auto yl = row_span(tr.y_left, o);
      const auto use = [&](std::size_t c) { return !masked || mask[c] != 0; };
      const double a = masked_norm(x, yj, masked ? mask : std::span<const std::uint8_t>{});
      const double b = masked_norm(yj, yl, masked ? mask : std::span<const std::uint8_t>{});
      term_sum += (a + b) * (a + b);
      // d(a+b)^2 = 2(a+b) (da + db); the norm's gradient is taken as 0 at 0.
      const double outer = 2.0 * (a + b) * scale;
      for (std::size_t c = 0; c < d; ++c) {
        double gj = 0.0, gl = 0.0;
        if (use(c)) {
          if (a > 0.0) gj += (yj[c] - x[c]) / a;
          if (b > 0.0) {
            gj += (yj[c] - yl[c]) / b;
            gl -= (yj[c] - yl[c]) / b;
          }
        }
        d_jump[c] = outer * gj;
        d_left[c] = outer * gl;
      }
      fwd.seed_observation(r, o, d_jump, d_left);
    }
    total += weight * term_sum / static_cast<double>(n - 1);
  }
  return total;
}

ErgodicSegments ergodic_segments(const Path& path, const TimeGrid& grid) {
  const auto& idx = path.schedule.indices;
  if (idx.size() < 2) throw PreconditionError("ergodic loss needs at least 2 observations");
  int max_gap = 1;
  for (std::size_t o = 1; o < idx.size(); ++o) max_gap = std::max(max_gap, idx[o] - idx[o - 1]);
  ErgodicSegments out;
  out.grid = TimeGrid(grid.mesh() * max_gap, max_gap);
  const int points = max_gap + 1;
  const int d = path.dim;
  for (std::size_t o = 1; o < idx.size(); ++o) {
    Path seg;
    seg.dim = d;
    seg.path_id = static_cast<std::int64_t>(o - 1);
    seg.values.resize(static_cast<std::size_t>(d) * points);
    const int gap = idx[o] - idx[o - 1];
    for (int c = 0; c < d; ++c)
      for (int i = 0; i < points; ++i)
        seg.values[static_cast<std::size_t>(c) * points + i] = path.value(c, idx[o - 1] + std::min(i, gap));
    seg.schedule.dim = d;
    seg.schedule.indices = {0, gap};
    const auto m0 = path.schedule.mask(static_cast<int>(o - 1));
    const auto m1 = path.schedule.mask(static_cast<int>(o));
    seg.schedule.masks.assign(m0.begin(), m0.end());
    seg.schedule.masks.insert(seg.schedule.masks.end(), m1.begin(), m1.end());
    out.segments.push_back(std::move(seg));
  }
  return out;
}

double ergodic_loss(std::span<const Path> segments, std::span<const ForwardTrace> traces) {
  require_pairs(segments.size(), traces.size());
  for (const Path& s : segments)
    if (s.schedule.count() != 2) throw PreconditionError("ergodic segment must hold exactly 2 observations");
  return empirical_loss(segments, traces);
}

std::vector<double> path_metrics(std::span<const std::vector<double>> oracle, std::span<const ForwardTrace> traces) {
  require_pairs(oracle.size(), traces.size());
  std::vector<double> out(oracle.size());
  for (std::size_t j = 0; j < oracle.size(); ++j) {
    const nn::Matrix& y = traces[j].y_grid;
    if (static_cast<std::size_t>(y.size()) != oracle[j].size() || y.size() == 0)
      throw PreconditionError("evaluation_metric: shape mismatch for path " + std::to_string(j));
    const Eigen::Index points = y.rows();
    double s = 0.0;
    for (Eigen::Index i = 0; i < points; ++i)
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const double d = oracle[j][static_cast<std::size_t>(c * points + i)] - y(i, c);
        s += d * d;
      }
    out[j] = s / static_cast<double>(points);
  }
  return out;
}

double evaluation_metric(std::span<const std::vector<double>> oracle, std::span<const ForwardTrace> traces) {
  return fixed_order_mean(path_metrics(oracle, traces));
}

std::vector<double> oracle_path_losses(std::span<const Path> paths, const SdeModel& model, const TimeGrid& grid,
                                       bool masked) {
  if (!model.has_oracle())
    throw PreconditionError("oracle unavailable: model kind '" + std::string(kind_name(model.kind())) +
                            "' has no closed-form conditional expectation");
  if (paths.empty()) throw PreconditionError("loss of an empty set of paths");
  std::vector<double> out(paths.size());
  for (std::size_t j = 0; j < paths.size(); ++j) {
    const Path& p = paths[j];
    const int n = p.schedule.count();
    if (n <= 1) continue;
    double sum = 0.0;
    for (int o = 1; o < n; ++o) {
      const auto prev = p.observation(o - 1);
      const auto x = p.observation(o);
      const auto left = true_conditional_expectation(model, prev, grid.time(p.schedule.indices[o - 1]),
                                                     grid.time(p.schedule.indices[o]));
      sum += observation_term(x, x, left, masked ? p.schedule.mask(o) : std::span<const std::uint8_t>{});
    }
    out[j] = sum / static_cast<double>(n - 1);
  }
  return out;
}

double oracle_loss(std::span<const Path> paths, const SdeModel& model, const TimeGrid& grid, bool masked) {
  return fixed_order_mean(oracle_path_losses(paths, model, grid, masked));
}

double relative_difference(double loss, double oracle) {
  if (oracle == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (loss - oracle) / oracle;
}

MeanSe mean_and_se(std::span<const double> values) {
  MeanSe out;
  if (values.empty()) return out;
  out.mean = fixed_order_mean(values);
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  const double n = static_cast<double>(values.size());
  out.se = std::sqrt(ss / (n - 1.0) / n);
  return out;
}

}  // namespace njode
