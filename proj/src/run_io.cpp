#include "njode/run_io.hpp"

#include "json.hpp"

#include "njode/errors.hpp"
#include "njode/text_table.hpp"

namespace njode {

using text::format_double;

std::string curves_csv(std::span<const LossReport> curve) {
  std::string out = "epoch,train_loss,test_loss,oracle_loss,relative_difference,eval_metric\n";
  for (const auto& r : curve) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_loss, r.test_loss, r.oracle_loss, r.relative_difference, r.eval_metric}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::vector<LossReport> parse_curves_csv(std::string_view csv) {
  text::LineReader reader(csv);
  std::string_view line;
  if (!reader.next(line) || line != "epoch,train_loss,test_loss,oracle_loss,relative_difference,eval_metric")
    throw DataError("curves.csv: bad header");
  std::vector<LossReport> out;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto f = text::split_fields(line);
    LossReport r;
    std::int64_t epoch = 0;
    if (f.size() != 6 || !text::parse_int(f[0], epoch) || !text::parse_double(f[1], r.train_loss) ||
        !text::parse_double(f[2], r.test_loss) || !text::parse_double(f[3], r.oracle_loss) ||
        !text::parse_double(f[4], r.relative_difference) || !text::parse_double(f[5], r.eval_metric))
      throw DataError("curves.csv: malformed row at line " + std::to_string(reader.line_number()));
    r.epoch = static_cast<int>(epoch);
    out.push_back(r);
  }
  return out;
}

std::string predictions_csv(std::span<const Path> paths, std::span<const ForwardTrace> traces,
                            std::span<const std::vector<double>> oracle, const TimeGrid& grid) {
  if (paths.size() != traces.size() || (!oracle.empty() && oracle.size() != paths.size()))
    throw PreconditionError("predictions: paths, traces and oracle differ in length");
  std::string out = "path_id,t,coord,y,xhat_oracle,observed\n";
  const int points = grid.points();
  for (std::size_t j = 0; j < paths.size(); ++j) {
    const Path& p = paths[j];
    const nn::Matrix& y = traces[j].y_grid;
    if (y.rows() != points || y.cols() != p.dim) throw PreconditionError("predictions: trace has no grid outputs");
    // observed[c * points + i] = mask bit of an observation at index i.
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(p.dim) * points, 0);
    for (int o = 0; o < p.schedule.count(); ++o) {
      const auto m = p.schedule.mask(o);
      for (int c = 0; c < p.dim; ++c)
        seen[static_cast<std::size_t>(c) * points + p.schedule.indices[o]] = m[static_cast<std::size_t>(c)];
    }
    const std::string id = std::to_string(p.path_id);
    for (int i = 0; i < points; ++i) {
      const std::string t = format_double(grid.time(i));
      for (int c = 0; c < p.dim; ++c) {
        const auto k = static_cast<std::size_t>(c) * points + i;
        out += id + ',' + t + ',' + std::to_string(c) + ',' + format_double(y(i, c)) + ',';
        out += oracle.empty() ? std::string("nan") : format_double(oracle[j][k]);
        out += seen[k] != 0 ? ",1\n" : ",0\n";
      }
    }
  }
  return out;
}

std::string study_csv(std::span<const StudyRow> rows) {
  std::string out = "n1,m,repeat,min_metric,last_metric,mean_metric\n";
  for (const auto& r : rows) {
    out += std::to_string(r.n1) + ',' + std::to_string(r.m) + ',' + std::to_string(r.repeat) + ',' +
           format_double(r.min_metric) + ',' + format_double(r.last_metric) + ',' + format_double(r.mean_metric) +
           '\n';
  }
  return out;
}

std::string decisions_metadata_json() {
  const nlohmann::json doc{
      {"residual_bridge", "jump and readout add their raw input onto the leading min(in, out) output coordinates"},
      {"input_squashing", "tanh on x and h inputs; time inputs (tau, t - tau) raw"},
      {"dropout", "inverted, after every hidden tanh, active in all three networks during training (including ODE steps)"},
      {"loss_sum", "observations after t_0 only; per-path average over them, then mean over paths"},
      {"masked_loss", "mask inside both norms"},
      {"masked_t0_imputation", "unobserved coordinates at t_0 are imputed with 0"},
      {"eval_metric_reduction", "squared errors summed over coordinates, averaged over the K+1 grid points, then over paths"},
      {"relative_difference", "(test_loss - oracle_loss) / oracle_loss on the test split"},
      {"oracle_masked", "oracle left limit uses the full previous observation"},
      {"batching", "last partial batch kept; fixed 25-path chunks, gradients summed in chunk order"},
      {"seeds",
       {{"split", "mix(seed, split)"},
        {"init", "mix(mix(seed, init), net) per network, then per layer"},
        {"shuffle", "mix(seed, shuffle, epoch)"},
        {"dropout", "mix(seed, dropout, epoch), keyed per path id, site and layer"},
        {"study_repeat", "mix(seed, study, repeat)"}}},
      {"study_subsets", "nested prefixes of one fixed permutation of the non-test pool"},
      {"optimizer", "Adam with decoupled weight decay p <- p - lr * wd * p before the update"},
  };
  return doc.dump(2);
}

}  // namespace njode
