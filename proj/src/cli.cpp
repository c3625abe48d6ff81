#include "njode/cli.hpp"

#include <filesystem>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "njode/errors.hpp"
#include "njode/model.hpp"
#include "njode/objective.hpp"
#include "njode/run_io.hpp"
#include "njode/sde.hpp"
#include "njode/text_table.hpp"
#include "njode/training.hpp"

namespace njode::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GenerateArgs {
  std::string model;
  int n = 1000;
  int grid = 100;
  double t = 1.0;
  double obs_prob = 0.1;
  std::uint64_t seed = 0;
  std::string mask_mode = "full";
  int dim = 0;
  std::vector<std::string> params;
  std::string out;
  int workers = 1;
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string mode = "full";
  TrainConfig cfg;
};

struct EvalArgs {
  std::string run;
  std::string data;
  std::string split = "test";
  std::string out;
  bool metric = false;
  int workers = 1;
};

struct StudyArgs {
  std::string data;
  std::string out;
  std::string mode = "full";
  std::vector<int> n1;
  std::vector<int> m;
  int repeats = 5;
  int n2 = 4000;
  TrainConfig cfg;
};

struct ExportArgs {
  std::string run;
  std::string data;
  std::string split = "test";
  std::string out;
  int limit = 0;
  int workers = 1;
};

void add_training_flags(CLI::App* app, TrainConfig& cfg, std::string& mode) {
  app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
  app->add_option("--batch", cfg.batch_size, "Minibatch size")->capture_default_str();
  app->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--weight-decay", cfg.weight_decay, "Decoupled weight decay")->capture_default_str();
  app->add_option("--hidden", cfg.hidden, "Hidden width M of every network")->capture_default_str();
  app->add_option("--latent", cfg.latent, "Latent dimension d_H")->capture_default_str();
  app->add_option("--dropout", cfg.dropout, "Dropout rate")->capture_default_str();
  app->add_option("--seed", cfg.seed, "Run seed (split, init, shuffle, dropout)")->capture_default_str();
  app->add_option("--mode", mode, "Input mode: full or masked")->capture_default_str();
  app->add_option("--eval-every", cfg.eval_every, "Evaluate every this many epochs")->capture_default_str();
  app->add_option("--train-frac", cfg.train_frac, "Training fraction of the split")->capture_default_str();
  app->add_option("--dt", cfg.dt, "Euler step of the latent ODE (0: grid mesh)")->capture_default_str();
  app->add_option("--workers", cfg.workers, "Worker threads; results do not depend on it")->capture_default_str();
}

json train_config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"hidden", c.hidden},
          {"latent", c.latent},
          {"dropout", c.dropout},
          {"seed", c.seed},
          {"mode", std::string(input_mode_name(c.mode))},
          {"eval_every", c.eval_every},
          {"train_frac", c.train_frac},
          {"dt", c.dt},
          {"residual", c.residual}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.hidden = j.at("hidden").get<int>();
  c.latent = j.at("latent").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.mode = input_mode_from_name(j.at("mode").get<std::string>());
  c.eval_every = j.at("eval_every").get<int>();
  c.train_frac = j.at("train_frac").get<double>();
  c.dt = j.at("dt").get<double>();
  c.residual = j.at("residual").get<bool>();
  return c;
}

json run_document(const std::string& command, const std::vector<std::string>& args) {
  return {{"command", command}, {"args", args}, {"decisions", json::parse(decisions_metadata_json())}};
}

void write_json(const fs::path& path, const json& doc) { text::write_file(path.string(), doc.dump(2) + "\n"); }

std::string format_report(const LossReport& r) {
  using text::format_double;
  return "epoch=" + std::to_string(r.epoch) + " train_loss=" + format_double(r.train_loss) +
         " test_loss=" + format_double(r.test_loss) + " oracle_loss=" + format_double(r.oracle_loss) +
         " relative_difference=" + format_double(r.relative_difference) +
         " eval_metric=" + format_double(r.eval_metric);
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  SdeModel model = SdeModel::make_default(kind_from_name(a.model), a.dim > 0 ? a.dim : 1);
  if (a.dim > 0 && model.dim() != a.dim)
    throw PreconditionError("model " + a.model + " does not support --dim " + std::to_string(a.dim));
  for (const auto& kv : a.params) {
    const auto eq = kv.find('=');
    double v = 0.0;
    if (eq == std::string::npos || !text::parse_double(std::string_view(kv).substr(eq + 1), v))
      throw PreconditionError("--param expects name=value, got '" + kv + "'");
    model.set_param(kv.substr(0, eq), v);
  }
  model.validate();
  if (!model.has_dynamics()) throw PreconditionError("cannot simulate model kind " + a.model);
  if (a.n < 0) throw PreconditionError("--n must be >= 0");
  if (a.grid < 1 || !(a.t > 0.0)) throw PreconditionError("--grid must be >= 1 and --t > 0");
  const Dataset ds = generate_dataset(model, TimeGrid(a.t, a.grid), a.n, a.seed, a.obs_prob,
                                      MaskMode::parse(a.mask_mode), a.workers);
  write_dataset(ds, a.out);
  out << "wrote " << ds.paths.size() << " paths to " << a.out << "\n";
  return kOk;
}

int cmd_train(TrainArgs a, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  a.cfg.mode = input_mode_from_name(a.mode);
  a.cfg.validate();
  const Dataset ds = read_dataset(a.data);
  auto [train_set, test_split] = split_dataset(ds, a.cfg.train_frac, split_seed(a.cfg.seed));
  if (train_set.paths.empty() || test_split.paths.empty())
    throw PreconditionError("dataset too small for a train/test split");
  if (a.cfg.epochs > 0 && static_cast<std::size_t>(a.cfg.batch_size) > train_set.paths.size())
    throw PreconditionError("--batch " + std::to_string(a.cfg.batch_size) + " exceeds the training set size " +
                            std::to_string(train_set.paths.size()));
  const EvalSet test_set(std::move(test_split.paths), ds.model, ds.grid, a.cfg.mode == InputMode::kMasked);

  fs::create_directories(a.out);
  json doc = run_document("train", args);
  doc["data"] = a.data;
  doc["train"] = train_config_json(a.cfg);
  doc["workers"] = a.cfg.workers;
  doc["dataset"] = json::parse(text::read_file((fs::path(a.data) / "meta.json").string()));
  write_json(fs::path(a.out) / "config.json", doc);

  const auto result = train_on(train_set, test_set, a.cfg, [&](const LossReport& r) { err << format_report(r) << "\n"; });
  text::write_file((fs::path(a.out) / "curves.csv").string(), curves_csv(result.curve));
  result.model.save(a.out);
  const auto ev = test_set.evaluate(result.model, a.cfg.workers, true);
  text::write_file((fs::path(a.out) / "predictions.csv").string(),
                   predictions_csv(test_set.paths(), ev.traces, test_set.oracle_grids(), ds.grid));
  if (!result.curve.empty()) out << format_report(result.curve.back()) << "\n";
  out << "wrote run to " << a.out << " (" << result.audited_batches << " batches audited for test isolation)\n";
  return kOk;
}

struct LoadedRun {
  TrainConfig cfg;
  NjodeModel model;
};

LoadedRun load_run(const std::string& run) {
  LoadedRun r;
  try {
    const json doc = json::parse(text::read_file((fs::path(run) / "config.json").string()));
    r.cfg = train_config_from_json(doc.at("train"));
  } catch (const json::exception& e) {
    throw DataError(run + "/config.json: " + e.what());
  }
  r.model = NjodeModel::load(run);
  return r;
}

std::vector<Path> select_split(const Dataset& ds, const TrainConfig& cfg, const std::string& split) {
  if (split == "all") return ds.paths;
  if (split != "test" && split != "train") throw PreconditionError("--split must be test, train or all");
  auto [train_set, test_set] = split_dataset(ds, cfg.train_frac, split_seed(cfg.seed));
  return split == "test" ? test_set.paths : train_set.paths;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const LoadedRun run = load_run(a.run);
  const Dataset ds = read_dataset(a.data);
  if (ds.dim() != run.model.input_dim()) throw PreconditionError("dataset dimension does not match the model");
  if (a.metric && !ds.model.has_oracle())
    throw PreconditionError("--metric needs the conditional-expectation oracle, which is unavailable for model kind '" +
                            std::string(kind_name(ds.model.kind())) + "'");
  auto paths = select_split(ds, run.cfg, a.split);
  if (paths.empty()) throw PreconditionError("selected split is empty");
  const EvalSet set(std::move(paths), ds.model, ds.grid, run.model.masked());
  const auto ev = set.evaluate(run.model, a.workers, true);
  const std::string target = a.out.empty() ? (fs::path(a.run) / "predictions.csv").string() : a.out;
  text::write_file(target, predictions_csv(set.paths(), ev.traces, set.oracle_grids(), ds.grid));
  using text::format_double;
  out << "paths=" << set.paths().size() << " test_loss=" << format_double(ev.loss)
      << " oracle_loss=" << format_double(ev.oracle_loss)
      << " relative_difference=" << format_double(ev.relative_difference)
      << " eval_metric=" << format_double(ev.eval_metric) << "\n";
  return kOk;
}

int cmd_study(StudyArgs a, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  a.cfg.mode = input_mode_from_name(a.mode);
  const StudyGrid grid{a.n1, a.m, a.repeats, a.n2};
  grid.validate();
  a.cfg.validate();
  const Dataset ds = read_dataset(a.data);
  fs::create_directories(a.out);
  json doc = run_document("study", args);
  doc["data"] = a.data;
  doc["train"] = train_config_json(a.cfg);
  doc["study"] = {{"n1", a.n1}, {"m", a.m}, {"repeats", a.repeats}, {"n2", a.n2}};
  write_json(fs::path(a.out) / "config.json", doc);
  const auto rows = convergence_study(ds, grid, a.cfg, [&](const StudyRow& r) {
    err << "n1=" << r.n1 << " m=" << r.m << " repeat=" << r.repeat << " last_metric=" << text::format_double(r.last_metric)
        << "\n";
  });
  const std::string table = study_csv(rows);
  text::write_file((fs::path(a.out) / "study.csv").string(), table);
  out << table;
  return kOk;
}

int cmd_export(const ExportArgs& a, std::ostream& out) {
  const LoadedRun run = load_run(a.run);
  const Dataset ds = read_dataset(a.data);
  if (ds.dim() != run.model.input_dim()) throw PreconditionError("dataset dimension does not match the model");
  auto paths = select_split(ds, run.cfg, a.split);
  if (a.limit < 0) throw PreconditionError("--limit must be >= 0");
  if (a.limit > 0 && static_cast<std::size_t>(a.limit) < paths.size()) paths.resize(static_cast<std::size_t>(a.limit));
  if (paths.empty()) throw PreconditionError("nothing to export");
  const auto traces = forward_paths(run.model, paths, ds.grid, a.workers, true);
  std::vector<std::vector<double>> oracle;
  if (ds.model.has_oracle())
    for (const Path& p : paths) oracle.push_back(oracle_on_grid(ds.model, p, ds.grid));
  text::write_file(a.out, predictions_csv(paths, traces, oracle, ds.grid));
  out << "wrote predictions for " << paths.size() << " paths to " << a.out << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural Jump ODE: datasets, training, evaluation and convergence studies", "njode"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Simulate an SDE dataset with random observation times");
  g->add_option("--model", gen.model, "black_scholes|ornstein_uhlenbeck|heston|heston_nofeller|regime_switch|sine_drift_bs")
      ->required();
  g->add_option("--n", gen.n, "Number of paths")->capture_default_str();
  g->add_option("--grid", gen.grid, "Grid steps K")->capture_default_str();
  g->add_option("--t", gen.t, "Horizon T")->capture_default_str();
  g->add_option("--obs-prob", gen.obs_prob, "Probability that a grid point is observed")->capture_default_str();
  g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  g->add_option("--mask-mode", gen.mask_mode, "full or bernoulli:<p>")->capture_default_str();
  g->add_option("--dim", gen.dim, "Observed dimension (Heston: 1 or 2)");
  g->add_option("--param", gen.params, "Override a model parameter, name=value (repeatable)");
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--workers", gen.workers, "Worker threads; results do not depend on it")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset (80/20 split)");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  add_training_flags(t, tr.cfg, tr.mode);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a trained run and write predictions.csv");
  e->add_option("--run", ev.run, "Run directory")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--split", ev.split, "test, train or all (split from the run's seed)")->capture_default_str();
  e->add_option("--out", ev.out, "Predictions file (default <run>/predictions.csv)");
  e->add_flag("--metric", ev.metric, "Require the evaluation metric (needs an oracle)");
  e->add_option("--workers", ev.workers, "Worker threads; results do not depend on it")->capture_default_str();

  StudyArgs st;
  auto* s = app.add_subcommand("study", "Convergence study over training-set size and network width");
  s->add_option("--data", st.data, "Dataset directory")->required();
  s->add_option("--out", st.out, "Study directory")->required();
  s->add_option("--n1", st.n1, "Training-set sizes, comma separated")->required()->delimiter(',');
  s->add_option("--m", st.m, "Hidden widths, comma separated")->required()->delimiter(',');
  s->add_option("--repeats", st.repeats, "Trainings per cell")->capture_default_str();
  s->add_option("--n2", st.n2, "Fixed test-set size")->capture_default_str();
  add_training_flags(s, st.cfg, st.mode);

  ExportArgs ex;
  auto* x = app.add_subcommand("export", "Write plot data (predictions and oracle) for some paths");
  x->add_option("--run", ex.run, "Run directory")->required();
  x->add_option("--data", ex.data, "Dataset directory")->required();
  x->add_option("--split", ex.split, "test, train or all")->capture_default_str();
  x->add_option("--limit", ex.limit, "Export at most this many paths (0: all)")->capture_default_str();
  x->add_option("--out", ex.out, "Output CSV file")->required();
  x->add_option("--workers", ex.workers, "Worker threads; results do not depend on it")->capture_default_str();

  std::vector<std::string> argv_store{"njode"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& pe) {
    err << "usage error: " << pe.what() << "\n";
    return kUsage;
  }

  try {
    if (*g) return cmd_generate(gen, out);
    if (*t) return cmd_train(tr, args, out, err);
    if (*e) return cmd_eval(ev, out);
    if (*s) return cmd_study(st, args, out, err);
    if (*x) return cmd_export(ex, out);
  } catch (const PreconditionError& pe) {
    err << "error: " << pe.what() << "\n";
    return kUsage;
  } catch (const DataError& de) {
    err << "data error: " << de.what() << "\n";
    return kData;
  } catch (const NumericError& ne) {
    err << "numeric failure: " << ne.what() << "\n";
    return kNumeric;
  } catch (const fs::filesystem_error& fe) {
    err << "data error: " << fe.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace njode::cli
