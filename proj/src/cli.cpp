#include "dvt/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dvt/checkpoint.hpp"
#include "dvt/config.hpp"
#include "dvt/data.hpp"
#include "dvt/error.hpp"
#include "dvt/io.hpp"
#include "dvt/metrics.hpp"
#include "dvt/training.hpp"
#include "dvt/verify.hpp"

#ifndef DVT_GIT_REVISION
#define DVT_GIT_REVISION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace dvt {

namespace {

// ---- gen-data ----------------------------------------------------------------

struct GenDataFlags {
  std::string experiment = "moons";
  fs::path out;
  std::uint64_t seed = 0;
  MoonsOptions moons;
  fs::path idx_dir;
  std::size_t per_class = 10;
  bool force = false;
};

void add_entry(DatasetManifest& m, const fs::path& dir, const Dataset& ds, const std::string& split,
               const std::vector<std::string>& names) {
  const std::string file = ds.domain_id + "_" + split + ".csv";
  const std::string text = csv_features_string(ds, names, true);
  write_file_atomic(dir / file, text);
  DatasetEntry e;
  e.domain_id = ds.domain_id;
  e.split = split;
  e.path = file;
  e.format = "csv";
  e.label_column = "label";
  e.supervised_column = "supervised";
  e.class_names = names;
  e.hash = content_hash(text);
  m.datasets.push_back(std::move(e));
}

int cmd_gen_data(const GenDataFlags& f, std::ostream& out) {
  const fs::path manifest_path = f.out / "manifest.json";
  if (fs::exists(manifest_path) && !f.force) {
    throw ConfigError("gen-data: " + manifest_path.string() + " exists; pass --force to overwrite");
  }
  fs::create_directories(f.out);
  DatasetManifest m;
  m.seed = f.seed;
  m.experiment = f.experiment;
  if (f.experiment == "moons") {
    MoonsOptions opts = f.moons;
    opts.seed = f.seed;
    const MoonsExperiment e = make_moons_experiment(opts);
    add_entry(m, f.out, e.source.train, "train", moons_class_names());
    add_entry(m, f.out, e.source.test, "test", moons_class_names());
    add_entry(m, f.out, e.target.train, "train", moons_class_names());
    add_entry(m, f.out, e.target.test, "test", moons_class_names());
  } else if (f.experiment == "digits") {
    if (f.idx_dir.empty()) throw ConfigError("gen-data: --idx-dir is required for digits");
    const DomainSplits d = make_digits_experiment(
        f.idx_dir / "train-images-idx3-ubyte", f.idx_dir / "train-labels-idx1-ubyte",
        f.idx_dir / "t10k-images-idx3-ubyte", f.idx_dir / "t10k-labels-idx1-ubyte", f.per_class,
        f.seed);
    std::vector<std::string> names;
    for (int c = 0; c < 10; ++c) names.push_back(std::to_string(c));
    add_entry(m, f.out, d.train, "train", names);
    add_entry(m, f.out, d.test, "test", names);
  } else {
    throw ConfigError("gen-data: unknown experiment '" + f.experiment + "'");
  }
  write_file_atomic(manifest_path, manifest_to_json(m));
  for (const DatasetEntry& e : m.datasets) {
    out << "wrote " << (f.out / e.path).string() << " " << e.hash << "\n";
  }
  out << "wrote " << manifest_path.string() << "\n";
  return kExitOk;
}

// ---- train -------------------------------------------------------------------

struct TrainFlags {
  fs::path config;
  fs::path from_checkpoint;
  fs::path out_dir;
  std::size_t ensemble = 0;
  std::size_t threads = 0;
  bool force = false;
};

struct LoadedData {
  DatasetManifest manifest;
  fs::path base;
  std::vector<std::string> domain_order;
};

LoadedData open_manifest(const fs::path& path) {
  LoadedData d;
  d.manifest = load_manifest(path);
  d.base = path.parent_path();
  for (const DatasetEntry& e : d.manifest.datasets) {
    if (std::find(d.domain_order.begin(), d.domain_order.end(), e.domain_id) == d.domain_order.end()) {
      d.domain_order.push_back(e.domain_id);
    }
  }
  return d;
}

bool has_split(const DatasetManifest& m, const std::string& domain, const std::string& split) {
  return std::any_of(m.datasets.begin(), m.datasets.end(), [&](const DatasetEntry& e) {
    return e.domain_id == domain && e.split == split;
  });
}

Dataset eval_dataset(const LoadedData& d, const std::string& domain, const std::string& split) {
  if (has_split(d.manifest, domain, split)) return load_dataset(d.manifest.find(domain, split), d.base);
  // No held-out split: fall back to the unsupervised training rows.
  Dataset train = load_dataset(d.manifest.find(domain, "train"), d.base);
  return train.subset(train.unsupervised_indices());
}

EvalReport report_on(const Dataset& ds, const Tensor& proba_all) {
  const std::vector<std::size_t> rows = ds.labeled_indices();
  if (rows.empty()) throw DataError("eval: dataset '" + ds.domain_id + "' has no labelled rows");
  return evaluate(ds.labels_of(rows), proba_all.take_rows(rows));
}

json dataset_record(const DatasetEntry& e, const fs::path& base) {
  fs::path p(e.path);
  if (!p.is_absolute()) p = base / p;
  json r{{"domain_id", e.domain_id}, {"split", e.split}, {"path", p.string()},
         {"hash", file_hash(p)}};
  if (!e.labels_path.empty()) {
    fs::path l(e.labels_path);
    if (!l.is_absolute()) l = base / l;
    r["labels_hash"] = file_hash(l);
  }
  return r;
}

int cmd_train(const TrainFlags& f, std::ostream& out) {
  const std::string config_text = read_file(f.config);
  RunConfig cfg = run_config_from_text(config_text, f.config.parent_path());
  if (!f.from_checkpoint.empty()) cfg.from_checkpoint = f.from_checkpoint;
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  if (f.ensemble) cfg.train.ensemble_size = f.ensemble;
  if (f.threads) cfg.threads = f.threads;
  const Regime regime = cfg.train.regime;
  if (regime == Regime::transfer && cfg.from_checkpoint.empty()) {
    throw ConfigError("train: regime transfer requires --from-checkpoint (or from_checkpoint)");
  }

  const LoadedData data = open_manifest(cfg.manifest);
  std::vector<Dataset> train_sets;
  for (const std::string& id : data.domain_order) {
    train_sets.push_back(load_dataset(data.manifest.find(id, "train"), data.base));
  }
  auto train_of = [&](const std::string& id) -> const Dataset& {
    for (const Dataset& ds : train_sets) {
      if (ds.domain_id == id) return ds;
    }
    throw ConfigError("train: manifest has no training data for domain '" + id + "'");
  };
  const Dataset* source = cfg.source.empty() ? nullptr : &train_of(cfg.source);
  const Dataset* target = cfg.target.empty() ? nullptr : &train_of(cfg.target);

  // Run manifest, written before any training happens.
  json run;
  run["format"] = "dvt-run";
  run["code_version"] = DVT_GIT_REVISION;
  run["config"] = config_text;
  run["config_hash"] = content_hash(config_text);
  run["regime"] = to_string(regime);
  run["seed"] = cfg.train.seed;
  run["ensemble_size"] = cfg.train.ensemble_size;
  json datasets = json::array();
  for (const DatasetEntry& e : data.manifest.datasets) datasets.push_back(dataset_record(e, data.base));
  run["datasets"] = datasets;
  if (!cfg.from_checkpoint.empty()) {
    run["from_checkpoint"] = {{"path", cfg.from_checkpoint.string()},
                              {"hash", file_hash(cfg.from_checkpoint)}};
  }
  const std::size_t members = cfg.train.ensemble_size;
  auto member_dir = [&](std::size_t i) {
    return members == 1 ? cfg.out_dir : cfg.out_dir / ("member_" + std::to_string(i));
  };
  json outputs = json::array();
  for (std::size_t i = 0; i < members; ++i) {
    outputs.push_back({{"seed", cfg.train.seed + i},
                       {"checkpoint", (member_dir(i) / "checkpoint.json").string()},
                       {"trace", (member_dir(i) / "trace.csv").string()}});
  }
  run["outputs"] = {{"members", outputs}, {"report", (cfg.out_dir / "report.json").string()}};

  const fs::path run_path = cfg.out_dir / "run_manifest.json";
  if (fs::exists(run_path) && !f.force) {
    const json previous = json::parse(read_file(run_path));
    if (previous.value("datasets", json::array()) != run["datasets"]) {
      throw DataError("train: dataset hashes differ from " + run_path.string() +
                      "; pass --force to start a new run there");
    }
  }
  fs::create_directories(cfg.out_dir);
  write_file_atomic(run_path, run.dump(2) + "\n");

  std::optional<DvtModel> base;
  if (regime == Regime::transfer) {
    base = load_checkpoint(cfg.from_checkpoint);
  }
  auto train_one = [&](std::uint64_t seed) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    if (regime == Regime::transfer) return train_transfer(*base, *target, tc, source);
    std::vector<DomainSpec> specs;
    for (const Dataset& ds : train_sets) {
      specs.push_back({ds.domain_id, ds.dim(), cfg.likelihood_of(ds.domain_id)});
    }
    const DvtModel model = build_model(cfg.arch, specs, train_sets.front().class_count, seed);
    if (regime == Regime::semi_supervised) return train_semi_supervised(model, *source, tc);
    return train_multi_task(model, *source, *target, tc);
  };
  std::vector<TrainResult> results =
      train_ensemble(train_one, members, cfg.train.seed, cfg.threads);

  std::vector<const DvtModel*> models;
  for (std::size_t i = 0; i < members; ++i) {
    fs::create_directories(member_dir(i));
    save_checkpoint(results[i].model, member_dir(i) / "checkpoint.json");
    write_file_atomic(member_dir(i) / "trace.csv", trace_csv(results[i].trace));
    models.push_back(&results[i].model);
    out << "member " << i << ": " << results[i].steps_run << " steps, final loss "
        << results[i].trace.back().loss << "\n";
  }

  const std::string eval_domain = regime == Regime::semi_supervised ? cfg.source : cfg.target;
  const Dataset eval = eval_dataset(data, eval_domain, cfg.eval_split);
  const EnsemblePrediction pred = ensemble_predict(models, eval_domain, eval.features);
  const EvalReport report = report_on(eval, pred.probabilities);
  write_file_atomic(cfg.out_dir / "report.json", report_to_json(report));
  out << "eval " << eval_domain << ": accuracy " << report.accuracy << ", unweighted mean F1 "
      << report.mean_f1 << "\n";
  return kExitOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalFlags {
  fs::path checkpoint;
  fs::path ensemble_dir;
  fs::path manifest;
  std::string domain;
  std::string split = "test";
  fs::path entropy_dump;
  fs::path out;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  if (f.checkpoint.empty() == f.ensemble_dir.empty()) {
    throw ConfigError("eval: give exactly one of --checkpoint and --ensemble");
  }
  std::vector<DvtModel> models;
  if (!f.checkpoint.empty()) {
    models.push_back(load_checkpoint(f.checkpoint));
  } else {
    std::vector<fs::path> paths;
    if (!fs::is_directory(f.ensemble_dir)) {
      throw IoError("eval: " + f.ensemble_dir.string() + " is not a directory");
    }
    for (const auto& entry : fs::recursive_directory_iterator(f.ensemble_dir)) {
      if (entry.is_regular_file() && entry.path().filename() == "checkpoint.json") {
        paths.push_back(entry.path());
      }
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw IoError("eval: no checkpoint.json under " + f.ensemble_dir.string());
    for (const fs::path& p : paths) models.push_back(load_checkpoint(p));
  }
  const LoadedData data = open_manifest(f.manifest);
  const Dataset ds = eval_dataset(data, f.domain, f.split);
  std::vector<const DvtModel*> ptrs;
  for (const DvtModel& m : models) {
    const std::size_t d = m.domain_index(f.domain);
    if (m.domains()[d].input_dim != ds.dim()) {
      throw ShapeError("eval: checkpoint expects " + std::to_string(m.domains()[d].input_dim) +
                       " features for '" + f.domain + "', dataset has " + std::to_string(ds.dim()));
    }
    if (m.classes() != ds.class_count) {
      throw ShapeError("eval: checkpoint has " + std::to_string(m.classes()) +
                       " classes, dataset has " + std::to_string(ds.class_count));
    }
    ptrs.push_back(&m);
  }
  const EnsemblePrediction pred = ensemble_predict(ptrs, f.domain, ds.features);
  const EvalReport report = report_on(ds, pred.probabilities);
  const std::string text = report_to_json(report);
  if (!f.out.empty()) write_file_atomic(f.out, text);
  if (!f.entropy_dump.empty()) {
    write_file_atomic(f.entropy_dump, entropy_dump_csv(ds.features, ds.labels, pred.probabilities));
  }
  out << "models " << models.size() << ", rows " << ds.size() << ", accuracy " << report.accuracy
      << ", unweighted mean F1 " << report.mean_f1 << "\n";
  return kExitOk;
}

// ---- verify ------------------------------------------------------------------

struct VerifyFlags {
  std::uint64_t seed = 0;
  std::size_t sweep = 1;
  double tolerance = 1e-4;
};

int cmd_verify(const VerifyFlags& f, std::ostream& out) {
  bool ok = true;
  for (std::size_t s = 0; s < f.sweep; ++s) {
    VerifyOptions opts;
    opts.seed = f.seed + s * 1000;
    opts.gradient_tolerance = f.tolerance;
    for (const CheckResult& r : run_verification(opts)) {
      ok = ok && r.passed;
      out << (r.passed ? "PASS " : "FAIL ") << r.name << " seed=" << opts.seed
          << " max_error=" << r.max_error << " tolerance=" << r.tolerance << " (" << r.detail
          << ")\n";
    }
  }
  out << (ok ? "all checks passed\n" : "verification failed\n");
  return ok ? kExitOk : kExitVerify;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-shift variational transfer: data generation, training, evaluation"};
  app.require_subcommand(1);

  GenDataFlags gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a dataset bundle with a manifest");
  gen_cmd->add_option("--experiment", gen.experiment, "moons or digits")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--sup-frac-source", gen.moons.sup_frac_source)->capture_default_str();
  gen_cmd->add_option("--sup-frac-target", gen.moons.sup_frac_target)->capture_default_str();
  gen_cmd->add_option("--noise", gen.moons.noise_sd)->capture_default_str();
  gen_cmd->add_option("--n-major", gen.moons.n_major)->capture_default_str();
  gen_cmd->add_option("--n-minor", gen.moons.n_minor)->capture_default_str();
  gen_cmd->add_option("--train-frac", gen.moons.train_fraction)->capture_default_str();
  gen_cmd->add_option("--idx-dir", gen.idx_dir, "Directory with IDX train/t10k files (digits)");
  gen_cmd->add_option("--per-class", gen.per_class, "Supervised rows per class (digits)")
      ->capture_default_str();
  gen_cmd->add_flag("--force", gen.force, "Overwrite existing output");

  TrainFlags train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train from a key = value config file");
  train_cmd->add_option("config", train.config, "Config file")->required();
  train_cmd->add_option("--from-checkpoint", train.from_checkpoint, "Source checkpoint (transfer)");
  train_cmd->add_option("--out-dir", train.out_dir, "Override out_dir");
  train_cmd->add_option("--ensemble", train.ensemble, "Number of members, seeds seed + i");
  train_cmd->add_option("--threads", train.threads, "Worker threads for ensemble members");
  train_cmd->add_flag("--force", train.force, "Ignore a previous run manifest in out_dir");

  EvalFlags ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints on a dataset split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint);
  eval_cmd->add_option("--ensemble", ev.ensemble_dir, "Average every checkpoint.json under DIR");
  eval_cmd->add_option("--manifest", ev.manifest)->required();
  eval_cmd->add_option("--domain", ev.domain)->required();
  eval_cmd->add_option("--split", ev.split)->capture_default_str();
  eval_cmd->add_option("--entropy-dump", ev.entropy_dump, "Per-point CSV");
  eval_cmd->add_option("--out", ev.out, "Report JSON path");

  VerifyFlags ver;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Run the numerical self-checks");
  verify_cmd->add_option("--seed", ver.seed)->capture_default_str();
  verify_cmd->add_option("--sweep", ver.sweep, "Number of seeds")->capture_default_str();
  verify_cmd->add_option("--tolerance", ver.tolerance, "Gradient-check tolerance")
      ->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(train, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*verify_cmd) return cmd_verify(ver, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitVerify;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace dvt
