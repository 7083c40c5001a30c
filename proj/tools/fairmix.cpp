// fairmix command-line front end.
//
// Exit codes: 0 success, 1 runtime failure or failing fixtures, 2 usage or
// configuration error, 3 run stopped before every cell completed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "fairmix/augment.hpp"
#include "fairmix/cluster.hpp"
#include "fairmix/config.hpp"
#include "fairmix/corpus.hpp"
#include "fairmix/distributions.hpp"
#include "fairmix/embednet.hpp"
#include "fairmix/evalproto.hpp"
#include "fairmix/experiment.hpp"
#include "fairmix/fixtures.hpp"
#include "fairmix/simplex_svg.hpp"

namespace fs = std::filesystem;
using namespace fairmix;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;
constexpr int kIncomplete = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError("not an integer list: " + text);
    }
  }
  return out;
}

// "--train.epochs 5", "--train.epochs=5" and "--set train.epochs=5".
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras,
                                                                 const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) throw UsageError("unexpected argument: " + a);
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw UsageError("missing value for " + a);
      out.emplace_back(a.substr(2), extras[++i]);
    }
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + s);
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

void print_report(const EvalReport& r) {
  for (Race race : kAllRaces) fmt::print("{:<10} {:8.3f}\n", race_name(race), r.accuracy[index_of(race)]);
  fmt::print("{:<10} {:8.3f}\n{:<10} {:8.3f}\n", "mean", r.mean, "variance", r.variance);
}

// ---------------------------------------------------------------------------

int cmd_enumerate(long long total, bool layout) {
  const auto points = enumerate_simplex_points();
  if (layout) {
    fmt::print("index,face,level,x,y\n");
    for (const auto& inst : net_layout(points)) {
      fmt::print("{},{},{},{:.6f},{:.6f}\n", inst.point_index, race_short(inst.face), inst.level, inst.position.x,
                 inst.position.y);
    }
    return kOk;
  }
  fmt::print("index,level,mix_afr,mix_asi,mix_cau,mix_ind,african_subj,asian_subj,cauc_subj,indian_subj\n");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto level = simplex_level_of(points[i]);
    const auto counts = mix_to_counts(points[i], total);
    fmt::print("{},{},{},{},{},{},{}\n", i, level ? std::to_string(*level) : "uniform", points[i].to_string(),
               counts.counts[0], counts.counts[1], counts.counts[2], counts.counts[3]);
  }
  return kOk;
}

struct SynthArgs {
  std::string out;
  std::size_t dims = 64, subjects = 200, images = 6, extra = 0, test_subjects = 100, test_images = 6;
  std::size_t pairs = 600, folds = 10;
  double sigma_between = 1.0, sigma_within = 0.35, off_block = 0.25;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a) {
  ExperimentConfig cfg = default_config(Design::DistributionSweep);
  cfg.seed = a.seed;
  auto& s = cfg.corpus.synthetic;
  s.dims = a.dims;
  s.subjects_per_race = a.subjects;
  s.images_per_subject = a.images;
  s.extra_images_max = a.extra;
  s.test_subjects_per_race = a.test_subjects;
  s.test_images_per_subject = a.test_images;
  s.sigma_between = a.sigma_between;
  s.sigma_within = a.sigma_within;
  s.off_block = a.off_block;
  cfg.pairs.pairs_per_race = a.pairs;
  cfg.pairs.folds = a.folds;
  const auto ws = prepare_workspace(cfg);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  write_catalog(dir / "catalog.csv", ws.catalog);
  write_catalog(dir / "test_catalog.csv", ws.test_catalog);
  ws.features.save(dir / "features.bin");
  write_pairs(dir / "pairs.csv", ws.pairs);
  write_ratio_curve_csv(dir / "face_ratio.csv", ratio_curve(ws.catalog));
  fmt::print("wrote {} training and {} test images, {} pairs to {}\n", ws.catalog.size(), ws.test_catalog.size(),
             ws.pairs.size(), dir.string());
  return kOk;
}

struct SampleArgs {
  std::string catalog, out, mix, race;
  long long total = 200;
  long long point = -1;
  std::size_t subjects = 0, images = 6;
  std::uint64_t seed = 1;
};

int cmd_sample(const SampleArgs& a) {
  const auto catalog = read_catalog(a.catalog);
  DatasetManifest m;
  if (!a.race.empty()) {
    if (a.subjects == 0) throw UsageError("--race needs --subjects");
    const Race r = parse_race(a.race);
    const auto pool = build_subject_pool(catalog, a.subjects, a.images ? a.images : 1);
    std::optional<std::size_t> images;
    if (a.images) images = a.images;
    m = single_race_manifest(pool, r, a.subjects, a.seed, images);
  } else {
    if (a.mix.empty() == (a.point < 0)) throw UsageError("give exactly one of --mix, --point or --race");
    const RaceMix mix = a.point >= 0 ? enumerate_simplex_points().at(static_cast<std::size_t>(a.point))
                                     : parse_mix(a.mix);
    const auto pool = build_subject_pool(catalog, static_cast<std::size_t>(a.total), a.images);
    m = sample_manifest(pool, mix_to_counts(mix, a.total), a.images, a.seed);
    m.mix = mix;
  }
  m.experiment_id = fs::path(a.out).stem().string();
  write_manifest(a.out, m);
  const auto counts = m.subject_counts();
  fmt::print("{} subjects ({}/{}/{}/{}), {} images -> {}\n", counts.total(), counts.counts[0], counts.counts[1],
             counts.counts[2], counts.counts[3], m.image_count(), a.out);
  return kOk;
}

struct TrainArgs {
  std::string manifest, features, out, log, head = "arcface", hidden = "64,64";
  int epochs = 30, batch = 64, embedding_dim = 32;
  double lr = 0.02, momentum = 0.9, wd = 5e-4;
  std::uint64_t seed = 1;
};

int cmd_train(const TrainArgs& a) {
  const auto manifest = read_manifest(a.manifest);
  const auto store = FeatureStore::load(a.features);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.momentum = a.momentum;
  tc.weight_decay = a.wd;
  tc.seed = a.seed;
  tc.head = parse_head(a.head);
  tc.hidden = parse_int_list(a.hidden);
  tc.embedding_dim = a.embedding_dim;
  const auto result = train(manifest, store, tc);
  save_checkpoint(a.out, result.model);
  const std::string log = a.log.empty() ? a.out + ".log.csv" : a.log;
  write_train_log(log, result.log);
  fmt::print("trained {} ({} identities, {} steps): final loss {:.4f}, training accuracy {:.4f}\n",
             head_spec(tc.head), result.model.num_identities(), result.log.size(), result.log.back().loss,
             training_accuracy(result.model, manifest, store));
  fmt::print("checkpoint {}, log {}\n", a.out, log);
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& features, const std::string& pairs_path, std::size_t folds,
             const std::string& out) {
  const auto model = load_checkpoint(ckpt);
  const auto store = FeatureStore::load(features);
  const auto pairs = read_pairs(pairs_path, folds);
  EvalMetadata meta;
  meta.head = head_name(model.head);
  meta.seed = model.seed;
  const auto report = evaluate(model, store, pairs, meta);
  print_report(report);
  if (!out.empty()) write_report_csv(out, report);
  return kOk;
}

struct ClusterArgs {
  std::string checkpoint, features, catalog, pairs, json, csv;
  int k = 20;
  std::size_t samples = 400, folds = 10;
  double epsilon = 1e-6;
  std::uint64_t seed = 1;
};

int cmd_cluster(const ClusterArgs& a) {
  const auto model = load_checkpoint(a.checkpoint);
  const auto store = FeatureStore::load(a.features);
  PerRace<std::vector<std::string>> ids;
  if (!a.catalog.empty()) {
    for (const auto& r : read_catalog(a.catalog)) ids[index_of(r.race)].push_back(r.image_id);
  } else if (!a.pairs.empty()) {
    Workspace ws;
    ws.pairs = read_pairs(a.pairs, a.folds);
    ids = ws.test_ids_by_race();
  } else {
    throw UsageError("cluster needs --catalog or --pairs to group images by race");
  }
  RaceGroups groups;
  for (Race r : kAllRaces) groups[index_of(r)] = embed_all(model, store, ids[index_of(r)]);
  const auto report = cluster_report(groups, ClusterConfig{a.k, a.samples, a.seed, a.epsilon});
  fmt::print("{:<10} {:>12} {:>8} {:>8} {:>8} {:>8}\n", "race", "compactness", "afr", "asi", "cau", "ind");
  for (Race r : kAllRaces) {
    const auto i = index_of(r);
    fmt::print("{:<10} {:12.6f} {:8.4f} {:8.4f} {:8.4f} {:8.4f}\n", race_name(r), report.compactness[i],
               report.membership[i][0], report.membership[i][1], report.membership[i][2], report.membership[i][3]);
  }
  if (!a.json.empty()) write_cluster_json(a.json, report);
  if (!a.csv.empty()) write_cluster_csv(a.csv, report);
  return kOk;
}

int cmd_plot(const std::string& results, const std::string& head, const std::string& metric, const std::string& out) {
  const auto table = read_results_csv(results);
  SvgOptions opts;
  if (!metric.empty() && metric != "all") opts.panel = parse_plot_metric(metric);
  const auto svg = emit_simplex_svg(table, head, opts);
  if (out.empty() || out == "-") {
    std::cout << svg;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << svg;
    fmt::print("wrote {}\n", out);
  }
  return kOk;
}

int cmd_verify_fixtures(std::string path, double tolerance, const std::string& report_path, bool verbose) {
  if (path.empty()) {
    const char* env = std::getenv("FAIRMIX_FIXTURES");
    path = env && *env ? env : FAIRMIX_DEFAULT_FIXTURES;
  }
  const auto report = verify_fixtures(path, tolerance);
  std::size_t shown = 0;
  for (const auto& r : report.rows) {
    if (!verbose && r.pass) continue;
    ++shown;
    fmt::print("{} {}:{}  acc {:.2f} {:.2f} {:.2f} {:.2f}  mean {:.4f} vs {:.2f} ({:+.4f})  var {:.4f} vs {:.2f} "
               "({:+.4f}; rounding bound {:.4f})\n",
               r.pass ? "PASS" : "FAIL", r.source, r.line, r.accuracy[0], r.accuracy[1], r.accuracy[2],
               r.accuracy[3], r.mean, r.published_mean, r.mean_diff, r.variance, r.published_variance,
               r.variance_diff, r.rounding_bound);
  }
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::binary);
    out << "source,line,acc_afr,acc_asi,acc_cau,acc_ind,published_mean,published_var,mean,var,mean_diff,var_diff,"
           "rounding_bound,pass,within_rounding\n";
    for (const auto& r : report.rows) {
      out << fmt::format("{},{},{},{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{},{}\n", r.source, r.line,
                         r.accuracy[0], r.accuracy[1], r.accuracy[2], r.accuracy[3], r.published_mean,
                         r.published_variance, r.mean, r.variance, r.mean_diff, r.variance_diff, r.rounding_bound,
                         r.pass ? 1 : 0, r.within_rounding ? 1 : 0);
    }
  }
  fmt::print("{}/{} fixture rows within +/-{}; {} outside the rounding-propagation bound\n",
             report.rows.size() - report.failures(), report.rows.size(), tolerance, report.rounding_failures());
  return report.all_pass() ? kOk : kFailure;
}

struct DesignArgs {
  std::string config;
  int jobs = 1;
  bool resume = false;
  bool quiet = false;
  long long stop_after = -1;
  std::vector<std::string> sets;
};

int cmd_design(Design design, const DesignArgs& a, const std::vector<std::string>& extras) {
  std::optional<fs::path> file;
  if (!a.config.empty()) file = a.config;
  ExperimentConfig cfg;
  try {
    cfg = build_config(design, file, parse_overrides(extras, a.sets));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  RunOptions opts;
  opts.jobs = a.jobs;
  opts.resume = a.resume;
  if (a.stop_after >= 0) opts.stop_after = static_cast<std::size_t>(a.stop_after);
  if (!a.quiet) opts.progress = [](const std::string& s) { fmt::print(stderr, "{}\n", s); };
  const auto outcome = run_experiment(cfg, opts);
  fmt::print("{}: {}/{} cells in {}\n", design_name(design), outcome.cells_done, outcome.cells_total,
             outcome.output_dir.string());
  for (const auto& f : outcome.files) fmt::print("  {}\n", f.string());
  if (!outcome.complete) {
    fmt::print("run incomplete; continue with --resume\n");
    return kIncomplete;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Race-mix training experiments: sampling, training, pair evaluation and fairness metrics"};
  app.require_subcommand(1);

  long long enum_total = 5000;
  bool enum_layout = false;
  auto* enumerate = app.add_subcommand("enumerate", "List the 89 simplex mixes with subject counts");
  enumerate->add_option("--total", enum_total, "Subjects to apportion")->check(CLI::PositiveNumber);
  enumerate->add_flag("--layout", enum_layout, "Print the 181 plot positions instead");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus, test pairs and feature store");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--dims", sa.dims, "Feature dimensions");
  synth->add_option("--subjects", sa.subjects, "Training subjects per race");
  synth->add_option("--images", sa.images, "Images per training subject");
  synth->add_option("--extra-images", sa.extra, "Up to this many extra images per subject");
  synth->add_option("--test-subjects", sa.test_subjects, "Test subjects per race");
  synth->add_option("--test-images", sa.test_images, "Images per test subject");
  synth->add_option("--pairs", sa.pairs, "Pairs per race");
  synth->add_option("--folds", sa.folds, "Folds");
  synth->add_option("--sigma-between", sa.sigma_between, "Identity spread");
  synth->add_option("--sigma-within", sa.sigma_within, "Image spread");
  synth->add_option("--off-block", sa.off_block, "Identity spread outside a race's own block");
  synth->add_option("--seed", sa.seed, "Seed");

  SampleArgs sm;
  auto* sample = app.add_subcommand("sample", "Draw a training manifest from a catalog");
  sample->add_option("--catalog", sm.catalog, "Catalog CSV")->required()->check(CLI::ExistingFile);
  sample->add_option("--out", sm.out, "Manifest (JSON lines)")->required();
  sample->add_option("--mix", sm.mix, "Race mix, e.g. 1/4,1/4,1/4,1/4");
  sample->add_option("--point", sm.point, "Index into the 89 enumerated mixes");
  sample->add_option("--total", sm.total, "Total subjects for --mix/--point");
  sample->add_option("--race", sm.race, "Single-race manifest");
  sample->add_option("--subjects", sm.subjects, "Subjects for --race");
  sample->add_option("--images", sm.images, "Images per subject (0 with --race: all)");
  sample->add_option("--seed", sm.seed, "Seed");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train one embedding model on a manifest");
  train_cmd->add_option("--manifest", ta.manifest, "Manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--features", ta.features, "Feature store")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", ta.log, "Training log CSV (default <out>.log.csv)");
  train_cmd->add_option("--head", ta.head, "softmax | center | sphereface | arcface, with :key=value params");
  train_cmd->add_option("--epochs", ta.epochs, "Epochs");
  train_cmd->add_option("--batch-size", ta.batch, "Batch size");
  train_cmd->add_option("--lr", ta.lr, "Learning rate");
  train_cmd->add_option("--momentum", ta.momentum, "Momentum");
  train_cmd->add_option("--weight-decay", ta.wd, "Weight decay");
  train_cmd->add_option("--hidden", ta.hidden, "Hidden widths, comma separated");
  train_cmd->add_option("--embedding-dim", ta.embedding_dim, "Embedding width");
  train_cmd->add_option("--seed", ta.seed, "Seed");

  std::string ev_ckpt, ev_features, ev_pairs, ev_out;
  std::size_t ev_folds = 10;
  auto* eval = app.add_subcommand("eval", "Per-race pair accuracy, mean and variance of a checkpoint");
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--features", ev_features, "Feature store")->required()->check(CLI::ExistingFile);
  eval->add_option("--pairs", ev_pairs, "Pair CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--folds", ev_folds, "Folds");
  eval->add_option("--out", ev_out, "Report CSV");

  ClusterArgs ca;
  auto* cluster = app.add_subcommand("cluster", "Intra-race compactness and k-NN race membership");
  cluster->add_option("--checkpoint", ca.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  cluster->add_option("--features", ca.features, "Feature store")->required()->check(CLI::ExistingFile);
  cluster->add_option("--catalog", ca.catalog, "Catalog whose images are grouped by race");
  cluster->add_option("--pairs", ca.pairs, "Pair CSV whose images are grouped by race");
  cluster->add_option("--k", ca.k, "Neighbours");
  cluster->add_option("--samples", ca.samples, "Samples per race");
  cluster->add_option("--epsilon", ca.epsilon, "Distance floor for vote weights");
  cluster->add_option("--seed", ca.seed, "Seed");
  cluster->add_option("--json", ca.json, "JSON report");
  cluster->add_option("--csv", ca.csv, "CSV report");

  std::vector<std::pair<Design, DesignArgs>> design_args{{Design::DistributionSweep, {}},
                                                         {Design::SingleRace, {}},
                                                         {Design::GrowthStudy, {}},
                                                         {Design::NoiseStudy, {}}};
  std::vector<CLI::App*> design_cmds;
  const std::map<Design, std::string> design_help{
      {Design::DistributionSweep, "Train and evaluate on all 89 race mixes"},
      {Design::SingleRace, "Train on each race alone and test on all four"},
      {Design::GrowthStudy, "Add images or subjects for one race at a time"},
      {Design::NoiseStudy, "Patch-blur noise at increasing injection probability"}};
  for (auto& [design, da] : design_args) {
    auto* cmd = app.add_subcommand(std::string(design_name(design)), design_help.at(design));
    cmd->allow_extras();
    cmd->add_option("--config", da.config, "JSON config")->check(CLI::ExistingFile);
    cmd->add_option("--jobs", da.jobs, "Cells trained in parallel")->check(CLI::PositiveNumber);
    cmd->add_flag("--resume", da.resume, "Continue an interrupted run in the output directory");
    cmd->add_option("--stop-after", da.stop_after, "Stop after this many cells");
    cmd->add_option("--set", da.sets, "Config override key=value (repeatable)");
    cmd->add_flag("--quiet", da.quiet, "No per-cell progress");
    cmd->footer("Any config field can also be set as --dotted.key value, e.g. --train.epochs 10.");
    design_cmds.push_back(cmd);
  }

  std::string pl_results, pl_head = "arcface", pl_metric, pl_out;
  auto* plot = app.add_subcommand("plot", "Render a sweep results table as a flattened-simplex SVG");
  plot->add_option("--results", pl_results, "results.csv of a sweep")->required()->check(CLI::ExistingFile);
  plot->add_option("--head", pl_head, "Loss head label");
  plot->add_option("--metric", pl_metric, "afr | asi | cau | ind | mean | var | all");
  plot->add_option("--out", pl_out, "SVG path (stdout when omitted)");

  std::string fx_path, fx_report;
  double fx_tol = 0.015;
  bool fx_verbose = false;
  auto* fixtures = app.add_subcommand("verify-fixtures", "Recompute published means and variances");
  fixtures->add_option("--path", fx_path, "Fixture CSV or directory");
  fixtures->add_option("--tolerance", fx_tol, "Allowed absolute difference");
  fixtures->add_option("--report", fx_report, "Per-row CSV report");
  fixtures->add_flag("--verbose", fx_verbose, "Print passing rows too");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (enumerate->parsed()) return cmd_enumerate(enum_total, enum_layout);
    if (synth->parsed()) return cmd_synth(sa);
    if (sample->parsed()) return cmd_sample(sm);
    if (train_cmd->parsed()) return cmd_train(ta);
    if (eval->parsed()) return cmd_eval(ev_ckpt, ev_features, ev_pairs, ev_folds, ev_out);
    if (cluster->parsed()) return cmd_cluster(ca);
    if (plot->parsed()) return cmd_plot(pl_results, pl_head, pl_metric, pl_out);
    if (fixtures->parsed()) return cmd_verify_fixtures(fx_path, fx_tol, fx_report, fx_verbose);
    for (std::size_t i = 0; i < design_cmds.size(); ++i) {
      if (design_cmds[i]->parsed()) {
        return cmd_design(design_args[i].first, design_args[i].second, design_cmds[i]->remaining());
      }
    }
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFailure;
  }
  return kUsage;
}
