#include "fairmix/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fairmix/csv.hpp"
#include "fairmix/rng.hpp"
#include "fairmix/simplex_svg.hpp"
#include "fairmix/synth.hpp"

namespace fairmix {

// ---------------------------------------------------------------------------
// Results table

std::vector<std::string> ResultsTable::columns() {
  std::vector<std::string> c{"design", "head", "cell", "trial", "mix_afr", "mix_asi", "mix_cau", "mix_ind"};
  for (auto& s : report_columns()) c.push_back(std::move(s));
  return c;
}

std::vector<ResultRow> ResultsTable::per_trial() const {
  std::vector<ResultRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), [](const ResultRow& r) { return !r.is_aggregate(); });
  return out;
}

std::vector<ResultRow> ResultsTable::aggregates() const {
  std::vector<ResultRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), [](const ResultRow& r) { return r.is_aggregate(); });
  return out;
}

std::vector<std::string> row_fields(const ResultRow& row) {
  std::vector<std::string> f{row.design, row.head, row.cell, row.trial};
  if (row.mix) {
    for (auto& s : row.mix->to_strings()) f.push_back(std::move(s));
  } else {
    f.insert(f.end(), kNumRaces, std::string());
  }
  EvalReport rep;
  rep.accuracy = row.accuracy;
  rep.mean = row.mean;
  rep.variance = row.variance;
  rep.meta.subjects = row.subjects;
  for (auto& s : report_fields(rep)) f.push_back(std::move(s));
  return f;
}

ResultRow row_from_report(const std::string& design, const std::string& head, const std::string& cell, int trial,
                          const EvalReport& report) {
  ResultRow r;
  r.design = design;
  r.head = head;
  r.cell = cell;
  r.trial = std::to_string(trial);
  r.mix = report.meta.mix;
  r.subjects = report.meta.subjects;
  r.accuracy = report.accuracy;
  r.mean = report.mean;
  r.variance = report.variance;
  return r;
}

namespace {

ResultRow parse_row(const csv::Table& t, std::size_t i) {
  const auto& row = t.rows[i];
  const std::string where = fmt::format("{}:{}", t.source, t.lines[i]);
  if (row.size() != t.header.size()) throw std::runtime_error(where + ": wrong number of fields");
  auto col = [&](std::string_view name) -> const std::string& { return row[t.require_column(name)]; };
  ResultRow r;
  r.design = col("design");
  r.head = col("head");
  r.cell = col("cell");
  r.trial = col("trial");
  static constexpr const char* kMix[] = {"mix_afr", "mix_asi", "mix_cau", "mix_ind"};
  static constexpr const char* kSubj[] = {"african_subj", "asian_subj", "cauc_subj", "indian_subj"};
  static constexpr const char* kAcc[] = {"acc_afr", "acc_asi", "acc_cau", "acc_ind"};
  if (!col(kMix[0]).empty()) {
    PerRace<Weight> w{};
    for (std::size_t k = 0; k < kNumRaces; ++k) w[k] = parse_weight(col(kMix[k]));
    r.mix = RaceMix(w);
  }
  if (!col(kSubj[0]).empty()) {
    SubjectCounts s;
    for (std::size_t k = 0; k < kNumRaces; ++k) s.counts[k] = csv::to_int(col(kSubj[k]), where);
    r.subjects = s;
  }
  for (std::size_t k = 0; k < kNumRaces; ++k) r.accuracy[k] = csv::to_double(col(kAcc[k]), where);
  r.mean = csv::to_double(col("acc_mean"), where);
  r.variance = csv::to_double(col("acc_var"), where);
  return r;
}

}  // namespace

ResultsTable read_results_csv(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  ResultsTable table;
  for (std::size_t i = 0; i < t.rows.size(); ++i) table.rows.push_back(parse_row(t, i));
  return table;
}

void write_results_csv(const std::filesystem::path& path, const ResultsTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << csv::join(ResultsTable::columns()) << '\n';
  for (const auto& r : table.rows) out << csv::join(row_fields(r)) << '\n';
}

std::vector<ResultRow> aggregate_rows(const std::vector<ResultRow>& per_trial) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const ResultRow*>> groups;
  for (const auto& r : per_trial) {
    if (r.is_aggregate()) continue;
    auto key = std::make_pair(r.head, r.cell);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<ResultRow> out;
  for (const auto& key : order) {
    const auto& g = groups.at(key);
    PerRace<double> acc{};
    for (const auto* r : g) {
      for (std::size_t k = 0; k < kNumRaces; ++k) acc[k] += r->accuracy[k];
    }
    for (auto& a : acc) a /= static_cast<double>(g.size());
    const auto rep = fairness_report(acc);
    ResultRow row = *g.front();
    row.trial = ResultRow::kAggregateTrial;
    row.accuracy = rep.accuracy;
    row.mean = rep.mean;
    row.variance = rep.variance;
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seeds

std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial) {
  return derive_seed(derive_seed(cfg.seed, design_name(cfg.design)), {"trial", std::to_string(trial)});
}

std::uint64_t cell_seed(std::uint64_t trial_seed, std::string_view cell_key) {
  return derive_seed(trial_seed, {"cell", cell_key});
}

std::uint64_t stage_seed(std::uint64_t cell_seed, std::string_view stage) {
  return derive_seed(cell_seed, {"stage", stage});
}

// ---------------------------------------------------------------------------
// Workspace

PerRace<std::vector<std::string>> Workspace::test_ids_by_race() const {
  PerRace<std::vector<std::string>> out;
  if (!test_catalog.empty()) {
    for (const auto& r : test_catalog) out[index_of(r.race)].push_back(r.image_id);
    return out;
  }
  for (Race r : kAllRaces) {
    PairSet one;
    one.pairs[index_of(r)] = pairs[r];
    out[index_of(r)] = pair_image_ids(one);
  }
  return out;
}

Workspace prepare_workspace(const ExperimentConfig& cfg) {
  Workspace ws;
  if (cfg.corpus.source == "catalog") {
    ws.catalog = read_catalog(cfg.corpus.catalog);
    ws.features = FeatureStore::load(cfg.corpus.features);
    ws.pairs = read_pairs(cfg.pairs.path, cfg.pairs.folds);
    for (const auto& id : pair_image_ids(ws.pairs)) {
      if (!ws.features.contains(id)) throw std::runtime_error("pair image " + id + " missing from feature store");
    }
    return ws;
  }
  const auto& s = cfg.corpus.synthetic;
  SynthConfig sc = block_structured_config(s.dims, derive_seed(cfg.seed, "corpus"), s.off_block);
  sc.sigma_between = s.sigma_between;
  sc.sigma_within = s.sigma_within;
  sc.subjects_per_race = s.subjects_per_race;
  sc.images_per_subject = s.images_per_subject;
  sc.extra_images_max = s.extra_images_max;
  auto train = synth_corpus(sc);

  SynthConfig tc = sc;
  tc.subjects_per_race = s.test_subjects_per_race;
  tc.images_per_subject = s.test_images_per_subject;
  tc.extra_images_max = 0;
  tc.id_prefix = "t";
  auto test = synth_corpus(tc);

  ws.catalog = std::move(train.catalog);
  ws.test_catalog = std::move(test.catalog);
  ws.features = std::move(train.features);
  for (const auto& r : ws.test_catalog) ws.features.add(r.image_id, test.features.at(r.image_id));
  ws.pairs = synth_pairs(ws.test_catalog, cfg.pairs.pairs_per_race, cfg.pairs.folds, derive_seed(cfg.seed, "pairs"));
  return ws;
}

// ---------------------------------------------------------------------------
// One cell

CellRun run_cell(const Workspace& ws, const ExperimentConfig& cfg, const DatasetManifest& manifest,
                 const LossHead& head, std::uint64_t cseed, const NoiseConfig* noise, bool with_cluster) {
  TrainConfig tc = cfg.train;
  tc.head = head;
  tc.seed = stage_seed(cseed, "train");

  CellRun run;
  if (noise) {
    const auto side = static_cast<int>(std::llround(std::sqrt(static_cast<double>(ws.features.dims()))));
    FeatureStore noisy(ws.features.dims());
    std::vector<float> buf(ws.features.dims());
    for (const auto& e : manifest.entries) {
      for (const auto& id : e.image_ids) {
        const auto src = ws.features.at(id);
        std::copy(src.begin(), src.end(), buf.begin());
        Rng rng = noise_stream(noise->seed, id);
        if (noise_features(buf, side, *noise, rng)) ++run.noised_images;
        noisy.add(id, buf);
      }
    }
    run.trained = train(manifest, noisy, tc);
  } else {
    run.trained = train(manifest, ws.features, tc);
  }

  EvalMetadata meta;
  meta.mix = manifest.mix;
  meta.subjects = manifest.subject_counts();
  meta.seed = cseed;
  meta.head = head_name(head);
  run.report = evaluate(run.trained.model, ws.features, ws.pairs, meta);

  if (with_cluster) {
    const auto ids = ws.test_ids_by_race();
    RaceGroups groups;
    for (Race r : kAllRaces) groups[index_of(r)] = embed_all(run.trained.model, ws.features, ids[index_of(r)]);
    ClusterConfig cc{cfg.cluster.k, cfg.cluster.samples_per_race, stage_seed(cseed, "cluster"), cfg.cluster.epsilon};
    run.cluster = cluster_report(groups, cc);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Execution engine: ordered writer, incremental flush, resume token.

namespace {

constexpr const char* kResultsFile = "results.csv";
constexpr const char* kClusterFile = "single_race_cluster.csv";
constexpr const char* kTokenFile = ".resume.json";

struct UnitOutput {
  std::vector<std::string> result;
  std::vector<std::vector<std::string>> cluster;
  std::string summary;
};

struct Unit {
  std::string head;
  std::string cell;
  int trial = 0;
  std::function<UnitOutput()> run;
};

std::string unit_key(const std::string& head, const std::string& cell, const std::string& trial) {
  return head + '\x1f' + cell + '\x1f' + trial;
}

std::vector<std::string> cluster_columns() {
  return {"design", "head", "cell", "trial", "race", "compactness", "to_afr", "to_asi", "to_cau", "to_ind"};
}

std::vector<std::vector<std::string>> cluster_rows(const std::string& design, const std::string& head,
                                                   const std::string& cell, int trial, const ClusterReport& rep) {
  std::vector<std::vector<std::string>> rows;
  for (Race r : kAllRaces) {
    const auto i = index_of(r);
    std::vector<std::string> f{design, head, cell, std::to_string(trial), std::string(race_name(r)),
                               format_metric(rep.compactness[i])};
    for (double m : rep.membership[i]) f.push_back(format_metric(m));
    rows.push_back(std::move(f));
  }
  return rows;
}

void write_token(const std::filesystem::path& path, const std::string& hash, const std::vector<std::string>& done) {
  nlohmann::ordered_json j{{"config_hash", hash}, {"completed_cells", nlohmann::json::array()}};
  for (const auto& k : done) {
    const auto a = k.find('\x1f');
    const auto b = k.find('\x1f', a + 1);
    j["completed_cells"].push_back({{"head", k.substr(0, a)}, {"cell", k.substr(a + 1, b - a - 1)},
                                    {"trial", k.substr(b + 1)}});
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

// Keeps header plus rows whose (head, cell, trial) is in `keep`.
void filter_file(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::set<std::string>& keep) {
  std::vector<std::vector<std::string>> rows;
  if (std::filesystem::exists(path)) {
    const auto t = csv::read_file(path);
    if (t.header != header) throw std::runtime_error(path.string() + ": unexpected header, cannot resume");
    for (const auto& r : t.rows) {
      if (r.size() >= 4 && keep.count(unit_key(r[1], r[2], r[3]))) rows.push_back(r);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << csv::join(header) << '\n';
  for (const auto& r : rows) out << csv::join(r) << '\n';
}

struct EngineResult {
  bool complete = false;
  std::size_t total = 0;
  std::size_t done = 0;
};

EngineResult execute(const ExperimentConfig& cfg, const std::filesystem::path& dir, std::vector<Unit> units,
                     bool cluster_file, const RunOptions& opts) {
  std::filesystem::create_directories(dir);
  const auto results_path = dir / kResultsFile;
  const auto cluster_path = dir / kClusterFile;
  const auto token_path = dir / kTokenFile;
  const auto hash = config_hash(cfg);

  std::vector<std::string> completed;
  std::set<std::string> completed_set;
  if (opts.resume && std::filesystem::exists(token_path)) {
    std::ifstream in(token_path);
    const auto tok = nlohmann::json::parse(in);
    if (tok.at("config_hash").get<std::string>() != hash) {
      throw std::runtime_error("resume token in " + dir.string() + " belongs to a different config");
    }
    for (const auto& c : tok.at("completed_cells")) {
      auto k = unit_key(c.at("head").get<std::string>(), c.at("cell").get<std::string>(),
                        c.at("trial").get<std::string>());
      if (completed_set.insert(k).second) completed.push_back(std::move(k));
    }
  }
  filter_file(results_path, ResultsTable::columns(), completed_set);
  if (cluster_file) filter_file(cluster_path, cluster_columns(), completed_set);
  {
    std::ofstream out(dir / "config.json", std::ios::binary);
    out << to_json(cfg).dump(2) << '\n';
  }
  write_token(token_path, hash, completed);

  std::vector<Unit> pending;
  for (auto& u : units) {
    if (!completed_set.count(unit_key(u.head, u.cell, std::to_string(u.trial)))) pending.push_back(std::move(u));
  }
  EngineResult er;
  er.total = units.size();
  er.done = completed.size();
  const std::size_t limit = opts.stop_after ? std::min(*opts.stop_after, pending.size()) : pending.size();

  std::vector<std::optional<UnitOutput>> outputs(limit);
  std::vector<std::exception_ptr> errors(limit);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= limit) return;
      std::optional<UnitOutput> out;
      std::exception_ptr err;
      try {
        out = pending[i].run();
      } catch (...) {
        err = std::current_exception();
        failed.store(true);
      }
      {
        std::lock_guard lock(mu);
        outputs[i] = std::move(out);
        errors[i] = err;
      }
      cv.notify_all();
    }
  };

  const int jobs = std::max(1, opts.jobs);
  std::vector<std::thread> threads;
  // With one job the calling thread does the work between flushes.
  if (jobs > 1) {
    for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
  }

  std::ofstream results(results_path, std::ios::binary | std::ios::app);
  std::ofstream cluster_out;
  if (cluster_file) cluster_out.open(cluster_path, std::ios::binary | std::ios::app);
  std::exception_ptr first_error;
  for (std::size_t i = 0; i < limit; ++i) {
    if (jobs == 1) {
      if (failed.load()) break;
      try {
        outputs[i] = pending[i].run();
      } catch (...) {
        errors[i] = std::current_exception();
        failed.store(true);
      }
    } else {
      std::unique_lock lock(mu);
      // Units are fetched in index order, so unit i is always claimed before any
      // later failure stops the workers.
      cv.wait(lock, [&] { return outputs[i].has_value() || errors[i] != nullptr; });
    }
    if (errors[i]) {
      first_error = errors[i];
      break;
    }
    const auto& u = pending[i];
    const auto& o = *outputs[i];
    results << csv::join(o.result) << '\n';
    results.flush();
    if (cluster_file) {
      for (const auto& r : o.cluster) cluster_out << csv::join(r) << '\n';
      cluster_out.flush();
    }
    completed.push_back(unit_key(u.head, u.cell, std::to_string(u.trial)));
    write_token(token_path, hash, completed);
    ++er.done;
    if (opts.progress) opts.progress(fmt::format("[{}/{}] {}", er.done, er.total, o.summary));
  }
  failed.store(true);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  er.complete = er.done == er.total;
  return er;
}

void finish_results(const std::filesystem::path& dir, RunOutcome& outcome) {
  const auto path = dir / kResultsFile;
  auto table = read_results_csv(path);
  if (outcome.complete) {
    const auto agg = aggregate_rows(table.rows);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    for (const auto& r : agg) out << csv::join(row_fields(r)) << '\n';
    out.close();
    table = read_results_csv(path);
    std::filesystem::remove(dir / kTokenFile);
  }
  outcome.table = std::move(table);
  outcome.files.push_back(path);
  outcome.files.push_back(dir / "config.json");
}

std::string summary(const std::string& design, const std::string& head, const std::string& cell, int trial,
                    const EvalReport& r) {
  return fmt::format("{} {} {} trial {}: mean {:.2f} var {:.2f}", design, head, cell, trial, r.mean, r.variance);
}

UnitOutput unit_output(const std::string& design, const std::string& head, const std::string& cell, int trial,
                       const CellRun& run) {
  UnitOutput o;
  o.result = row_fields(row_from_report(design, head, cell, trial, run.report));
  if (run.cluster) o.cluster = cluster_rows(design, head, cell, trial, *run.cluster);
  o.summary = summary(design, head, cell, trial, run.report);
  return o;
}

std::string fixed_p(double p) { return fmt::format("{:g}", p); }

}  // namespace

// ---------------------------------------------------------------------------
// Designs

std::string growth_cell(Race race, GrowthMode mode) {
  return fmt::format("{}+{}", race_name(race), mode == GrowthMode::MoreImages ? "images" : "subjects");
}

std::string noise_cell(double p) { return "p=" + fixed_p(p); }

RunOutcome run_distribution_sweep(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  cfg.design = Design::DistributionSweep;
  cfg.validate();
  const auto ws = std::make_shared<Workspace>(prepare_workspace(cfg));
  const auto pool = std::make_shared<SubjectPool>(
      build_subject_pool(ws->catalog, static_cast<std::size_t>(cfg.sampling.total_subjects),
                         cfg.sampling.images_per_subject));
  const auto points = enumerate_simplex_points();
  const std::string design(design_name(cfg.design));

  std::vector<Unit> units;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::string cell = fmt::format("{:02d}", i);
    for (const auto& head : cfg.heads) {
      for (int t = 0; t < cfg.trials; ++t) {
        const RaceMix mix = points[i];
        units.push_back({head_name(head), cell, t, [=, &cfg] {
                           const auto cs = cell_seed(trial_seed(cfg, t), cell);
                           auto m = sample_manifest(*pool, mix_to_counts(mix, cfg.sampling.total_subjects),
                                                    cfg.sampling.images_per_subject, stage_seed(cs, "sample"));
                           m.mix = mix;
                           m.experiment_id = design + "/" + cell;
                           return unit_output(design, head_name(head), cell, t, run_cell(*ws, cfg, m, head, cs));
                         }});
      }
    }
  }
  RunOutcome outcome;
  outcome.output_dir = resolve_output_dir(cfg);
  const auto er = execute(cfg, outcome.output_dir, std::move(units), false, opts);
  outcome.complete = er.complete;
  outcome.cells_total = er.total;
  outcome.cells_done = er.done;
  finish_results(outcome.output_dir, outcome);
  if (outcome.complete) {
    for (const auto& head : cfg.heads) {
      const auto path = outcome.output_dir / fmt::format("simplex_{}.svg", head_name(head));
      std::ofstream out(path, std::ios::binary);
      out << emit_simplex_svg(outcome.table, head_name(head));
      outcome.files.push_back(path);
    }
  }
  return outcome;
}

RunOutcome run_single_race(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  cfg.design = Design::SingleRace;
  cfg.validate();
  const auto ws = std::make_shared<Workspace>(prepare_workspace(cfg));
  const std::size_t min_images = cfg.sampling.single_race_images ? cfg.sampling.single_race_images : 1;
  const auto pool = std::make_shared<SubjectPool>(
      build_subject_pool(ws->catalog, cfg.sampling.single_race_subjects, min_images));
  const std::string design(design_name(cfg.design));

  std::vector<Unit> units;
  for (Race race : kAllRaces) {
    const std::string cell(race_name(race));
    for (const auto& head : cfg.heads) {
      for (int t = 0; t < cfg.trials; ++t) {
        units.push_back({head_name(head), cell, t, [=, &cfg] {
                           const auto cs = cell_seed(trial_seed(cfg, t), cell);
                           std::optional<std::size_t> images;
                           if (cfg.sampling.single_race_images) images = cfg.sampling.single_race_images;
                           auto m = single_race_manifest(*pool, race, cfg.sampling.single_race_subjects,
                                                         stage_seed(cs, "sample"), images);
                           m.experiment_id = design + "/" + cell;
                           return unit_output(design, head_name(head), cell, t,
                                              run_cell(*ws, cfg, m, head, cs, nullptr, cfg.cluster.enabled));
                         }});
      }
    }
  }
  RunOutcome outcome;
  outcome.output_dir = resolve_output_dir(cfg);
  const auto er = execute(cfg, outcome.output_dir, std::move(units), cfg.cluster.enabled, opts);
  outcome.complete = er.complete;
  outcome.cells_total = er.total;
  outcome.cells_done = er.done;
  finish_results(outcome.output_dir, outcome);
  if (cfg.cluster.enabled) outcome.files.push_back(outcome.output_dir / kClusterFile);
  if (outcome.complete) {
    const auto path = outcome.output_dir / "single_race_grid.csv";
    std::ofstream out(path, std::ios::binary);
    out << "head,train_race,test_race,trials,mean,sd,display\n";
    for (const auto& g : single_race_grid(outcome.table)) {
      out << fmt::format("{},{},{},{},{},{},{:.1f} +/- {:.1f}\n", g.head, race_name(g.train_race),
                         race_name(g.test_race), g.trials, format_metric(g.mean), format_metric(g.sd), g.mean,
                         g.sd);
    }
    outcome.files.push_back(path);
  }
  return outcome;
}

RunOutcome run_growth_study(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  cfg.design = Design::GrowthStudy;
  cfg.validate();
  const auto ws = std::make_shared<Workspace>(prepare_workspace(cfg));
  const auto& g = cfg.growth;
  const auto pool = std::make_shared<SubjectPool>(build_subject_pool(
      ws->catalog, g.base_subjects + g.new_subjects,
      std::max(g.base_images + g.extra_images, g.new_subject_images)));
  const std::string design(design_name(cfg.design));

  std::vector<std::pair<std::string, std::optional<std::pair<Race, GrowthMode>>>> cells{{"base", std::nullopt}};
  for (Race r : kAllRaces) {
    for (GrowthMode mode : {GrowthMode::MoreImages, GrowthMode::MoreSubjects}) {
      cells.push_back({growth_cell(r, mode), std::make_pair(r, mode)});
    }
  }
  std::vector<Unit> units;
  for (const auto& [cell, variant] : cells) {
    for (const auto& head : cfg.heads) {
      for (int t = 0; t < cfg.trials; ++t) {
        units.push_back({head_name(head), cell, t, [=, &cfg] {
                           const auto ts = trial_seed(cfg, t);
                           auto m = growth_base_manifest(*pool, cfg.growth, stage_seed(cell_seed(ts, "base"), "sample"));
                           const auto cs = cell_seed(ts, cell);
                           if (variant) {
                             m = grow_manifest(m, variant->first, variant->second, *pool, cfg.growth,
                                               stage_seed(cs, "sample"));
                             m.mix.reset();
                           }
                           m.experiment_id = design + "/" + cell;
                           return unit_output(design, head_name(head), cell, t, run_cell(*ws, cfg, m, head, cs));
                         }});
      }
    }
  }
  RunOutcome outcome;
  outcome.output_dir = resolve_output_dir(cfg);
  const auto er = execute(cfg, outcome.output_dir, std::move(units), false, opts);
  outcome.complete = er.complete;
  outcome.cells_total = er.total;
  outcome.cells_done = er.done;
  finish_results(outcome.output_dir, outcome);
  if (outcome.complete) {
    const auto path = outcome.output_dir / "growth_deltas.csv";
    std::ofstream out(path, std::ios::binary);
    out << "head,race_added,mode,trial,delta_afr,delta_asi,delta_cau,delta_ind\n";
    for (const auto& d : growth_deltas(outcome.table)) {
      out << fmt::format("{},{},{},{},{},{},{},{}\n", d.head, race_name(d.race), growth_mode_name(d.mode), d.trial,
                         format_metric(d.delta[0]), format_metric(d.delta[1]), format_metric(d.delta[2]),
                         format_metric(d.delta[3]));
    }
    outcome.files.push_back(path);
  }
  return outcome;
}

RunOutcome run_noise_study(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  cfg.design = Design::NoiseStudy;
  cfg.validate();
  const auto ws = std::make_shared<Workspace>(prepare_workspace(cfg));
  const auto pool = std::make_shared<SubjectPool>(
      build_subject_pool(ws->catalog, static_cast<std::size_t>(cfg.sampling.total_subjects),
                         cfg.sampling.images_per_subject));
  const std::string design(design_name(cfg.design));

  std::vector<Unit> units;
  for (double p : cfg.noise.probabilities) {
    const std::string cell = noise_cell(p);
    for (const auto& head : cfg.heads) {
      for (int t = 0; t < cfg.trials; ++t) {
        units.push_back({head_name(head), cell, t, [=, &cfg] {
                           // Every p of a trial shares data, training seed and noise
                           // streams; only the injection probability changes.
                           const auto cs = cell_seed(trial_seed(cfg, t), "uniform");
                           auto m = sample_manifest(*pool, mix_to_counts(RaceMix::uniform(), cfg.sampling.total_subjects),
                                                    cfg.sampling.images_per_subject, stage_seed(cs, "sample"));
                           m.mix = RaceMix::uniform();
                           m.experiment_id = design + "/" + cell;
                           NoiseConfig nc{p, cfg.noise.grid, cfg.noise.kmin, cfg.noise.kmax, cfg.noise.variance,
                                          stage_seed(cs, "noise")};
                           return unit_output(design, head_name(head), cell, t, run_cell(*ws, cfg, m, head, cs, &nc));
                         }});
      }
    }
  }
  RunOutcome outcome;
  outcome.output_dir = resolve_output_dir(cfg);
  const auto er = execute(cfg, outcome.output_dir, std::move(units), false, opts);
  outcome.complete = er.complete;
  outcome.cells_total = er.total;
  outcome.cells_done = er.done;
  finish_results(outcome.output_dir, outcome);
  if (outcome.complete) {
    const auto path = outcome.output_dir / "noise_results.csv";
    std::ofstream out(path, std::ios::binary);
    out << "head,p,trial,race,accuracy\n";
    for (const auto& r : outcome.table.rows) {
      const std::string p = r.cell.substr(2);
      for (Race race : kAllRaces) {
        out << fmt::format("{},{},{},{},{}\n", r.head, p, r.trial, race_name(race),
                           format_metric(r.accuracy[index_of(race)]));
      }
    }
    outcome.files.push_back(path);
  }
  return outcome;
}

RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  switch (cfg.design) {
    case Design::SingleRace: return run_single_race(cfg, opts);
    case Design::DistributionSweep: return run_distribution_sweep(cfg, opts);
    case Design::GrowthStudy: return run_growth_study(cfg, opts);
    case Design::NoiseStudy: return run_noise_study(cfg, opts);
  }
  throw std::logic_error("unhandled design");
}

// ---------------------------------------------------------------------------
// Summaries

std::vector<GridCell> single_race_grid(const ResultsTable& table) {
  std::vector<GridCell> out;
  std::vector<std::string> heads;
  for (const auto& r : table.rows) {
    if (std::find(heads.begin(), heads.end(), r.head) == heads.end()) heads.push_back(r.head);
  }
  for (const auto& head : heads) {
    for (Race train : kAllRaces) {
      std::vector<const ResultRow*> rows;
      for (const auto& r : table.rows) {
        if (!r.is_aggregate() && r.head == head && r.cell == race_name(train)) rows.push_back(&r);
      }
      if (rows.empty()) continue;
      for (Race test : kAllRaces) {
        GridCell g;
        g.head = head;
        g.train_race = train;
        g.test_race = test;
        g.trials = rows.size();
        for (const auto* r : rows) g.mean += r->accuracy[index_of(test)];
        g.mean /= static_cast<double>(rows.size());
        if (rows.size() > 1) {
          double ss = 0.0;
          for (const auto* r : rows) ss += (r->accuracy[index_of(test)] - g.mean) * (r->accuracy[index_of(test)] - g.mean);
          g.sd = std::sqrt(ss / static_cast<double>(rows.size() - 1));
        }
        out.push_back(g);
      }
    }
  }
  return out;
}

std::vector<GrowthDelta> growth_deltas(const ResultsTable& table) {
  std::vector<GrowthDelta> out;
  std::map<std::pair<std::string, std::string>, const ResultRow*> base;
  for (const auto& r : table.rows) {
    if (r.cell == "base") base[{r.head, r.trial}] = &r;
  }
  for (const auto& r : table.rows) {
    if (r.cell == "base") continue;
    const auto plus = r.cell.find('+');
    if (plus == std::string::npos) continue;
    auto it = base.find({r.head, r.trial});
    if (it == base.end()) continue;
    GrowthDelta d;
    d.head = r.head;
    d.race = parse_race(r.cell.substr(0, plus));
    d.mode = r.cell.substr(plus + 1) == "images" ? GrowthMode::MoreImages : GrowthMode::MoreSubjects;
    d.trial = r.trial;
    for (std::size_t k = 0; k < kNumRaces; ++k) d.delta[k] = r.accuracy[k] - it->second->accuracy[k];
    out.push_back(d);
  }
  return out;
}

}  // namespace fairmix
