#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <map>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fairmix/config.hpp"
#include "fairmix/csv.hpp"
#include "fairmix/experiment.hpp"
#include "fairmix/fixtures.hpp"
#include "fairmix/simplex_svg.hpp"
#include "gen.hpp"

using namespace fairmix;
namespace fs = std::filesystem;

namespace {

// A configuration small enough that every design runs in seconds.
ExperimentConfig tiny(Design design, const fs::path& out) {
  auto cfg = default_config(design);
  cfg.output_dir = out.string();
  cfg.trials = 2;
  auto& s = cfg.corpus.synthetic;
  s.dims = 64;
  s.subjects_per_race = 24;
  s.images_per_subject = 8;
  s.test_subjects_per_race = 10;
  s.test_images_per_subject = 4;
  cfg.pairs.pairs_per_race = 40;
  cfg.pairs.folds = 4;
  cfg.sampling.total_subjects = 24;
  cfg.sampling.images_per_subject = 4;
  cfg.sampling.single_race_subjects = 12;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 16;
  cfg.train.hidden = {16};
  cfg.train.embedding_dim = 8;
  cfg.cluster.k = 5;
  cfg.cluster.samples_per_race = 30;
  cfg.growth = GrowthPreset{6, 4, 2, 3, 4};
  cfg.noise.probabilities = {0.0, 0.5, 1.0};
  return cfg;
}

RunOptions quiet(int jobs = 1) {
  RunOptions o;
  o.jobs = jobs;
  return o;
}

ResultsTable fake_sweep(const std::string& head) {
  ResultsTable t;
  const auto pts = enumerate_simplex_points();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ResultRow r;
    r.design = "sweep";
    r.head = head;
    r.cell = fmt::format("{:02}", i);
    r.trial = ResultRow::kAggregateTrial;
    r.mix = pts[i];
    r.subjects = mix_to_counts(pts[i], 200);
    for (std::size_t k = 0; k < 4; ++k) r.accuracy[k] = 60.0 + std::fmod(static_cast<double>(i * (k + 3)) * 1.7, 35.0);
    const auto rep = fairness_report(r.accuracy);
    r.mean = rep.mean;
    r.variance = rep.variance;
    t.rows.push_back(r);
  }
  return t;
}

const ResultRow& find_row(const ResultsTable& t, const std::string& cell, const std::string& trial) {
  for (const auto& r : t.rows)
    if (r.cell == cell && r.trial == trial) return r;
  throw std::runtime_error("row not found: " + cell + "/" + trial);
}

}  // namespace

TEST_CASE("designs have names and defaults") {
  for (Design d : {Design::SingleRace, Design::DistributionSweep, Design::GrowthStudy, Design::NoiseStudy}) {
    CHECK(parse_design(design_name(d)) == d);
    const auto cfg = default_config(d);
    CHECK(cfg.design == d);
    CHECK(cfg.trials == 5);
    CHECK_NOTHROW(cfg.validate());
  }
  CHECK(default_config(Design::SingleRace).cluster.enabled);
  CHECK_THROWS_AS(parse_design("bogus"), std::invalid_argument);
}

TEST_CASE("config JSON round-trips and rejects unknown keys") {
  auto cfg = default_config(Design::GrowthStudy);
  cfg.heads = {SoftmaxCE{}, ArcFace{8.0, 0.3}};
  cfg.train.epochs = 7;
  const auto j = to_json(cfg);
  const auto back = config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK(config_hash(back) == config_hash(cfg));

  auto bad = nlohmann::json::parse(j.dump());
  bad["train"]["epoch"] = 3;
  CHECK_THROWS_AS(config_from_json(bad), std::invalid_argument);
  auto no_design = nlohmann::json::parse(j.dump());
  no_design.erase("design");
  CHECK(config_from_json(no_design, Design::NoiseStudy).design == Design::NoiseStudy);
}

TEST_CASE("dotted overrides and head lists") {
  auto j = nlohmann::json(to_json(default_config(Design::DistributionSweep)));
  apply_override(j, "train.epochs", "9");
  apply_override(j, "heads", "arcface:s=8,m=0.3,softmax");
  apply_override(j, "output_dir", "somewhere");
  const auto cfg = config_from_json(j);
  CHECK(cfg.train.epochs == 9);
  REQUIRE(cfg.heads.size() == 2);
  CHECK(head_spec(cfg.heads[0]) == head_spec(ArcFace{8.0, 0.3}));
  CHECK(head_name(cfg.heads[1]) == "softmax");
  CHECK(cfg.output_dir == "somewhere");
  apply_override(j, "train.nope", "1");
  CHECK_THROWS_AS(config_from_json(j), std::invalid_argument);
}

TEST_CASE("build_config layers file and overrides and validates") {
  const auto dir = testgen::scratch_dir("config");
  auto cfg = default_config(Design::NoiseStudy);
  cfg.trials = 3;
  testgen::spit(dir / "noise.json", to_json(cfg).dump(2));
  const auto built = build_config(Design::NoiseStudy, dir / "noise.json", {{"seed", "11"}});
  CHECK(built.trials == 3);
  CHECK(built.seed == 11);
  CHECK_THROWS_AS(build_config(Design::DistributionSweep, dir / "noise.json", {}), std::invalid_argument);
  CHECK_THROWS_AS(build_config(Design::NoiseStudy, std::nullopt, {{"trials", "0"}}), std::invalid_argument);
  CHECK_THROWS_AS(build_config(Design::NoiseStudy, std::nullopt, {{"corpus.synthetic.dims", "60"}}),
                  std::invalid_argument);
}

TEST_CASE("example configs load and match the design defaults") {
  for (Design d : {Design::SingleRace, Design::DistributionSweep, Design::GrowthStudy, Design::NoiseStudy}) {
    const auto path = fs::path(FAIRMIX_CONFIG_DIR) / (std::string(design_name(d)) + ".json");
    INFO(path);
    const auto cfg = build_config(d, path, {});
    CHECK(config_hash(cfg) == config_hash(default_config(d)));
  }
}

TEST_CASE("config hash ignores the output directory") {
  auto a = default_config(Design::DistributionSweep), b = a;
  b.output_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.seed = 2;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("output directory defaults and honours the output root") {
  auto cfg = default_config(Design::GrowthStudy);
  ::unsetenv("FAIRMIX_OUTPUT_ROOT");
  CHECK(resolve_output_dir(cfg) == fs::path("runs") / "growth");
  ::setenv("FAIRMIX_OUTPUT_ROOT", "/tmp/root", 1);
  CHECK(resolve_output_dir(cfg) == fs::path("/tmp/root") / "runs" / "growth");
  cfg.output_dir = "/abs/out";
  CHECK(resolve_output_dir(cfg) == fs::path("/abs/out"));
  ::unsetenv("FAIRMIX_OUTPUT_ROOT");
}

TEST_CASE("seed hierarchy never reuses a stream") {
  const auto cfg = default_config(Design::DistributionSweep);
  std::set<std::uint64_t> seen;
  for (int t = 0; t < 5; ++t) {
    const auto ts = trial_seed(cfg, t);
    CHECK(seen.insert(ts).second);
    for (int c = 0; c < 89; ++c) {
      const auto cs = cell_seed(ts, fmt::format("{:02}", c));
      CHECK(seen.insert(cs).second);
      for (const char* stage : {"sample", "train", "eval", "cluster"}) CHECK(seen.insert(stage_seed(cs, stage)).second);
    }
  }
  auto other = cfg;
  other.design = Design::SingleRace;
  CHECK(trial_seed(other, 0) != trial_seed(cfg, 0));
}

TEST_CASE("results CSV round-trips and aggregates average per-race accuracy") {
  const auto dir = testgen::scratch_dir("results");
  ResultsTable t;
  for (int trial = 0; trial < 3; ++trial) {
    EvalReport rep = fairness_report({70.0 + trial, 80.0, 90.0 - trial, 60.0});
    rep.meta.mix = RaceMix::uniform();
    rep.meta.subjects = SubjectCounts{{5, 5, 5, 5}};
    t.rows.push_back(row_from_report("sweep", "arcface", "00", trial, rep));
  }
  const auto agg = aggregate_rows(t.rows);
  REQUIRE(agg.size() == 1);
  CHECK(agg[0].trial == "mean");
  CHECK(agg[0].accuracy[0] == doctest::Approx(71.0));
  CHECK(agg[0].accuracy[2] == doctest::Approx(89.0));
  CHECK(agg[0].variance == doctest::Approx(fairness_report({71.0, 80.0, 89.0, 60.0}).variance));
  t.rows.insert(t.rows.end(), agg.begin(), agg.end());
  write_results_csv(dir / "r.csv", t);
  const auto back = read_results_csv(dir / "r.csv");
  REQUIRE(back.rows.size() == 4);
  CHECK(back.per_trial().size() == 3);
  CHECK(back.aggregates().size() == 1);
  CHECK(back.rows[1].mix == RaceMix::uniform());
  write_results_csv(dir / "again.csv", back);
  CHECK(testgen::slurp(dir / "again.csv") == testgen::slurp(dir / "r.csv"));
  CHECK(csv::read_file(dir / "r.csv").header == ResultsTable::columns());
}

TEST_CASE("shipped fixtures: quoted examples pass, outliers are reported") {
  const auto rep = verify_fixtures(FAIRMIX_FIXTURE_DIR, 0.015);
  CHECK(rep.rows.size() == 184);
  std::size_t checked = 0;
  for (const auto& r : rep.rows) {
    if (r.accuracy == PerRace<double>{71.68, 71.70, 80.68, 75.25} ||
        r.accuracy == PerRace<double>{78.92, 71.05, 77.28, 76.65}) {
      CHECK(r.pass);
      ++checked;
    }
    CHECK(r.within_rounding);
  }
  CHECK(checked >= 2);
}

TEST_CASE("a corrupted fixture row is the sole failure") {
  const auto dir = testgen::scratch_dir("fixtures");
  const auto rep = verify_fixtures(fs::path(FAIRMIX_FIXTURE_DIR) / "arcface.csv", 0.015);
  std::string text = "african_subj,asian_subj,cauc_subj,indian_subj,acc_afr,acc_asi,acc_cau,acc_ind,acc_mean,acc_var\n";
  int written = 0;
  for (const auto& r : rep.rows) {
    if (!r.pass) continue;
    const double var = written == 5 ? r.published_variance + 1.0 : r.published_variance;
    text += fmt::format("{},{},{},{},{:.2f},{:.2f},{:.2f},{:.2f},{:.2f},{:.2f}\n", r.subjects.counts[0],
                        r.subjects.counts[1], r.subjects.counts[2], r.subjects.counts[3], r.accuracy[0],
                        r.accuracy[1], r.accuracy[2], r.accuracy[3], r.published_mean, var);
    ++written;
  }
  testgen::spit(dir / "corrupt.csv", text);
  const auto out = verify_fixtures(dir / "corrupt.csv", 0.015);
  CHECK(out.failures() == 1);
  CHECK_FALSE(out.rows[5].pass);
  CHECK(out.rows[5].line == 7);
  CHECK(out.rows[5].variance_diff == doctest::Approx(-1.0).epsilon(0.02));

  testgen::spit(dir / "malformed.csv", "african_subj,asian_subj\n1,2\n");
  CHECK_THROWS(verify_fixtures(dir / "malformed.csv", 0.015));
}

TEST_CASE("simplex SVG renders 181 markers per panel") {
  const auto table = fake_sweep("arcface");
  const auto svg = emit_simplex_svg(table, "arcface");
  CHECK(testgen::count_occurrences(svg, "class=\"marker\"") == 181 * 6);
  SvgOptions one;
  one.panel = PlotMetric::Mean;
  CHECK(testgen::count_occurrences(emit_simplex_svg(table, "arcface", one), "class=\"marker\"") == 181);
  CHECK(emit_simplex_svg(table, "arcface") == svg);
  CHECK(svg.rfind("<svg", 0) == 0);
}

TEST_CASE("the variance panel's minimum marker sits at the argmin row") {
  const auto table = fake_sweep("arcface");
  SvgOptions opts;
  opts.panel = PlotMetric::Variance;
  const auto svg = emit_simplex_svg(table, "arcface", opts);
  const std::regex marker("data-mix=\"([^\"]+)\" data-value=\"([^\"]+)\"");
  double best = 1e300;
  std::set<std::string> best_mix;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), marker); it != std::sregex_iterator(); ++it) {
    const double v = std::stod((*it)[2]);
    if (v < best) {
      best = v;
      best_mix = {(*it)[1]};
    } else if (v == best) {
      best_mix.insert((*it)[1]);
    }
  }
  const auto argmin = std::min_element(table.rows.begin(), table.rows.end(), [](const auto& a, const auto& b) {
    return a.variance < b.variance;
  });
  CHECK(best_mix == std::set<std::string>{argmin->mix->to_string()});
  CHECK(best == doctest::Approx(argmin->variance).epsilon(1e-6));
}

TEST_CASE("SVG emission rejects an incomplete sweep") {
  auto table = fake_sweep("arcface");
  table.rows.pop_back();
  CHECK_THROWS_AS(emit_simplex_svg(table, "arcface"), std::invalid_argument);
  CHECK_THROWS_AS(emit_simplex_svg(fake_sweep("softmax"), "arcface"), std::invalid_argument);
  CHECK(parse_plot_metric("var") == PlotMetric::Variance);
  CHECK(parse_plot_metric("Asian") == PlotMetric::Asian);
}

TEST_CASE("single-race design yields a 4x4 grid with spread") {
  const auto dir = testgen::scratch_dir("single-race");
  auto cfg = tiny(Design::SingleRace, dir);
  const auto out = run_single_race(cfg, quiet());
  CHECK(out.complete);
  CHECK(out.cells_total == 8);
  CHECK(out.table.per_trial().size() == 8);
  const auto grid = single_race_grid(out.table);
  CHECK(grid.size() == 16);
  for (const auto& c : grid) {
    CHECK(c.trials == 2);
    CHECK(c.sd >= 0.0);
  }
  const auto text = testgen::slurp(dir / "single_race_grid.csv");
  CHECK(testgen::count_occurrences(text, "\n") == 17);
  CHECK(text.find("+/-") != std::string::npos);
  CHECK(fs::exists(dir / "single_race_cluster.csv"));
  CHECK(testgen::count_occurrences(testgen::slurp(dir / "single_race_cluster.csv"), "\n") == 1 + 8 * 4);
}

TEST_CASE("sweep: 89 rows, counts on the uniform row, aggregate rows") {
  const auto dir = testgen::scratch_dir("sweep");
  auto cfg = tiny(Design::DistributionSweep, dir);
  cfg.trials = 1;
  const auto out = run_distribution_sweep(cfg, quiet());
  CHECK(out.complete);
  CHECK(out.table.per_trial().size() == 89);
  CHECK(out.table.aggregates().size() == 89);
  const auto& uniform = find_row(out.table, "00", "0");
  CHECK(uniform.subjects->counts == PerRace<std::int64_t>{6, 6, 6, 6});
  CHECK(fs::exists(dir / "simplex_arcface.svg"));
  CHECK(testgen::count_occurrences(testgen::slurp(dir / "simplex_arcface.svg"), "class=\"marker\"") == 181 * 6);
  CHECK_FALSE(fs::exists(dir / ".resume.json"));
}

TEST_CASE("runs are byte-identical across repeats, job counts and resumption") {
  const auto root = testgen::scratch_dir("determinism");
  auto cfg = tiny(Design::DistributionSweep, root / "a");
  cfg.trials = 1;
  cfg.noise.probabilities = {0.0};
  run_distribution_sweep(cfg, quiet());

  cfg.output_dir = (root / "b").string();
  run_distribution_sweep(cfg, quiet(3));

  cfg.output_dir = (root / "c").string();
  RunOptions partial = quiet();
  partial.stop_after = 30;
  const auto first = run_distribution_sweep(cfg, partial);
  CHECK_FALSE(first.complete);
  CHECK(first.cells_done == 30);
  CHECK(fs::exists(root / "c" / ".resume.json"));
  const auto partial_csv = csv::read_file(root / "c" / "results.csv");
  CHECK(partial_csv.rows.size() == 30);
  RunOptions resume = quiet(2);
  resume.resume = true;
  const auto second = run_distribution_sweep(cfg, resume);
  CHECK(second.complete);

  for (const char* f : {"results.csv", "simplex_arcface.svg"}) {
    INFO(f);
    const auto a = testgen::slurp(root / "a" / f);
    CHECK_FALSE(a.empty());
    CHECK(a == testgen::slurp(root / "b" / f));
    CHECK(a == testgen::slurp(root / "c" / f));
  }

  auto changed = cfg;
  changed.seed = 99;
  RunOptions again = quiet();
  again.resume = true;
  changed.output_dir = (root / "d").string();
  partial.stop_after = 2;
  run_distribution_sweep(changed, partial);
  changed.seed = 98;
  CHECK_THROWS(run_distribution_sweep(changed, again));
}

TEST_CASE("growth deltas are variant minus base for 8 groups") {
  const auto dir = testgen::scratch_dir("growth");
  auto cfg = tiny(Design::GrowthStudy, dir);
  cfg.trials = 1;
  const auto out = run_growth_study(cfg, quiet());
  CHECK(out.complete);
  std::vector<GrowthDelta> deltas;
  for (const auto& d : growth_deltas(out.table))
    if (d.trial == "0") deltas.push_back(d);
  CHECK(deltas.size() == 8);
  const auto& base = find_row(out.table, "base", "0");
  for (const auto& d : deltas) {
    const auto& v = find_row(out.table, growth_cell(d.race, d.mode), "0");
    for (std::size_t k = 0; k < 4; ++k) CHECK(d.delta[k] == doctest::Approx(v.accuracy[k] - base.accuracy[k]).epsilon(1e-12));
  }
  const auto& img = find_row(out.table, growth_cell(Race::Asian, GrowthMode::MoreImages), "0");
  const auto& sub = find_row(out.table, growth_cell(Race::Asian, GrowthMode::MoreSubjects), "0");
  CHECK(img.subjects->counts[1] == 6);
  CHECK(sub.subjects->counts[1] == 9);
  CHECK(testgen::count_occurrences(testgen::slurp(dir / "growth_deltas.csv"), "\n") == 17);
}

TEST_CASE("noise study: one row per probability and p = 0 equals the clean baseline") {
  const auto dir = testgen::scratch_dir("noise");
  auto cfg = tiny(Design::NoiseStudy, dir);
  cfg.trials = 1;
  const auto out = run_noise_study(cfg, quiet());
  CHECK(out.complete);
  CHECK(out.table.per_trial().size() == 3);
  const auto text = testgen::slurp(dir / "noise_results.csv");
  CHECK(testgen::count_occurrences(text, "\n") == 1 + 2 * 3 * 4);

  const auto ws = prepare_workspace(cfg);
  const auto pool = build_subject_pool(ws.catalog, 24, 4);
  const auto cs = cell_seed(trial_seed(cfg, 0), "uniform");
  auto m = sample_manifest(pool, mix_to_counts(RaceMix::uniform(), 24), 4, stage_seed(cs, "sample"));
  const auto clean = run_cell(ws, cfg, m, cfg.heads[0], cs);
  const auto& p0 = find_row(out.table, noise_cell(0.0), "0");
  for (std::size_t k = 0; k < 4; ++k) CHECK(format_metric(p0.accuracy[k]) == format_metric(clean.report.accuracy[k]));
  CHECK(clean.noised_images == 0);

  NoiseConfig all{1.0, cfg.noise.grid, cfg.noise.kmin, cfg.noise.kmax, cfg.noise.variance, stage_seed(cs, "noise")};
  CHECK(run_cell(ws, cfg, m, cfg.heads[0], cs, &all).noised_images == m.image_count());
}
