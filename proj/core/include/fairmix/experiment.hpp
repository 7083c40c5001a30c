#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fairmix/augment.hpp"
#include "fairmix/cluster.hpp"
#include "fairmix/config.hpp"
#include "fairmix/corpus.hpp"
#include "fairmix/embednet.hpp"
#include "fairmix/evalproto.hpp"

namespace fairmix {

// ---------------------------------------------------------------------------
// Results

/// One evaluated model, or the mean over trials when trial == "mean".
struct ResultRow {
  std::string design;
  std::string head;
  std::string cell;
  std::string trial;
  std::optional<RaceMix> mix;
  std::optional<SubjectCounts> subjects;
  PerRace<double> accuracy{};
  double mean = 0.0;
  double variance = 0.0;

  bool is_aggregate() const { return trial == kAggregateTrial; }
  static constexpr const char* kAggregateTrial = "mean";
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  /// design,head,cell,trial,mix_afr..mix_ind,african_subj..indian_subj,acc_afr..acc_ind,acc_mean,acc_var
  static std::vector<std::string> columns();
  std::vector<ResultRow> per_trial() const;
  std::vector<ResultRow> aggregates() const;
};

std::vector<std::string> row_fields(const ResultRow& row);
ResultRow row_from_report(const std::string& design, const std::string& head, const std::string& cell, int trial,
                          const EvalReport& report);
ResultsTable read_results_csv(const std::filesystem::path& path);
void write_results_csv(const std::filesystem::path& path, const ResultsTable& table);

/// Mean over trials of each (head, cell): per-race accuracies are averaged,
/// then mean and population variance recomputed. Row order follows the first
/// appearance of each (head, cell).
std::vector<ResultRow> aggregate_rows(const std::vector<ResultRow>& per_trial);

// ---------------------------------------------------------------------------
// Seeds: master -> design/trial -> cell -> stage.

std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial);
std::uint64_t cell_seed(std::uint64_t trial_seed, std::string_view cell_key);
std::uint64_t stage_seed(std::uint64_t cell_seed, std::string_view stage);

// ---------------------------------------------------------------------------
// Shared inputs

struct Workspace {
  std::vector<ImageRecord> catalog;       ///< training catalog
  std::vector<ImageRecord> test_catalog;  ///< synthetic test images (empty for catalog sources)
  FeatureStore features;                  ///< training and test images
  PairSet pairs;

  /// Test image ids per race: the synthetic test catalog, or the pair images.
  PerRace<std::vector<std::string>> test_ids_by_race() const;
};

Workspace prepare_workspace(const ExperimentConfig& cfg);

struct CellRun {
  EvalReport report;
  TrainResult trained;
  std::optional<ClusterReport> cluster;
  std::size_t noised_images = 0;
};

/// Trains one model on the manifest (optionally after patch-blur noise on the
/// training images) and evaluates it on the workspace pairs.
CellRun run_cell(const Workspace& ws, const ExperimentConfig& cfg, const DatasetManifest& manifest,
                 const LossHead& head, std::uint64_t cell_seed, const NoiseConfig* noise = nullptr,
                 bool with_cluster = false);

// ---------------------------------------------------------------------------
// Designs

struct RunOptions {
  int jobs = 1;
  /// Continue from an interrupted run in the same output directory.
  bool resume = false;
  /// Stop after this many newly completed cells (leaves a resumable run).
  std::optional<std::size_t> stop_after;
  std::function<void(const std::string&)> progress;
};

struct RunOutcome {
  ResultsTable table;
  std::filesystem::path output_dir;
  std::vector<std::filesystem::path> files;
  bool complete = false;
  std::size_t cells_total = 0;
  std::size_t cells_done = 0;
};

RunOutcome run_single_race(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunOutcome run_distribution_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunOutcome run_growth_study(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunOutcome run_noise_study(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Design summaries, computed from results rows.

struct GridCell {
  std::string head;
  Race train_race = Race::African;
  Race test_race = Race::African;
  std::size_t trials = 0;
  double mean = 0.0;
  double sd = 0.0;  ///< sample standard deviation; 0 for a single trial
};
std::vector<GridCell> single_race_grid(const ResultsTable& table);

struct GrowthDelta {
  std::string head;
  Race race = Race::African;
  GrowthMode mode = GrowthMode::MoreImages;
  std::string trial;
  PerRace<double> delta{};  ///< variant minus base, per test race
};
std::vector<GrowthDelta> growth_deltas(const ResultsTable& table);

/// Growth cell label, e.g. "African+images".
std::string growth_cell(Race race, GrowthMode mode);
/// Noise cell label, e.g. "p=0.1".
std::string noise_cell(double p);

}  // namespace fairmix
