#pragma once

// Experiment configuration and the end-to-end studies driven by the command-line tool.

#include "seqcal/core.hpp"
#include "seqcal/losses.hpp"
#include "seqcal/metrics.hpp"
#include "seqcal/model.hpp"
#include "seqcal/semlm.hpp"
#include "seqcal/train.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace seqcal {

struct ExperimentConfig {
  TaskSpec task = default_task_spec();
  std::size_t n_train = 5000;
  std::size_t n_val = 500;
  std::size_t n_test = 1000;

  /// Optimizer and shape; objective.head/loss are filled per cell.
  TrainConfig train;
  int reference_epochs = 20;

  /// alpha chosen by a sweep on a held-out tuning seed; the library default stays 1.0.
  PssrConfig pssr{.alpha = 0.1};
  double rho_ctc = 0.5;
  double rho_ar = 0.5;
  std::size_t beam_width = 0;  ///< 0 = 8 * n
  bool remine_each_epoch = false;
  BaselineHyper hyper;
  double lm_smoothing = 0.1;
  std::size_t bins = 10;

  std::vector<CorruptionKind> shift_kinds{CorruptionKind::noise, CorruptionKind::blur, CorruptionKind::spatter,
                                          CorruptionKind::saturate};
  std::vector<double> shift_severities{0.0, 0.5, 1.0};

  std::vector<double> hardness_ratios{0.0, 0.5, 1.0};
  std::vector<std::string> hardness_methods{"nll", "pssr"};

  std::vector<double> ablation_rhos{0.0, 0.5, 1.0};

  double active_init_fraction = 0.1;
  double active_query_fraction = 0.01;
  int active_rounds = 5;
  Head active_head = Head::ar;
  std::vector<std::string> active_strategies{"random", "least_confidence", "pssr_least_confidence"};
  std::vector<std::uint64_t> active_seeds{0, 1, 2, 3, 4};

  std::vector<std::string> methods{"nll", "ls", "focal", "er", "brier", "pssr"};
  std::vector<Head> heads{Head::ctc, Head::ar};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::filesystem::path out;  ///< empty: nothing is written

  /// PSSR settings with the head's perception fraction.
  PssrConfig pssr_for(Head head) const;
  void validate() const;
};

/// Parses the YAML config; keys absent from the file keep their defaults. Throws on unknown keys.
ExperimentConfig parse_config(const std::string& yaml);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Complete YAML rendering of the config (used for the run-directory snapshot).
std::string dump_config(const ExperimentConfig& cfg);

/// Everything shared by the cells of one seed.
struct SeedContext {
  std::uint64_t seed = 0;
  Dataset train, val, test;
  Recognizer reference{ModelShape{}};
  BiContextLM lm{2, 1.0};
  std::map<double, MinedCache> mined;  ///< keyed by perception fraction
};

/// Synthesizes the three splits for `seed` (task seed = run seed), trains the reference CTC model
/// and fits the LM on the training labels. Without `with_reference` the reference stays untrained.
SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, const TaskSpec& task,
                         bool with_reference = true);
SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Mines (once) and returns the similar sets for perception fraction rho.
const MinedCache& mined_for(const ExperimentConfig& cfg, SeedContext& ctx, double rho);

bool method_supported(const std::string& method, Head head);
TrainConfig cell_train_config(const ExperimentConfig& cfg, Head head, const std::string& method, std::uint64_t seed,
                              std::optional<double> rho = {});

struct CellResult {
  std::uint64_t seed = 0;
  Head head = Head::ctc;
  std::string method;
  double rho = 0;
  Recognizer model{ModelShape{}};
  std::vector<EpochLog> log;
  std::vector<PredictionRecord> records;
  CalibrationReport report;
};

/// Trains one (head, method) cell on ctx.train and evaluates it on ctx.test.
CellResult run_cell(const ExperimentConfig& cfg, SeedContext& ctx, Head head, const std::string& method,
                    std::optional<double> rho = {});

struct SummaryRow {
  Head head = Head::ctc;
  std::string method;
  std::size_t seeds = 0;
  double acc_mean = 0, acc_std = 0;
  double ece_mean = 0, ece_std = 0;
  double ace_mean = 0, ace_std = 0;
  double mce_mean = 0, mce_std = 0;
};

struct PipelineResult {
  std::vector<SeedContext> contexts;
  std::vector<CellResult> cells;
  std::vector<SummaryRow> summary;
};

/// Every configured (seed, head, method) cell. Baselines that need per-token alignment are
/// skipped for the CTC head. When cfg.out is set, writes the run directory.
PipelineResult run_pipeline(const ExperimentConfig& cfg);

std::vector<SummaryRow> summarize(const std::vector<CellResult>& cells);

struct HardnessRow {
  double ratio = 0;
  Head head = Head::ctc;
  std::string method;
  std::vector<double> ece;  ///< per seed
  double median_ece = 0;
};

/// Train and test difficulty matched: every split is generated at the same hardness ratio.
std::vector<HardnessRow> run_hardness_study(const ExperimentConfig& cfg);

struct ShiftRow {
  CorruptionKind kind = CorruptionKind::noise;
  double severity = 0;
  Head head = Head::ctc;
  std::string method;
  std::vector<CalibrationReport> reports;  ///< per seed
  double median_ece = 0;
};

/// Evaluates the pipeline's trained cells on corrupted copies of each seed's test split.
std::vector<ShiftRow> run_shift_study(const ExperimentConfig& cfg, const PipelineResult& trained);

struct AblationRow {
  double rho = 0;
  Head head = Head::ctc;
  std::vector<double> ece;
  double median_ece = 0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::map<Head, double> best_rho;  ///< argmin of the median ECE; ties go to the earlier rho
};

/// PSSR runs that differ only in the perception fraction.
AblationResult run_proportion_ablation(const ExperimentConfig& cfg);

struct CurvePoint {
  int round = 0;
  double labeled_fraction = 0;
  double accuracy = 0;
};

struct ActiveCurve {
  std::string strategy;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> points;
};

/// Pool-based loop with a simulated oracle. Strategies: random, least_confidence (nll model),
/// pssr_least_confidence (PSSR model). Each round retrains from scratch on the labeled set.
ActiveCurve run_active_learning(const ExperimentConfig& cfg, const std::string& strategy, std::uint64_t seed);
std::vector<ActiveCurve> run_active_learning(const ExperimentConfig& cfg);

/// Top confusion pairs and the perplexity/confidence correlation of one cell.
struct Diagnostics {
  std::vector<ConfusionEntry> confusions;
  PerplexityCorrelation perplexity;
};
Diagnostics diagnose(const CellResult& cell, const BiContextLM& lm, const Alphabet& alphabet);

double median(std::vector<double> v);

/// CSV writers for the study tables.
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
void write_hardness_csv(const std::filesystem::path& path, const std::vector<HardnessRow>& rows);
void write_shift_csv(const std::filesystem::path& path, const std::vector<ShiftRow>& rows);
void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result);
void write_active_csv(const std::filesystem::path& path, const std::vector<ActiveCurve>& curves);
void write_diagnostics(const std::filesystem::path& dir, const Diagnostics& d, const Alphabet& alphabet);

/// Writes model, train log, predictions, report and reliability diagram of one cell under `dir`.
void write_cell(const std::filesystem::path& dir, const CellResult& cell, std::size_t bins);

}  // namespace seqcal
