#pragma once

// Sequence-level calibration metrics and the overconfidence diagnostics.

#include "seqcal/core.hpp"
#include "seqcal/semlm.hpp"

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace seqcal {

struct PredictionRecord {
  int id = 0;
  LabelSequence target;
  LabelSequence decoded;
  double confidence = 1.0;  ///< sequence-level confidence in (0, 1]
  bool correct = false;     ///< decoded == target
  double hardness = 0.0;
  /// Probability of each decoded token (one per decoded position); empty when not recorded.
  std::vector<double> token_probs;
};

PredictionRecord make_record(int id, LabelSequence target, LabelSequence decoded, double confidence,
                             double hardness = 0.0, std::vector<double> token_probs = {});

enum class BinScheme { equal_width, equal_mass };

struct CalibrationBin {
  double lower = 0;
  double upper = 0;
  std::size_t count = 0;
  double mean_confidence = 0;
  double accuracy = 0;
};

struct CalibrationReport {
  std::size_t count = 0;
  double accuracy = 0;
  double ece = 0;  ///< equal-width bins, weighted by occupancy
  double ace = 0;  ///< equal-mass bins, weighted by occupancy
  double mce = 0;  ///< max gap over non-empty equal-width bins
  std::vector<CalibrationBin> bins;  ///< table for the requested scheme
};

/// Bins are half-open [l, u) except the last, which is closed at 1. Equal-mass bins hold
/// consecutive records in confidence order and differ in size by at most one.
CalibrationReport calibration_report(std::span<const PredictionRecord> records, std::size_t num_bins = 10,
                                     BinScheme scheme = BinScheme::equal_width);

std::vector<CalibrationBin> equal_width_bins(std::span<const PredictionRecord> records, std::size_t num_bins);
std::vector<CalibrationBin> equal_mass_bins(std::span<const PredictionRecord> records, std::size_t num_bins);

double sequence_accuracy(std::span<const PredictionRecord> records);

struct ConfusionEntry {
  TokenId truth = 0;
  TokenId predicted = 0;
  std::size_t count = 0;
  double frequency = 0;  ///< % of truth's substitutions that went to predicted
  double mean_probability = 0;
};

enum class EditOp { match, substitute, insert, erase };

/// Minimum-edit alignment script turning `target` into `decoded`. On ties the diagonal
/// (match/substitute) is preferred over erase, and erase over insert.
std::vector<std::pair<EditOp, std::pair<int, int>>> align(const LabelSequence& target, const LabelSequence& decoded);

/// Substitution statistics sorted by frequency descending, then count descending, then ids.
/// Throws when a record with a substitution lacks token probabilities.
std::vector<ConfusionEntry> confusion_pair_stats(std::span<const PredictionRecord> records, const Alphabet& alphabet);

struct PerplexityCorrelation {
  std::vector<std::pair<double, double>> points;  ///< (perplexity of decoded, confidence) per misprediction
  std::optional<double> rank_correlation;          ///< Spearman; absent when undefined
};

/// Only incorrect records with a non-empty decoded sequence contribute.
PerplexityCorrelation perplexity_confidence_correlation(std::span<const PredictionRecord> records,
                                                        const BiContextLM& lm);

/// Spearman rank correlation with average ranks for ties; nullopt when either side is constant.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

}  // namespace seqcal
