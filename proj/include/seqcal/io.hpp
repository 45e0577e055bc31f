#pragma once

// File formats: JSON-lines datasets, mined caches and prediction logs; text checkpoints and LMs;
// CSV reports and SVG reliability diagrams.

#include "seqcal/core.hpp"
#include "seqcal/metrics.hpp"
#include "seqcal/model.hpp"
#include "seqcal/semlm.hpp"
#include "seqcal/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace seqcal {

namespace fs = std::filesystem;

/// First line holds the split and task spec; each following line is one sample with its
/// frames flattened row-major.
void write_dataset(const fs::path& path, const Dataset& d);
Dataset read_dataset(const fs::path& path);

void write_mined_cache(const fs::path& path, const MinedCache& cache);
MinedCache read_mined_cache(const fs::path& path);

void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const fs::path& path);

void save_model(const fs::path& path, const Recognizer& model);
Recognizer load_model(const fs::path& path);

void save_lm(const fs::path& path, const BiContextLM& lm);
BiContextLM load_lm(const fs::path& path);

void write_train_log(const fs::path& path, const std::vector<EpochLog>& log);

/// Metric summary followed by the bin table.
void write_report_csv(const fs::path& path, const CalibrationReport& report);

/// Accuracy bars per bin over the identity diagonal.
std::string reliability_svg(const CalibrationReport& report, const std::string& title);

/// Writes `text` to `path`, creating parent directories. Throws std::runtime_error on failure.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace seqcal
