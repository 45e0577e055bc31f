#pragma once

// Offline similar-set mining and the minibatch training loop.

#include "seqcal/core.hpp"
#include "seqcal/losses.hpp"
#include "seqcal/metrics.hpp"
#include "seqcal/model.hpp"
#include "seqcal/semlm.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

namespace seqcal {

using MinedCache = std::map<int, SimilarSet>;

/// Mines S(x, y) for one sample. Perception candidates come from the reference CTC head
/// (top round(rho N) after dropping the target), semantic candidates from the LM applied to y
/// (the rest, skipping the target and anything already mined by perception).
/// beam_width = 0 means the default 8 * n.
SimilarSet mine_similar_set(const Recognizer& reference, const BiContextLM& lm, const Sample& s,
                            const PssrConfig& cfg, std::size_t beam_width = 0);

MinedCache mine_similar_sets(const Recognizer& reference, const BiContextLM& lm, const Dataset& data,
                             const PssrConfig& cfg, std::size_t beam_width = 0);

struct TrainConfig {
  LossSpec objective;
  ModelShape shape;
  int epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.02;
  double momentum = 0.9;  ///< 0 gives plain SGD
  double clip_norm = 5.0;  ///< batch-gradient norm cap; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;  ///< mean per-sample objective over the epoch
  double val_accuracy = 0;
  double val_ece = 0;
};

struct TrainResult {
  Recognizer model;
  std::vector<EpochLog> log;
};

/// Called after each epoch with the current model; returning a cache replaces the mined sets.
using RemineHook = std::function<std::optional<MinedCache>(const Recognizer&, int epoch)>;

/// Momentum SGD on per-batch mean gradients. Samples are shuffled each epoch from (seed, epoch)
/// and per-sample gradients are summed in batch order, so runs are reproducible.
/// `val` may be empty, in which case the log's validation columns stay 0.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const Dataset& val, const MinedCache* mined = nullptr,
                  const RemineHook& remine = {});

/// Greedy decoding of every sample.
std::vector<PredictionRecord> evaluate(const Recognizer& model, const Dataset& data, Head head);

}  // namespace seqcal
