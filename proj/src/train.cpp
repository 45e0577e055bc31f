#include "seqcal/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace seqcal {

SimilarSet mine_similar_set(const Recognizer& reference, const BiContextLM& lm, const Sample& s,
                            const PssrConfig& cfg, std::size_t beam_width) {
  cfg.validate();
  SimilarSet out;
  out.sample_id = s.id;
  const std::size_t n_perc = cfg.perception_count();
  const std::size_t n_sem = cfg.semantic_count();

  if (n_perc > 0) {
    const ProbMatrix m = ProbMatrix::from_logits(ctc_logits(reference, s.x));
    const std::size_t want = n_perc + 1;
    const auto ranked = top_n_perception(m, want, beam_width ? std::max(beam_width, want) : 8 * want);
    for (const auto& c : ranked) {
      if (out.perception.size() == n_perc) break;
      if (c.seq != s.y) out.perception.push_back(c);
    }
  }
  if (n_sem > 0 && !s.y.empty()) {
    const auto ranked = top_n_semantic(lm, s.y, n_sem + out.perception.size() + 1);
    for (const auto& c : ranked) {
      if (out.semantic.size() == n_sem) break;
      if (c.seq == s.y) continue;
      const bool dup = std::any_of(out.perception.begin(), out.perception.end(),
                                   [&](const ScoredSequence& p) { return p.seq == c.seq; });
      if (!dup) out.semantic.push_back(c);
    }
  }
  return out;
}

MinedCache mine_similar_sets(const Recognizer& reference, const BiContextLM& lm, const Dataset& data,
                             const PssrConfig& cfg, std::size_t beam_width) {
  if (reference.shape().vocab != lm.vocab_size())
    throw std::invalid_argument("reference model and language model disagree on the vocabulary");
  MinedCache cache;
  for (const auto& s : data.samples) cache.emplace(s.id, mine_similar_set(reference, lm, s, cfg, beam_width));
  return cache;
}

void TrainConfig::validate() const {
  objective.validate();
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must be in [0, 1)");
  if (clip_norm < 0) throw std::invalid_argument("clip norm must be >= 0");
}

std::vector<PredictionRecord> evaluate(const Recognizer& model, const Dataset& data, Head head) {
  std::vector<PredictionRecord> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back(decode_and_confidence(model, s, head));
  return out;
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, const Dataset& val, const MinedCache* mined,
                  const RemineHook& remine) {
  cfg.validate();
  if (data.spec.feature_dim != cfg.shape.input_dim || data.spec.alphabet_size != cfg.shape.vocab)
    throw std::invalid_argument("model shape does not match the dataset");
  const bool pssr = cfg.objective.loss == LossKind::pssr;
  if (pssr && mined == nullptr) throw std::invalid_argument("pssr training needs a mined cache");
  MinedCache current;
  if (pssr) {
    for (const auto& s : data.samples)
      if (!mined->contains(s.id)) throw std::invalid_argument(fmt::format("mined cache is missing sample {}", s.id));
    current = *mined;
  }

  TrainResult res{Recognizer::initialized(cfg.shape, cfg.seed), {}};
  auto& theta = res.model.parameters();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(theta.size());
  std::vector<std::size_t> order(data.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed({cfg.seed, 0x7EA1ULL, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    Eigen::VectorXd grad(theta.size());
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      grad.setZero();
      for (std::size_t i = begin; i < end; ++i) {
        const Sample& s = data.samples[order[i]];
        const SimilarSet* set = pssr ? &current.at(s.id) : nullptr;
        auto r = loss_and_grad(res.model, s, cfg.objective, set);
        loss_sum += r.loss;
        grad += r.grad;
      }
      grad /= static_cast<double>(end - begin);
      if (cfg.clip_norm > 0) {
        const double norm = grad.norm();
        if (norm > cfg.clip_norm) grad *= cfg.clip_norm / norm;
      }
      velocity = cfg.momentum * velocity + grad;
      theta -= cfg.learning_rate * velocity;
    }
    EpochLog entry{epoch + 1, data.size() ? loss_sum / static_cast<double>(data.size()) : 0.0, 0, 0};
    if (!std::isfinite(entry.train_loss))
      throw std::runtime_error(fmt::format("training diverged in epoch {}", epoch + 1));
    if (val.size() > 0) {
      const auto records = evaluate(res.model, val, cfg.objective.head);
      const auto rep = calibration_report(records);
      entry.val_accuracy = rep.accuracy;
      entry.val_ece = rep.ece;
    }
    res.log.push_back(entry);
    if (pssr && remine) {
      if (auto fresh = remine(res.model, epoch + 1)) current = std::move(*fresh);
    }
  }
  return res;
}

}  // namespace seqcal
