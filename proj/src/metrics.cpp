#include "seqcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace seqcal {

PredictionRecord make_record(int id, LabelSequence target, LabelSequence decoded, double confidence,
                             double hardness, std::vector<double> token_probs) {
  PredictionRecord r;
  r.id = id;
  r.correct = target == decoded;
  r.target = std::move(target);
  r.decoded = std::move(decoded);
  r.confidence = confidence;
  r.hardness = hardness;
  r.token_probs = std::move(token_probs);
  return r;
}

namespace {

CalibrationBin summarize(double lower, double upper, std::span<const PredictionRecord* const> members) {
  CalibrationBin b{lower, upper, members.size(), 0, 0};
  if (members.empty()) return b;
  double conf = 0, acc = 0;
  for (const auto* r : members) {
    conf += r->confidence;
    acc += r->correct ? 1.0 : 0.0;
  }
  b.mean_confidence = conf / static_cast<double>(members.size());
  b.accuracy = acc / static_cast<double>(members.size());
  return b;
}

double weighted_gap(const std::vector<CalibrationBin>& bins, std::size_t n) {
  double out = 0;
  for (const auto& b : bins)
    if (b.count > 0) out += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.accuracy - b.mean_confidence);
  return out;
}

}  // namespace

std::vector<CalibrationBin> equal_width_bins(std::span<const PredictionRecord> records, std::size_t num_bins) {
  if (num_bins < 1) throw std::invalid_argument("need at least one bin");
  std::vector<std::vector<const PredictionRecord*>> members(num_bins);
  for (const auto& r : records) {
    auto idx = static_cast<std::size_t>(std::floor(r.confidence * static_cast<double>(num_bins)));
    idx = std::min(idx, num_bins - 1);
    members[idx].push_back(&r);
  }
  std::vector<CalibrationBin> out;
  for (std::size_t i = 0; i < num_bins; ++i)
    out.push_back(summarize(static_cast<double>(i) / static_cast<double>(num_bins),
                            static_cast<double>(i + 1) / static_cast<double>(num_bins), members[i]));
  return out;
}

std::vector<CalibrationBin> equal_mass_bins(std::span<const PredictionRecord> records, std::size_t num_bins) {
  if (num_bins < 1) throw std::invalid_argument("need at least one bin");
  std::vector<const PredictionRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto* a, const auto* b) { return a->confidence < b->confidence; });
  const std::size_t n = sorted.size();
  std::vector<CalibrationBin> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < num_bins; ++i) {
    const std::size_t size = n / num_bins + (i < n % num_bins ? 1 : 0);
    std::span<const PredictionRecord* const> part(sorted.data() + begin, size);
    const double lo = size ? part.front()->confidence : 0.0;
    const double hi = size ? part.back()->confidence : 0.0;
    out.push_back(summarize(lo, hi, part));
    begin += size;
  }
  return out;
}

double sequence_accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) return 0.0;
  const auto hits = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.correct; });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

CalibrationReport calibration_report(std::span<const PredictionRecord> records, std::size_t num_bins,
                                     BinScheme scheme) {
  if (records.empty()) throw std::invalid_argument("calibration report needs at least one record");
  if (num_bins < 1) throw std::invalid_argument("need at least one bin");
  CalibrationReport rep;
  rep.count = records.size();
  rep.accuracy = sequence_accuracy(records);
  auto width = equal_width_bins(records, num_bins);
  auto mass = equal_mass_bins(records, num_bins);
  rep.ece = weighted_gap(width, records.size());
  rep.ace = weighted_gap(mass, records.size());
  for (const auto& b : width)
    if (b.count > 0) rep.mce = std::max(rep.mce, std::abs(b.accuracy - b.mean_confidence));
  rep.bins = scheme == BinScheme::equal_width ? std::move(width) : std::move(mass);
  return rep;
}

std::vector<std::pair<EditOp, std::pair<int, int>>> align(const LabelSequence& target, const LabelSequence& decoded) {
  const auto n = target.size(), m = decoded.size();
  std::vector<std::vector<int>> cost(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) cost[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) cost[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      cost[i][j] = std::min({cost[i - 1][j - 1] + (target[i - 1] == decoded[j - 1] ? 0 : 1), cost[i - 1][j] + 1,
                             cost[i][j - 1] + 1});
  std::vector<std::pair<EditOp, std::pair<int, int>>> ops;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = target[i - 1] == decoded[j - 1];
      if (cost[i][j] == cost[i - 1][j - 1] + (same ? 0 : 1)) {
        ops.push_back({same ? EditOp::match : EditOp::substitute, {static_cast<int>(i - 1), static_cast<int>(j - 1)}});
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && cost[i][j] == cost[i - 1][j] + 1) {
      ops.push_back({EditOp::erase, {static_cast<int>(i - 1), -1}});
      --i;
    } else {
      ops.push_back({EditOp::insert, {-1, static_cast<int>(j - 1)}});
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

std::vector<ConfusionEntry> confusion_pair_stats(std::span<const PredictionRecord> records, const Alphabet& alphabet) {
  std::map<std::pair<TokenId, TokenId>, std::pair<std::size_t, double>> pairs;
  std::map<TokenId, std::size_t> per_truth;
  for (const auto& r : records) {
    if (r.correct) continue;
    for (const auto& [op, pos] : align(r.target, r.decoded)) {
      if (op != EditOp::substitute) continue;
      if (r.token_probs.size() != r.decoded.size())
        throw std::invalid_argument("record is missing per-token probabilities");
      const TokenId g = r.target[static_cast<std::size_t>(pos.first)];
      const TokenId p = r.decoded[static_cast<std::size_t>(pos.second)];
      alphabet.symbol(g);
      alphabet.symbol(p);
      auto& slot = pairs[{g, p}];
      slot.first += 1;
      slot.second += r.token_probs[static_cast<std::size_t>(pos.second)];
      per_truth[g] += 1;
    }
  }
  std::vector<ConfusionEntry> out;
  for (const auto& [key, val] : pairs) {
    ConfusionEntry e;
    e.truth = key.first;
    e.predicted = key.second;
    e.count = val.first;
    e.frequency = 100.0 * static_cast<double>(val.first) / static_cast<double>(per_truth[key.first]);
    e.mean_probability = val.second / static_cast<double>(val.first);
    out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(), [](const ConfusionEntry& a, const ConfusionEntry& b) {
    if (a.frequency != b.frequency) return a.frequency > b.frequency;
    return a.count > b.count;
  });
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman needs equal-length inputs");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

PerplexityCorrelation perplexity_confidence_correlation(std::span<const PredictionRecord> records,
                                                        const BiContextLM& lm) {
  PerplexityCorrelation out;
  std::vector<double> ppl, conf;
  for (const auto& r : records) {
    if (r.correct || r.decoded.empty()) continue;
    const double p = perplexity(lm, r.decoded);
    out.points.emplace_back(p, r.confidence);
    ppl.push_back(p);
    conf.push_back(r.confidence);
  }
  out.rank_correlation = spearman(ppl, conf);
  return out;
}

}  // namespace seqcal
