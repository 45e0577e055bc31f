#include "seqcal/semlm.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace seqcal {

BiContextLM::BiContextLM(int vocab_size, double smoothing) : vocab_(vocab_size), lambda_(smoothing) {
  if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
  if (!(smoothing > 0)) throw std::invalid_argument("smoothing constant must be > 0");
  const auto contexts = static_cast<std::size_t>(vocab_ + 1) * static_cast<std::size_t>(vocab_ + 1);
  counts_.assign(contexts * static_cast<std::size_t>(vocab_), 0.0);
  totals_.assign(contexts, 0.0);
}

std::size_t BiContextLM::index(TokenId left, TokenId right) const {
  if (left < 0 || left > vocab_ || right < 0 || right > vocab_)
    throw std::out_of_range(fmt::format("context ({}, {}) out of range", left, right));
  return static_cast<std::size_t>(left) * static_cast<std::size_t>(vocab_ + 1) + static_cast<std::size_t>(right);
}

void BiContextLM::add_count(TokenId left, TokenId token, TokenId right, double count) {
  if (token < 0 || token >= vocab_) throw std::out_of_range("token out of range");
  const auto c = index(left, right);
  counts_[c * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(token)] += count;
  totals_[c] += count;
}

double BiContextLM::count(TokenId left, TokenId token, TokenId right) const {
  return counts_[index(left, right) * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(token)];
}

double BiContextLM::context_total(TokenId left, TokenId right) const { return totals_[index(left, right)]; }

std::vector<double> BiContextLM::distribution(TokenId left, TokenId right) const {
  const auto c = index(left, right);
  const double denom = totals_[c] + lambda_ * vocab_;
  std::vector<double> out(static_cast<std::size_t>(vocab_));
  for (int t = 0; t < vocab_; ++t)
    out[static_cast<std::size_t>(t)] = (counts_[c * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(t)] + lambda_) / denom;
  return out;
}

double BiContextLM::probability(TokenId left, TokenId token, TokenId right) const {
  const auto c = index(left, right);
  return (counts_[c * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(token)] + lambda_) /
         (totals_[c] + lambda_ * vocab_);
}

void BiContextLM::save(std::ostream& os) const {
  os << fmt::format("bicontext-lm {} {:.17g}\n", vocab_, lambda_);
  auto name = [this](TokenId id, const char* edge) { return id == vocab_ ? std::string(edge) : std::to_string(id); };
  for (int l = 0; l <= vocab_; ++l) {
    for (int r = 0; r <= vocab_; ++r) {
      const auto c = index(l, r);
      if (totals_[c] == 0) continue;
      os << name(l, "BOS") << ' ' << name(r, "EOS");
      for (int t = 0; t < vocab_; ++t)
        os << ' ' << fmt::format("{:.17g}", counts_[c * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(t)]);
      os << '\n';
    }
  }
}

BiContextLM BiContextLM::load(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty language model file");
  std::istringstream header(line);
  std::string tag;
  int vocab = 0;
  double lambda = 0;
  if (!(header >> tag >> vocab >> lambda) || tag != "bicontext-lm")
    throw std::runtime_error("bad language model header");
  BiContextLM lm(vocab, lambda);
  auto parse_id = [vocab](const std::string& s, const char* edge) {
    if (s == edge) return vocab;
    const int v = std::stoi(s);
    if (v < 0 || v >= vocab) throw std::runtime_error("context token out of range");
    return v;
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string l, r;
    if (!(row >> l >> r)) throw std::runtime_error("bad language model row");
    const int left = parse_id(l, "BOS");
    const int right = parse_id(r, "EOS");
    for (int t = 0; t < vocab; ++t) {
      double c = 0;
      if (!(row >> c)) throw std::runtime_error("truncated language model row");
      if (c != 0) lm.add_count(left, t, right, c);
    }
  }
  return lm;
}

BiContextLM fit_bicontext_lm(const std::vector<LabelSequence>& corpus, int vocab_size, double smoothing) {
  if (corpus.empty()) throw std::invalid_argument("cannot fit a language model on an empty corpus");
  BiContextLM lm(vocab_size, smoothing);
  for (const auto& y : corpus) {
    validate_labels(y, vocab_size);
    for (std::size_t t = 0; t < y.size(); ++t) {
      const TokenId left = t == 0 ? lm.bos() : y[t - 1];
      const TokenId right = t + 1 == y.size() ? lm.eos() : y[t + 1];
      lm.add_count(left, y[t], right);
    }
  }
  return lm;
}

std::vector<std::vector<double>> position_distributions(const BiContextLM& lm, const LabelSequence& y) {
  if (y.empty()) throw std::invalid_argument("position distributions need a non-empty sequence");
  validate_labels(y, lm.vocab_size());
  std::vector<std::vector<double>> out;
  out.reserve(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const TokenId left = t == 0 ? lm.bos() : y[t - 1];
    const TokenId right = t + 1 == y.size() ? lm.eos() : y[t + 1];
    out.push_back(lm.distribution(left, right));
  }
  return out;
}

namespace {

struct ProductState {
  std::vector<int> ranks;
  LabelSequence seq;
  double score;
  std::size_t last;  // first position this state's children may advance
};

}  // namespace

std::vector<ScoredSequence> top_n_product(const std::vector<std::vector<double>>& log_probs, std::size_t n) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const std::size_t L = log_probs.size();
  if (L == 0) return {{LabelSequence{}, 0.0}};

  // Per position, tokens sorted by log-prob descending, ties by token ascending.
  std::vector<std::vector<int>> sorted(L);
  for (std::size_t p = 0; p < L; ++p) {
    sorted[p].resize(log_probs[p].size());
    std::iota(sorted[p].begin(), sorted[p].end(), 0);
    std::stable_sort(sorted[p].begin(), sorted[p].end(), [&](int a, int b) {
      return log_probs[p][static_cast<std::size_t>(a)] > log_probs[p][static_cast<std::size_t>(b)];
    });
  }
  auto make = [&](std::vector<int> ranks, std::size_t last) {
    ProductState s{std::move(ranks), {}, 0.0, last};
    s.seq.ids.resize(L);
    for (std::size_t p = 0; p < L; ++p) {
      const int tok = sorted[p][static_cast<std::size_t>(s.ranks[p])];
      s.seq.ids[p] = tok;
      s.score += log_probs[p][static_cast<std::size_t>(tok)];
    }
    return s;
  };
  // Each child either scores lower than its parent or ties with a lexicographically larger
  // sequence, so popping by (score desc, sequence asc) yields the exact ranking.
  auto worse = [](const ProductState& a, const ProductState& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.seq > b.seq;
  };
  std::priority_queue<ProductState, std::vector<ProductState>, decltype(worse)> heap(worse);
  heap.push(make(std::vector<int>(L, 0), 0));

  std::vector<ScoredSequence> out;
  while (!heap.empty() && out.size() < n) {
    ProductState top = heap.top();
    heap.pop();
    if (top.score == kNegInf) break;
    for (std::size_t p = top.last; p < L; ++p) {
      if (static_cast<std::size_t>(top.ranks[p]) + 1 >= sorted[p].size()) continue;
      auto ranks = top.ranks;
      ++ranks[p];
      heap.push(make(std::move(ranks), p));
    }
    out.push_back({std::move(top.seq), top.score});
  }
  return out;
}

std::vector<ScoredSequence> top_n_semantic(const BiContextLM& lm, const LabelSequence& y, std::size_t n) {
  const auto dists = position_distributions(lm, y);
  std::vector<std::vector<double>> logs;
  logs.reserve(dists.size());
  for (const auto& d : dists) {
    std::vector<double> l(d.size());
    std::transform(d.begin(), d.end(), l.begin(), [](double p) { return p > 0 ? std::log(p) : kNegInf; });
    logs.push_back(std::move(l));
  }
  return top_n_product(logs, n);
}

double perplexity(const BiContextLM& lm, const LabelSequence& y) {
  const auto dists = position_distributions(lm, y);
  double sum = 0;
  for (std::size_t t = 0; t < y.size(); ++t) sum += std::log(dists[t][static_cast<std::size_t>(y[t])]);
  return std::exp(-sum / static_cast<double>(y.size()));
}

}  // namespace seqcal
