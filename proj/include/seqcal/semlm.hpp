#pragma once

// Bidirectional-context count language model, semantic candidate mining and perplexity.

#include "seqcal/core.hpp"
#include "seqcal/ctc.hpp"

#include <iosfwd>
#include <vector>

namespace seqcal {

/// Order-1 bidirectional model: P(token | left neighbour or BOS, right neighbour or EOS),
/// additively smoothed so every context has full support.
class BiContextLM {
 public:
  BiContextLM(int vocab_size, double smoothing);

  int vocab_size() const { return vocab_; }
  double smoothing() const { return lambda_; }
  TokenId bos() const { return vocab_; }
  TokenId eos() const { return vocab_; }

  void add_count(TokenId left, TokenId token, TokenId right, double count = 1.0);
  double count(TokenId left, TokenId token, TokenId right) const;
  double context_total(TokenId left, TokenId right) const;

  /// Smoothed distribution over the V tokens for a context; sums to 1.
  std::vector<double> distribution(TokenId left, TokenId right) const;
  double probability(TokenId left, TokenId token, TokenId right) const;

  void save(std::ostream& os) const;
  static BiContextLM load(std::istream& is);

 private:
  std::size_t index(TokenId left, TokenId right) const;

  int vocab_;
  double lambda_;
  std::vector<double> counts_;  // [(left, right), token]
  std::vector<double> totals_;  // [(left, right)]
};

/// Counts every (left, token, right) triple in the corpus. Throws on an empty corpus.
BiContextLM fit_bicontext_lm(const std::vector<LabelSequence>& corpus, int vocab_size, double smoothing = 0.1);

/// Per-position distributions of y, each conditioned on the neighbours only (never on y_t).
std::vector<std::vector<double>> position_distributions(const BiContextLM& lm, const LabelSequence& y);

/// Exact top-n assignments of a product of independent per-position distributions,
/// given as log-probabilities. Ordered by score, ties by lexicographic token order.
std::vector<ScoredSequence> top_n_product(const std::vector<std::vector<double>>& log_probs, std::size_t n);

/// Same-length candidates ranked by the product of the positional distributions of y.
std::vector<ScoredSequence> top_n_semantic(const BiContextLM& lm, const LabelSequence& y, std::size_t n);

double perplexity(const BiContextLM& lm, const LabelSequence& y);

}  // namespace seqcal
