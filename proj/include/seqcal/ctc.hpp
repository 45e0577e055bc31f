#pragma once

// CTC posterior, loss/gradient, greedy decoding and top-N label-sequence search.

#include "seqcal/core.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <vector>

namespace seqcal {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log(exp(a) + exp(b)) with -inf as the additive identity.
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

/// Row-wise numerically stable log-softmax.
Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits);
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

/// T x (V+1) per-step distributions; column V is the blank.
class ProbMatrix {
 public:
  /// Validates rows (entries in [0,1], sums within 1e-6 of 1).
  explicit ProbMatrix(Eigen::MatrixXd rows);

  static ProbMatrix from_logits(const Eigen::MatrixXd& logits);

  Eigen::Index steps() const { return rows_.rows(); }
  int vocab_size() const { return static_cast<int>(rows_.cols()) - 1; }
  TokenId blank_id() const { return vocab_size(); }
  const Eigen::MatrixXd& rows() const { return rows_; }
  double operator()(Eigen::Index t, Eigen::Index k) const { return rows_(t, k); }
  /// Element-wise log; zeros become -inf.
  Eigen::MatrixXd log_rows() const;

 private:
  Eigen::MatrixXd rows_;
};

struct ScoredSequence {
  LabelSequence seq;
  double log_prob = kNegInf;
};

/// Descending log_prob, ties by ascending lexicographic sequence.
bool ranks_before(const ScoredSequence& a, const ScoredSequence& b);

/// log P(y | m) summed over all alignments; -inf when y cannot fit in T steps.
double ctc_log_posterior(const ProbMatrix& m, const LabelSequence& y);
/// Same, from a T x (V+1) matrix of log-probabilities (no validation).
double ctc_log_posterior_log(const Eigen::MatrixXd& log_probs, const LabelSequence& y);

struct CtcLossGrad {
  double loss = 0;
  Eigen::MatrixXd grad;  ///< d loss / d logits, T x (V+1)
};

/// Negative log posterior of y under softmax(logits) and its gradient.
/// Throws std::invalid_argument when y is infeasible for T steps.
CtcLossGrad ctc_loss_and_grad(const Eigen::MatrixXd& logits, const LabelSequence& y);

/// Best-path decoding; argmax ties go to the lowest index.
LabelSequence greedy_decode(const ProbMatrix& m);

/// Per-step argmax indices (ties to the lowest index).
std::vector<int> argmax_rows(const Eigen::MatrixXd& rows);

inline constexpr std::size_t kExhaustiveBeam = std::numeric_limits<std::size_t>::max();

/// Prefix beam search over label sequences, merging alignments per prefix.
/// Returns up to n distinct sequences ordered by ranks_before; beam_width = kExhaustiveBeam
/// disables pruning and makes the result exact.
std::vector<ScoredSequence> top_n_perception(const ProbMatrix& m, std::size_t n,
                                             std::size_t beam_width);
std::vector<ScoredSequence> top_n_perception(const ProbMatrix& m, std::size_t n);

/// Scores every label sequence of length <= T with ctc_log_posterior and returns the top n
/// (zero-probability sequences dropped). Requires (V+1)^T <= 1e6.
std::vector<ScoredSequence> brute_force_rank(const ProbMatrix& m, std::size_t n);

}  // namespace seqcal
