#pragma once

// Sequence-regularized objective, hardness-adaptive intensity and token-level baseline losses.

#include "seqcal/core.hpp"
#include "seqcal/ctc.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

namespace seqcal {

/// eps_easy + (eps_hard - eps_easy) * (1 - p)^2. Throws when p is outside [0, 1] or eps_hard < eps_easy.
double modulating_factor(double p, double eps_easy = 0.01, double eps_hard = 1.0);

struct PssrConfig {
  double alpha = 1.0;
  double eps_easy = 0.01;
  double eps_hard = 1.0;
  std::size_t total = 10;            ///< N, size of the similar set
  double perception_fraction = 0.5;  ///< rho
  bool normalize = true;             ///< divide the regularizer by |S|

  std::size_t perception_count() const;
  std::size_t semantic_count() const { return total - perception_count(); }
  void validate() const;
};

/// Mined neighbours of one training sample. The target never appears and the union has no duplicates.
struct SimilarSet {
  int sample_id = 0;
  std::vector<ScoredSequence> perception;
  std::vector<ScoredSequence> semantic;

  std::size_t size() const { return perception.size() + semantic.size(); }
  /// Perception sequences first, then semantic.
  std::vector<LabelSequence> sequences() const;
};

template <class Grad>
struct PssrTerm {
  std::size_t index;  ///< position in SimilarSet::sequences()
  double loss;
  Grad grad;
};

template <class Grad>
struct PssrLoss {
  double total = 0;
  double base_loss = 0;
  double regularizer = 0;    ///< sum of the similar-sequence losses that were used
  double intensity = 0;      ///< f(p_target)
  double term_weight = 0;    ///< alpha * f(p_target) (/ |S| when normalized); constant w.r.t. parameters
  std::size_t skipped = 0;   ///< infeasible similar sequences
  Grad base_grad;
  std::vector<PssrTerm<Grad>> terms;
};

/// Same as pssr_total_loss with the target's (loss, gradient) already evaluated.
template <class Grad, class BaseFn>
PssrLoss<Grad> pssr_with_target(BaseFn&& base, std::pair<double, Grad> target, const SimilarSet& s, double p_target,
                                 const PssrConfig& cfg) {
  PssrLoss<Grad> out;
  out.base_loss = target.first;
  out.base_grad = std::move(target.second);
  out.total = out.base_loss;
  out.intensity = modulating_factor(p_target, cfg.eps_easy, cfg.eps_hard);
  if (cfg.alpha == 0 || s.size() == 0) return out;

  const auto seqs = s.sequences();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto r = base(seqs[i]);
    if (!r) {
      ++out.skipped;
      continue;
    }
    out.regularizer += r->first;
    out.terms.push_back({i, r->first, std::move(r->second)});
  }
  if (out.terms.empty()) return out;
  out.term_weight = cfg.alpha * out.intensity;
  if (cfg.normalize) out.term_weight /= static_cast<double>(out.terms.size());
  out.total = out.base_loss + out.term_weight * out.regularizer;
  return out;
}

/// L(y) + alpha * f(p_target) * sum_{y' in s} L(y'), f held constant (no gradient through p_target).
///
/// `base` maps a label sequence to std::optional<std::pair<double, Grad>>, returning nullopt
/// when that sequence is infeasible for the model output. The target itself must be feasible.
/// When the effective weight is zero the similar sequences are not evaluated at all.
/// With normalize on, the regularizer is divided by the number of feasible similar sequences.
template <class Grad, class BaseFn>
PssrLoss<Grad> pssr_total_loss(BaseFn&& base, const LabelSequence& y, const SimilarSet& s, double p_target,
                               const PssrConfig& cfg) {
  auto target = base(y);
  if (!target) throw std::invalid_argument("target sequence is infeasible for the base loss");
  return pssr_with_target<Grad>(base, std::move(*target), s, p_target, cfg);
}

/// base_grad + term_weight * sum of term gradients, for outputs shared by all terms (CTC head).
template <class Grad>
Grad combined_gradient(const PssrLoss<Grad>& l) {
  Grad g = l.base_grad;
  for (const auto& t : l.terms) g += l.term_weight * t.grad;
  return g;
}

enum class LossKind { nll, ls, focal, er, brier, pssr };

std::string_view to_string(LossKind k);
/// Throws std::invalid_argument on an unknown name.
LossKind parse_loss_kind(std::string_view name);

struct BaselineHyper {
  double ls_epsilon = 0.1;
  double focal_gamma = 2.0;
  double er_beta = 0.1;
};

struct TokenLossGrad {
  double loss = 0;
  Eigen::MatrixXd grad;  ///< d loss / d logits
};

/// Token-level loss summed over rows; row j of `logits` is scored against targets[j].
/// kind = pssr is rejected (it is a sequence-level composite, see pssr_total_loss).
TokenLossGrad baseline_loss(LossKind kind, const Eigen::MatrixXd& logits, std::span<const int> targets,
                            const BaselineHyper& hyper = {});

}  // namespace seqcal
