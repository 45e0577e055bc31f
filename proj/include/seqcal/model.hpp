#pragma once

// Tiny recurrent recognizer with a CTC head and an autoregressive (teacher-forced) head.

#include "seqcal/core.hpp"
#include "seqcal/ctc.hpp"
#include "seqcal/losses.hpp"
#include "seqcal/metrics.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string_view>

namespace seqcal {

enum class Head { ctc, ar };

std::string_view to_string(Head h);
Head parse_head(std::string_view name);

struct ModelShape {
  int input_dim = 12;
  int hidden = 64;
  int embed = 16;
  int vocab = 12;  ///< V; both heads emit V + 1 classes (blank for CTC, end-of-sequence for AR)

  bool operator==(const ModelShape&) const = default;
};

/// Encoder: e_t = tanh(W_in x_t + b_in), h_t = tanh(W_mix e_t + W_rec h_{t-1} + b_h).
/// CTC head: affine h_t -> V+1.
/// AR head: decoder state s_j = tanh(W_ctx h_T + W_emb u_j + W_s s_{j-1} + b_d) over the previous
/// token embedding u_j (BOS first), then affine (s_j, u_j) -> V+1 with class V = end of sequence.
class Recognizer {
 public:
  /// All parameters zero.
  explicit Recognizer(ModelShape shape);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static Recognizer initialized(ModelShape shape, std::uint64_t seed);

  const ModelShape& shape() const { return shape_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }
  TokenId end_id() const { return shape_.vocab; }

  void save(std::ostream& os) const;
  static Recognizer load(std::istream& is);

 private:
  ModelShape shape_;
  Eigen::VectorXd params_;
};

std::size_t parameter_count(const ModelShape& shape);

/// CTC-head logits, T x (V+1). Throws on a feature-dimension mismatch.
Eigen::MatrixXd ctc_logits(const Recognizer& model, const FeatureSequence& x);

/// Teacher-forced AR logits for target y: (|y|+1) x (V+1); the last row scores end-of-sequence.
Eigen::MatrixXd ar_logits(const Recognizer& model, const FeatureSequence& x, const LabelSequence& y);

/// Per-step distributions: the CTC ProbMatrix rows, or teacher-forced AR rows over `teacher`.
Eigen::MatrixXd forward(const Recognizer& model, const FeatureSequence& x, Head head,
                        const LabelSequence& teacher = {});

/// Greedy decoding plus sequence confidence.
/// CTC: best path collapsed, confidence = exact CTC posterior of the decoded labels.
/// AR: step-wise argmax until end-of-sequence (at most max(2T, 8) tokens), confidence = product
/// of the chosen probabilities including the end step.
PredictionRecord decode_and_confidence(const Recognizer& model, const FeatureSequence& x, Head head);
PredictionRecord decode_and_confidence(const Recognizer& model, const Sample& s, Head head);

/// P(y | x) under the head. Throws if y is infeasible for the CTC head.
double target_posterior(const Recognizer& model, const FeatureSequence& x, const LabelSequence& y, Head head);

struct LossSpec {
  Head head = Head::ctc;
  LossKind loss = LossKind::nll;
  PssrConfig pssr;
  BaselineHyper hyper;

  /// Token-level baselines other than nll need per-token alignment and are AR-only.
  void validate() const;
};

struct SampleLoss {
  double loss = 0;
  double target_posterior = 0;
  std::size_t skipped = 0;  ///< infeasible similar sequences
  Eigen::VectorXd grad;     ///< d loss / d parameters
};

/// Loss and parameter gradient for one sample; `similar` is required for pssr.
/// `fixed_posterior` replaces the model's target posterior inside f(p) (finite-difference checks
/// hold it constant, matching the stop-gradient in the analytic gradient).
SampleLoss loss_and_grad(const Recognizer& model, const Sample& s, const LossSpec& spec,
                         const SimilarSet* similar = nullptr, std::optional<double> fixed_posterior = {});

/// Worst relative error between analytic and central-difference parameter gradients
/// (step 1e-5, |a - n| / max(|a|, |n|, 1e-5)).
double gradient_check(const Recognizer& model, const Sample& s, const LossSpec& spec,
                      const SimilarSet* similar = nullptr, double step = 1e-5);

}  // namespace seqcal
