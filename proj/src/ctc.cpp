#include "seqcal/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace seqcal {

Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double mx = logits.row(t).maxCoeff();
    const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  return log_softmax_rows(logits).array().exp().matrix();
}

ProbMatrix::ProbMatrix(Eigen::MatrixXd rows) : rows_(std::move(rows)) {
  if (rows_.cols() < 2) throw std::invalid_argument("probability matrix needs at least one token and the blank");
  for (Eigen::Index t = 0; t < rows_.rows(); ++t) {
    for (Eigen::Index k = 0; k < rows_.cols(); ++k) {
      const double v = rows_(t, k);
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument(fmt::format("row {} is not a distribution: entry {} = {}", t, k, v));
    }
    const double s = rows_.row(t).sum();
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument(fmt::format("row {} is not a distribution: sums to {}", t, s));
  }
}

ProbMatrix ProbMatrix::from_logits(const Eigen::MatrixXd& logits) { return ProbMatrix(softmax_rows(logits)); }

Eigen::MatrixXd ProbMatrix::log_rows() const {
  return rows_.unaryExpr([](double v) { return v > 0 ? std::log(v) : kNegInf; });
}

bool ranks_before(const ScoredSequence& a, const ScoredSequence& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.seq < b.seq;
}

namespace {

// Blank-interleaved label: blank, y0, blank, y1, ..., blank.
std::vector<int> extend_with_blanks(const LabelSequence& y, int blank) {
  std::vector<int> ext(2 * y.size() + 1, blank);
  for (std::size_t i = 0; i < y.size(); ++i) ext[2 * i + 1] = y[i];
  return ext;
}

// alpha(t, s): log mass of prefixes of alignments ending in state s at step t, emission included.
Eigen::MatrixXd forward_log(const Eigen::MatrixXd& lp, const std::vector<int>& ext) {
  const Eigen::Index T = lp.rows();
  const auto S = static_cast<Eigen::Index>(ext.size());
  Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(T, S, kNegInf);
  alpha(0, 0) = lp(0, ext[0]);
  if (S > 1) alpha(0, 1) = lp(0, ext[1]);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (s >= 2 && ext[static_cast<std::size_t>(s)] != ext[0] &&
          ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)])
        acc = log_add(acc, alpha(t - 1, s - 2));
      alpha(t, s) = acc == kNegInf ? kNegInf : acc + lp(t, ext[static_cast<std::size_t>(s)]);
    }
  }
  return alpha;
}

// beta(t, s): log mass of completing the alignment from state s at step t, emission at t excluded.
Eigen::MatrixXd backward_log(const Eigen::MatrixXd& lp, const std::vector<int>& ext) {
  const Eigen::Index T = lp.rows();
  const auto S = static_cast<Eigen::Index>(ext.size());
  Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(T, S, kNegInf);
  beta(T - 1, S - 1) = 0.0;
  if (S > 1) beta(T - 1, S - 2) = 0.0;
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      double acc = beta(t + 1, s) == kNegInf ? kNegInf : beta(t + 1, s) + lp(t + 1, ext[static_cast<std::size_t>(s)]);
      if (s + 1 < S && beta(t + 1, s + 1) != kNegInf)
        acc = log_add(acc, beta(t + 1, s + 1) + lp(t + 1, ext[static_cast<std::size_t>(s + 1)]));
      if (s + 2 < S && ext[static_cast<std::size_t>(s + 2)] != ext[0] &&
          ext[static_cast<std::size_t>(s + 2)] != ext[static_cast<std::size_t>(s)] && beta(t + 1, s + 2) != kNegInf)
        acc = log_add(acc, beta(t + 1, s + 2) + lp(t + 1, ext[static_cast<std::size_t>(s + 2)]));
      beta(t, s) = acc;
    }
  }
  return beta;
}

}  // namespace

double ctc_log_posterior_log(const Eigen::MatrixXd& log_probs, const LabelSequence& y) {
  const Eigen::Index T = log_probs.rows();
  if (T < 1) return y.empty() ? 0.0 : kNegInf;
  if (min_ctc_frames(y) > static_cast<std::size_t>(T)) return kNegInf;
  const int blank = static_cast<int>(log_probs.cols()) - 1;
  const auto ext = extend_with_blanks(y, blank);
  const Eigen::MatrixXd alpha = forward_log(log_probs, ext);
  const auto S = static_cast<Eigen::Index>(ext.size());
  double out = alpha(T - 1, S - 1);
  if (S > 1) out = log_add(out, alpha(T - 1, S - 2));
  return out;
}

double ctc_log_posterior(const ProbMatrix& m, const LabelSequence& y) {
  validate_labels(y, m.vocab_size());
  return ctc_log_posterior_log(m.log_rows(), y);
}

CtcLossGrad ctc_loss_and_grad(const Eigen::MatrixXd& logits, const LabelSequence& y) {
  const Eigen::Index T = logits.rows();
  const int blank = static_cast<int>(logits.cols()) - 1;
  if (blank < 1) throw std::invalid_argument("logits need at least one token column plus blank");
  validate_labels(y, blank);
  if (T < 1 || min_ctc_frames(y) > static_cast<std::size_t>(T))
    throw std::invalid_argument(fmt::format("target of length {} is infeasible for {} steps", y.size(), T));

  const Eigen::MatrixXd lp = log_softmax_rows(logits);
  const auto ext = extend_with_blanks(y, blank);
  const auto S = static_cast<Eigen::Index>(ext.size());
  const Eigen::MatrixXd alpha = forward_log(lp, ext);
  const Eigen::MatrixXd beta = backward_log(lp, ext);
  double log_z = alpha(T - 1, S - 1);
  if (S > 1) log_z = log_add(log_z, alpha(T - 1, S - 2));

  CtcLossGrad out;
  out.loss = -log_z;
  out.grad = lp.array().exp().matrix();
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      const double occ = alpha(t, s) + beta(t, s);
      if (occ == kNegInf || std::isnan(occ)) continue;
      out.grad(t, ext[static_cast<std::size_t>(s)]) -= std::exp(occ - log_z);
    }
  }
  return out;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& rows) {
  std::vector<int> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index t = 0; t < rows.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < rows.cols(); ++k)
      if (rows(t, k) > rows(t, best)) best = k;
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

LabelSequence greedy_decode(const ProbMatrix& m) {
  LabelSequence out;
  int prev = -1;
  for (int k : argmax_rows(m.rows())) {
    if (k != prev && k != m.blank_id()) out.ids.push_back(k);
    prev = k;
  }
  return out;
}

namespace {

// Prefix trie used by the beam search; node 0 is the empty prefix.
class PrefixTrie {
 public:
  explicit PrefixTrie(int vocab) : vocab_(vocab) { nodes_.push_back({-1, -1, {}}); }

  int child(int node, int token) {
    auto& kids = nodes_[static_cast<std::size_t>(node)].children;
    if (kids.empty()) kids.assign(static_cast<std::size_t>(vocab_), -1);
    int& slot = kids[static_cast<std::size_t>(token)];
    if (slot < 0) {
      slot = static_cast<int>(nodes_.size());
      nodes_.push_back({node, token, {}});
    }
    return slot;
  }

  int last_token(int node) const { return nodes_[static_cast<std::size_t>(node)].token; }
  std::size_t size() const { return nodes_.size(); }

  LabelSequence sequence(int node) const {
    LabelSequence out;
    for (int n = node; n > 0; n = nodes_[static_cast<std::size_t>(n)].parent)
      out.ids.push_back(nodes_[static_cast<std::size_t>(n)].token);
    std::reverse(out.ids.begin(), out.ids.end());
    return out;
  }

 private:
  struct Node {
    int parent;
    int token;
    std::vector<int> children;
  };
  int vocab_;
  std::vector<Node> nodes_;
};

struct BeamEntry {
  int node;
  double blank_end;
  double label_end;
  double total() const { return log_add(blank_end, label_end); }
};

}  // namespace

std::vector<ScoredSequence> top_n_perception(const ProbMatrix& m, std::size_t n) {
  return top_n_perception(m, n, n > kExhaustiveBeam / 8 ? kExhaustiveBeam : 8 * n);
}

std::vector<ScoredSequence> top_n_perception(const ProbMatrix& m, std::size_t n,
                                             std::size_t beam_width) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (beam_width < n) throw std::invalid_argument("beam_width must be >= n");
  const Eigen::MatrixXd lp = m.log_rows();
  const int V = m.vocab_size();
  const int blank = m.blank_id();

  PrefixTrie trie(V);
  std::vector<BeamEntry> beam{{0, 0.0, kNegInf}};
  std::vector<double> next_blank, next_label;
  std::vector<int> touched;

  auto order = [&trie](const BeamEntry& a, const BeamEntry& b) {
    const double ta = a.total(), tb = b.total();
    if (ta != tb) return ta > tb;
    return trie.sequence(a.node) < trie.sequence(b.node);
  };

  for (Eigen::Index t = 0; t < lp.rows(); ++t) {
    auto touch = [&](int node) {
      if (static_cast<std::size_t>(node) >= next_blank.size()) {
        next_blank.resize(trie.size(), kNegInf);
        next_label.resize(trie.size(), kNegInf);
      }
      if (next_blank[static_cast<std::size_t>(node)] == kNegInf &&
          next_label[static_cast<std::size_t>(node)] == kNegInf)
        touched.push_back(node);
    };
    auto add_blank = [&](int node, double v) {
      if (v == kNegInf) return;
      touch(node);
      next_blank[static_cast<std::size_t>(node)] = log_add(next_blank[static_cast<std::size_t>(node)], v);
    };
    auto add_label = [&](int node, double v) {
      if (v == kNegInf) return;
      touch(node);
      next_label[static_cast<std::size_t>(node)] = log_add(next_label[static_cast<std::size_t>(node)], v);
    };

    for (const auto& e : beam) {
      const double total = e.total();
      add_blank(e.node, total + lp(t, blank));
      const int last = trie.last_token(e.node);
      for (int c = 0; c < V; ++c) {
        const double lpc = lp(t, c);
        if (lpc == kNegInf) continue;
        const int child = trie.child(e.node, c);
        if (c == last) {
          add_label(e.node, e.label_end + lpc);
          add_label(child, e.blank_end + lpc);
        } else {
          add_label(child, total + lpc);
        }
      }
    }

    beam.clear();
    for (int node : touched) {
      beam.push_back({node, next_blank[static_cast<std::size_t>(node)], next_label[static_cast<std::size_t>(node)]});
      next_blank[static_cast<std::size_t>(node)] = kNegInf;
      next_label[static_cast<std::size_t>(node)] = kNegInf;
    }
    touched.clear();
    if (beam.size() > beam_width) {
      std::partial_sort(beam.begin(), beam.begin() + static_cast<std::ptrdiff_t>(beam_width), beam.end(), order);
      beam.resize(beam_width);
    }
  }

  std::vector<ScoredSequence> out;
  out.reserve(beam.size());
  // Pruning leaves each prefix score as a lower bound; rescore the survivors exactly.
  for (const auto& e : beam) {
    auto seq = trie.sequence(e.node);
    const double score = ctc_log_posterior_log(lp, seq);
    out.push_back({std::move(seq), score});
  }
  std::sort(out.begin(), out.end(), ranks_before);
  if (out.size() > n) out.resize(n);
  return out;
}

std::vector<ScoredSequence> brute_force_rank(const ProbMatrix& m, std::size_t n) {
  const auto T = static_cast<int>(m.steps());
  const int V = m.vocab_size();
  if (std::pow(static_cast<double>(V + 1), T) > 1e6)
    throw std::invalid_argument("instance too large for brute-force ranking");
  const Eigen::MatrixXd lp = m.log_rows();
  std::vector<ScoredSequence> all;
  for (int len = 0; len <= T; ++len) {
    std::vector<int> digits(static_cast<std::size_t>(len), 0);
    while (true) {
      LabelSequence y(digits);
      const double score = ctc_log_posterior_log(lp, y);
      if (score != kNegInf) all.push_back({std::move(y), score});
      int pos = len - 1;
      while (pos >= 0 && ++digits[static_cast<std::size_t>(pos)] == V) digits[static_cast<std::size_t>(pos--)] = 0;
      if (pos < 0) break;
    }
  }
  std::sort(all.begin(), all.end(), ranks_before);
  if (all.size() > n) all.resize(n);
  return all;
}

}  // namespace seqcal
