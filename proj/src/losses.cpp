#include "seqcal/losses.hpp"

#include <cmath>

#include <fmt/format.h>

namespace seqcal {

double modulating_factor(double p, double eps_easy, double eps_hard) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(fmt::format("posterior {} outside [0, 1]", p));
  if (!(eps_hard >= eps_easy)) throw std::invalid_argument("eps_hard must be >= eps_easy");
  const double q = 1.0 - p;
  return eps_easy + (eps_hard - eps_easy) * q * q;
}

std::size_t PssrConfig::perception_count() const {
  return static_cast<std::size_t>(std::llround(perception_fraction * static_cast<double>(total)));
}

void PssrConfig::validate() const {
  if (!(alpha >= 0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(eps_easy >= 0) || !(eps_hard >= eps_easy))
    throw std::invalid_argument("need eps_hard >= eps_easy >= 0");
  if (!(perception_fraction >= 0 && perception_fraction <= 1))
    throw std::invalid_argument("perception_fraction must be in [0, 1]");
}

std::vector<LabelSequence> SimilarSet::sequences() const {
  std::vector<LabelSequence> out;
  out.reserve(size());
  for (const auto& s : perception) out.push_back(s.seq);
  for (const auto& s : semantic) out.push_back(s.seq);
  return out;
}

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::nll: return "nll";
    case LossKind::ls: return "ls";
    case LossKind::focal: return "focal";
    case LossKind::er: return "er";
    case LossKind::brier: return "brier";
    case LossKind::pssr: return "pssr";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "nll" || name == "ctc") return LossKind::nll;
  if (name == "ls") return LossKind::ls;
  if (name == "focal") return LossKind::focal;
  if (name == "er") return LossKind::er;
  if (name == "brier") return LossKind::brier;
  if (name == "pssr") return LossKind::pssr;
  throw std::invalid_argument(fmt::format("unknown loss kind '{}'", name));
}

TokenLossGrad baseline_loss(LossKind kind, const Eigen::MatrixXd& logits, std::span<const int> targets,
                            const BaselineHyper& hyper) {
  if (kind == LossKind::pssr) throw std::invalid_argument("pssr is not a token-level baseline");
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw std::invalid_argument("one target per logit row required");
  const Eigen::Index K = logits.cols();
  const Eigen::MatrixXd lp = log_softmax_rows(logits);
  const Eigen::MatrixXd p = lp.array().exp().matrix();

  TokenLossGrad out;
  out.grad = Eigen::MatrixXd::Zero(logits.rows(), K);
  for (Eigen::Index j = 0; j < logits.rows(); ++j) {
    const int y = targets[static_cast<std::size_t>(j)];
    if (y < 0 || y >= K) throw std::invalid_argument("target outside logit columns");
    auto g = out.grad.row(j);
    const double py = p(j, y);
    switch (kind) {
      case LossKind::nll:
        out.loss -= lp(j, y);
        g = p.row(j);
        g(y) -= 1.0;
        break;
      case LossKind::ls: {
        const double off = hyper.ls_epsilon / static_cast<double>(K);
        for (Eigen::Index k = 0; k < K; ++k) {
          const double q = off + (k == y ? 1.0 - hyper.ls_epsilon : 0.0);
          out.loss -= q * lp(j, k);
          g(k) = p(j, k) - q;
        }
        break;
      }
      case LossKind::focal: {
        // L = -(1-p)^gamma log p; dL/dz_k = [gamma (1-p)^(gamma-1) p log p - (1-p)^gamma] (d_ky - p_k)
        const double gamma = hyper.focal_gamma;
        const double q = 1.0 - py;
        const double qg = std::pow(q, gamma);
        out.loss -= qg * lp(j, y);
        const double lead = (gamma == 0 || q == 0) ? 0.0 : gamma * std::pow(q, gamma - 1.0) * py * lp(j, y);
        const double c = lead - qg;
        for (Eigen::Index k = 0; k < K; ++k) g(k) = c * ((k == y ? 1.0 : 0.0) - p(j, k));
        break;
      }
      case LossKind::er: {
        double entropy = 0;
        for (Eigen::Index k = 0; k < K; ++k)
          if (p(j, k) > 0) entropy -= p(j, k) * lp(j, k);
        out.loss += -lp(j, y) - hyper.er_beta * entropy;
        for (Eigen::Index k = 0; k < K; ++k) {
          const double dh = p(j, k) > 0 ? -p(j, k) * (lp(j, k) + entropy) : 0.0;
          g(k) = p(j, k) - (k == y ? 1.0 : 0.0) - hyper.er_beta * dh;
        }
        break;
      }
      case LossKind::brier: {
        Eigen::RowVectorXd dp(K);
        for (Eigen::Index k = 0; k < K; ++k) {
          const double diff = p(j, k) - (k == y ? 1.0 : 0.0);
          out.loss += diff * diff;
          dp(k) = 2.0 * diff;
        }
        const double mean = p.row(j).dot(dp);
        for (Eigen::Index k = 0; k < K; ++k) g(k) = p(j, k) * (dp(k) - mean);
        break;
      }
      case LossKind::pssr: break;
    }
  }
  return out;
}

}  // namespace seqcal
