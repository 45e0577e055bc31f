#include "seqcal/model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>

#include <fmt/format.h>

namespace seqcal {

std::string_view to_string(Head h) { return h == Head::ctc ? "ctc" : "ar"; }

Head parse_head(std::string_view name) {
  if (name == "ctc") return Head::ctc;
  if (name == "ar") return Head::ar;
  throw std::invalid_argument(fmt::format("unknown head '{}'", name));
}

namespace {

struct Layout {
  Eigen::Index w_in, b_in, w_mix, w_rec, b_h, w_ctc, b_ctc, emb, w_ctx, w_emb, w_s, b_d, w_out, w_oe, b_out, total;

  explicit Layout(const ModelShape& s) {
    const Eigen::Index D = s.input_dim, H = s.hidden, E = s.embed, K = s.vocab + 1;
    Eigen::Index at = 0;
    auto take = [&at](Eigen::Index n) {
      const Eigen::Index o = at;
      at += n;
      return o;
    };
    w_in = take(H * D);
    b_in = take(H);
    w_mix = take(H * H);
    w_rec = take(H * H);
    b_h = take(H);
    w_ctc = take(K * H);
    b_ctc = take(K);
    emb = take(E * K);  // columns: tokens 0..V-1, then BOS
    w_ctx = take(H * H);
    w_emb = take(H * E);
    w_s = take(H * H);
    b_d = take(H);
    w_out = take(K * H);
    w_oe = take(K * E);
    b_out = take(K);
    total = at;
  }
};

template <class Scalar>
struct Views {
  static constexpr bool kConst = std::is_const_v<Scalar>;
  using Mat = Eigen::Map<std::conditional_t<kConst, const Eigen::MatrixXd, Eigen::MatrixXd>>;
  using Vec = Eigen::Map<std::conditional_t<kConst, const Eigen::VectorXd, Eigen::VectorXd>>;

  Mat w_in, w_mix, w_rec, w_ctc, emb, w_ctx, w_emb, w_s, w_out, w_oe;
  Vec b_in, b_h, b_ctc, b_d, b_out;

  Views(Scalar* p, const ModelShape& s, const Layout& l)
      : w_in(p + l.w_in, s.hidden, s.input_dim),
        w_mix(p + l.w_mix, s.hidden, s.hidden),
        w_rec(p + l.w_rec, s.hidden, s.hidden),
        w_ctc(p + l.w_ctc, s.vocab + 1, s.hidden),
        emb(p + l.emb, s.embed, s.vocab + 1),
        w_ctx(p + l.w_ctx, s.hidden, s.hidden),
        w_emb(p + l.w_emb, s.hidden, s.embed),
        w_s(p + l.w_s, s.hidden, s.hidden),
        w_out(p + l.w_out, s.vocab + 1, s.hidden),
        w_oe(p + l.w_oe, s.vocab + 1, s.embed),
        b_in(p + l.b_in, s.hidden),
        b_h(p + l.b_h, s.hidden),
        b_ctc(p + l.b_ctc, s.vocab + 1),
        b_d(p + l.b_d, s.hidden),
        b_out(p + l.b_out, s.vocab + 1) {}
};

using ConstViews = Views<const double>;
using GradViews = Views<double>;

ConstViews views_of(const Recognizer& m) {
  return ConstViews(m.parameters().data(), m.shape(), Layout(m.shape()));
}

struct EncoderTrace {
  Eigen::MatrixXd e;  // T x H
  Eigen::MatrixXd h;  // T x H
};

void check_input(const Recognizer& m, const FeatureSequence& x) {
  if (x.dim() != m.shape().input_dim)
    throw std::invalid_argument(fmt::format("feature dim {} does not match model input dim {}", x.dim(), m.shape().input_dim));
  if (x.length() < 1) throw std::invalid_argument("empty feature sequence");
}

EncoderTrace encode(const ConstViews& v, const FeatureSequence& x) {
  const Eigen::Index T = x.length();
  EncoderTrace tr;
  tr.e = ((x.frames * v.w_in.transpose()).rowwise() + v.b_in.transpose()).array().tanh().matrix();
  Eigen::MatrixXd mix = (tr.e * v.w_mix.transpose()).rowwise() + v.b_h.transpose();
  tr.h.resize(T, mix.cols());
  tr.h.row(0) = mix.row(0).array().tanh();
  for (Eigen::Index t = 1; t < T; ++t)
    tr.h.row(t) = (mix.row(t) + tr.h.row(t - 1) * v.w_rec.transpose()).array().tanh();
  return tr;
}

void backward_encoder(const ConstViews& v, GradViews& g, const FeatureSequence& x, const EncoderTrace& tr,
                      const Eigen::MatrixXd& d_h) {
  const Eigen::Index T = tr.h.rows();
  Eigen::MatrixXd d_z(T, tr.h.cols());
  Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(tr.h.cols());
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const Eigen::RowVectorXd ds = d_h.row(t) + carry;
    d_z.row(t) = ds.array() * (1.0 - tr.h.row(t).array().square());
    carry = d_z.row(t) * v.w_rec;
  }
  g.w_mix.noalias() += d_z.transpose() * tr.e;
  if (T > 1) g.w_rec.noalias() += d_z.bottomRows(T - 1).transpose() * tr.h.topRows(T - 1);
  g.b_h += d_z.colwise().sum().transpose();
  const Eigen::MatrixXd d_a = ((d_z * v.w_mix).array() * (1.0 - tr.e.array().square())).matrix();
  g.w_in.noalias() += d_a.transpose() * x.frames;
  g.b_in += d_a.colwise().sum().transpose();
}

Eigen::MatrixXd ctc_head(const ConstViews& v, const EncoderTrace& tr) {
  return (tr.h * v.w_ctc.transpose()).rowwise() + v.b_ctc.transpose();
}

// Teacher-forced decoder over one or more sequences stacked row-wise. Each sequence occupies
// |y| + 1 rows (inputs BOS, y_0, ..., y_{n-1}) and restarts the recurrence.
struct DecoderTrace {
  std::vector<int> inputs;
  std::vector<Eigen::Index> offsets;  // first row of each sequence, plus the total row count
  Eigen::MatrixXd u;                  // rows x E
  Eigen::MatrixXd s;                  // rows x H
  Eigen::MatrixXd s_prev;             // previous state per row, zero at sequence starts
  Eigen::MatrixXd logits;             // rows x K

  Eigen::Index rows_of(std::size_t k) const { return offsets[k + 1] - offsets[k]; }
};

// `ctx` = W_ctx h_T + b_d.
DecoderTrace decode_teacher(const ConstViews& v, const Eigen::RowVectorXd& ctx, const std::vector<LabelSequence>& ys,
                            int vocab) {
  DecoderTrace tr;
  tr.offsets.push_back(0);
  for (const auto& y : ys) {
    tr.inputs.push_back(vocab);
    tr.inputs.insert(tr.inputs.end(), y.ids.begin(), y.ids.end());
    tr.offsets.push_back(static_cast<Eigen::Index>(tr.inputs.size()));
  }
  const auto J = static_cast<Eigen::Index>(tr.inputs.size());
  tr.u.resize(J, v.emb.rows());
  for (Eigen::Index j = 0; j < J; ++j) tr.u.row(j) = v.emb.col(tr.inputs[static_cast<std::size_t>(j)]).transpose();
  Eigen::MatrixXd pre = (tr.u * v.w_emb.transpose()).rowwise() + ctx;
  tr.s.resize(J, pre.cols());
  tr.s_prev = Eigen::MatrixXd::Zero(J, pre.cols());
  for (std::size_t k = 0; k < ys.size(); ++k) {
    const Eigen::Index start = tr.offsets[k];
    tr.s.row(start) = pre.row(start).array().tanh();
    for (Eigen::Index j = start + 1; j < tr.offsets[k + 1]; ++j) {
      tr.s_prev.row(j) = tr.s.row(j - 1);
      tr.s.row(j) = (pre.row(j) + tr.s.row(j - 1) * v.w_s.transpose()).array().tanh();
    }
  }
  tr.logits = ((tr.s * v.w_out.transpose() + tr.u * v.w_oe.transpose()).rowwise() + v.b_out.transpose());
  return tr;
}

// Accumulates decoder parameter gradients; adds d loss / d ctx into d_ctx.
void backward_decoder(const ConstViews& v, GradViews& g, const DecoderTrace& tr, const Eigen::MatrixXd& d_logits,
                      Eigen::RowVectorXd& d_ctx) {
  g.w_out.noalias() += d_logits.transpose() * tr.s;
  g.w_oe.noalias() += d_logits.transpose() * tr.u;
  g.b_out += d_logits.colwise().sum().transpose();
  Eigen::MatrixXd d_u = d_logits * v.w_oe;
  const Eigen::MatrixXd d_s_out = d_logits * v.w_out;
  Eigen::MatrixXd d_z(tr.s.rows(), tr.s.cols());
  for (std::size_t k = 0; k + 1 < tr.offsets.size(); ++k) {
    Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(tr.s.cols());
    for (Eigen::Index j = tr.offsets[k + 1] - 1; j >= tr.offsets[k]; --j) {
      const Eigen::RowVectorXd ds = d_s_out.row(j) + carry;
      d_z.row(j) = ds.array() * (1.0 - tr.s.row(j).array().square());
      carry = d_z.row(j) * v.w_s;
    }
  }
  g.w_s.noalias() += d_z.transpose() * tr.s_prev;
  g.w_emb.noalias() += d_z.transpose() * tr.u;
  d_u.noalias() += d_z * v.w_emb;
  d_ctx += d_z.colwise().sum();
  for (Eigen::Index j = 0; j < d_u.rows(); ++j) g.emb.col(tr.inputs[static_cast<std::size_t>(j)]) += d_u.row(j).transpose();
}

std::vector<int> ar_targets(const LabelSequence& y, int end_id) {
  std::vector<int> t(y.ids.begin(), y.ids.end());
  t.push_back(end_id);
  return t;
}

}  // namespace

std::size_t parameter_count(const ModelShape& shape) { return static_cast<std::size_t>(Layout(shape).total); }

Recognizer::Recognizer(ModelShape shape) : shape_(shape) {
  if (shape.input_dim < 1 || shape.hidden < 1 || shape.embed < 1 || shape.vocab < 1)
    throw std::invalid_argument("model dimensions must be positive");
  params_ = Eigen::VectorXd::Zero(Layout(shape).total);
}

Recognizer Recognizer::initialized(ModelShape shape, std::uint64_t seed) {
  Recognizer m(shape);
  const Layout l(shape);
  GradViews v(m.params_.data(), shape, l);
  std::mt19937_64 rng(derive_seed({seed, 0x1A17ULL}));
  auto fill = [&rng](auto& block, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = u(rng);
  };
  fill(v.w_in, shape.input_dim);
  fill(v.w_mix, shape.hidden);
  fill(v.w_rec, shape.hidden);
  fill(v.w_ctc, shape.hidden);
  fill(v.emb, 1.0);
  fill(v.w_ctx, shape.hidden);
  fill(v.w_emb, shape.embed);
  fill(v.w_s, shape.hidden);
  fill(v.w_out, shape.hidden);
  fill(v.w_oe, shape.embed);
  return m;
}

void Recognizer::save(std::ostream& os) const {
  os << fmt::format("seqcal-recognizer {} {} {} {} {}\n", shape_.input_dim, shape_.hidden, shape_.embed, shape_.vocab,
                    params_.size());
  for (Eigen::Index i = 0; i < params_.size(); ++i) os << fmt::format("{:a}\n", params_(i));
}

Recognizer Recognizer::load(std::istream& is) {
  std::string tag;
  ModelShape shape;
  long long count = 0;
  if (!(is >> tag >> shape.input_dim >> shape.hidden >> shape.embed >> shape.vocab >> count) ||
      tag != "seqcal-recognizer")
    throw std::runtime_error("bad checkpoint header");
  Recognizer m(shape);
  if (count != m.params_.size()) throw std::runtime_error("checkpoint parameter count does not match its shape");
  std::string tok;
  for (Eigen::Index i = 0; i < m.params_.size(); ++i) {
    if (!(is >> tok)) throw std::runtime_error("truncated checkpoint");
    m.params_(i) = std::strtod(tok.c_str(), nullptr);
  }
  return m;
}

Eigen::MatrixXd ctc_logits(const Recognizer& model, const FeatureSequence& x) {
  check_input(model, x);
  const auto v = views_of(model);
  return ctc_head(v, encode(v, x));
}

Eigen::MatrixXd ar_logits(const Recognizer& model, const FeatureSequence& x, const LabelSequence& y) {
  check_input(model, x);
  validate_labels(y, model.shape().vocab);
  const auto v = views_of(model);
  const auto enc = encode(v, x);
  const Eigen::RowVectorXd ctx = enc.h.bottomRows(1) * v.w_ctx.transpose() + v.b_d.transpose();
  return decode_teacher(v, ctx, {y}, model.shape().vocab).logits;
}

Eigen::MatrixXd forward(const Recognizer& model, const FeatureSequence& x, Head head, const LabelSequence& teacher) {
  return softmax_rows(head == Head::ctc ? ctc_logits(model, x) : ar_logits(model, x, teacher));
}

PredictionRecord decode_and_confidence(const Recognizer& model, const FeatureSequence& x, Head head) {
  check_input(model, x);
  const auto v = views_of(model);
  const auto enc = encode(v, x);
  const int V = model.shape().vocab;
  PredictionRecord r;
  if (head == Head::ctc) {
    const Eigen::MatrixXd lp = log_softmax_rows(ctc_head(v, enc));
    const auto path = argmax_rows(lp);
    int prev = -1;
    for (std::size_t t = 0; t < path.size(); ++t) {
      const int k = path[t];
      const double p = std::exp(lp(static_cast<Eigen::Index>(t), k));
      if (k != V && k != prev) {
        r.decoded.ids.push_back(k);
        r.token_probs.push_back(p);
      } else if (k != V && k == prev) {
        r.token_probs.back() = std::max(r.token_probs.back(), p);
      }
      prev = k;
    }
    r.confidence = std::exp(ctc_log_posterior_log(lp, r.decoded));
    return r;
  }

  const Eigen::RowVectorXd ctx = enc.h.bottomRows(1) * v.w_ctx.transpose() + v.b_d.transpose();
  const auto max_len = static_cast<std::size_t>(std::max<Eigen::Index>(2 * x.length(), 8));
  Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(model.shape().hidden);
  int prev = V;
  double log_conf = 0;
  for (std::size_t step = 0; step <= max_len; ++step) {
    const Eigen::RowVectorXd u = v.emb.col(prev).transpose();
    s = (u * v.w_emb.transpose() + ctx + s * v.w_s.transpose()).array().tanh();
    const Eigen::MatrixXd logits = s * v.w_out.transpose() + u * v.w_oe.transpose() + v.b_out.transpose();
    const Eigen::MatrixXd lp = log_softmax_rows(logits);
    const int k = argmax_rows(lp)[0];
    log_conf += lp(0, k);
    if (k == V) break;
    if (step == max_len) {
      log_conf -= lp(0, k);
      break;
    }
    r.decoded.ids.push_back(k);
    r.token_probs.push_back(std::exp(lp(0, k)));
    prev = k;
  }
  r.confidence = std::exp(log_conf);
  return r;
}

PredictionRecord decode_and_confidence(const Recognizer& model, const Sample& s, Head head) {
  PredictionRecord r = decode_and_confidence(model, s.x, head);
  r.id = s.id;
  r.target = s.y;
  r.correct = r.decoded == s.y;
  r.hardness = s.hardness;
  return r;
}

double target_posterior(const Recognizer& model, const FeatureSequence& x, const LabelSequence& y, Head head) {
  if (head == Head::ctc) {
    validate_labels(y, model.shape().vocab);
    const double lp = ctc_log_posterior_log(log_softmax_rows(ctc_logits(model, x)), y);
    if (lp == kNegInf) throw std::invalid_argument("target is infeasible for the CTC head");
    return std::exp(lp);
  }
  const Eigen::MatrixXd lp = log_softmax_rows(ar_logits(model, x, y));
  const auto targets = ar_targets(y, model.shape().vocab);
  double sum = 0;
  for (std::size_t j = 0; j < targets.size(); ++j) sum += lp(static_cast<Eigen::Index>(j), targets[j]);
  return std::exp(sum);
}

void LossSpec::validate() const {
  if (loss == LossKind::pssr) pssr.validate();
  if (head == Head::ctc && loss != LossKind::nll && loss != LossKind::pssr)
    throw std::invalid_argument(fmt::format("loss '{}' needs per-token alignment and is only available for the ar head",
                                            to_string(loss)));
}

SampleLoss loss_and_grad(const Recognizer& model, const Sample& s, const LossSpec& spec, const SimilarSet* similar,
                         std::optional<double> fixed_posterior) {
  check_input(model, s.x);
  spec.validate();
  if (spec.loss == LossKind::pssr && similar == nullptr)
    throw std::invalid_argument(fmt::format("no similar set for sample {}", s.id));
  const auto& shape = model.shape();
  const Layout layout(shape);
  const auto v = views_of(model);
  SampleLoss out;
  out.grad = Eigen::VectorXd::Zero(layout.total);
  GradViews g(out.grad.data(), shape, layout);
  const auto enc = encode(v, s.x);

  if (spec.head == Head::ctc) {
    const Eigen::MatrixXd logits = ctc_head(v, enc);
    const auto T = static_cast<std::size_t>(logits.rows());
    auto base = [&](const LabelSequence& y) -> std::optional<std::pair<double, Eigen::MatrixXd>> {
      if (min_ctc_frames(y) > T) return std::nullopt;
      auto r = ctc_loss_and_grad(logits, y);
      return std::pair{r.loss, std::move(r.grad)};
    };
    auto target = base(s.y);
    if (!target) throw std::invalid_argument(fmt::format("target of sample {} is infeasible for CTC", s.id));
    out.target_posterior = std::exp(-target->first);
    Eigen::MatrixXd d_logits;
    if (spec.loss == LossKind::pssr) {
      const double p = fixed_posterior.value_or(out.target_posterior);
      auto l = pssr_with_target<Eigen::MatrixXd>(base, std::move(*target), *similar, p, spec.pssr);
      out.loss = l.total;
      out.skipped = l.skipped;
      d_logits = combined_gradient(l);
    } else {
      out.loss = target->first;
      d_logits = std::move(target->second);
    }
    g.w_ctc.noalias() += d_logits.transpose() * enc.h;
    g.b_ctc += d_logits.colwise().sum().transpose();
    backward_encoder(v, g, s.x, enc, d_logits * v.w_ctc);
    return out;
  }

  const int V = shape.vocab;
  const Eigen::RowVectorXd h_last = enc.h.bottomRows(1);
  const Eigen::RowVectorXd ctx = h_last * v.w_ctx.transpose() + v.b_d.transpose();
  Eigen::RowVectorXd d_ctx = Eigen::RowVectorXd::Zero(shape.hidden);

  if (spec.loss == LossKind::pssr && spec.pssr.alpha != 0 && similar->size() > 0) {
    // One stacked pass over the target and every candidate; candidate k owns segment k + 1.
    std::vector<LabelSequence> seqs{s.y};
    for (auto& c : similar->sequences()) seqs.push_back(std::move(c));
    const DecoderTrace tr = decode_teacher(v, ctx, seqs, V);
    std::size_t next = 0;
    auto nll = [&](const LabelSequence&) -> std::optional<std::pair<double, Eigen::MatrixXd>> {
      const std::size_t k = next++;
      auto r = baseline_loss(LossKind::nll, tr.logits.middleRows(tr.offsets[k], tr.rows_of(k)), ar_targets(seqs[k], V),
                             spec.hyper);
      return std::pair{r.loss, std::move(r.grad)};
    };
    auto target = nll(s.y);
    out.target_posterior = std::exp(-target->first);
    const double p = fixed_posterior.value_or(out.target_posterior);
    auto l = pssr_with_target<Eigen::MatrixXd>(nll, std::move(*target), *similar, p, spec.pssr);
    out.loss = l.total;
    Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(tr.logits.rows(), tr.logits.cols());
    d_logits.topRows(tr.rows_of(0)) = l.base_grad;
    for (std::size_t t = 0; t < l.terms.size(); ++t)
      d_logits.middleRows(tr.offsets[t + 1], tr.rows_of(t + 1)) = l.term_weight * l.terms[t].grad;
    backward_decoder(v, g, tr, d_logits, d_ctx);
  } else {
    // Without active regularizer terms PSSR reduces to the plain NLL pass, bit for bit.
    const DecoderTrace tr = decode_teacher(v, ctx, {s.y}, V);
    const auto targets = ar_targets(s.y, V);
    const LossKind kind = spec.loss == LossKind::pssr ? LossKind::nll : spec.loss;
    auto r = baseline_loss(kind, tr.logits, targets, spec.hyper);
    const Eigen::MatrixXd lp = log_softmax_rows(tr.logits);
    double logp = 0;
    for (std::size_t j = 0; j < targets.size(); ++j) logp += lp(static_cast<Eigen::Index>(j), targets[j]);
    out.target_posterior = std::exp(logp);
    out.loss = r.loss;
    backward_decoder(v, g, tr, r.grad, d_ctx);
  }
  g.w_ctx.noalias() += d_ctx.transpose() * h_last;
  g.b_d += d_ctx.transpose();
  Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(enc.h.rows(), enc.h.cols());
  d_h.bottomRows(1) = d_ctx * v.w_ctx;
  backward_encoder(v, g, s.x, enc, d_h);
  return out;
}

double gradient_check(const Recognizer& model, const Sample& s, const LossSpec& spec, const SimilarSet* similar,
                      double step) {
  const SampleLoss analytic = loss_and_grad(model, s, spec, similar);
  const std::optional<double> p = spec.loss == LossKind::pssr ? std::optional(analytic.target_posterior) : std::nullopt;
  Recognizer probe = model;
  double worst = 0;
  for (Eigen::Index i = 0; i < probe.parameters().size(); ++i) {
    const double orig = probe.parameters()(i);
    probe.parameters()(i) = orig + step;
    const double up = loss_and_grad(probe, s, spec, similar, p).loss;
    probe.parameters()(i) = orig - step;
    const double down = loss_and_grad(probe, s, spec, similar, p).loss;
    probe.parameters()(i) = orig;
    const double numeric = (up - down) / (2 * step);
    const double a = analytic.grad(i);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-5});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace seqcal
