// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion ids...]   (default: all)

#include "oracles.hpp"
#include "seqcal/experiments.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>

#include <fmt/format.h>

using namespace seqcal;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ProbMatrix random_matrix(std::mt19937_64& rng, int T, int V) {
  return ProbMatrix::from_logits(oracle::random_logits(rng, T, V + 1));
}

// Desk-scale settings shared by criteria 7 to 12.
ExperimentConfig desk_config() {
  ExperimentConfig cfg;
  cfg.methods = {"nll", "pssr"};
  return cfg;
}

Outcome ctc_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst_mass = 0, worst_loss = 0;
  for (int i = 0; i < 200; ++i) {
    const int T = 1 + i % 4, V = 1 + (i / 4) % 3;
    const auto m = random_matrix(rng, T, V);
    const auto all = oracle::ctc_all_posteriors(m.rows());
    double mass = 0;
    for (const auto& [seq, p] : all) {
      mass += std::exp(ctc_log_posterior(m, seq));
      const double loss = ctc_loss_and_grad(m.log_rows(), seq).loss;
      worst_loss = std::max(worst_loss, std::abs(loss + std::log(p)) / std::max(1.0, std::abs(std::log(p))));
    }
    worst_mass = std::max(worst_mass, std::abs(mass - 1));
  }
  const double secs = seconds_since(t0);
  return {worst_mass <= 1e-6 && worst_loss <= 1e-9 && secs < 10,
          fmt::format("max |mass-1| {:.2e}, max loss rel err {:.2e}, {:.2f}s", worst_mass, worst_loss, secs)};
}

// Central differences computed here, independently of the library's own checker.
double fd_error(const Recognizer& model, const Sample& s, const LossSpec& spec, const SimilarSet* set) {
  const auto analytic = loss_and_grad(model, s, spec, set);
  std::optional<double> p;
  if (spec.loss == LossKind::pssr) p = analytic.target_posterior;
  Recognizer probe = model;
  const double h = 1e-5;
  double worst = 0;
  for (Eigen::Index i = 0; i < probe.parameters().size(); ++i) {
    const double orig = probe.parameters()(i);
    probe.parameters()(i) = orig + h;
    const double up = loss_and_grad(probe, s, spec, set, p).loss;
    probe.parameters()(i) = orig - h;
    const double down = loss_and_grad(probe, s, spec, set, p).loss;
    probe.parameters()(i) = orig;
    const double n = (up - down) / (2 * h);
    const double a = analytic.grad(i);
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-5}));
  }
  return worst;
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  std::string detail;
  bool pass = true;

  double ctc_worst = 0;
  for (int i = 0; i < 100; ++i) {
    const int T = 1 + i % 5, V = 1 + i % 3;
    const Eigen::MatrixXd logits = oracle::random_logits(rng, T, V + 1);
    LabelSequence y;
    do y = oracle::random_labels(rng, V, T);
    while (min_ctc_frames(y) > static_cast<std::size_t>(T));
    const auto num = oracle::numeric_gradient(
        [&](const Eigen::MatrixXd& z) { return -std::log(oracle::ctc_posterior(oracle::softmax(z), y)); }, logits);
    ctc_worst = std::max(ctc_worst, oracle::max_relative_error(ctc_loss_and_grad(logits, y).grad, num));
  }
  pass &= ctc_worst <= 1e-4;
  detail += fmt::format("ctc {:.1e}", ctc_worst);

  TaskSpec task;
  task.alphabet_size = 3;
  task.feature_dim = 3;
  task.confusable_pairs = {{0, 1, 0.6}};
  task.lexicon = {{{0, 1}, 3.0}, {{2}, 2.0}, {{1, 2, 0}, 1.0}, {{1, 1}, 1.0}, {{2, 0}, 1.0}};
  task.min_frames_per_token = 1;
  task.max_frames_per_token = 2;
  task.base_noise = 0.4;
  task.hard_noise = 0.8;
  task.seed = 9;
  const auto data = synth_dataset(task, 100, Split::train);
  const ModelShape shape{3, 5, 3, 3};
  const auto lm = fit_bicontext_lm(data.labels(), 3, 0.5);

  struct Objective {
    Head head;
    LossKind kind;
  };
  const std::vector<Objective> objectives{{Head::ar, LossKind::nll},   {Head::ar, LossKind::ls},
                                          {Head::ar, LossKind::focal}, {Head::ar, LossKind::er},
                                          {Head::ar, LossKind::brier}, {Head::ctc, LossKind::pssr},
                                          {Head::ar, LossKind::pssr}};
  for (const auto& o : objectives) {
    LossSpec spec{o.head, o.kind, {}, {}};
    spec.pssr.total = 4;
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      const auto& s = data.samples[static_cast<std::size_t>(i)];
      const auto model = Recognizer::initialized(shape, rng());
      std::optional<SimilarSet> set;
      if (o.kind == LossKind::pssr) set = mine_similar_set(model, lm, s, spec.pssr);
      worst = std::max(worst, fd_error(model, s, spec, set ? &*set : nullptr));
    }
    pass &= worst <= 1e-4;
    detail += fmt::format(", {}/{} {:.1e}", to_string(o.head), to_string(o.kind), worst);
  }
  const double secs = seconds_since(t0);
  pass &= secs < 60;
  return {pass, detail + fmt::format(", {:.1f}s", secs)};
}

Outcome mining_exactness() {
  std::mt19937_64 rng(303);
  bool pass = true;
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    const int T = 1 + i % 4, V = 1 + (i / 4) % 4;
    const auto m = random_matrix(rng, T, V);
    const std::size_t n = 1 + static_cast<std::size_t>(i % 9);
    const auto fast = top_n_perception(m, n, kExhaustiveBeam);
    const auto slow = brute_force_rank(m, n);
    pass &= fast.size() == slow.size();
    for (std::size_t k = 0; k < std::min(fast.size(), slow.size()); ++k) {
      pass &= fast[k].seq == slow[k].seq;
      worst = std::max(worst, std::abs(fast[k].log_prob - slow[k].log_prob));
    }
  }
  for (int i = 0; i < 50; ++i) {
    const int V = 2 + i % 3, len = 1 + (i / 3) % 4;
    std::vector<LabelSequence> corpus;
    for (int k = 0; k < 12; ++k) {
      auto s = oracle::random_labels(rng, V, 4);
      if (!s.empty()) corpus.push_back(s);
    }
    corpus.push_back({0});
    const auto lm = fit_bicontext_lm(corpus, V, 0.3);
    LabelSequence y;
    std::uniform_int_distribution<int> tok(0, V - 1);
    for (int k = 0; k < len; ++k) y.ids.push_back(tok(rng));
    const auto truth = oracle::log_product_ranking(position_distributions(lm, y));
    const auto top = top_n_semantic(lm, y, 1 + static_cast<std::size_t>(i) % truth.size());
    pass &= top.size() == std::min(truth.size(), 1 + static_cast<std::size_t>(i) % truth.size());
    for (std::size_t k = 0; k < std::min(top.size(), truth.size()); ++k) {
      pass &= top[k].seq == truth[k].first;
      worst = std::max(worst, std::abs(top[k].log_prob - truth[k].second));
    }
  }
  pass &= worst <= 1e-9;
  return {pass, fmt::format("100 instances, max score diff {:.2e}", worst)};
}

Outcome modulating_factor_shape() {
  bool pass = modulating_factor(0.0) == 1.0 && modulating_factor(1.0) == 0.01;
  for (int i = 1; i <= 1000; ++i) pass &= modulating_factor(i / 1000.0) <= modulating_factor((i - 1) / 1000.0);
  return {pass, fmt::format("f(0)={}, f(1)={}", modulating_factor(0.0), modulating_factor(1.0))};
}

Outcome metric_oracles() {
  auto recs = [](std::vector<double> conf, std::vector<bool> ok) {
    std::vector<PredictionRecord> out;
    for (std::size_t i = 0; i < conf.size(); ++i)
      out.push_back(make_record(static_cast<int>(i), {1}, ok[i] ? LabelSequence{1} : LabelSequence{2}, conf[i]));
    return out;
  };
  struct Fixture {
    std::vector<PredictionRecord> records;
    std::size_t bins;
    double ece, ace, mce;
  };
  const std::vector<Fixture> fixtures{
      {recs({1.0, 1.0, 1.0}, {true, true, true}), 10, 0.0, 0.0, 0.0},
      {recs({0.9, 0.9}, {true, false}), 1, 0.4, 0.4, 0.4},
      {recs({0.2, 0.4, 0.6, 0.8}, {false, false, true, true}), 2, 0.3, 0.3, 0.3},
      // width-0.25 bins hold {0.1}, {0.5}, {1.0, 1.0}; equal-mass bins hold one record each.
      {recs({0.1, 0.5, 1.0, 1.0}, {true, false, true, false}), 4, 0.6, (0.9 + 0.5 + 0.0 + 1.0) / 4, 0.9},
      // equal-mass sizes 3 and 2; equal-width [0,0.5) holds {0.1, 0.3}, [0.5,1] holds {0.5, 0.7, 0.9}.
      {recs({0.9, 0.1, 0.3, 0.7, 0.5}, {true, false, true, true, false}), 2, 0.4 * 0.3 + 0.6 * (0.7 - 2.0 / 3.0),
       0.6 * (1.0 / 3.0 - 0.3) + 0.4 * 0.2, 0.3},
      {recs({0.3, 0.3, 0.3}, {true, true, true}), 5, 0.7, 0.7, 0.7},
  };
  bool pass = true;
  std::size_t failed = 0;
  for (const auto& f : fixtures) {
    const auto r = calibration_report(f.records, f.bins);
    const bool ok = std::abs(r.ece - f.ece) <= 1e-12 && std::abs(r.ace - f.ace) <= 1e-12 &&
                    std::abs(r.mce - f.mce) <= 1e-12;
    failed += !ok;
    pass &= ok;
  }
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 60);
    std::vector<double> conf;
    std::vector<bool> ok;
    for (std::size_t i = 0; i < n; ++i) {
      conf.push_back(std::max(1e-9, u(rng)));
      ok.push_back(u(rng) < 0.7);
    }
    const auto r = calibration_report(recs(conf, ok), 1 + static_cast<std::size_t>(trial % 15));
    violations += r.mce < r.ece;
  }
  pass &= violations == 0;
  return {pass, fmt::format("{} fixtures, {} mismatched; MCE < ECE in {} of 1000 random sets", fixtures.size(), failed,
                            violations)};
}

Outcome alpha_zero_degeneracy() {
  ExperimentConfig cfg;
  cfg.n_train = 400;
  cfg.train.epochs = 3;
  TaskSpec task = cfg.task;
  task.seed = 6;
  const auto data = synth_dataset(task, cfg.n_train, Split::train);
  TrainConfig ref = cfg.train;
  ref.epochs = 2;
  const auto reference = train(ref, data, Dataset{}).model;
  const auto lm = fit_bicontext_lm(data.labels(), task.alphabet_size, cfg.lm_smoothing);
  bool pass = true;
  std::string detail;
  for (Head head : {Head::ctc, Head::ar}) {
    TrainConfig base = cfg.train;
    base.seed = 11;
    base.objective.head = head;
    TrainConfig zero = base;
    zero.objective.loss = LossKind::pssr;
    zero.objective.pssr.alpha = 0;
    const auto mined = mine_similar_sets(reference, lm, data, zero.objective.pssr);
    const auto a = train(base, data, Dataset{}).model;
    const auto b = train(zero, data, Dataset{}, &mined).model;
    const bool same = a.parameters() == b.parameters();
    pass &= same;
    detail += fmt::format("{}{}: {}", detail.empty() ? "" : ", ", to_string(head), same ? "identical" : "differs");
  }
  return {pass, detail};
}

struct MainRun {
  ExperimentConfig cfg;
  PipelineResult result;
  double seconds = 0;
};

std::optional<MainRun> main_run;

MainRun& main_result() {
  if (!main_run) {
    const auto t0 = std::chrono::steady_clock::now();
    MainRun run;
    run.cfg = desk_config();
    run.result = run_pipeline(run.cfg);
    run.seconds = seconds_since(t0);
    main_run = std::move(run);
  }
  return *main_run;
}

std::vector<double> cell_values(const PipelineResult& r, Head head, const std::string& method,
                                const std::function<double(const CellResult&)>& f) {
  std::vector<double> v;
  for (const auto& c : r.cells)
    if (c.head == head && c.method == method) v.push_back(f(c));
  return v;
}

Outcome main_result_criterion() {
  auto& run = main_result();
  bool pass = run.seconds < 600;
  std::string detail;
  for (Head head : {Head::ctc, Head::ar}) {
    auto ece = [](const CellResult& c) { return c.report.ece; };
    auto acc = [](const CellResult& c) { return c.report.accuracy; };
    const double e0 = median(cell_values(run.result, head, "nll", ece));
    const double e1 = median(cell_values(run.result, head, "pssr", ece));
    const double a0 = median(cell_values(run.result, head, "nll", acc));
    const double a1 = median(cell_values(run.result, head, "pssr", acc));
    const double reduction = (e0 - e1) / e0;
    const double gap = 100 * std::abs(a1 - a0);
    pass &= reduction >= 0.30 && gap <= 1.5;
    detail += fmt::format("{}: ECE {:.4f} -> {:.4f} ({:.0f}% lower), acc {:.2f}% -> {:.2f}% ({:.2f} pts); ",
                          to_string(head), e0, e1, 100 * reduction, 100 * a0, 100 * a1, gap);
  }
  return {pass, detail + fmt::format("{:.0f}s", run.seconds)};
}

Outcome hardness_trend() {
  auto cfg = desk_config();
  cfg.hardness_methods = {"nll"};
  const auto rows = run_hardness_study(cfg);
  bool pass = true;
  std::string detail;
  for (Head head : {Head::ctc, Head::ar}) {
    std::vector<double> med;
    for (const auto& r : rows)
      if (r.head == head) med.push_back(r.median_ece);
    for (std::size_t i = 1; i < med.size(); ++i) pass &= med[i] >= med[i - 1];
    detail += fmt::format("{}{}:", detail.empty() ? "" : "; ", to_string(head));
    for (double e : med) detail += fmt::format(" {:.4f}", e);
  }
  return {pass, detail};
}

Outcome shift_study() {
  auto& run = main_result();
  const auto rows = run_shift_study(run.cfg, run.result);
  bool pass = true, clean_ok = true;
  std::size_t cells = 0, wins = 0;
  std::string losses;
  for (Head head : {Head::ctc, Head::ar})
    for (const auto& r : rows) {
      if (r.head != head || r.method != "nll") continue;
      if (r.severity == 0.0) {
        for (std::size_t k = 0; k < r.reports.size(); ++k) {
          const auto& clean = *std::find_if(run.result.cells.begin(), run.result.cells.end(), [&](const CellResult& c) {
            return c.head == head && c.method == "nll" && c.seed == run.cfg.seeds[k];
          });
          clean_ok &= r.reports[k].ece == clean.report.ece && r.reports[k].accuracy == clean.report.accuracy;
        }
        continue;
      }
      const auto other = std::find_if(rows.begin(), rows.end(), [&](const ShiftRow& s) {
        return s.head == head && s.method == "pssr" && s.kind == r.kind && s.severity == r.severity;
      });
      ++cells;
      const bool win = other->median_ece < r.median_ece;
      wins += win;
      if (!win)
        losses += fmt::format("; lost {}/{}@{}: {:.4f} vs {:.4f}", to_string(head), to_string(r.kind), r.severity,
                              other->median_ece, r.median_ece);
      pass &= win;
    }
  pass &= clean_ok;
  return {pass, fmt::format("PSSR lower in {} of {} shifted cells; severity 0 {}{}", wins, cells,
                            clean_ok ? "matches clean" : "differs from clean", losses)};
}

Outcome proportion_ablation() {
  const auto r = run_proportion_ablation(desk_config());
  std::string detail;
  for (const auto& row : r.rows) detail += fmt::format("{}@{}: {:.4f}; ", to_string(row.head), row.rho, row.median_ece);
  const double ctc = r.best_rho.at(Head::ctc), ar = r.best_rho.at(Head::ar);
  return {ctc >= ar, detail + fmt::format("best rho ctc {} ar {}", ctc, ar)};
}

Outcome active_learning() {
  const auto cfg = desk_config();
  double random_acc = 0, calibrated_acc = 0;
  for (std::uint64_t seed : cfg.active_seeds) {
    random_acc += run_active_learning(cfg, "random", seed).points.back().accuracy;
    calibrated_acc += run_active_learning(cfg, "pssr_least_confidence", seed).points.back().accuracy;
  }
  const double n = static_cast<double>(cfg.active_seeds.size());
  random_acc /= n;
  calibrated_acc /= n;
  return {calibrated_acc >= random_acc,
          fmt::format("final accuracy: calibrated least-confidence {:.2f}%, random {:.2f}%", 100 * calibrated_acc,
                      100 * random_acc)};
}

Outcome diagnostics() {
  auto& run = main_result();
  const Alphabet alphabet = Alphabet::standard(run.cfg.task.alphabet_size);
  bool pass = true;
  std::string detail;
  for (const auto& cell : run.result.cells) {
    if (cell.method != "nll") continue;
    const auto& ctx = *std::find_if(run.result.contexts.begin(), run.result.contexts.end(),
                                    [&](const SeedContext& c) { return c.seed == cell.seed; });
    const auto d = diagnose(cell, ctx.lm, alphabet);
    bool designed = false;
    if (!d.confusions.empty())
      for (const auto& p : run.cfg.task.confusable_pairs) {
        const auto& top = d.confusions.front();
        designed |= (top.truth == p.a && top.predicted == p.b) || (top.truth == p.b && top.predicted == p.a);
      }
    pass &= designed;
    detail += fmt::format("{}{}/seed{}: top ", detail.empty() ? "" : "; ", to_string(cell.head), cell.seed);
    detail += d.confusions.empty() ? std::string("none")
                                   : fmt::format("{}->{}", d.confusions.front().truth, d.confusions.front().predicted);
    if (cell.head == Head::ar) {
      const auto rho = d.perplexity.rank_correlation;
      pass &= rho && *rho < 0;
      detail += rho ? fmt::format(" r={:.3f}", *rho) : std::string(" r=n/a");
    }
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"CTC exactness", ctc_exactness},
      {"gradient fidelity", gradient_fidelity},
      {"mining exactness", mining_exactness},
      {"modulating factor", modulating_factor_shape},
      {"metric oracles", metric_oracles},
      {"alpha=0 degeneracy", alpha_zero_degeneracy},
      {"desk-scale main result", main_result_criterion},
      {"hardness trend", hardness_trend},
      {"shift study", shift_study},
      {"proportion ablation", proportion_ablation},
      {"active learning", active_learning},
      {"diagnostics", diagnostics},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    failures += !o.pass;
    std::cout << fmt::format("criterion {:2}: {} {} ({}) [{:.1f}s]", id, o.pass ? "PASS" : "FAIL", criteria[i].first,
                             o.detail, seconds_since(t0))
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
