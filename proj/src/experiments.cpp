#include "seqcal/experiments.hpp"

#include "seqcal/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace seqcal {

namespace {

const std::set<std::string> kMethods{"nll", "ls", "focal", "er", "brier", "pssr"};
const std::set<std::string> kStrategies{"random", "least_confidence", "pssr_least_confidence"};

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0, 0};
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {m, 0};
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1))};
}

fs::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) { return cfg.out / fmt::format("seed{}", seed); }

std::string fmt_num(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

PssrConfig ExperimentConfig::pssr_for(Head head) const {
  PssrConfig p = pssr;
  p.perception_fraction = head == Head::ctc ? rho_ctc : rho_ar;
  return p;
}

void ExperimentConfig::validate() const {
  task.validate();
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("train and test splits need at least one sample");
  if (train.shape.input_dim != task.feature_dim || train.shape.vocab != task.alphabet_size)
    throw std::invalid_argument("model shape does not match the task");
  TrainConfig probe = train;
  probe.objective = LossSpec{};
  probe.validate();
  if (reference_epochs < 0) throw std::invalid_argument("reference epochs must be >= 0");
  pssr_for(Head::ctc).validate();
  pssr_for(Head::ar).validate();
  if (!(lm_smoothing > 0)) throw std::invalid_argument("lm smoothing must be positive");
  if (bins < 1) throw std::invalid_argument("need at least one bin");
  for (double s : shift_severities)
    if (s < 0) throw std::invalid_argument("corruption severity must be >= 0");
  for (double r : hardness_ratios)
    if (r < 0 || r > 1) throw std::invalid_argument("hardness ratios must lie in [0, 1]");
  for (double r : ablation_rhos)
    if (r < 0 || r > 1) throw std::invalid_argument("ablation proportions must lie in [0, 1]");
  for (const auto& m : methods)
    if (!kMethods.contains(m)) throw std::invalid_argument(fmt::format("unknown method '{}'", m));
  for (const auto& m : hardness_methods)
    if (!kMethods.contains(m)) throw std::invalid_argument(fmt::format("unknown method '{}'", m));
  for (const auto& s : active_strategies)
    if (!kStrategies.contains(s)) throw std::invalid_argument(fmt::format("unknown active-learning strategy '{}'", s));
  if (!(active_init_fraction > 0 && active_init_fraction <= 1))
    throw std::invalid_argument("active init fraction must be in (0, 1]");
  if (!(active_query_fraction > 0 && active_query_fraction <= 1))
    throw std::invalid_argument("active query fraction must be in (0, 1]");
  if (active_rounds < 0) throw std::invalid_argument("active rounds must be >= 0");
  if (seeds.empty()) throw std::invalid_argument("seed list is empty");
  if (heads.empty()) throw std::invalid_argument("head list is empty");
}

SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, const TaskSpec& task, bool with_reference) {
  SeedContext ctx;
  ctx.seed = seed;
  TaskSpec spec = task;
  spec.seed = seed;
  ctx.train = synth_dataset(spec, cfg.n_train, Split::train);
  if (cfg.n_val > 0) ctx.val = synth_dataset(spec, cfg.n_val, Split::val);
  ctx.test = synth_dataset(spec, cfg.n_test, Split::test);
  TrainConfig ref = cfg.train;
  ref.objective = LossSpec{};
  ref.epochs = cfg.reference_epochs;
  ref.seed = derive_seed({seed, 0x2EFULL});
  if (with_reference) ctx.reference = train(ref, ctx.train, Dataset{}).model;
  ctx.lm = fit_bicontext_lm(ctx.train.labels(), task.alphabet_size, cfg.lm_smoothing);
  return ctx;
}

SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) { return prepare_seed(cfg, seed, cfg.task); }

const MinedCache& mined_for(const ExperimentConfig& cfg, SeedContext& ctx, double rho) {
  auto it = ctx.mined.find(rho);
  if (it != ctx.mined.end()) return it->second;
  PssrConfig p = cfg.pssr;
  p.perception_fraction = rho;
  return ctx.mined.emplace(rho, mine_similar_sets(ctx.reference, ctx.lm, ctx.train, p, cfg.beam_width)).first->second;
}

bool method_supported(const std::string& method, Head head) {
  return head == Head::ar || method == "nll" || method == "pssr";
}

TrainConfig cell_train_config(const ExperimentConfig& cfg, Head head, const std::string& method, std::uint64_t seed,
                              std::optional<double> rho) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.objective.head = head;
  tc.objective.loss = parse_loss_kind(method);
  tc.objective.pssr = cfg.pssr_for(head);
  if (rho) tc.objective.pssr.perception_fraction = *rho;
  tc.objective.hyper = cfg.hyper;
  return tc;
}

CellResult run_cell(const ExperimentConfig& cfg, SeedContext& ctx, Head head, const std::string& method,
                    std::optional<double> rho) {
  if (!method_supported(method, head))
    throw std::invalid_argument(fmt::format("method '{}' is not available for the {} head", method, to_string(head)));
  const TrainConfig tc = cell_train_config(cfg, head, method, ctx.seed, rho);
  CellResult cell;
  cell.seed = ctx.seed;
  cell.head = head;
  cell.method = method;
  cell.rho = tc.objective.pssr.perception_fraction;
  const MinedCache* mined = nullptr;
  RemineHook remine;
  if (tc.objective.loss == LossKind::pssr) {
    mined = &mined_for(cfg, ctx, cell.rho);
    // Only the CTC head yields a probability matrix, so refreshing uses the model being trained there
    // and leaves the reference-mined sets in place for the AR head.
    if (cfg.remine_each_epoch && head == Head::ctc) {
      remine = [&cfg, &ctx, p = tc.objective.pssr](const Recognizer& m, int) -> std::optional<MinedCache> {
        return mine_similar_sets(m, ctx.lm, ctx.train, p, cfg.beam_width);
      };
    }
  }
  auto res = train(tc, ctx.train, ctx.val, mined, remine);
  cell.model = std::move(res.model);
  cell.log = std::move(res.log);
  cell.records = evaluate(cell.model, ctx.test, head);
  cell.report = calibration_report(cell.records, cfg.bins);
  return cell;
}

std::vector<SummaryRow> summarize(const std::vector<CellResult>& cells) {
  std::vector<SummaryRow> rows;
  std::vector<std::pair<Head, std::string>> keys;
  for (const auto& c : cells)
    if (std::find(keys.begin(), keys.end(), std::pair{c.head, c.method}) == keys.end()) keys.emplace_back(c.head, c.method);
  for (const auto& [head, method] : keys) {
    std::vector<double> acc, ece, ace, mce;
    for (const auto& c : cells) {
      if (c.head != head || c.method != method) continue;
      acc.push_back(c.report.accuracy);
      ece.push_back(c.report.ece);
      ace.push_back(c.report.ace);
      mce.push_back(c.report.mce);
    }
    SummaryRow r;
    r.head = head;
    r.method = method;
    r.seeds = acc.size();
    std::tie(r.acc_mean, r.acc_std) = mean_std(acc);
    std::tie(r.ece_mean, r.ece_std) = mean_std(ece);
    std::tie(r.ace_mean, r.ace_std) = mean_std(ace);
    std::tie(r.mce_mean, r.mce_std) = mean_std(mce);
    rows.push_back(r);
  }
  return rows;
}

void write_cell(const fs::path& dir, const CellResult& cell, std::size_t bins) {
  save_model(dir / "model.txt", cell.model);
  write_train_log(dir / "train_log.csv", cell.log);
  write_predictions(dir / "predictions.jsonl", cell.records);
  write_report_csv(dir / "report.csv", cell.report);
  const auto title = fmt::format("{} / {} / seed {}", to_string(cell.head), cell.method, cell.seed);
  write_text(dir / "reliability.svg", reliability_svg(calibration_report(cell.records, bins), title));
}

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  PipelineResult out;
  if (!cfg.out.empty()) write_text(cfg.out / "config.yaml", dump_config(cfg));
  for (std::uint64_t seed : cfg.seeds) {
    SeedContext ctx = prepare_seed(cfg, seed);
    for (Head head : cfg.heads)
      for (const auto& method : cfg.methods) {
        if (!method_supported(method, head)) continue;
        CellResult cell = run_cell(cfg, ctx, head, method);
        if (!cfg.out.empty()) {
          const auto dir = seed_dir(cfg, seed) / std::string(to_string(head)) / method;
          write_cell(dir, cell, cfg.bins);
          if (method == "nll") write_diagnostics(dir, diagnose(cell, ctx.lm, Alphabet::standard(cfg.task.alphabet_size)),
                                                 Alphabet::standard(cfg.task.alphabet_size));
        }
        out.cells.push_back(std::move(cell));
      }
    if (!cfg.out.empty()) {
      const auto dir = seed_dir(cfg, seed);
      write_dataset(dir / "data" / "train.jsonl", ctx.train);
      if (ctx.val.size() > 0) write_dataset(dir / "data" / "val.jsonl", ctx.val);
      write_dataset(dir / "data" / "test.jsonl", ctx.test);
      save_model(dir / "reference" / "model.txt", ctx.reference);
      save_lm(dir / "lm.txt", ctx.lm);
      for (const auto& [rho, cache] : ctx.mined) write_mined_cache(dir / fmt::format("mined_rho{}.jsonl", rho), cache);
    }
    out.contexts.push_back(std::move(ctx));
  }
  out.summary = summarize(out.cells);
  if (!cfg.out.empty()) write_summary_csv(cfg.out / "summary.csv", out.summary);
  return out;
}

std::vector<HardnessRow> run_hardness_study(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<HardnessRow> rows;
  for (double ratio : cfg.hardness_ratios) {
    TaskSpec task = cfg.task;
    task.hardness_ratio = ratio;
    std::vector<HardnessRow> block;
    for (Head head : cfg.heads)
      for (const auto& m : cfg.hardness_methods)
        if (method_supported(m, head)) block.push_back({ratio, head, m, {}, 0});
    const bool needs_reference =
        std::find(cfg.hardness_methods.begin(), cfg.hardness_methods.end(), "pssr") != cfg.hardness_methods.end();
    for (std::uint64_t seed : cfg.seeds) {
      SeedContext ctx = prepare_seed(cfg, seed, task, needs_reference);
      for (auto& row : block) row.ece.push_back(run_cell(cfg, ctx, row.head, row.method).report.ece);
    }
    for (auto& row : block) {
      row.median_ece = median(row.ece);
      rows.push_back(std::move(row));
    }
  }
  if (!cfg.out.empty()) write_hardness_csv(cfg.out / "hardness.csv", rows);
  return rows;
}

std::vector<ShiftRow> run_shift_study(const ExperimentConfig& cfg, const PipelineResult& trained) {
  std::vector<ShiftRow> rows;
  for (CorruptionKind kind : cfg.shift_kinds)
    for (double severity : cfg.shift_severities) {
      std::vector<ShiftRow> block;
      for (const auto& cell : trained.cells) {
        auto it = std::find_if(block.begin(), block.end(),
                               [&](const ShiftRow& r) { return r.head == cell.head && r.method == cell.method; });
        if (it == block.end()) {
          block.push_back({kind, severity, cell.head, cell.method, {}, 0});
          it = block.end() - 1;
        }
        const auto ctx = std::find_if(trained.contexts.begin(), trained.contexts.end(),
                                      [&](const SeedContext& c) { return c.seed == cell.seed; });
        if (ctx == trained.contexts.end()) throw std::logic_error("cell without a seed context");
        Dataset shifted = ctx->test;
        for (auto& s : shifted.samples)
          s.x = corrupt(s.x, kind, severity,
                        derive_seed({cell.seed, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(s.id),
                                     static_cast<std::uint64_t>(std::llround(severity * 1e6))}));
        it->reports.push_back(calibration_report(evaluate(cell.model, shifted, cell.head), cfg.bins));
      }
      for (auto& row : block) {
        std::vector<double> e;
        for (const auto& r : row.reports) e.push_back(r.ece);
        row.median_ece = median(e);
        rows.push_back(std::move(row));
      }
    }
  if (!cfg.out.empty()) write_shift_csv(cfg.out / "shift.csv", rows);
  return rows;
}

AblationResult run_proportion_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  AblationResult out;
  for (Head head : cfg.heads)
    for (double rho : cfg.ablation_rhos) out.rows.push_back({rho, head, {}, 0});
  for (std::uint64_t seed : cfg.seeds) {
    SeedContext ctx = prepare_seed(cfg, seed);
    for (auto& row : out.rows) row.ece.push_back(run_cell(cfg, ctx, row.head, "pssr", row.rho).report.ece);
  }
  for (auto& row : out.rows) row.median_ece = median(row.ece);
  for (Head head : cfg.heads) {
    const AblationRow* best = nullptr;
    for (const auto& row : out.rows)
      if (row.head == head && (best == nullptr || row.median_ece < best->median_ece)) best = &row;
    out.best_rho[head] = best->rho;
  }
  if (!cfg.out.empty()) write_ablation_csv(cfg.out / "ablation.csv", out);
  return out;
}

ActiveCurve run_active_learning(const ExperimentConfig& cfg, const std::string& strategy, std::uint64_t seed) {
  cfg.validate();
  if (!kStrategies.contains(strategy))
    throw std::invalid_argument(fmt::format("unknown active-learning strategy '{}'", strategy));
  TaskSpec spec = cfg.task;
  spec.seed = seed;
  const Dataset pool = synth_dataset(spec, cfg.n_train, Split::train);
  const Dataset test = synth_dataset(spec, cfg.n_test, Split::test);
  const std::size_t n = pool.size();
  const auto n_init = static_cast<std::size_t>(std::llround(cfg.active_init_fraction * static_cast<double>(n)));
  const auto n_query = static_cast<std::size_t>(std::llround(cfg.active_query_fraction * static_cast<double>(n)));
  if (n_init < 1 || n_query < 1) throw std::invalid_argument("active-learning fractions select no samples");
  if (n_init + static_cast<std::size_t>(cfg.active_rounds) * n_query > n)
    throw std::invalid_argument("active-learning queries exhaust the unlabeled pool");

  // The initial labeled set depends only on the seed, so strategies start from the same point.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed({seed, 0xA11ULL}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> labeled(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_init));
  std::vector<std::size_t> unlabeled(order.begin() + static_cast<std::ptrdiff_t>(n_init), order.end());
  std::sort(unlabeled.begin(), unlabeled.end());
  std::mt19937_64 query_rng(derive_seed({seed, 0xA12ULL}));

  const bool use_pssr = strategy == "pssr_least_confidence";
  ActiveCurve curve{strategy, seed, {}};
  for (int round = 0; round <= cfg.active_rounds; ++round) {
    Dataset lab;
    lab.spec = pool.spec;
    lab.split = Split::train;
    std::sort(labeled.begin(), labeled.end());
    for (std::size_t i : labeled) lab.samples.push_back(pool.samples[i]);

    TrainConfig tc = cell_train_config(cfg, cfg.active_head, use_pssr ? "pssr" : "nll", seed);
    MinedCache mined;
    if (use_pssr) {
      TrainConfig ref = cfg.train;
      ref.objective = LossSpec{};
      ref.epochs = cfg.reference_epochs;
      ref.seed = derive_seed({seed, 0x2EFULL});
      const Recognizer reference = train(ref, lab, Dataset{}).model;
      const BiContextLM lm = fit_bicontext_lm(lab.labels(), spec.alphabet_size, cfg.lm_smoothing);
      mined = mine_similar_sets(reference, lm, lab, tc.objective.pssr, cfg.beam_width);
    }
    const Recognizer model = train(tc, lab, Dataset{}, use_pssr ? &mined : nullptr).model;
    curve.points.push_back({round, static_cast<double>(labeled.size()) / static_cast<double>(n),
                            sequence_accuracy(evaluate(model, test, cfg.active_head))});
    if (round == cfg.active_rounds) break;

    std::vector<std::size_t> picked;
    if (strategy == "random") {
      std::vector<std::size_t> idx(unlabeled.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), query_rng);
      idx.resize(n_query);
      std::sort(idx.begin(), idx.end());
      for (std::size_t k : idx) picked.push_back(unlabeled[k]);
    } else {
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t i : unlabeled)
        scored.emplace_back(decode_and_confidence(model, pool.samples[i].x, cfg.active_head).confidence, i);
      std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (std::size_t k = 0; k < n_query; ++k) picked.push_back(scored[k].second);
    }
    for (std::size_t i : picked) {
      labeled.push_back(i);
      unlabeled.erase(std::find(unlabeled.begin(), unlabeled.end(), i));
    }
  }
  return curve;
}

std::vector<ActiveCurve> run_active_learning(const ExperimentConfig& cfg) {
  std::vector<ActiveCurve> curves;
  for (std::uint64_t seed : cfg.active_seeds)
    for (const auto& s : cfg.active_strategies) curves.push_back(run_active_learning(cfg, s, seed));
  if (!cfg.out.empty()) write_active_csv(cfg.out / "active_learning.csv", curves);
  return curves;
}

Diagnostics diagnose(const CellResult& cell, const BiContextLM& lm, const Alphabet& alphabet) {
  return {confusion_pair_stats(cell.records, alphabet), perplexity_confidence_correlation(cell.records, lm)};
}

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
  std::string s = "head,method,seeds,acc_mean,acc_std,ece_mean,ece_std,ace_mean,ace_std,mce_mean,mce_std\n";
  for (const auto& r : rows)
    s += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", to_string(r.head), r.method, r.seeds, fmt_num(r.acc_mean),
                     fmt_num(r.acc_std), fmt_num(r.ece_mean), fmt_num(r.ece_std), fmt_num(r.ace_mean),
                     fmt_num(r.ace_std), fmt_num(r.mce_mean), fmt_num(r.mce_std));
  write_text(path, s);
}

void write_hardness_csv(const fs::path& path, const std::vector<HardnessRow>& rows) {
  std::string s = "ratio,head,method,median_ece,per_seed_ece\n";
  for (const auto& r : rows) {
    std::vector<std::string> e;
    for (double x : r.ece) e.push_back(fmt_num(x));
    s += fmt::format("{},{},{},{},{}\n", r.ratio, to_string(r.head), r.method, fmt_num(r.median_ece),
                     fmt::join(e, ";"));
  }
  write_text(path, s);
}

void write_shift_csv(const fs::path& path, const std::vector<ShiftRow>& rows) {
  std::string s = "kind,severity,head,method,seed_index,accuracy,ece,ace,mce\n";
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.reports.size(); ++i) {
      const auto& rep = r.reports[i];
      s += fmt::format("{},{},{},{},{},{},{},{},{}\n", to_string(r.kind), r.severity, to_string(r.head), r.method, i,
                       fmt_num(rep.accuracy), fmt_num(rep.ece), fmt_num(rep.ace), fmt_num(rep.mce));
    }
  write_text(path, s);
}

void write_ablation_csv(const fs::path& path, const AblationResult& result) {
  std::string s = "rho,head,median_ece,per_seed_ece,best\n";
  for (const auto& r : result.rows) {
    std::vector<std::string> e;
    for (double x : r.ece) e.push_back(fmt_num(x));
    s += fmt::format("{},{},{},{},{}\n", r.rho, to_string(r.head), fmt_num(r.median_ece), fmt::join(e, ";"),
                     result.best_rho.at(r.head) == r.rho ? 1 : 0);
  }
  write_text(path, s);
}

void write_active_csv(const fs::path& path, const std::vector<ActiveCurve>& curves) {
  std::string s = "strategy,seed,round,labeled_fraction,accuracy\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      s += fmt::format("{},{},{},{},{}\n", c.strategy, c.seed, p.round, fmt_num(p.labeled_fraction), fmt_num(p.accuracy));
  write_text(path, s);
}

void write_diagnostics(const fs::path& dir, const Diagnostics& d, const Alphabet& alphabet) {
  std::string s = "truth,predicted,count,frequency_pct,mean_probability\n";
  for (const auto& e : d.confusions)
    s += fmt::format("{},{},{},{},{}\n", alphabet.symbol(e.truth), alphabet.symbol(e.predicted), e.count,
                     fmt_num(e.frequency), fmt_num(e.mean_probability));
  write_text(dir / "confusions.csv", s);
  std::string p = "perplexity,confidence\n";
  for (const auto& [ppl, conf] : d.perplexity.points) p += fmt::format("{},{}\n", fmt_num(ppl), fmt_num(conf));
  if (d.perplexity.rank_correlation) p += fmt::format("# spearman,{}\n", fmt_num(*d.perplexity.rank_correlation));
  write_text(dir / "perplexity.csv", p);
}

}  // namespace seqcal
