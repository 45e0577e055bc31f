// Command-line driver for the calibration experiments.

#include "seqcal/experiments.hpp"
#include "seqcal/io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <iostream>
#include <map>

using namespace seqcal;

namespace {

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::vector<std::string> methods;
  std::string head;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (const char* env = std::getenv("SEQCAL_OUT_ROOT"); env && *env) cfg.out = env;
  if (!o.out.empty()) cfg.out = o.out;
  if (cfg.out.empty()) cfg.out = "runs";
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.methods.empty()) cfg.methods = o.methods;
  if (!o.head.empty()) cfg.heads = {parse_head(o.head)};
  cfg.validate();
  return cfg;
}

fs::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) { return cfg.out / fmt::format("seed{}", seed); }
fs::path cell_dir(const ExperimentConfig& cfg, std::uint64_t seed, Head head, const std::string& method) {
  return seed_dir(cfg, seed) / std::string(to_string(head)) / method;
}
fs::path mined_path(const ExperimentConfig& cfg, std::uint64_t seed, double rho) {
  return seed_dir(cfg, seed) / fmt::format("mined_rho{}.jsonl", rho);
}

void require(const fs::path& p, const char* producer) {
  if (!fs::exists(p)) throw std::runtime_error(fmt::format("{} not found; run '{}' first", p.string(), producer));
}

// Rebuilds a seed context from the files written by earlier commands.
SeedContext load_context(const ExperimentConfig& cfg, std::uint64_t seed, bool need_reference) {
  const auto dir = seed_dir(cfg, seed);
  SeedContext ctx;
  ctx.seed = seed;
  require(dir / "data" / "train.jsonl", "synth");
  ctx.train = read_dataset(dir / "data" / "train.jsonl");
  if (fs::exists(dir / "data" / "val.jsonl")) ctx.val = read_dataset(dir / "data" / "val.jsonl");
  ctx.test = read_dataset(dir / "data" / "test.jsonl");
  if (need_reference) {
    require(dir / "reference" / "model.txt", "train-ref");
    ctx.reference = load_model(dir / "reference" / "model.txt");
    ctx.lm = load_lm(dir / "lm.txt");
  }
  for (double rho : {cfg.rho_ctc, cfg.rho_ar})
    if (fs::exists(mined_path(cfg, seed, rho))) ctx.mined[rho] = read_mined_cache(mined_path(cfg, seed, rho));
  return ctx;
}

void cmd_synth(const ExperimentConfig& cfg) {
  write_text(cfg.out / "config.yaml", dump_config(cfg));
  for (auto seed : cfg.seeds) {
    TaskSpec spec = cfg.task;
    spec.seed = seed;
    const auto dir = seed_dir(cfg, seed) / "data";
    write_dataset(dir / "train.jsonl", synth_dataset(spec, cfg.n_train, Split::train));
    if (cfg.n_val > 0) write_dataset(dir / "val.jsonl", synth_dataset(spec, cfg.n_val, Split::val));
    write_dataset(dir / "test.jsonl", synth_dataset(spec, cfg.n_test, Split::test));
    fmt::print("seed {}: wrote {}\n", seed, dir.string());
  }
}

void cmd_train_ref(const ExperimentConfig& cfg) {
  for (auto seed : cfg.seeds) {
    const SeedContext ctx = load_context(cfg, seed, false);
    TrainConfig ref = cfg.train;
    ref.objective = LossSpec{};
    ref.epochs = cfg.reference_epochs;
    ref.seed = derive_seed({seed, 0x2EFULL});
    const auto dir = seed_dir(cfg, seed);
    auto res = train(ref, ctx.train, ctx.val);
    save_model(dir / "reference" / "model.txt", res.model);
    write_train_log(dir / "reference" / "train_log.csv", res.log);
    save_lm(dir / "lm.txt", fit_bicontext_lm(ctx.train.labels(), cfg.task.alphabet_size, cfg.lm_smoothing));
    fmt::print("seed {}: reference model and lm written\n", seed);
  }
}

void cmd_mine(const ExperimentConfig& cfg) {
  for (auto seed : cfg.seeds) {
    SeedContext ctx = load_context(cfg, seed, true);
    for (Head head : cfg.heads) {
      const double rho = head == Head::ctc ? cfg.rho_ctc : cfg.rho_ar;
      ctx.mined.erase(rho);
      write_mined_cache(mined_path(cfg, seed, rho), mined_for(cfg, ctx, rho));
      fmt::print("seed {}: mined similar sets for rho = {}\n", seed, rho);
    }
  }
}

void cmd_train(const ExperimentConfig& cfg) {
  for (auto seed : cfg.seeds) {
    const bool any_pssr = std::find(cfg.methods.begin(), cfg.methods.end(), "pssr") != cfg.methods.end();
    SeedContext ctx = load_context(cfg, seed, any_pssr);
    for (Head head : cfg.heads)
      for (const auto& method : cfg.methods) {
        if (!method_supported(method, head)) continue;
        if (method == "pssr") require(mined_path(cfg, seed, head == Head::ctc ? cfg.rho_ctc : cfg.rho_ar), "mine");
        const CellResult cell = run_cell(cfg, ctx, head, method);
        write_cell(cell_dir(cfg, seed, head, method), cell, cfg.bins);
        fmt::print("seed {} {} {}: acc {:.4f} ece {:.4f}\n", seed, to_string(head), method, cell.report.accuracy,
                   cell.report.ece);
      }
  }
}

void cmd_eval(const ExperimentConfig& cfg) {
  for (auto seed : cfg.seeds) {
    const SeedContext ctx = load_context(cfg, seed, false);
    for (Head head : cfg.heads)
      for (const auto& method : cfg.methods) {
        if (!method_supported(method, head)) continue;
        const auto dir = cell_dir(cfg, seed, head, method);
        require(dir / "model.txt", "train");
        const auto records = evaluate(load_model(dir / "model.txt"), ctx.test, head);
        const auto rep = calibration_report(records, cfg.bins);
        write_predictions(dir / "predictions.jsonl", records);
        write_report_csv(dir / "report.csv", rep);
        write_text(dir / "reliability.svg",
                   reliability_svg(rep, fmt::format("{} / {} / seed {}", to_string(head), method, seed)));
        fmt::print("seed {} {} {}: acc {:.4f} ece {:.4f}\n", seed, to_string(head), method, rep.accuracy, rep.ece);
      }
  }
}

// Recomputes every report from the prediction logs alone.
void cmd_report(const ExperimentConfig& cfg) {
  const Alphabet alphabet = Alphabet::standard(cfg.task.alphabet_size);
  std::vector<CellResult> cells;
  for (auto seed : cfg.seeds) {
    const auto lm_path = seed_dir(cfg, seed) / "lm.txt";
    for (Head head : cfg.heads)
      for (const auto& method : cfg.methods) {
        if (!method_supported(method, head)) continue;
        const auto dir = cell_dir(cfg, seed, head, method);
        require(dir / "predictions.jsonl", "eval");
        CellResult c;
        c.seed = seed;
        c.head = head;
        c.method = method;
        c.records = read_predictions(dir / "predictions.jsonl");
        c.report = calibration_report(c.records, cfg.bins);
        write_report_csv(dir / "report.csv", c.report);
        write_text(dir / "reliability.svg",
                   reliability_svg(c.report, fmt::format("{} / {} / seed {}", to_string(head), method, seed)));
        if (fs::exists(lm_path)) write_diagnostics(dir, diagnose(c, load_lm(lm_path), alphabet), alphabet);
        cells.push_back(std::move(c));
      }
  }
  const auto rows = summarize(cells);
  write_summary_csv(cfg.out / "summary.csv", rows);
  for (const auto& r : rows)
    fmt::print("{:4} {:6} acc {:.4f}±{:.4f} ece {:.4f}±{:.4f} ace {:.4f}±{:.4f} mce {:.4f}±{:.4f}\n",
               to_string(r.head), r.method, r.acc_mean, r.acc_std, r.ece_mean, r.ece_std, r.ace_mean, r.ace_std,
               r.mce_mean, r.mce_std);
}

void print_summary(const std::vector<SummaryRow>& rows) {
  for (const auto& r : rows)
    fmt::print("{:4} {:6} acc {:.4f}±{:.4f} ece {:.4f}±{:.4f}\n", to_string(r.head), r.method, r.acc_mean, r.acc_std,
               r.ece_mean, r.ece_std);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-level calibration experiments on a synthetic recognition task"};
  app.require_subcommand(1);
  Options opts;
  auto add_common = [&opts](CLI::App* sub) {
    sub->add_option("--config", opts.config, "YAML experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seeds, "run seed (repeatable)");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--method", opts.methods, "nll, ls, focal, er, brier or pssr (repeatable)");
    sub->add_option("--head", opts.head, "ctc or ar")->check(CLI::IsMember({"ctc", "ar"}));
    return sub;
  };

  std::map<std::string, std::function<void(const ExperimentConfig&)>> commands{
      {"synth", cmd_synth},
      {"train-ref", cmd_train_ref},
      {"mine", cmd_mine},
      {"train", cmd_train},
      {"eval", cmd_eval},
      {"report", cmd_report},
      {"pipeline",
       [](const ExperimentConfig& cfg) { print_summary(run_pipeline(cfg).summary); }},
      {"study-hardness",
       [](const ExperimentConfig& cfg) {
         for (const auto& r : run_hardness_study(cfg))
           fmt::print("ratio {:.2f} {:4} {:6} median ece {:.4f}\n", r.ratio, to_string(r.head), r.method, r.median_ece);
       }},
      {"study-shift",
       [](const ExperimentConfig& cfg) {
         const auto trained = run_pipeline(cfg);
         for (const auto& r : run_shift_study(cfg, trained))
           fmt::print("{:8} {:.2f} {:4} {:6} median ece {:.4f}\n", to_string(r.kind), r.severity, to_string(r.head),
                      r.method, r.median_ece);
       }},
      {"study-ablation",
       [](const ExperimentConfig& cfg) {
         const auto res = run_proportion_ablation(cfg);
         for (const auto& r : res.rows)
           fmt::print("rho {:.2f} {:4} median ece {:.4f}\n", r.rho, to_string(r.head), r.median_ece);
         for (const auto& [head, rho] : res.best_rho) fmt::print("best rho for {}: {}\n", to_string(head), rho);
       }},
      {"active-learn",
       [](const ExperimentConfig& cfg) {
         for (const auto& c : run_active_learning(cfg))
           for (const auto& p : c.points)
             fmt::print("{:22} seed {} round {} labeled {:.3f} acc {:.4f}\n", c.strategy, c.seed, p.round,
                        p.labeled_fraction, p.accuracy);
       }},
  };
  const std::map<std::string, std::string> help{
      {"synth", "generate train/val/test splits per seed"},
      {"train-ref", "train the reference CTC model and fit the language model"},
      {"mine", "mine similar-sequence sets for PSSR"},
      {"train", "train the configured (head, method) cells"},
      {"eval", "evaluate trained cells on the test split"},
      {"report", "recompute reports and the summary from prediction logs"},
      {"pipeline", "run every step end to end"},
      {"study-hardness", "uncalibrated and PSSR ECE across hardness ratios"},
      {"study-shift", "calibration under feature corruptions"},
      {"study-ablation", "PSSR with varying perception proportion"},
      {"active-learn", "pool-based active learning curves"},
  };
  for (const auto& [name, text] : help) add_common(app.add_subcommand(name, text));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    const ExperimentConfig cfg = resolve(opts);
    for (auto* sub : app.get_subcommands()) commands.at(sub->get_name())(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
