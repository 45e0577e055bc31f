#include "seqcal/experiments.hpp"

#include "seqcal/io.hpp"

#include <set>
#include <stdexcept>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace seqcal {

namespace {

// Rejects keys we do not know about so typos surface instead of silently keeping a default.
void check_keys(const YAML::Node& node, const std::string& section, std::initializer_list<std::string_view> known) {
  if (!node) return;
  if (!node.IsMap()) throw std::invalid_argument(fmt::format("config section '{}' must be a mapping", section));
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument(fmt::format("unknown config key '{}{}'", section.empty() ? "" : section + ".", key));
  }
}

template <class T>
void get(const YAML::Node& node, const char* key, T& dst) {
  if (node && node[key]) dst = node[key].as<T>();
}

template <class T, class Parse>
void get_list(const YAML::Node& node, const char* key, std::vector<T>& dst, Parse parse) {
  if (!(node && node[key])) return;
  dst.clear();
  for (const auto& item : node[key]) dst.push_back(parse(item.as<std::string>()));
}

std::vector<LabelSequence> parse_lexicon_words(const YAML::Node& n, std::vector<double>& weights) {
  std::vector<LabelSequence> out;
  for (const auto& e : n) {
    out.emplace_back(e["seq"].as<std::vector<int>>());
    weights.push_back(e["weight"].as<double>());
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  const YAML::Node root = YAML::Load(text);
  ExperimentConfig cfg;
  if (!root || root.IsNull()) return cfg;
  check_keys(root, "", {"task", "data", "train", "reference", "pssr", "baselines", "lm", "metrics", "shift", "hardness",
                        "ablation", "active", "methods", "heads", "seeds", "output"});

  const auto task = root["task"];
  check_keys(task, "task", {"alphabet_size", "feature_dim", "prototype_separation", "confusable_pairs", "lexicon",
                            "frames_per_token", "base_noise", "hard_noise", "hardness_ratio"});
  if (task) {
    auto& t = cfg.task;
    get(task, "alphabet_size", t.alphabet_size);
    get(task, "feature_dim", t.feature_dim);
    get(task, "prototype_separation", t.prototype_separation);
    if (task["confusable_pairs"]) {
      t.confusable_pairs.clear();
      for (const auto& p : task["confusable_pairs"])
        t.confusable_pairs.push_back({p[0].as<int>(), p[1].as<int>(), p[2].as<double>()});
    }
    if (const auto lex = task["lexicon"]) {
      check_keys(lex, "task.lexicon", {"size", "min_length", "max_length", "zipf_exponent", "seed", "words"});
      if (lex["words"]) {
        std::vector<double> w;
        const auto words = parse_lexicon_words(lex["words"], w);
        t.lexicon.clear();
        for (std::size_t i = 0; i < words.size(); ++i) t.lexicon.push_back({words[i], w[i]});
      } else {
        int size = 50, lo = 3, hi = 6;
        double zipf = 1.0;
        std::uint64_t seed = 2024;
        get(lex, "size", size);
        get(lex, "min_length", lo);
        get(lex, "max_length", hi);
        get(lex, "zipf_exponent", zipf);
        get(lex, "seed", seed);
        t.lexicon = random_lexicon(t.alphabet_size, size, lo, hi, zipf, seed);
      }
    }
    if (task["frames_per_token"]) {
      t.min_frames_per_token = task["frames_per_token"][0].as<int>();
      t.max_frames_per_token = task["frames_per_token"][1].as<int>();
    }
    get(task, "base_noise", t.base_noise);
    get(task, "hard_noise", t.hard_noise);
    get(task, "hardness_ratio", t.hardness_ratio);
  }
  cfg.train.shape.input_dim = cfg.task.feature_dim;
  cfg.train.shape.vocab = cfg.task.alphabet_size;

  const auto data = root["data"];
  check_keys(data, "data", {"train", "val", "test"});
  get(data, "train", cfg.n_train);
  get(data, "val", cfg.n_val);
  get(data, "test", cfg.n_test);

  const auto tr = root["train"];
  check_keys(tr, "train", {"epochs", "batch_size", "learning_rate", "momentum", "clip_norm", "hidden", "embed"});
  get(tr, "epochs", cfg.train.epochs);
  get(tr, "batch_size", cfg.train.batch_size);
  get(tr, "learning_rate", cfg.train.learning_rate);
  get(tr, "momentum", cfg.train.momentum);
  get(tr, "clip_norm", cfg.train.clip_norm);
  get(tr, "hidden", cfg.train.shape.hidden);
  get(tr, "embed", cfg.train.shape.embed);

  const auto ref = root["reference"];
  check_keys(ref, "reference", {"epochs"});
  get(ref, "epochs", cfg.reference_epochs);

  const auto ps = root["pssr"];
  check_keys(ps, "pssr", {"alpha", "eps_easy", "eps_hard", "total", "rho_ctc", "rho_ar", "normalize", "beam_width",
                          "remine_each_epoch"});
  get(ps, "alpha", cfg.pssr.alpha);
  get(ps, "eps_easy", cfg.pssr.eps_easy);
  get(ps, "eps_hard", cfg.pssr.eps_hard);
  get(ps, "total", cfg.pssr.total);
  get(ps, "rho_ctc", cfg.rho_ctc);
  get(ps, "rho_ar", cfg.rho_ar);
  get(ps, "normalize", cfg.pssr.normalize);
  get(ps, "beam_width", cfg.beam_width);
  get(ps, "remine_each_epoch", cfg.remine_each_epoch);

  const auto bl = root["baselines"];
  check_keys(bl, "baselines", {"ls_epsilon", "focal_gamma", "er_beta"});
  get(bl, "ls_epsilon", cfg.hyper.ls_epsilon);
  get(bl, "focal_gamma", cfg.hyper.focal_gamma);
  get(bl, "er_beta", cfg.hyper.er_beta);

  const auto lm = root["lm"];
  check_keys(lm, "lm", {"smoothing"});
  get(lm, "smoothing", cfg.lm_smoothing);

  const auto met = root["metrics"];
  check_keys(met, "metrics", {"bins"});
  get(met, "bins", cfg.bins);

  const auto sh = root["shift"];
  check_keys(sh, "shift", {"kinds", "severities"});
  get_list(sh, "kinds", cfg.shift_kinds, [](const std::string& s) { return parse_corruption(s); });
  get(sh, "severities", cfg.shift_severities);

  const auto hd = root["hardness"];
  check_keys(hd, "hardness", {"ratios", "methods"});
  get(hd, "ratios", cfg.hardness_ratios);
  get(hd, "methods", cfg.hardness_methods);

  const auto ab = root["ablation"];
  check_keys(ab, "ablation", {"rhos"});
  get(ab, "rhos", cfg.ablation_rhos);

  const auto al = root["active"];
  check_keys(al, "active", {"init_fraction", "query_fraction", "rounds", "head", "strategies", "seeds"});
  get(al, "init_fraction", cfg.active_init_fraction);
  get(al, "query_fraction", cfg.active_query_fraction);
  get(al, "rounds", cfg.active_rounds);
  if (al && al["head"]) cfg.active_head = parse_head(al["head"].as<std::string>());
  get(al, "strategies", cfg.active_strategies);
  get(al, "seeds", cfg.active_seeds);

  get(root, "methods", cfg.methods);
  get_list(root, "heads", cfg.heads, [](const std::string& s) { return parse_head(s); });
  get(root, "seeds", cfg.seeds);
  if (root["output"]) cfg.out = root["output"].as<std::string>();

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  try {
    return parse_config(read_text(path));
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string dump_config(const ExperimentConfig& cfg) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "alphabet_size" << YAML::Value << cfg.task.alphabet_size;
  e << YAML::Key << "feature_dim" << YAML::Value << cfg.task.feature_dim;
  e << YAML::Key << "prototype_separation" << YAML::Value << cfg.task.prototype_separation;
  e << YAML::Key << "confusable_pairs" << YAML::Value << YAML::BeginSeq;
  for (const auto& p : cfg.task.confusable_pairs)
    e << YAML::Flow << YAML::BeginSeq << p.a << p.b << p.similarity << YAML::EndSeq;
  e << YAML::EndSeq;
  e << YAML::Key << "lexicon" << YAML::Value << YAML::BeginMap << YAML::Key << "words" << YAML::Value << YAML::BeginSeq;
  for (const auto& w : cfg.task.lexicon)
    e << YAML::Flow << YAML::BeginMap << YAML::Key << "seq" << YAML::Value << YAML::Flow << w.seq.ids << YAML::Key
      << "weight" << YAML::Value << w.weight << YAML::EndMap;
  e << YAML::EndSeq << YAML::EndMap;
  e << YAML::Key << "frames_per_token" << YAML::Value << YAML::Flow << YAML::BeginSeq << cfg.task.min_frames_per_token
    << cfg.task.max_frames_per_token << YAML::EndSeq;
  e << YAML::Key << "base_noise" << YAML::Value << cfg.task.base_noise;
  e << YAML::Key << "hard_noise" << YAML::Value << cfg.task.hard_noise;
  e << YAML::Key << "hardness_ratio" << YAML::Value << cfg.task.hardness_ratio;
  e << YAML::EndMap;

  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap << YAML::Key << "train" << YAML::Value << cfg.n_train
    << YAML::Key << "val" << YAML::Value << cfg.n_val << YAML::Key << "test" << YAML::Value << cfg.n_test
    << YAML::EndMap;

  const auto& t = cfg.train;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap << YAML::Key << "epochs" << YAML::Value << t.epochs
    << YAML::Key << "batch_size" << YAML::Value << t.batch_size << YAML::Key << "learning_rate" << YAML::Value
    << t.learning_rate << YAML::Key << "momentum" << YAML::Value << t.momentum << YAML::Key << "clip_norm"
    << YAML::Value << t.clip_norm << YAML::Key << "hidden" << YAML::Value << t.shape.hidden << YAML::Key << "embed"
    << YAML::Value << t.shape.embed << YAML::EndMap;
  e << YAML::Key << "reference" << YAML::Value << YAML::BeginMap << YAML::Key << "epochs" << YAML::Value
    << cfg.reference_epochs << YAML::EndMap;

  const auto& p = cfg.pssr;
  e << YAML::Key << "pssr" << YAML::Value << YAML::BeginMap << YAML::Key << "alpha" << YAML::Value << p.alpha
    << YAML::Key << "eps_easy" << YAML::Value << p.eps_easy << YAML::Key << "eps_hard" << YAML::Value << p.eps_hard
    << YAML::Key << "total" << YAML::Value << p.total << YAML::Key << "rho_ctc" << YAML::Value << cfg.rho_ctc
    << YAML::Key << "rho_ar" << YAML::Value << cfg.rho_ar << YAML::Key << "normalize" << YAML::Value << p.normalize
    << YAML::Key << "beam_width" << YAML::Value << cfg.beam_width << YAML::Key << "remine_each_epoch" << YAML::Value
    << cfg.remine_each_epoch << YAML::EndMap;
  e << YAML::Key << "baselines" << YAML::Value << YAML::BeginMap << YAML::Key << "ls_epsilon" << YAML::Value
    << cfg.hyper.ls_epsilon << YAML::Key << "focal_gamma" << YAML::Value << cfg.hyper.focal_gamma << YAML::Key
    << "er_beta" << YAML::Value << cfg.hyper.er_beta << YAML::EndMap;
  e << YAML::Key << "lm" << YAML::Value << YAML::BeginMap << YAML::Key << "smoothing" << YAML::Value
    << cfg.lm_smoothing << YAML::EndMap;
  e << YAML::Key << "metrics" << YAML::Value << YAML::BeginMap << YAML::Key << "bins" << YAML::Value << cfg.bins
    << YAML::EndMap;

  std::vector<std::string> kinds;
  for (auto k : cfg.shift_kinds) kinds.emplace_back(to_string(k));
  e << YAML::Key << "shift" << YAML::Value << YAML::BeginMap << YAML::Key << "kinds" << YAML::Value << YAML::Flow
    << kinds << YAML::Key << "severities" << YAML::Value << YAML::Flow << cfg.shift_severities << YAML::EndMap;
  e << YAML::Key << "hardness" << YAML::Value << YAML::BeginMap << YAML::Key << "ratios" << YAML::Value << YAML::Flow
    << cfg.hardness_ratios << YAML::Key << "methods" << YAML::Value << YAML::Flow << cfg.hardness_methods
    << YAML::EndMap;
  e << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap << YAML::Key << "rhos" << YAML::Value << YAML::Flow
    << cfg.ablation_rhos << YAML::EndMap;
  e << YAML::Key << "active" << YAML::Value << YAML::BeginMap << YAML::Key << "init_fraction" << YAML::Value
    << cfg.active_init_fraction << YAML::Key << "query_fraction" << YAML::Value << cfg.active_query_fraction
    << YAML::Key << "rounds" << YAML::Value << cfg.active_rounds << YAML::Key << "head" << YAML::Value
    << std::string(to_string(cfg.active_head)) << YAML::Key << "strategies" << YAML::Value << YAML::Flow
    << cfg.active_strategies << YAML::Key << "seeds" << YAML::Value << YAML::Flow << cfg.active_seeds << YAML::EndMap;

  std::vector<std::string> heads;
  for (auto h : cfg.heads) heads.emplace_back(to_string(h));
  e << YAML::Key << "methods" << YAML::Value << YAML::Flow << cfg.methods;
  e << YAML::Key << "heads" << YAML::Value << YAML::Flow << heads;
  e << YAML::Key << "seeds" << YAML::Value << YAML::Flow << cfg.seeds;
  e << YAML::Key << "output" << YAML::Value << cfg.out.string();
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace seqcal
