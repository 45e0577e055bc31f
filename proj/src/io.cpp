#include "seqcal/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

namespace seqcal {

using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  return is;
}

template <class Fn>
void for_each_line(const fs::path& path, Fn&& fn) {
  auto is = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
}

json spec_to_json(const TaskSpec& s) {
  json pairs = json::array();
  for (const auto& p : s.confusable_pairs) pairs.push_back({p.a, p.b, p.similarity});
  json lex = json::array();
  for (const auto& e : s.lexicon) lex.push_back({{"seq", e.seq.ids}, {"weight", e.weight}});
  return {{"alphabet_size", s.alphabet_size},
          {"feature_dim", s.feature_dim},
          {"prototype_separation", s.prototype_separation},
          {"confusable_pairs", pairs},
          {"lexicon", lex},
          {"frames_per_token", {s.min_frames_per_token, s.max_frames_per_token}},
          {"base_noise", s.base_noise},
          {"hard_noise", s.hard_noise},
          {"hardness_ratio", s.hardness_ratio},
          {"seed", s.seed}};
}

TaskSpec spec_from_json(const json& j) {
  TaskSpec s;
  s.alphabet_size = j.at("alphabet_size");
  s.feature_dim = j.at("feature_dim");
  s.prototype_separation = j.at("prototype_separation");
  for (const auto& p : j.at("confusable_pairs")) s.confusable_pairs.push_back({p.at(0), p.at(1), p.at(2)});
  for (const auto& e : j.at("lexicon"))
    s.lexicon.push_back({LabelSequence(e.at("seq").get<std::vector<int>>()), e.at("weight")});
  s.min_frames_per_token = j.at("frames_per_token").at(0);
  s.max_frames_per_token = j.at("frames_per_token").at(1);
  s.base_noise = j.at("base_noise");
  s.hard_noise = j.at("hard_noise");
  s.hardness_ratio = j.at("hardness_ratio");
  s.seed = j.at("seed");
  s.validate();
  return s;
}

// JSON has no infinities; an impossible candidate is stored as null.
json log_prob_to_json(double lp) { return std::isfinite(lp) ? json(lp) : json(nullptr); }
double log_prob_from_json(const json& j) { return j.is_null() ? kNegInf : j.get<double>(); }

json scored_to_json(const std::vector<ScoredSequence>& v) {
  json out = json::array();
  for (const auto& c : v) out.push_back({{"seq", c.seq.ids}, {"log_prob", log_prob_to_json(c.log_prob)}});
  return out;
}

std::vector<ScoredSequence> scored_from_json(const json& j) {
  std::vector<ScoredSequence> out;
  for (const auto& c : j)
    out.push_back({LabelSequence(c.at("seq").get<std::vector<int>>()), log_prob_from_json(c.at("log_prob"))});
  return out;
}

}  // namespace

void write_dataset(const fs::path& path, const Dataset& d) {
  auto os = open_out(path);
  os << json{{"split", to_string(d.split)}, {"count", d.size()}, {"spec", spec_to_json(d.spec)}}.dump() << '\n';
  for (const auto& s : d.samples) {
    const auto T = s.x.length(), D = s.x.dim();
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(T * D));
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index k = 0; k < D; ++k) flat.push_back(s.x.frames(t, k));
    os << json{{"id", s.id}, {"y", s.y.ids}, {"T", T}, {"D", D}, {"frames", flat}, {"hardness", s.hardness}}.dump()
       << '\n';
  }
}

Dataset read_dataset(const fs::path& path) {
  Dataset d;
  bool header = true;
  for_each_line(path, [&](const json& j) {
    if (header) {
      d.split = parse_split(j.at("split").get<std::string>());
      d.spec = spec_from_json(j.at("spec"));
      header = false;
      return;
    }
    Sample s;
    s.id = j.at("id");
    s.y = LabelSequence(j.at("y").get<std::vector<int>>());
    const Eigen::Index T = j.at("T"), D = j.at("D");
    const auto flat = j.at("frames").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != T * D) throw std::runtime_error("frame count does not match T x D");
    s.x.frames.resize(T, D);
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index k = 0; k < D; ++k) s.x.frames(t, k) = flat[static_cast<std::size_t>(t * D + k)];
    s.hardness = j.at("hardness");
    d.samples.push_back(std::move(s));
  });
  if (header) throw std::runtime_error(fmt::format("{} has no header line", path.string()));
  return d;
}

void write_mined_cache(const fs::path& path, const MinedCache& cache) {
  auto os = open_out(path);
  for (const auto& [id, s] : cache)
    os << json{{"id", id}, {"perception", scored_to_json(s.perception)}, {"semantic", scored_to_json(s.semantic)}}
              .dump()
       << '\n';
}

MinedCache read_mined_cache(const fs::path& path) {
  MinedCache cache;
  for_each_line(path, [&](const json& j) {
    SimilarSet s;
    s.sample_id = j.at("id");
    s.perception = scored_from_json(j.at("perception"));
    s.semantic = scored_from_json(j.at("semantic"));
    cache.emplace(s.sample_id, std::move(s));
  });
  return cache;
}

void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& records) {
  auto os = open_out(path);
  for (const auto& r : records)
    os << json{{"id", r.id},
               {"target", r.target.ids},
               {"decoded", r.decoded.ids},
               {"confidence", r.confidence},
               {"correct", r.correct},
               {"hardness", r.hardness},
               {"token_probs", r.token_probs}}
              .dump()
       << '\n';
}

std::vector<PredictionRecord> read_predictions(const fs::path& path) {
  std::vector<PredictionRecord> out;
  for_each_line(path, [&](const json& j) {
    PredictionRecord r;
    r.id = j.at("id");
    r.target = LabelSequence(j.at("target").get<std::vector<int>>());
    r.decoded = LabelSequence(j.at("decoded").get<std::vector<int>>());
    r.confidence = j.at("confidence");
    r.correct = j.at("correct");
    if (r.correct != (r.target == r.decoded)) throw std::runtime_error("record correctness disagrees with its labels");
    r.hardness = j.value("hardness", 0.0);
    if (j.contains("token_probs")) r.token_probs = j.at("token_probs").get<std::vector<double>>();
    out.push_back(std::move(r));
  });
  return out;
}

void save_model(const fs::path& path, const Recognizer& model) {
  auto os = open_out(path);
  model.save(os);
}

Recognizer load_model(const fs::path& path) {
  auto is = open_in(path);
  return Recognizer::load(is);
}

void save_lm(const fs::path& path, const BiContextLM& lm) {
  auto os = open_out(path);
  lm.save(os);
}

BiContextLM load_lm(const fs::path& path) {
  auto is = open_in(path);
  return BiContextLM::load(is);
}

void write_train_log(const fs::path& path, const std::vector<EpochLog>& log) {
  auto os = open_out(path);
  os << "epoch,train_loss,val_accuracy,val_ece\n";
  for (const auto& e : log) os << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", e.epoch, e.train_loss, e.val_accuracy, e.val_ece);
}

void write_report_csv(const fs::path& path, const CalibrationReport& r) {
  auto os = open_out(path);
  os << "count,accuracy,ece,ace,mce\n";
  os << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n\n", r.count, r.accuracy, r.ece, r.ace, r.mce);
  os << "bin,lower,upper,count,mean_confidence,accuracy\n";
  for (std::size_t i = 0; i < r.bins.size(); ++i) {
    const auto& b = r.bins[i];
    os << fmt::format("{},{:.17g},{:.17g},{},{:.17g},{:.17g}\n", i, b.lower, b.upper, b.count, b.mean_confidence,
                      b.accuracy);
  }
}

std::string reliability_svg(const CalibrationReport& r, const std::string& title) {
  constexpr double size = 400, margin = 50;
  auto px = [&](double v) { return margin + v * size; };
  auto py = [&](double v) { return margin + (1.0 - v) * size; };
  std::ostringstream os;
  os << fmt::format(R"svg(<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" font-family="sans-serif">)svg",
                    size + 2 * margin)
     << '\n';
  os << fmt::format(R"svg(<text x="{}" y="25" text-anchor="middle" font-size="14">{}</text>)svg", margin + size / 2, title)
     << '\n';
  os << fmt::format(R"svg(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>)svg", margin, margin, size,
                    size)
     << '\n';
  for (const auto& b : r.bins) {
    if (b.count == 0) continue;
    const double w = std::max(b.upper - b.lower, 0.005);
    os << fmt::format(R"svg(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="steelblue" stroke="white"/>)svg",
                      px(b.lower), py(b.accuracy), w * size, b.accuracy * size)
       << '\n';
    os << fmt::format(R"svg(<circle cx="{:.2f}" cy="{:.2f}" r="3" fill="crimson"/>)svg", px(b.mean_confidence),
                      py(b.accuracy))
       << '\n';
  }
  os << fmt::format(R"svg(<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>)svg", px(0), py(0),
                    px(1), py(1))
     << '\n';
  os << fmt::format(R"svg(<text x="{}" y="{}" text-anchor="middle" font-size="12">confidence</text>)svg", margin + size / 2,
                    size + margin + 30)
     << '\n';
  os << fmt::format(R"svg(<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">accuracy</text>)svg",
                    margin + size / 2, margin + size / 2)
     << '\n';
  os << fmt::format(R"svg(<text x="{}" y="{}" font-size="12">ECE {:.4f}  ACE {:.4f}  MCE {:.4f}  Acc {:.4f}</text>)svg",
                    margin + 10, margin + 20, r.ece, r.ace, r.mce, r.accuracy)
     << '\n';
  os << "</svg>\n";
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
}

std::string read_text(const fs::path& path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace seqcal
