#include <doctest.h>

#include "seqcal/experiments.hpp"
#include "seqcal/io.hpp"

#include <random>

using namespace seqcal;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "seqcal_test_io";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("datasets survive a write and read") {
  auto spec = default_task_spec(8);
  spec.hardness_ratio = 0.5;
  const auto d = synth_dataset(spec, 40, Split::val);
  const auto path = scratch("data.jsonl");
  write_dataset(path, d);
  const auto back = read_dataset(path);
  CHECK(back.split == Split::val);
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.samples[i].id == d.samples[i].id);
    CHECK(back.samples[i].y == d.samples[i].y);
    CHECK(back.samples[i].hardness == d.samples[i].hardness);
    CHECK(back.samples[i].x.frames == d.samples[i].x.frames);
  }
  CHECK(back.spec.lexicon.size() == spec.lexicon.size());
  CHECK(back.spec.hard_noise == spec.hard_noise);

  write_text(path, "");
  CHECK_THROWS(read_dataset(path));
  CHECK_THROWS(read_dataset(scratch("missing.jsonl")));
}

TEST_CASE("mined sets keep impossible candidates") {
  MinedCache cache;
  SimilarSet s;
  s.sample_id = 3;
  s.perception = {{{1, 2}, -0.25}, {{}, kNegInf}};
  s.semantic = {{{2, 2, 1}, -3.5}};
  cache.emplace(3, s);
  const auto path = scratch("mined.jsonl");
  write_mined_cache(path, cache);
  const auto back = read_mined_cache(path);
  REQUIRE(back.size() == 1);
  const auto& b = back.at(3);
  REQUIRE(b.perception.size() == 2);
  CHECK(b.perception[0].seq == LabelSequence{1, 2});
  CHECK(b.perception[0].log_prob == -0.25);
  CHECK(b.perception[1].log_prob == kNegInf);
  CHECK(b.semantic[0].seq == LabelSequence{2, 2, 1});
}

TEST_CASE("prediction logs reproduce the metrics") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 50; ++i) {
    const double c = u(rng);
    recs.push_back(make_record(i, {1, 2}, c > 0.5 ? LabelSequence{1, 2} : LabelSequence{1, 3}, c, 0.3, {0.9, c}));
  }
  const auto path = scratch("pred.jsonl");
  write_predictions(path, recs);
  const auto back = read_predictions(path);
  const auto a = calibration_report(recs), b = calibration_report(back);
  CHECK(a.ece == b.ece);
  CHECK(a.ace == b.ace);
  CHECK(a.mce == b.mce);
  CHECK(back[7].token_probs == recs[7].token_probs);

  write_text(path, R"({"id":0,"target":[1],"decoded":[2],"confidence":0.5,"correct":true})");
  CHECK_THROWS(read_predictions(path));
}

TEST_CASE("reliability diagram lists every non-empty bin") {
  const std::vector<PredictionRecord> recs{make_record(0, {1}, {1}, 0.95), make_record(1, {1}, {2}, 0.15)};
  const auto r = calibration_report(recs, 10);
  const auto svg = reliability_svg(r, "demo");
  CHECK(svg.starts_with("<svg"));
  CHECK(svg.find("demo") != std::string::npos);
}

TEST_CASE("config parsing") {
  const auto cfg = parse_config(R"(
task:
  alphabet_size: 6
  feature_dim: 5
  confusable_pairs: [[0, 1, 0.7]]
  lexicon: {size: 10, min_length: 2, max_length: 3}
train: {epochs: 4, hidden: 16}
pssr: {alpha: 0.25, rho_ctc: 0.8}
methods: [nll, pssr]
heads: [ar]
seeds: [7]
)");
  CHECK(cfg.task.alphabet_size == 6);
  CHECK(cfg.task.lexicon.size() == 10);
  CHECK(cfg.train.shape.input_dim == 5);
  CHECK(cfg.train.shape.vocab == 6);
  CHECK(cfg.train.epochs == 4);
  CHECK(cfg.pssr.alpha == 0.25);
  CHECK(cfg.pssr_for(Head::ctc).perception_fraction == 0.8);
  CHECK(cfg.heads == std::vector<Head>{Head::ar});

  const auto again = parse_config(dump_config(cfg));
  CHECK(dump_config(again) == dump_config(cfg));

  CHECK_THROWS_AS(parse_config("train: {epochz: 3}"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("colour: red"), std::invalid_argument);
  CHECK_THROWS(parse_config("methods: [nll, magic]"));
}

TEST_CASE("the shipped config spells out the built-in defaults") {
  auto expected = ExperimentConfig{};
  expected.out = "runs";
  CHECK(dump_config(load_config(fs::path(SEQCAL_SOURCE_DIR) / "configs" / "default.yaml")) == dump_config(expected));
}
