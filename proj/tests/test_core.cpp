#include <doctest.h>

#include "seqcal/core.hpp"

#include <cmath>
#include <set>

using namespace seqcal;

namespace {

bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &x = a.samples[i], &y = b.samples[i];
    if (x.id != y.id || x.y != y.y || x.hardness != y.hardness || x.x.frames != y.x.frames) return false;
  }
  return true;
}

double per_dim_variance_sum(const Eigen::MatrixXd& m) {
  const Eigen::RowVectorXd mean = m.colwise().mean();
  return (m.rowwise() - mean).array().square().colwise().sum().sum();
}

}  // namespace

TEST_CASE("alphabet invariants") {
  const auto a = Alphabet::standard(12);
  CHECK(a.size() == 12);
  CHECK(a.blank_id() == 12);
  CHECK_THROWS_AS(Alphabet({"a"}), std::invalid_argument);
  CHECK_THROWS_AS(Alphabet({"a", "a"}), std::invalid_argument);
  CHECK(to_string(LabelSequence{0, 2}, a) == "ac");
  CHECK_THROWS(validate_labels({12}, 12));
}

TEST_CASE("minimum CTC frames counts the blanks between repeats") {
  CHECK(min_ctc_frames({}) == 0);
  CHECK(min_ctc_frames({1, 2}) == 2);
  CHECK(min_ctc_frames({1, 1, 1}) == 5);
}

TEST_CASE("task validation") {
  auto spec = default_task_spec();
  CHECK_NOTHROW(spec.validate());
  auto bad = spec;
  bad.lexicon.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.alphabet_size = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.hardness_ratio = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.confusable_pairs.push_back({0, 40, 0.5});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("confusable prototypes are the closest pairs") {
  const auto spec = default_task_spec();
  const auto p = token_prototypes(spec);
  double far_min = 1e9, near_max = 0;
  for (int a = 0; a < spec.alphabet_size; ++a)
    for (int b = a + 1; b < spec.alphabet_size; ++b) {
      bool confusable = false;
      for (const auto& c : spec.confusable_pairs) confusable |= (c.a == a && c.b == b) || (c.a == b && c.b == a);
      const double d = (p.row(a) - p.row(b)).norm();
      if (confusable)
        near_max = std::max(near_max, d);
      else
        far_min = std::min(far_min, d);
    }
  CHECK(near_max < far_min);
}

TEST_CASE("generation is deterministic and respects the hardness ratio") {
  auto spec = default_task_spec(5);
  CHECK(same_dataset(synth_dataset(spec, 50, Split::train), synth_dataset(spec, 50, Split::train)));
  CHECK_FALSE(same_dataset(synth_dataset(spec, 50, Split::train), synth_dataset(spec, 50, Split::test)));

  spec.hardness_ratio = 0;
  for (const auto& s : synth_dataset(spec, 100, Split::train).samples) CHECK(s.hardness == spec.base_noise);

  spec.hardness_ratio = 0.4;
  const auto d = synth_dataset(spec, 1000, Split::train);
  std::size_t hard = 0;
  for (const auto& s : d.samples) hard += s.hardness == spec.hard_noise;
  const double frac = static_cast<double>(hard) / 1000.0;
  CHECK(frac >= 0.37);
  CHECK(frac <= 0.43);
}

TEST_CASE("samples follow the lexicon and frame budget") {
  const auto spec = default_task_spec(1);
  const auto d = synth_dataset(spec, 200, Split::val);
  std::set<LabelSequence> words;
  for (const auto& e : spec.lexicon) words.insert(e.seq);
  std::set<int> ids;
  for (const auto& s : d.samples) {
    CHECK(words.contains(s.y));
    CHECK(ids.insert(s.id).second);
    CHECK(s.x.dim() == spec.feature_dim);
    CHECK(static_cast<std::size_t>(s.x.length()) >= min_ctc_frames(s.y));
    CHECK(static_cast<std::size_t>(s.x.length()) <= 3 * s.y.size() + s.y.size());
    CHECK_NOTHROW(validate_features(s.x));
  }
}

TEST_CASE("frequent lexicon words dominate the labels") {
  const auto spec = default_task_spec(2);
  const auto d = synth_dataset(spec, 2000, Split::train);
  std::size_t first = 0, last = 0;
  for (const auto& s : d.samples) {
    first += s.y == spec.lexicon.front().seq;
    last += s.y == spec.lexicon.back().seq;
  }
  CHECK(first > 5 * last);
}

TEST_CASE("split partitions the ids") {
  const auto d = synth_dataset(default_task_spec(), 10, Split::train);
  const std::vector<double> half{0.5, 0.5};
  const auto parts = split_dataset(d, half);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].size() == 5);
  CHECK(parts[1].size() == 5);
  std::set<int> ids;
  for (const auto& p : parts)
    for (const auto& s : p.samples) CHECK(ids.insert(s.id).second);
  CHECK(ids.size() == 10);
  const std::vector<double> whole{1.0};
  CHECK(same_dataset(split_dataset(d, whole)[0], d));
  const std::vector<double> bad{0.7, 0.7};
  CHECK_THROWS_AS(split_dataset(d, bad), std::invalid_argument);
  const std::vector<double> zero{0.0, 1.0};
  CHECK_THROWS_AS(split_dataset(d, zero), std::invalid_argument);
}

TEST_CASE("corruptions") {
  const auto d = synth_dataset(default_task_spec(3), 30, Split::test);
  for (auto kind : {CorruptionKind::noise, CorruptionKind::blur, CorruptionKind::spatter, CorruptionKind::saturate})
    for (const auto& s : d.samples) {
      CHECK(corrupt(s.x, kind, 0.0, 1).frames == s.x.frames);
      const auto c = corrupt(s.x, kind, 0.7, 1);
      CHECK(c.frames.rows() == s.x.frames.rows());
      CHECK(c.frames.cols() == s.x.frames.cols());
    }
  CHECK_THROWS_AS(parse_corruption("fog"), std::invalid_argument);
  CHECK_THROWS_AS(corrupt(d.samples[0].x, CorruptionKind::noise, -1.0, 1), std::invalid_argument);
}

TEST_CASE("blur never increases per-dimension variance") {
  const auto d = synth_dataset(default_task_spec(4), 40, Split::test);
  for (double sev : {0.1, 0.5, 1.0, 3.0})
    for (const auto& s : d.samples) {
      const auto b = corrupt(s.x, CorruptionKind::blur, sev, 9);
      for (Eigen::Index k = 0; k < s.x.dim(); ++k) {
        const double before = per_dim_variance_sum(s.x.frames.col(k));
        const double after = per_dim_variance_sum(b.frames.col(k));
        CHECK(after <= before + 1e-12);
      }
    }
}

TEST_CASE("spatter zeroes about min(s, 1) of the frames") {
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(200, 3);
  const FeatureSequence x(ones);
  for (double sev : {0.2, 0.6, 1.4}) {
    std::size_t zeroed = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto c = corrupt(x, CorruptionKind::spatter, sev, seed);
      for (Eigen::Index t = 0; t < c.length(); ++t) zeroed += c.frames.row(t).isZero(0.0);
      total += static_cast<std::size_t>(c.length());
    }
    CHECK(static_cast<double>(zeroed) / static_cast<double>(total) == doctest::Approx(std::min(sev, 1.0)).epsilon(0.05));
  }
}

TEST_CASE("saturation compresses amplitude") {
  Eigen::MatrixXd m(1, 3);
  m << -2.0, 0.0, 4.0;
  const auto c = corrupt(FeatureSequence(m), CorruptionKind::saturate, 0.5, 0);
  CHECK(c.frames(0, 0) == doctest::Approx(-1.0));
  CHECK(c.frames(0, 1) == 0.0);
  CHECK(c.frames(0, 2) == doctest::Approx(4.0 / 3.0));
}
