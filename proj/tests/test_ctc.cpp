#include <doctest.h>

#include "oracles.hpp"
#include "seqcal/ctc.hpp"

#include <cmath>
#include <random>
#include <set>

using namespace seqcal;

namespace {

ProbMatrix two_step_matrix() {
  Eigen::MatrixXd m(2, 2);
  m << 0.6, 0.4, 0.6, 0.4;
  return ProbMatrix(m);
}

ProbMatrix random_matrix(std::mt19937_64& rng, int T, int V) {
  return ProbMatrix::from_logits(oracle::random_logits(rng, T, V + 1));
}

}  // namespace

TEST_CASE("prob matrix rejects rows that are not distributions") {
  Eigen::MatrixXd bad(1, 2);
  bad << 0.7, 0.4;
  CHECK_THROWS_AS(ProbMatrix{bad}, std::invalid_argument);
  bad << 1.2, -0.2;
  CHECK_THROWS_AS(ProbMatrix{bad}, std::invalid_argument);
}

TEST_CASE("posterior of the two-step example") {
  const auto m = two_step_matrix();
  CHECK(ctc_log_posterior(m, {0}) == doctest::Approx(std::log(0.84)).epsilon(1e-12));
  CHECK(ctc_log_posterior(m, {}) == doctest::Approx(std::log(0.16)).epsilon(1e-12));
  CHECK(ctc_log_posterior(m, {0, 0}) == kNegInf);
  CHECK(ctc_log_posterior(m, {0, 0, 0}) == kNegInf);
}

TEST_CASE("full-length labels need distinct neighbours") {
  std::mt19937_64 rng(3);
  const auto m = random_matrix(rng, 3, 3);
  const LabelSequence y{0, 2, 1};
  double direct = 0;
  for (int t = 0; t < 3; ++t) direct += std::log(m(t, y[static_cast<std::size_t>(t)]));
  CHECK(ctc_log_posterior(m, y) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(ctc_log_posterior(m, {0, 0, 1}) == kNegInf);
}

TEST_CASE("posterior matches path enumeration and sums to one") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int T = 1 + trial % 4, V = 1 + trial % 3;
    const auto m = random_matrix(rng, T, V);
    const auto truth = oracle::ctc_all_posteriors(m.rows());
    double total = 0;
    for (const auto& [y, p] : truth) {
      CHECK(std::exp(ctc_log_posterior(m, y)) == doctest::Approx(p).epsilon(1e-10));
      total += std::exp(ctc_log_posterior(m, y));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("no underflow on long inputs") {
  std::mt19937_64 rng(5);
  const auto m = random_matrix(rng, 64, 4);
  LabelSequence y;
  for (int i = 0; i < 20; ++i) y.ids.push_back(i % 4);
  const double lp = ctc_log_posterior(m, y);
  CHECK(std::isfinite(lp));
  CHECK(lp < 0);
}

TEST_CASE("loss of uniform logits") {
  const auto r = ctc_loss_and_grad(Eigen::MatrixXd::Zero(2, 2), {0});
  CHECK(r.loss == doctest::Approx(-std::log(3.0 / 4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(ctc_loss_and_grad(Eigen::MatrixXd::Zero(2, 2), {0, 0}), std::invalid_argument);
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const int T = 1 + trial % 5, V = 1 + trial % 3;
    const Eigen::MatrixXd logits = oracle::random_logits(rng, T, V + 1);
    LabelSequence y;
    do y = oracle::random_labels(rng, V, T);
    while (min_ctc_frames(y) > static_cast<std::size_t>(T));
    const auto r = ctc_loss_and_grad(logits, y);
    CHECK(r.loss > 0);
    const auto num = oracle::numeric_gradient(
        [&](const Eigen::MatrixXd& z) { return -std::log(oracle::ctc_posterior(oracle::softmax(z), y)); }, logits);
    CHECK(oracle::max_relative_error(r.grad, num) <= 1e-4);
  }
}

TEST_CASE("greedy decoding collapses repeats and drops blanks") {
  auto rows_for = [](std::vector<int> argmax) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(argmax.size()), 3, 0.1);
    for (std::size_t t = 0; t < argmax.size(); ++t) m(static_cast<Eigen::Index>(t), argmax[t]) = 0.8;
    return ProbMatrix(m);
  };
  CHECK(greedy_decode(rows_for({2, 0, 0, 2, 1})) == LabelSequence{0, 1});
  CHECK(greedy_decode(rows_for({2, 2, 2})).empty());
  CHECK(greedy_decode(rows_for({0, 2, 0})) == LabelSequence{0, 0});
}

TEST_CASE("argmax ties go to the lowest index") {
  Eigen::MatrixXd m(1, 3);
  m << 0.4, 0.4, 0.2;
  CHECK(argmax_rows(m)[0] == 0);
}

TEST_CASE("top-n perception on the two-step example") {
  const auto top = top_n_perception(two_step_matrix(), 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].seq == LabelSequence{0});
  CHECK(top[0].log_prob == doctest::Approx(std::log(0.84)));
  CHECK(top[1].seq.empty());
  CHECK(top[1].log_prob == doctest::Approx(std::log(0.16)));
}

TEST_CASE("exhaustive beam equals brute force") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int T = 1 + trial % 4, V = 1 + trial % 3;
    const auto m = random_matrix(rng, T, V);
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 7);
    const auto fast = top_n_perception(m, n, kExhaustiveBeam);
    const auto slow = brute_force_rank(m, n);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      CHECK(fast[i].seq == slow[i].seq);
      CHECK(fast[i].log_prob == doctest::Approx(slow[i].log_prob).epsilon(1e-9));
    }
  }
}

TEST_CASE("beam output is sorted, unique, and led by at least the greedy posterior") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = random_matrix(rng, 6 + trial % 5, 4);
    const auto top = top_n_perception(m, 8);
    std::set<LabelSequence> seen;
    for (std::size_t i = 0; i < top.size(); ++i) {
      CHECK(seen.insert(top[i].seq).second);
      if (i > 0) CHECK(top[i].log_prob <= top[i - 1].log_prob);
      CHECK(top[i].log_prob == doctest::Approx(ctc_log_posterior(m, top[i].seq)).epsilon(1e-9));
    }
    CHECK(top[0].log_prob >= ctc_log_posterior(m, greedy_decode(m)) - 1e-12);
  }
}

TEST_CASE("brute force covers everything when n is large") {
  std::mt19937_64 rng(13);
  const auto m = random_matrix(rng, 3, 2);
  const auto all = brute_force_rank(m, 1000);
  CHECK(all.size() == oracle::ctc_all_posteriors(m.rows()).size());
  double total = 0;
  for (const auto& s : all) total += std::exp(s.log_prob);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  const auto huge = random_matrix(rng, 10, 4);
  CHECK_THROWS_AS(brute_force_rank(huge, 1), std::invalid_argument);
}
