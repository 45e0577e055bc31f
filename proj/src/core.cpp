#include "seqcal/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace seqcal {

namespace {

constexpr std::string_view kSymbols =
    "abcdefghijklmnopqrstuvwxyz0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x5EEDULL;
  std::uint64_t out = 0;
  for (auto p : parts) {
    state ^= p + 0x9E3779B97F4A7C15ULL + (state << 6) + (state >> 2);
    out = splitmix64(state);
  }
  return out;
}

Alphabet::Alphabet(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw std::invalid_argument("alphabet needs at least 2 tokens");
  std::set<std::string> seen(tokens_.begin(), tokens_.end());
  if (seen.size() != tokens_.size()) throw std::invalid_argument("alphabet symbols must be unique");
}

Alphabet Alphabet::standard(int size) {
  if (size < 2) throw std::invalid_argument("alphabet needs at least 2 tokens");
  std::vector<std::string> tokens;
  for (int i = 0; i < size; ++i) {
    if (i < static_cast<int>(kSymbols.size()))
      tokens.emplace_back(1, kSymbols[i]);
    else
      tokens.push_back(fmt::format("<{}>", i));
  }
  return Alphabet(std::move(tokens));
}

const std::string& Alphabet::symbol(TokenId id) const {
  if (id < 0 || id >= size()) throw std::out_of_range(fmt::format("token id {} out of range", id));
  return tokens_[static_cast<std::size_t>(id)];
}

void validate_labels(const LabelSequence& y, int vocab_size) {
  for (auto id : y.ids)
    if (id < 0 || id >= vocab_size)
      throw std::invalid_argument(fmt::format("label id {} outside [0, {})", id, vocab_size));
}

std::string to_string(const LabelSequence& y, const Alphabet& alphabet) {
  std::string out;
  for (auto id : y.ids) out += alphabet.symbol(id);
  return out;
}

std::size_t min_ctc_frames(const LabelSequence& y) {
  std::size_t n = y.size();
  for (std::size_t i = 1; i < y.size(); ++i)
    if (y[i] == y[i - 1]) ++n;
  return n;
}

void validate_features(const FeatureSequence& x) {
  if (x.length() < 1) throw std::invalid_argument("feature sequence must have T >= 1");
  if (!x.frames.allFinite()) throw std::invalid_argument("feature sequence has non-finite entries");
}

void TaskSpec::validate() const {
  if (alphabet_size < 2) throw std::invalid_argument("alphabet_size must be >= 2");
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (!(prototype_separation > 0)) throw std::invalid_argument("prototype_separation must be > 0");
  if (lexicon.empty()) throw std::invalid_argument("lexicon is empty");
  for (const auto& e : lexicon) {
    if (!(e.weight > 0)) throw std::invalid_argument("lexicon weights must be > 0");
    if (e.seq.empty()) throw std::invalid_argument("lexicon entries must be non-empty");
    validate_labels(e.seq, alphabet_size);
  }
  for (const auto& p : confusable_pairs) {
    if (p.a < 0 || p.a >= alphabet_size || p.b < 0 || p.b >= alphabet_size || p.a == p.b)
      throw std::invalid_argument("confusable pair references invalid tokens");
    if (!(p.similarity > 0 && p.similarity < 1))
      throw std::invalid_argument("confusable similarity must be in (0, 1)");
  }
  if (min_frames_per_token < 1 || max_frames_per_token < min_frames_per_token)
    throw std::invalid_argument("frames_per_token range invalid");
  if (!(base_noise >= 0) || !(hard_noise >= base_noise))
    throw std::invalid_argument("noise levels must satisfy 0 <= base_noise <= hard_noise");
  if (!(hardness_ratio >= 0 && hardness_ratio <= 1))
    throw std::invalid_argument("hardness_ratio must be in [0, 1]");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument(fmt::format("unknown split '{}'", s));
}

std::vector<LabelSequence> Dataset::labels() const {
  std::vector<LabelSequence> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.y);
  return out;
}

std::vector<LexiconEntry> random_lexicon(int alphabet_size, int size, int min_len, int max_len,
                                         double zipf_exponent, std::uint64_t seed) {
  if (alphabet_size < 2) throw std::invalid_argument("alphabet_size must be >= 2");
  if (size < 1 || min_len < 1 || max_len < min_len)
    throw std::invalid_argument("invalid lexicon shape");
  std::mt19937_64 rng(derive_seed({seed, 0x1E71C0ULL}));
  std::uniform_int_distribution<int> len_dist(min_len, max_len);
  std::uniform_int_distribution<int> tok_dist(0, alphabet_size - 1);
  std::set<LabelSequence> seen;
  std::vector<LexiconEntry> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < size) {
    if (++attempts > 1000 * size) throw std::invalid_argument("cannot draw enough distinct words");
    LabelSequence w;
    const int len = len_dist(rng);
    while (static_cast<int>(w.size()) < len) {
      const int t = tok_dist(rng);
      if (!w.empty() && w.ids.back() == t) continue;
      w.ids.push_back(t);
    }
    if (!seen.insert(w).second) continue;
    const double rank = static_cast<double>(out.size() + 1);
    out.push_back({std::move(w), 1.0 / std::pow(rank, zipf_exponent)});
  }
  return out;
}

TaskSpec default_task_spec(std::uint64_t seed) {
  TaskSpec spec;
  spec.confusable_pairs = {{0, 1, 0.7}, {2, 3, 0.6}};
  spec.lexicon = random_lexicon(spec.alphabet_size, 50, 3, 6, 1.0, 2024);
  spec.seed = seed;
  return spec;
}

Eigen::MatrixXd token_prototypes(const TaskSpec& spec) {
  const int V = spec.alphabet_size;
  const int D = spec.feature_dim;
  const double radius = spec.prototype_separation / std::sqrt(2.0);
  Eigen::MatrixXd protos = Eigen::MatrixXd::Zero(V, D);
  if (D >= V) {
    for (int v = 0; v < V; ++v) protos(v, v) = radius;
  } else {
    std::mt19937_64 rng(derive_seed({spec.seed, 0x9207ULL}));
    std::normal_distribution<double> g(0.0, 1.0);
    for (int v = 0; v < V; ++v) {
      for (int d = 0; d < D; ++d) protos(v, d) = g(rng);
      protos.row(v) *= radius / protos.row(v).norm();
    }
  }
  for (const auto& p : spec.confusable_pairs) {
    const Eigen::RowVectorXd anchor = protos.row(p.a);
    protos.row(p.b) = anchor + (1.0 - p.similarity) * (protos.row(p.b) - anchor);
  }
  return protos;
}

Eigen::VectorXd separator_prototype(const TaskSpec& spec) {
  return Eigen::VectorXd::Zero(spec.feature_dim);
}

Dataset synth_dataset(const TaskSpec& spec, std::size_t n, Split split) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
  const auto split_tag = static_cast<std::uint64_t>(split);
  const Eigen::MatrixXd protos = token_prototypes(spec);
  const Eigen::VectorXd sep = separator_prototype(spec);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(derive_seed({spec.seed, split_tag, 1}));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const auto n_hard = static_cast<std::size_t>(std::llround(spec.hardness_ratio * static_cast<double>(n)));
  std::vector<bool> hard(n, false);
  for (std::size_t i = 0; i < n_hard; ++i) hard[order[i]] = true;

  std::vector<double> weights;
  for (const auto& e : spec.lexicon) weights.push_back(e.weight);

  Dataset d;
  d.spec = spec;
  d.split = split;
  d.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed({spec.seed, split_tag, 2, i}));
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::uniform_int_distribution<int> frames(spec.min_frames_per_token, spec.max_frames_per_token);
    const double sigma = hard[i] ? spec.hard_noise : spec.base_noise;
    std::normal_distribution<double> noise(0.0, 1.0);

    Sample& s = d.samples[i];
    s.id = static_cast<int>(i);
    s.hardness = sigma;
    s.y = spec.lexicon[pick(rng)].seq;

    std::vector<Eigen::VectorXd> rows;
    for (std::size_t k = 0; k < s.y.size(); ++k) {
      if (k > 0 && s.y[k] == s.y[k - 1]) rows.push_back(sep);
      const int count = frames(rng);
      for (int f = 0; f < count; ++f) rows.push_back(protos.row(s.y[k]).transpose());
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), spec.feature_dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int c = 0; c < spec.feature_dim; ++c) m(static_cast<Eigen::Index>(r), c) = rows[r](c) + sigma * noise(rng);
    }
    s.x = FeatureSequence(std::move(m));
  }
  return d;
}

std::vector<Dataset> split_dataset(const Dataset& d, std::span<const double> fractions) {
  if (fractions.empty()) throw std::invalid_argument("no split fractions given");
  double sum = 0;
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) throw std::invalid_argument("split fraction outside (0, 1]");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");

  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (fractions.size() > 1) {
    std::mt19937_64 rng(derive_seed({d.spec.seed, 0x5B117ULL}));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Dataset> parts;
  double cum = 0;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    cum += fractions[p];
    const std::size_t end = (p + 1 == fractions.size())
                                ? n
                                : std::min(n, static_cast<std::size_t>(std::llround(cum * static_cast<double>(n))));
    Dataset part;
    part.spec = d.spec;
    part.split = d.split;
    for (std::size_t i = begin; i < end; ++i) part.samples.push_back(d.samples[order[i]]);
    if (fractions.size() > 1)
      std::sort(part.samples.begin(), part.samples.end(),
                [](const Sample& a, const Sample& b) { return a.id < b.id; });
    parts.push_back(std::move(part));
    begin = end;
  }
  return parts;
}

std::string_view to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::noise: return "noise";
    case CorruptionKind::blur: return "blur";
    case CorruptionKind::spatter: return "spatter";
    case CorruptionKind::saturate: return "saturate";
  }
  return "?";
}

CorruptionKind parse_corruption(std::string_view name) {
  if (name == "noise") return CorruptionKind::noise;
  if (name == "blur") return CorruptionKind::blur;
  if (name == "spatter") return CorruptionKind::spatter;
  if (name == "saturate") return CorruptionKind::saturate;
  throw std::invalid_argument(fmt::format("unknown corruption kind '{}'", name));
}

FeatureSequence corrupt(const FeatureSequence& x, CorruptionKind kind, double severity,
                        std::uint64_t seed) {
  if (!(severity >= 0)) throw std::invalid_argument("severity must be >= 0");
  if (severity == 0) return x;
  std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(kind), 0xC0FFEEULL}));
  const Eigen::Index T = x.length();
  Eigen::MatrixXd out = x.frames;
  switch (kind) {
    case CorruptionKind::noise: {
      std::normal_distribution<double> g(0.0, severity);
      for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index d = 0; d < x.dim(); ++d) out(t, d) += g(rng);
      break;
    }
    case CorruptionKind::blur: {
      // Symmetric (half-sample) boundary extension keeps the smoothing operator
      // symmetric and doubly stochastic, so it never increases variance.
      const double sigma = 2.0 * severity;
      const int radius = static_cast<int>(std::ceil(3.0 * sigma));
      std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
      double total = 0;
      for (int k = -radius; k <= radius; ++k) {
        w[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
        total += w[static_cast<std::size_t>(k + radius)];
      }
      for (double& v : w) v /= total;
      const Eigen::Index period = 2 * T;
      auto fold = [&](Eigen::Index i) {
        Eigen::Index m = ((i % period) + period) % period;
        return m >= T ? period - 1 - m : m;
      };
      for (Eigen::Index t = 0; t < T; ++t) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(x.dim());
        for (int k = -radius; k <= radius; ++k) acc += w[static_cast<std::size_t>(k + radius)] * x.frames.row(fold(t + k));
        out.row(t) = acc;
      }
      break;
    }
    case CorruptionKind::spatter: {
      std::bernoulli_distribution drop(std::min(severity, 1.0));
      for (Eigen::Index t = 0; t < T; ++t)
        if (drop(rng)) out.row(t).setZero();
      break;
    }
    case CorruptionKind::saturate: {
      out = x.frames.unaryExpr([severity](double v) { return v / (1.0 + severity * std::abs(v)); });
      break;
    }
  }
  return FeatureSequence(std::move(out));
}

}  // namespace seqcal
