#pragma once

// Domain types and the synthetic sequence-recognition task generator.

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace seqcal {

using TokenId = int;

/// Ordered token inventory. Index `size()` is reserved for the CTC blank.
class Alphabet {
 public:
  explicit Alphabet(std::vector<std::string> tokens);

  /// The first `size` symbols of a fixed printable inventory.
  static Alphabet standard(int size);

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId blank_id() const { return size(); }
  const std::string& symbol(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
};

/// A target or candidate label sequence. Never contains the blank.
struct LabelSequence {
  std::vector<TokenId> ids;

  LabelSequence() = default;
  LabelSequence(std::initializer_list<TokenId> init) : ids(init) {}
  explicit LabelSequence(std::vector<TokenId> v) : ids(std::move(v)) {}

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  TokenId operator[](std::size_t i) const { return ids[i]; }

  auto operator<=>(const LabelSequence&) const = default;
  bool operator==(const LabelSequence&) const = default;
};

/// Throws if any id falls outside [0, vocab_size).
void validate_labels(const LabelSequence& y, int vocab_size);

std::string to_string(const LabelSequence& y, const Alphabet& alphabet);

/// Minimum number of CTC frames needed to emit `y` (repeats need a blank between them).
std::size_t min_ctc_frames(const LabelSequence& y);

/// T x D real matrix, one row per time step.
struct FeatureSequence {
  Eigen::MatrixXd frames;

  FeatureSequence() = default;
  explicit FeatureSequence(Eigen::MatrixXd m) : frames(std::move(m)) {}

  Eigen::Index length() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

/// Throws unless T >= 1 and every entry is finite.
void validate_features(const FeatureSequence& x);

struct Sample {
  int id = 0;
  FeatureSequence x;
  LabelSequence y;
  /// Noise level the sample was rendered with.
  double hardness = 0.0;
};

struct ConfusablePair {
  TokenId a = 0;
  TokenId b = 0;
  double similarity = 0.5;
};

struct LexiconEntry {
  LabelSequence seq;
  double weight = 1.0;
};

struct TaskSpec {
  int alphabet_size = 12;
  int feature_dim = 12;
  double prototype_separation = 2.0;
  std::vector<ConfusablePair> confusable_pairs;
  std::vector<LexiconEntry> lexicon;
  int min_frames_per_token = 1;
  int max_frames_per_token = 3;
  double base_noise = 0.3;
  double hard_noise = 0.6;
  double hardness_ratio = 0.3;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Dataset {
  std::vector<Sample> samples;
  TaskSpec spec;
  Split split = Split::train;

  std::size_t size() const { return samples.size(); }
  std::vector<LabelSequence> labels() const;
};

/// Random lexicon of `size` distinct words without adjacent repeats; Zipf weights 1/rank^exponent.
std::vector<LexiconEntry> random_lexicon(int alphabet_size, int size, int min_len, int max_len,
                                         double zipf_exponent, std::uint64_t seed);

/// The default synthetic task: V=12, two confusable pairs, 50-word lexicon.
TaskSpec default_task_spec(std::uint64_t seed = 0);

/// V x D prototype matrix for the task's tokens.
///
/// Tokens start on scaled orthogonal axes (pairwise distance = separation) when D >= V,
/// otherwise on seeded random directions of the same norm. The second member of each
/// confusable pair is then pulled towards the first so their distance is scaled by
/// (1 - similarity).
Eigen::MatrixXd token_prototypes(const TaskSpec& spec);

/// Background vector rendered between adjacent repeated tokens.
Eigen::VectorXd separator_prototype(const TaskSpec& spec);

Dataset synth_dataset(const TaskSpec& spec, std::size_t n, Split split);

/// Deterministic disjoint partition; fractions must each be in (0, 1] and sum to 1.
std::vector<Dataset> split_dataset(const Dataset& d, std::span<const double> fractions);

enum class CorruptionKind { noise, blur, spatter, saturate };

std::string_view to_string(CorruptionKind k);
/// Throws std::invalid_argument on an unknown name.
CorruptionKind parse_corruption(std::string_view name);

/// Feature-space corruption. severity = 0 is the identity for every kind.
///  - noise: additive Gaussian with standard deviation `severity`
///  - blur: temporal Gaussian smoothing, kernel sigma = 2 * severity frames
///  - spatter: each frame zeroed with probability min(severity, 1)
///  - saturate: amplitude compression x / (1 + severity * |x|)
FeatureSequence corrupt(const FeatureSequence& x, CorruptionKind kind, double severity,
                        std::uint64_t seed);

/// Deterministic 64-bit stream seed from a list of integers.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

}  // namespace seqcal
