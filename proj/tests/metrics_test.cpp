#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "pcri/metrics.hpp"

namespace pcri::metrics {
namespace {

using Refs = std::vector<std::string>;

TEST(ExactMatch, Basics) {
  EXPECT_EQ(exact_match("b", Refs{"b"}), 1.0);
  EXPECT_EQ(exact_match("yes", Refs{"no"}), 0.0);
  EXPECT_EQ(exact_match("stop sign", Refs{"stop sign", "stop"}), 1.0);
}

TEST(ExactMatch, EmptyReferencesIsAnError) {
  try {
    exact_match("a", Refs{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyReferences);
  }
}

TEST(TokenF1, Basics) {
  EXPECT_DOUBLE_EQ(token_f1("red car", Refs{"red car"}), 1.0);
  EXPECT_NEAR(token_f1("red", Refs{"red car"}), 2.0 / 3.0, 1e-9);
  EXPECT_EQ(token_f1("", Refs{"x"}), 0.0);
  EXPECT_EQ(token_f1("", Refs{""}), 1.0);
  EXPECT_EQ(token_f1("x", Refs{""}), 0.0);
}

TEST(TokenF1, MultisetOverlapAndBestReference) {
  // "the the" vs "the": precision 1/2, recall 1 -> 2/3.
  EXPECT_NEAR(token_f1("the the", Refs{"the"}), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(token_f1("a b", Refs{"c", "a b"}), 1.0);
}

// Frozen from tests/oracles/bleu_oracle.py (NLTK sentence_bleu, smoothing method2).
struct BleuCase {
  const char* hyp;
  Refs refs;
  double expected;
};

TEST(SentenceBleu, MatchesReferenceImplementation) {
  const std::vector<BleuCase> cases = {
      {"a b c d", {"a b c d e"}, 0.7788007830714049},
      {"the quick brown fox jumps", {"the quick brown fox jumps"}, 1.0},
      {"alpha beta gamma delta epsilon", {"one two three four five"}, 0.0},
      {"the cat is on the mat", {"the cat sat on the mat"}, 0.48549177170732344},
      {"a red car on the road", {"a red car parked on the street", "a car on a street"}, 0.5133450480401704},
      {"a dog", {"a dog runs in the park"}, 0.09569649651041094},
      {"man riding a horse on a beach at sunset", {"a man rides a horse along the beach"}, 0.2166864420114564},
      {"two people two people two people", {"two people sitting on a bench"}, 0.2730120862709067},
  };
  for (const auto& c : cases) EXPECT_NEAR(sentence_bleu(c.hyp, c.refs), c.expected, 1e-6) << c.hyp;
}

TEST(SentenceBleu, IdenticalIsOneDisjointIsNearZero) {
  EXPECT_DOUBLE_EQ(sentence_bleu("one two three four five", Refs{"one two three four five"}), 1.0);
  EXPECT_LT(sentence_bleu("alpha beta gamma delta epsilon", Refs{"one two three four five"}), 0.05);
}

TEST(SentenceBleu, EmptyCandidate) {
  EXPECT_EQ(sentence_bleu("", Refs{"a b"}), 0.0);
  EXPECT_EQ(sentence_bleu("", Refs{""}), 1.0);
}

TEST(CorpusMean, Basics) {
  EXPECT_DOUBLE_EQ(corpus_mean(std::vector<double>{1, 1, 0, 0}), 0.5);
  EXPECT_DOUBLE_EQ(corpus_mean(std::vector<double>(17, 1.0)), 1.0);
  EXPECT_NEAR(corpus_mean(std::vector<double>{0.2, 0.4, 0.9}), 0.5, 1e-15);
  try {
    corpus_mean(std::vector<double>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> vocab = {"a", "b", "red", "car", "the", "sign", "", "x"};
  std::string s;
  const auto len = rng() % 8;
  for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + vocab[rng() % vocab.size()];
  return s;
}

TEST(Scorers, StayInUnitIntervalAndIgnoreReferenceOrder) {
  std::mt19937_64 rng(5);
  const auto& reg = MetricRegistry::builtin();
  for (int trial = 0; trial < 2000; ++trial) {
    const auto answer = random_text(rng);
    Refs refs;
    const auto k = 1 + rng() % 3;
    for (std::size_t i = 0; i < k; ++i) refs.push_back(random_text(rng));
    Refs reversed(refs.rbegin(), refs.rend());
    for (const char* id : {"exact_match", "token_f1", "bleu"}) {
      const double s = reg.get(id).per_sample(answer, refs);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
    EXPECT_EQ(exact_match(answer, refs), exact_match(answer, reversed));
    EXPECT_EQ(token_f1(answer, refs), token_f1(answer, reversed));
  }
}

TEST(CorpusMean, LiesWithinRangeAndIsPermutationInvariant) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + rng() % 30);
    for (auto& x : v) x = u(rng);
    const double m = corpus_mean(v);
    EXPECT_GE(m, *std::min_element(v.begin(), v.end()) - 1e-15);
    EXPECT_LE(m, *std::max_element(v.begin(), v.end()) + 1e-15);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_NEAR(corpus_mean(sorted), m, 1e-12);
  }
}

TEST(Registry, DefaultsAndUnknownIds) {
  const auto& reg = MetricRegistry::builtin();
  for (auto t : {TaskType::Captioning, TaskType::MultipleChoice, TaskType::YesNo, TaskType::OpenVQA}) {
    EXPECT_TRUE(reg.contains(default_metric_id(t)));
  }
  try {
    reg.get("cider");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownMetric);
  }
}

TEST(Registry, PluggableMetric) {
  MetricRegistry reg;
  reg.add({"length_ratio", [](std::string_view a, std::span<const std::string> r) {
             return r.front().empty() ? 0.0 : std::min(1.0, static_cast<double>(a.size()) / r.front().size());
           }});
  EXPECT_DOUBLE_EQ(reg.get("length_ratio").per_sample("ab", Refs{"abcd"}), 0.5);
}

TEST(ScoreResponse, NormalizesReferences) {
  const auto& em = MetricRegistry::builtin().get("exact_match");
  EXPECT_EQ(score_response(em, "b", Refs{"B"}, TaskType::MultipleChoice), 1.0);
  EXPECT_EQ(score_response(em, "yes", Refs{"Yes."}, TaskType::YesNo), 1.0);
}

}  // namespace
}  // namespace pcri::metrics
