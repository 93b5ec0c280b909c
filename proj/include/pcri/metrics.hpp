#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pcri/core.hpp"

namespace pcri::metrics {

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::istringstream in{std::string(text)};
  for (std::string tok; in >> tok;) tokens.push_back(std::move(tok));
  return tokens;
}

/// 1.0 if the answer equals any reference.
inline double exact_match(std::string_view answer, std::span<const std::string> refs) {
  if (refs.empty()) throw Error(ErrorCode::EmptyReferences, "exact_match needs at least one reference");
  return std::any_of(refs.begin(), refs.end(), [&](const std::string& r) { return r == answer; }) ? 1.0
                                                                                                  : 0.0;
}

/// Best token-level F1 over the references, with multiset overlap.
inline double token_f1(std::string_view answer, std::span<const std::string> refs) {
  const auto pred = tokenize(answer);
  double best = 0.0;
  for (const auto& ref : refs) {
    const auto gold = tokenize(ref);
    if (pred.empty() || gold.empty()) {
      best = std::max(best, pred.empty() && gold.empty() ? 1.0 : 0.0);
      continue;
    }
    std::map<std::string, int> counts;
    for (const auto& t : gold) ++counts[t];
    int common = 0;
    for (const auto& t : pred) {
      auto it = counts.find(t);
      if (it != counts.end() && it->second > 0) {
        --it->second;
        ++common;
      }
    }
    if (common == 0) continue;
    const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
    best = std::max(best, 2.0 * precision * recall / (precision + recall));
  }
  return best;
}

namespace detail {

using NgramCounts = std::map<std::vector<std::string>, int>;

inline NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t order) {
  NgramCounts counts;
  if (tokens.size() < order) return counts;
  for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + order))];
  }
  return counts;
}

}  // namespace detail

/// Sentence BLEU over 1..4-grams with uniform weights. Higher orders use
/// add-one smoothing (m+1)/(t+1); clipping takes the max count over all
/// references; the reference length is the closest one (shorter on ties).
inline double sentence_bleu(std::string_view answer, std::span<const std::string> refs) {
  constexpr std::size_t kMaxOrder = 4;
  const auto hyp = tokenize(answer);
  std::vector<std::vector<std::string>> ref_tokens;
  ref_tokens.reserve(refs.size());
  for (const auto& r : refs) ref_tokens.push_back(tokenize(r));
  if (ref_tokens.empty()) return 0.0;

  const auto c = static_cast<long>(hyp.size());
  long r = static_cast<long>(ref_tokens.front().size());
  for (const auto& rt : ref_tokens) {
    const long len = static_cast<long>(rt.size());
    const long d = std::labs(len - c);
    const long best = std::labs(r - c);
    if (d < best || (d == best && len < r)) r = len;
  }
  if (c == 0) return r == 0 ? 1.0 : 0.0;

  double log_sum = 0.0;
  for (std::size_t order = 1; order <= kMaxOrder; ++order) {
    const auto hyp_counts = detail::count_ngrams(hyp, order);
    std::map<std::vector<std::string>, int> max_ref;
    for (const auto& rt : ref_tokens) {
      for (const auto& [gram, cnt] : detail::count_ngrams(rt, order)) {
        max_ref[gram] = std::max(max_ref[gram], cnt);
      }
    }
    long matched = 0;
    long total = 0;
    for (const auto& [gram, cnt] : hyp_counts) {
      total += cnt;
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) matched += std::min(cnt, it->second);
    }
    double precision = 0.0;
    if (order == 1) {
      if (matched == 0) return 0.0;
      precision = static_cast<double>(matched) / static_cast<double>(total);
    } else {
      // An order with no candidate n-grams counts as 0 of 1 before smoothing.
      precision = static_cast<double>(matched + 1) / static_cast<double>(std::max(total, 1L) + 1);
    }
    log_sum += std::log(precision) / static_cast<double>(kMaxOrder);
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return std::clamp(bp * std::exp(log_sum), 0.0, 1.0);
}

inline double corpus_mean(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::EmptyDataset, "corpus_mean of an empty score list");
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

struct Metric {
  std::string id;
  // (normalized answer, normalized references) -> [0, 1]
  std::function<double(std::string_view, std::span<const std::string>)> per_sample;
  std::function<double(std::span<const double>)> corpus = corpus_mean;
};

class MetricRegistry {
 public:
  MetricRegistry() {
    add({"exact_match", exact_match});
    add({"token_f1", token_f1});
    add({"bleu", sentence_bleu});
  }

  void add(Metric m) { metrics_[m.id] = std::move(m); }

  bool contains(const std::string& id) const { return metrics_.count(id) != 0; }

  const Metric& get(const std::string& id) const {
    auto it = metrics_.find(id);
    if (it == metrics_.end()) throw Error(ErrorCode::UnknownMetric, "no metric registered as '" + id + "'");
    return it->second;
  }

  static const MetricRegistry& builtin() {
    static const MetricRegistry registry;
    return registry;
  }

 private:
  std::map<std::string, Metric> metrics_;
};

inline std::string default_metric_id(TaskType task) {
  switch (task) {
    case TaskType::Captioning: return "bleu";
    case TaskType::MultipleChoice:
    case TaskType::YesNo: return "exact_match";
    case TaskType::OpenVQA: return "token_f1";
  }
  return "exact_match";
}

/// Scores an already-normalized answer against references normalized for `task`.
inline double score_response(const Metric& metric, std::string_view normalized_answer,
                             std::span<const std::string> ground_truth, TaskType task) {
  std::vector<std::string> refs;
  refs.reserve(ground_truth.size());
  for (const auto& g : ground_truth) refs.push_back(normalize_answer(g, task));
  return std::clamp(metric.per_sample(normalized_answer, refs), 0.0, 1.0);
}

}  // namespace pcri::metrics
