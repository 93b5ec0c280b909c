#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pcri/core.hpp"
#include "pcri/metrics.hpp"

namespace pcri::engine {

/// Per-sample score matrix: the full-image score plus the n*n row-major patch
/// scores for every configured grid.
struct SampleViewScores {
  std::string sample_id;
  double full_score = 0.0;
  std::map<int, std::vector<double>> patch_scores;
};

struct BestPatch {
  std::size_t index = 0;
  double score = 0.0;
};

/// Highest-scoring patch; ties go to the lowest row-major index.
inline BestPatch best_patch(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::EmptyList, "best_patch of an empty list");
  BestPatch best{0, scores[0]};
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > best.score) best = {j, scores[j]};
  }
  return best;
}

inline double compute_p_whole(std::span<const SampleViewScores> records, const metrics::Metric& metric) {
  if (records.empty()) throw Error(ErrorCode::EmptyDataset, "no samples to score");
  std::vector<double> full;
  full.reserve(records.size());
  for (const auto& r : records) full.push_back(r.full_score);
  return metric.corpus(full);
}

/// Corpus metric over each sample's best patch at grid `n`.
inline double compute_p_patch(std::span<const SampleViewScores> records, int n, const metrics::Metric& metric) {
  if (records.empty()) throw Error(ErrorCode::EmptyDataset, "no samples to score");
  std::vector<double> best;
  best.reserve(records.size());
  for (const auto& r : records) {
    auto it = r.patch_scores.find(n);
    if (it == r.patch_scores.end() ||
        it->second.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
      throw Error(ErrorCode::MissingGranularity,
                  "sample '" + r.sample_id + "' has no complete score list for n=" + std::to_string(n));
    }
    best.push_back(best_patch(it->second).score);
  }
  return metric.corpus(best);
}

inline PcriValue compute_pcri(double p_patch, double p_whole) {
  if (p_whole == 0.0) return std::nullopt;
  return 1.0 - p_patch / p_whole;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

/// Standard deviation (denominator B) of B bootstrap corpus means. Resample b
/// draws from its own generator seeded with `seed + b`, so the result does not
/// depend on `threads`.
inline double bootstrap_se(std::span<const double> scores, int resamples = 1000, std::uint64_t seed = 0,
                           unsigned threads = 1) {
  if (scores.empty()) throw Error(ErrorCode::EmptyDataset, "bootstrap over an empty score list");
  if (resamples < 2) throw Error(ErrorCode::InvalidSpec, "bootstrap needs B >= 2");
  const std::size_t n = scores.size();
  const auto b_count = static_cast<std::size_t>(resamples);
  std::vector<double> means(b_count);

  auto run_range = [&](std::size_t begin, std::size_t end) {
    std::vector<double> draw(n);
    for (std::size_t b = begin; b < end; ++b) {
      std::mt19937_64 rng(seed + b);
      for (std::size_t i = 0; i < n; ++i) draw[i] = scores[static_cast<std::size_t>(rng() % n)];
      means[b] = metrics::corpus_mean(draw);
    }
  };

  threads = std::clamp<unsigned>(threads, 1u, static_cast<unsigned>(b_count));
  if (threads == 1) {
    run_range(0, b_count);
  } else {
    std::vector<std::jthread> workers;
    const std::size_t chunk = (b_count + threads - 1) / threads;
    for (std::size_t start = 0; start < b_count; start += chunk) {
      workers.emplace_back(run_range, start, std::min(b_count, start + chunk));
    }
  }

  // Shifted by the first resample mean so identical means give exactly zero.
  const double shift = means[0];
  double sum = 0.0, sum_sq = 0.0;
  for (double m : means) {
    sum += m - shift;
    sum_sq += (m - shift) * (m - shift);
  }
  const double b = static_cast<double>(b_count);
  return std::sqrt(std::max(0.0, sum_sq / b - (sum / b) * (sum / b)));
}

// ---------------------------------------------------------------------------
// Chance floors
// ---------------------------------------------------------------------------

enum class ChanceKind { Balanced, ClassPrior, Retrieval, Documented, Shuffle };
enum class FloorSource { ClosedForm, ClassPrior, RetrievalKN, ShuffleEstimate };

inline const char* to_string(FloorSource s) {
  switch (s) {
    case FloorSource::ClosedForm: return "closed_form";
    case FloorSource::ClassPrior: return "class_prior";
    case FloorSource::RetrievalKN: return "retrieval_kn";
    case FloorSource::ShuffleEstimate: return "shuffle_estimate";
  }
  return "unknown";
}

/// How to derive a dataset's chance floor. Only the fields of `kind` are read.
struct ChanceSpec {
  ChanceKind kind = ChanceKind::Balanced;
  int num_classes = 0;                // Balanced
  std::vector<double> priors{};       // ClassPrior
  int k = 0;                          // Retrieval: K relevant slots
  int candidates = 0;                 // Retrieval: N candidates
  double value = 0.0;                 // Documented
  int shuffle_rounds = 100;           // Shuffle

  bool operator==(const ChanceSpec&) const = default;
};

struct ChanceFloor {
  std::string dataset_id;
  double value = 0.0;
  FloorSource source = FloorSource::ClosedForm;
};

/// Predictions and references for a shuffle-baseline estimate.
struct ShuffleInputs {
  std::span<const std::string> predictions;                 // normalized answers
  std::span<const std::vector<std::string>> references;     // normalized references, per sample
  const metrics::Metric* metric = nullptr;
  std::uint64_t seed = 0;
};

namespace detail {

inline double shuffle_estimate(int rounds, const ShuffleInputs& in) {
  if (in.metric == nullptr || in.predictions.empty() || in.predictions.size() != in.references.size()) {
    throw Error(ErrorCode::MissingParameters, "shuffle floor needs aligned predictions and references");
  }
  const std::size_t n = in.predictions.size();
  std::vector<std::size_t> perm(n);
  std::vector<double> per_sample(n);
  double total = 0.0;
  for (int r = 0; r < rounds; ++r) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::mt19937_64 rng(in.seed + static_cast<std::uint64_t>(r));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[static_cast<std::size_t>(rng() % (i + 1))]);
    for (std::size_t i = 0; i < n; ++i) {
      per_sample[i] = std::clamp(in.metric->per_sample(in.predictions[perm[i]], in.references[i]), 0.0, 1.0);
    }
    total += in.metric->corpus(per_sample);
  }
  return total / static_cast<double>(rounds);
}

}  // namespace detail

inline ChanceFloor chance_floor(const ChanceSpec& spec, const ShuffleInputs* shuffle = nullptr,
                                std::string dataset_id = {}) {
  ChanceFloor floor{std::move(dataset_id), 0.0, FloorSource::ClosedForm};
  switch (spec.kind) {
    case ChanceKind::Balanced:
      if (spec.num_classes < 1) throw Error(ErrorCode::MissingParameters, "balanced floor needs num_classes");
      floor.value = 1.0 / spec.num_classes;
      break;
    case ChanceKind::ClassPrior:
      if (spec.priors.empty()) throw Error(ErrorCode::MissingParameters, "class-prior floor needs priors");
      floor.value = *std::max_element(spec.priors.begin(), spec.priors.end());
      floor.source = FloorSource::ClassPrior;
      break;
    case ChanceKind::Retrieval:
      if (spec.k < 1 || spec.candidates < spec.k) {
        throw Error(ErrorCode::MissingParameters, "retrieval floor needs 1 <= K <= N");
      }
      floor.value = static_cast<double>(spec.k) / spec.candidates;
      floor.source = FloorSource::RetrievalKN;
      break;
    case ChanceKind::Documented:
      floor.value = spec.value;
      break;
    case ChanceKind::Shuffle:
      if (shuffle == nullptr) throw Error(ErrorCode::MissingParameters, "shuffle floor needs model predictions");
      if (spec.shuffle_rounds < 1) throw Error(ErrorCode::MissingParameters, "shuffle floor needs rounds >= 1");
      floor.value = detail::shuffle_estimate(spec.shuffle_rounds, *shuffle);
      floor.source = FloorSource::ShuffleEstimate;
      break;
  }
  if (!(floor.value >= 0.0 && floor.value < 1.0)) {
    throw Error(ErrorCode::InvalidChanceSpec, "chance floor " + std::to_string(floor.value) + " outside [0, 1)");
  }
  return floor;
}

// ---------------------------------------------------------------------------
// Gate, labels, deltas
// ---------------------------------------------------------------------------

struct GateVerdict {
  Gate gate = Gate::Valid;
  double delta_min = 0.0;
};

inline GateVerdict validity_gate(double p_whole, double se, double floor, double delta = 0.01) {
  const double delta_min = std::max(delta, 2.0 * se);
  return {p_whole >= floor + delta_min ? Gate::Valid : Gate::NearChanceUnstable, delta_min};
}

inline Label interpret(PcriValue pcri, Gate gate, double epsilon_band = 0.02) {
  if (gate == Gate::NearChanceUnstable || !pcri) return Label::Unreliable;
  if (std::abs(*pcri) <= epsilon_band) return Label::Robust;
  return *pcri < 0.0 ? Label::GlobalDistracts : Label::NeedsGlobalContext;
}

/// Percent change from `from` to `to`, relative to |from|.
inline double granularity_delta(PcriValue from, PcriValue to) {
  if (!from || *from == 0.0) throw Error(ErrorCode::UndefinedBaseline, "baseline PCRI is zero or undefined");
  if (!to) throw Error(ErrorCode::UndefinedBaseline, "target PCRI is undefined");
  return 100.0 * (*to - *from) / std::abs(*from);
}

// ---------------------------------------------------------------------------
// Dataset evaluation
// ---------------------------------------------------------------------------

struct EngineConfig {
  double delta = 0.01;
  int bootstrap = 1000;
  double epsilon_band = 0.02;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct DatasetContext {
  std::string model_id;
  std::string dataset_id;
  TaskType task = TaskType::OpenVQA;
  double chance_floor = 0.0;
  int failed_views = 0;
};

/// One PcriResult per grid n > 1; the full view supplies P_whole for all.
inline std::vector<PcriResult> evaluate(const DatasetContext& ctx, std::span<const SampleViewScores> records,
                                        std::span<const int> grids, const metrics::Metric& metric,
                                        const EngineConfig& cfg) {
  const double p_whole = compute_p_whole(records, metric);
  std::vector<double> full;
  full.reserve(records.size());
  for (const auto& r : records) full.push_back(r.full_score);
  const double se = bootstrap_se(full, cfg.bootstrap, cfg.seed, cfg.threads);
  const GateVerdict verdict = validity_gate(p_whole, se, ctx.chance_floor, cfg.delta);

  std::vector<PcriResult> out;
  for (int n : grids) {
    if (n <= 1) continue;
    PcriResult res;
    res.model_id = ctx.model_id;
    res.dataset_id = ctx.dataset_id;
    res.task = ctx.task;
    res.n = n;
    res.p_whole = p_whole;
    res.p_patch = compute_p_patch(records, n, metric);
    res.pcri = compute_pcri(res.p_patch, p_whole);
    res.se_whole = se;
    res.chance_floor = ctx.chance_floor;
    res.delta_min = verdict.delta_min;
    res.gate = verdict.gate;
    res.label = interpret(res.pcri, verdict.gate, cfg.epsilon_band);
    res.sample_count = static_cast<int>(records.size());
    res.failed_views = ctx.failed_views;
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace pcri::engine
