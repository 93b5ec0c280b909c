#pragma once

// End-to-end orchestration: manifests -> views -> inference -> scores -> PCRI -> report files.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pcri/adapters.hpp"
#include "pcri/core.hpp"
#include "pcri/engine.hpp"
#include "pcri/ingest.hpp"
#include "pcri/live.hpp"
#include "pcri/metrics.hpp"
#include "pcri/patcher.hpp"
#include "pcri/report.hpp"

namespace pcri {

namespace fs = std::filesystem;

struct ReplaySource {
  fs::path cache_path;
  std::string model;  // empty: the cache's only model
};

using AdapterSource = std::variant<std::monostate, ModelEndpointConfig, ReplaySource, SyntheticModelSpec>;

struct RunConfig {
  std::vector<fs::path> manifests;
  AdapterSource source;
  std::string model_override;  // synthetic runs: replaces the generated model name
  std::vector<int> grids{1, 2, 3};
  std::uint64_t seed = 0;
  double delta = 0.01;
  int bootstrap = 1000;
  double epsilon_band = 0.02;
  fs::path out_dir = "pcri_out";
  int max_parallel = 0;  // 0: use the endpoint config's value
  unsigned bootstrap_threads = 1;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFatal = 1;
inline constexpr int kGated = 2;
}  // namespace exit_code

struct DatasetRun {
  std::string dataset_id;
  std::vector<ScoredRecord> records;  // sorted by (sample_id, view)
  std::vector<PcriResult> results;
};

struct PipelineOutput {
  std::vector<DatasetRun> datasets;
  report::ReportBundle bundle;
  long long adapter_calls = 0;
  int exit_code = exit_code::kOk;
};

/// Sorted, de-duplicated grid list that always contains 1.
inline std::vector<int> normalize_grids(std::vector<int> grids) {
  for (int n : grids) {
    if (n < 1) throw Error(ErrorCode::Config, "grid sizes must be >= 1, got " + std::to_string(n));
  }
  grids.push_back(1);
  std::sort(grids.begin(), grids.end());
  grids.erase(std::unique(grids.begin(), grids.end()), grids.end());
  return grids;
}

/// Full view followed by the n*n patches of every grid n > 1.
inline std::vector<View> plan_views(const Sample& s, std::span<const int> grids) {
  std::vector<View> views{full_view(s.id, s.image.height, s.image.width)};
  for (int n : grids) {
    if (n <= 1) continue;
    auto plan = plan_grid(s.image.height, s.image.width, GridSpec{n}, s.id);
    views.insert(views.end(), plan.views.begin(), plan.views.end());
  }
  return views;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

struct ViewTask {
  std::size_t sample = 0;
  View view;
};

inline std::vector<ViewTask> enumerate_tasks(const ingest::DatasetManifest& m, std::span<const int> grids) {
  std::vector<ViewTask> tasks;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    for (auto& v : plan_views(m.samples[i], grids)) tasks.push_back({i, std::move(v)});
  }
  return tasks;
}

inline void check_dimensions(const ingest::DatasetManifest& m, int max_grid) {
  for (const auto& s : m.samples) {
    if (s.image.height < max_grid || s.image.width < max_grid) {
      throw Error(ErrorCode::DimensionTooSmall, m.dataset_id + "/" + s.id + ": " + std::to_string(s.image.height) +
                                                    "x" + std::to_string(s.image.width) + " image is smaller than the " +
                                                    std::to_string(max_grid) + "x" + std::to_string(max_grid) + " grid");
    }
  }
}

inline std::vector<InferenceOutcome> run_inference(Adapter& adapter, const ingest::DatasetManifest& m,
                                                   const std::vector<ViewTask>& tasks,
                                                   const std::vector<std::string>& prompts,
                                                   ingest::CacheWriter* writer, int max_parallel,
                                                   std::atomic<long long>& calls) {
  std::vector<InferenceOutcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      {
        std::lock_guard lock(error_mu);
        if (first_error) return;
      }
      try {
        const ViewTask& t = tasks[i];
        const Sample& s = m.samples[t.sample];
        const Image view_image = crop(s.image, t.view);
        const InferenceRequest req{s, t.view, view_image, prompts[t.sample], m.dataset_id};
        ++calls;
        outcomes[i] = adapter.infer(req);
        if (writer != nullptr) {
          const auto& o = outcomes[i];
          writer->append(CacheRecord{make_cache_key(adapter.model_id(), req), o.raw_response, utc_timestamp(),
                                     o.attempts, o.error, o.detail});
        }
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const int workers = std::max(1, std::min<int>(max_parallel, static_cast<int>(tasks.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
  return outcomes;
}

}  // namespace detail

/// Lists every cache key a replay of `manifests` would need but `cache` lacks.
inline std::vector<CacheKey> missing_cache_keys(const ResponseCache& cache, const std::string& model,
                                                const std::vector<ingest::DatasetManifest>& manifests,
                                                std::span<const int> grids) {
  std::vector<CacheKey> missing;
  for (const auto& m : manifests) {
    for (const auto& s : m.samples) {
      const std::string hash = prompt_hash(render_prompt(m.prompt_template, s));
      for (const auto& v : plan_views(s, grids)) {
        CacheKey key{model, m.dataset_id, s.id, v.descriptor(), hash};
        if (!cache.contains(key)) missing.push_back(std::move(key));
      }
    }
  }
  return missing;
}

/// Runs inference, scoring and PCRI evaluation over already-loaded manifests.
inline PipelineOutput run_pipeline(const RunConfig& cfg, Adapter& adapter,
                                   const std::vector<ingest::DatasetManifest>& manifests,
                                   ingest::CacheWriter* writer = nullptr,
                                   const metrics::MetricRegistry& registry = metrics::MetricRegistry::builtin()) {
  const std::vector<int> grids = normalize_grids(cfg.grids);
  const int max_parallel = cfg.max_parallel > 0 ? cfg.max_parallel : adapter.max_parallel();
  const engine::EngineConfig engine_cfg{cfg.delta, cfg.bootstrap, cfg.epsilon_band, cfg.seed, cfg.bootstrap_threads};

  PipelineOutput out;
  std::atomic<long long> calls{0};
  std::vector<PcriResult> all_results;
  std::set<std::string> seen_datasets;

  for (const auto& m : manifests) {
    if (!seen_datasets.insert(m.dataset_id).second) {
      throw Error(ErrorCode::Config, "dataset id '" + m.dataset_id + "' appears in more than one manifest");
    }
    if (m.samples.empty()) throw Error(ErrorCode::EmptyDataset, "manifest '" + m.dataset_id + "' has no samples");
    detail::check_dimensions(m, grids.back());
    const metrics::Metric& metric = registry.get(m.metric);

    std::vector<std::string> prompts;
    prompts.reserve(m.samples.size());
    for (const auto& s : m.samples) prompts.push_back(render_prompt(m.prompt_template, s));

    const auto tasks = detail::enumerate_tasks(m, grids);
    const auto outcomes = detail::run_inference(adapter, m, tasks, prompts, writer, max_parallel, calls);

    DatasetRun run;
    run.dataset_id = m.dataset_id;
    run.records.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const Sample& s = m.samples[tasks[i].sample];
      ScoredRecord rec;
      rec.view = tasks[i].view;
      rec.raw_response = outcomes[i].raw_response;
      if (outcomes[i].ok()) {
        rec.normalized_answer = normalize_answer(rec.raw_response, m.task);
        rec.score = metrics::score_response(metric, rec.normalized_answer, s.ground_truth, m.task);
      } else {
        rec.failed = true;
        rec.error = std::string(to_string(outcomes[i].error)) +
                    (outcomes[i].detail.empty() ? "" : ": " + outcomes[i].detail);
      }
      run.records.push_back(std::move(rec));
    }
    std::sort(run.records.begin(), run.records.end(),
              [](const ScoredRecord& a, const ScoredRecord& b) { return view_less(a.view, b.view); });

    // Assemble the per-sample score matrix.
    std::vector<engine::SampleViewScores> matrix;
    std::map<std::string, std::size_t> row_of;
    int failed = 0;
    for (const auto& rec : run.records) {
      failed += rec.failed ? 1 : 0;
      auto [it, inserted] = row_of.emplace(rec.view.sample_id, matrix.size());
      if (inserted) matrix.push_back({rec.view.sample_id, 0.0, {}});
      auto& row = matrix[it->second];
      if (rec.view.kind == ViewKind::Full) {
        row.full_score = rec.score;
        row.patch_scores[1] = {rec.score};
      } else {
        auto& list = row.patch_scores[rec.view.grid.n];
        list.resize(static_cast<std::size_t>(rec.view.grid.n * rec.view.grid.n));
        list[static_cast<std::size_t>(rec.view.index())] = rec.score;
      }
    }

    // Chance floor; the shuffle estimate pairs full-view answers with references.
    engine::ChanceFloor floor;
    if (m.chance.kind == engine::ChanceKind::Shuffle) {
      std::map<std::string, std::size_t> sample_index;
      for (std::size_t i = 0; i < m.samples.size(); ++i) sample_index[m.samples[i].id] = i;
      std::vector<std::string> predictions;
      std::vector<std::vector<std::string>> references;
      for (const auto& rec : run.records) {
        if (rec.view.kind != ViewKind::Full) continue;
        predictions.push_back(rec.normalized_answer);
        std::vector<std::string> refs;
        for (const auto& g : m.samples[sample_index.at(rec.view.sample_id)].ground_truth) {
          refs.push_back(normalize_answer(g, m.task));
        }
        references.push_back(std::move(refs));
      }
      const engine::ShuffleInputs in{predictions, references, &metric, cfg.seed};
      floor = engine::chance_floor(m.chance, &in, m.dataset_id);
    } else {
      floor = engine::chance_floor(m.chance, nullptr, m.dataset_id);
    }

    const engine::DatasetContext ctx{adapter.model_id(), m.dataset_id, m.task, floor.value, failed};
    run.results = engine::evaluate(ctx, matrix, grids, metric, engine_cfg);
    all_results.insert(all_results.end(), run.results.begin(), run.results.end());
    out.datasets.push_back(std::move(run));
  }

  report::RunHeader header{cfg.seed, cfg.delta, cfg.bootstrap, cfg.epsilon_band, grids};
  out.bundle = report::build_bundle(std::move(header), std::move(all_results));
  out.adapter_calls = calls.load();
  const bool any_gated = std::any_of(out.bundle.results.begin(), out.bundle.results.end(),
                                     [](const PcriResult& r) { return r.gate != Gate::Valid; });
  out.exit_code = any_gated ? exit_code::kGated : exit_code::kOk;
  return out;
}

inline void write_outputs(const PipelineOutput& out, const std::string& model_id, const fs::path& dir) {
  fs::create_directories(dir);
  auto write = [&](const char* name, const std::string& body) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + (dir / name).string());
    f << body;
  };
  write("report.csv", report::render(out.bundle, report::Format::Csv));
  write("report.json", report::render(out.bundle, report::Format::Structured));
  write("report.md", report::render(out.bundle, report::Format::Markdown));

  std::ostringstream scored;
  for (const auto& d : out.datasets) {
    for (const auto& r : d.records) {
      nlohmann::ordered_json j = {{"model", model_id},
                                  {"dataset", d.dataset_id},
                                  {"sample", r.view.sample_id},
                                  {"view", r.view.descriptor()},
                                  {"bounds", {r.view.bounds.top, r.view.bounds.left, r.view.bounds.height,
                                              r.view.bounds.width}},
                                  {"raw_response", r.raw_response},
                                  {"normalized_answer", r.normalized_answer},
                                  {"score", r.score},
                                  {"failed", r.failed}};
      if (r.failed) j["error"] = r.error;
      scored << j.dump() << '\n';
    }
  }
  write("scored.jsonl", scored.str());
}

namespace detail {

inline std::vector<ingest::DatasetManifest> load_manifests(const RunConfig& cfg) {
  if (cfg.manifests.empty()) throw Error(ErrorCode::Config, "at least one --manifest is required");
  std::vector<ingest::DatasetManifest> out;
  for (const auto& p : cfg.manifests) out.push_back(ingest::load_manifest(p));
  return out;
}

inline std::string resolve_replay_model(const ResponseCache& cache, const ReplaySource& src) {
  if (!src.model.empty()) return src.model;
  const auto models = cache.models();
  if (models.size() != 1) {
    throw Error(ErrorCode::Config, "cache holds " + std::to_string(models.size()) + " models; pass --model");
  }
  return models.front();
}

inline int execute(const RunConfig& cfg, std::ostream& log, bool replay_only) {
  try {
    if (std::holds_alternative<std::monostate>(cfg.source)) {
      throw Error(ErrorCode::Config, "choose exactly one of --endpoint-url, --replay, --synthetic");
    }
    if (replay_only && !std::holds_alternative<ReplaySource>(cfg.source)) {
      throw Error(ErrorCode::Config, "score needs --replay");
    }
    const auto grids = normalize_grids(cfg.grids);
    const auto manifests = load_manifests(cfg);

    PipelineOutput out;
    std::string model_id;
    if (const auto* live_cfg = std::get_if<ModelEndpointConfig>(&cfg.source)) {
      LiveAdapter live(*live_cfg);
      const auto probe = live.probe();
      if (!probe.ok()) {
        throw Error(ErrorCode::Config, "endpoint probe failed: " + std::string(to_string(probe.error)) + " " +
                                           probe.detail);
      }
      fs::create_directories(cfg.out_dir);
      fs::remove(cfg.out_dir / "cache.jsonl");
      ingest::CacheWriter writer(cfg.out_dir / "cache.jsonl");
      out = run_pipeline(cfg, live, manifests, &writer);
      model_id = live.model_id();
    } else if (const auto* replay = std::get_if<ReplaySource>(&cfg.source)) {
      ResponseCache cache;
      std::vector<std::string> warnings;
      ingest::load_cache(replay->cache_path, cache, &warnings);
      for (const auto& w : warnings) log << "warning: " << w << '\n';
      model_id = resolve_replay_model(cache, *replay);
      const auto missing = missing_cache_keys(cache, model_id, manifests, grids);
      if (!missing.empty()) {
        std::string msg = std::to_string(missing.size()) + " missing cache keys:";
        for (const auto& k : missing) msg += "\n  " + k.to_string();
        throw Error(ErrorCode::CacheMiss, msg);
      }
      ReplayAdapter adapter(cache, model_id);
      out = run_pipeline(cfg, adapter, manifests);
    } else {
      const auto& spec = std::get<SyntheticModelSpec>(cfg.source);
      SyntheticAdapter adapter(spec, cfg.model_override);
      fs::create_directories(cfg.out_dir);
      fs::remove(cfg.out_dir / "cache.jsonl");
      ingest::CacheWriter writer(cfg.out_dir / "cache.jsonl");
      out = run_pipeline(cfg, adapter, manifests, &writer);
      model_id = adapter.model_id();
    }

    write_outputs(out, model_id, cfg.out_dir);
    int failed = 0;
    for (const auto& d : out.datasets) {
      for (const auto& r : d.records) failed += r.failed ? 1 : 0;
    }
    log << "model " << model_id << ": " << out.adapter_calls << " views evaluated, " << failed << " failed\n";
    for (const auto& g : out.bundle.flags.gated) {
      log << "gated: " << g.dataset_id << " n=" << g.n << " is near chance; PCRI not interpretable\n";
    }
    log << "report written to " << (cfg.out_dir / "report.md").string() << '\n';
    return out.exit_code;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return exit_code::kFatal;
  }
}

}  // namespace detail

/// Full pipeline. Exit 0 on success, 2 if any dataset is gated near chance, 1 on fatal errors.
inline int cmd_run(const RunConfig& cfg, std::ostream& log = std::cerr) { return detail::execute(cfg, log, false); }

/// Recomputes the report from a response cache only.
inline int cmd_score(const RunConfig& cfg, std::ostream& log = std::cerr) { return detail::execute(cfg, log, true); }

}  // namespace pcri
