// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "pcri/pcri.hpp"
#include "test_support.hpp"

namespace {

using namespace pcri;
using Clock = std::chrono::steady_clock;

struct Check {
  bool ok = true;
  std::string why;
  void expect(bool cond, const std::string& msg) {
    if (!cond && ok) {
      ok = false;
      why = msg;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const metrics::Metric& em() { return metrics::MetricRegistry::builtin().get("exact_match"); }

// Synthetic dataset under `dir`, then cmd_run with the given oracle model; returns the result at n=2.
std::optional<PcriResult> synthetic_result(const testing::TempDir& dir, const std::string& model, int clean,
                                           ingest::DistractorLayout layout, Check& c) {
  ingest::SyntheticDatasetSpec spec;
  spec.n_samples = 20;
  spec.clean_samples = clean;
  spec.layout = layout;
  const auto ds = ingest::generate_synthetic_dataset(spec, dir / model, std::vector<int>{2, 3});
  RunConfig cfg;
  cfg.manifests = {ds.manifest_path};
  cfg.source = SyntheticModelSpec::parse(model);
  cfg.out_dir = dir / (model + "_out");
  std::ostringstream log;
  const int code = cmd_run(cfg, log);
  c.expect(code == 0, "cmd_run exit " + std::to_string(code) + ": " + log.str());
  const auto j = nlohmann::json::parse(testing::slurp(cfg.out_dir / "report.json"));
  for (const auto& r : j["results"]) {
    if (r["n"] != 2) continue;
    PcriResult out;
    out.p_whole = r["p_whole"];
    out.p_patch = r["p_patch"];
    if (!r["pcri"].is_null()) out.pcri = r["pcri"].get<double>();
    out.label = r["label"] == "Robust"               ? Label::Robust
                : r["label"] == "GlobalDistracts"    ? Label::GlobalDistracts
                : r["label"] == "NeedsGlobalContext" ? Label::NeedsGlobalContext
                                                     : Label::Unreliable;
    return out;
  }
  c.expect(false, "no n=2 row in report.json");
  return std::nullopt;
}

Check formula_fidelity() {
  Check c;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double whole = std::nextafter(0.0, 1.0) + u(rng);
    const double patch = u(rng);
    const auto v = engine::compute_pcri(patch, whole);
    c.expect(v && std::abs(*v - (1.0 - patch / whole)) <= 1e-12, "mismatch at pair " + std::to_string(i));
  }
  c.expect(!engine::compute_pcri(0.4, 0.0).has_value(), "p_whole = 0 is not undefined");
  c.expect(seconds_since(t0) < 1.0, "runtime over 1 s");
  return c;
}

Check max_aggregation() {
  Check c;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int samples = 1 + static_cast<int>(rng() % 50);
    const int n = 1 + static_cast<int>(rng() % 3);
    std::vector<engine::SampleViewScores> rows;
    double oracle_sum = 0.0;
    for (int i = 0; i < samples; ++i) {
      std::vector<double> p(static_cast<std::size_t>(n * n));
      for (auto& x : p) x = std::floor(u(rng) * 8) / 8;
      double best = p[0];
      for (double x : p) best = x > best ? x : best;
      oracle_sum += best;
      rows.push_back({"s" + std::to_string(i), u(rng), {{n, p}}});
    }
    const double got = engine::compute_p_patch(rows, n, em());
    c.expect(got == oracle_sum / samples, "trial " + std::to_string(trial) + " differs from brute force");
  }
  c.expect(seconds_since(t0) < 1.0, "runtime over 1 s");
  return c;
}

Check local_solver() {
  Check c;
  const auto t0 = Clock::now();
  testing::TempDir dir("acc_local");
  const auto r = synthetic_result(dir, "local", 0, ingest::DistractorLayout::None, c);
  if (r) {
    c.expect(r->pcri && report::format_pcri(r->pcri) == "0.0000" && *r->pcri == 0.0, "PCRI_2 is not 0.0000");
    c.expect(r->label == Label::Robust, "label is not Robust");
  }
  c.expect(seconds_since(t0) < 10.0, "runtime over 10 s");
  return c;
}

Check distractible() {
  Check c;
  testing::TempDir dir("acc_distract");
  const auto r = synthetic_result(dir, "distractible:0", 10, ingest::DistractorLayout::AllButTarget, c);
  if (r) {
    c.expect(r->p_whole == 0.5, "P_whole != 0.5");
    c.expect(r->p_patch == 1.0, "P_patch,2 != 1.0");
    c.expect(r->pcri && *r->pcri == -1.0, "PCRI_2 != -1.0");
    c.expect(r->label == Label::GlobalDistracts, "label is not GlobalDistracts");
  }
  return c;
}

Check global_integrator() {
  Check c;
  testing::TempDir dir("acc_global");
  const auto r = synthetic_result(dir, "global:1", 0, ingest::DistractorLayout::None, c);
  if (r) {
    c.expect(r->pcri && *r->pcri == 1.0, "PCRI_2 != 1.0");
    c.expect(r->label == Label::NeedsGlobalContext, "label is not NeedsGlobalContext");
  }
  return c;
}

Check bootstrap() {
  Check c;
  const auto t0 = Clock::now();
  std::vector<double> scores(400);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = i % 2 ? 1.0 : 0.0;
  const double expected = std::sqrt(0.5 * 0.5 / 400.0);
  for (std::uint64_t seed : {0u, 1u, 2u, 3u, 4u}) {
    const double se = engine::bootstrap_se(scores, 1000, seed);
    c.expect(std::abs(se - expected) / expected <= 0.15, "seed " + std::to_string(seed) + " SE " + std::to_string(se));
    c.expect(se == engine::bootstrap_se(scores, 1000, seed), "seed " + std::to_string(seed) + " not reproducible");
  }
  c.expect(seconds_since(t0) < 5.0, "runtime over 5 s");
  return c;
}

Check gate() {
  Check c;
  auto v = engine::validity_gate(0.30, 0.02, 0.25);
  c.expect(v.delta_min == 0.04 && v.gate == Gate::Valid, "(0.30, 0.02, 0.25) not Valid with delta_min 0.04");
  v = engine::validity_gate(0.255, 0.001, 0.25);
  c.expect(v.delta_min == 0.01 && v.gate == Gate::NearChanceUnstable, "(0.255, 0.001, 0.25) not gated");
  v = engine::validity_gate(0.25, 0.0, 0.25);
  c.expect(v.gate == Gate::NearChanceUnstable, "(0.25, 0.0, 0.25) not gated");

  PcriResult valid{"m", "a", TaskType::MultipleChoice, 2, 0.5, 0.6, -0.2, 0.01, 0.25, 0.02,
                   Gate::Valid, Label::GlobalDistracts, 20, 0};
  PcriResult gated = valid;
  gated.dataset_id = "b";
  gated.p_whole = 0.255;
  gated.pcri = 0.8;
  gated.gate = Gate::NearChanceUnstable;
  gated.label = engine::interpret(gated.pcri, gated.gate);
  c.expect(gated.label == Label::Unreliable, "gated label is not Unreliable");
  const auto b = report::build_bundle({}, {valid, gated});
  const auto csv = report::render(b, report::Format::Csv);
  c.expect(csv.find("m,b,2,0.2550,0.6000,0.8000,0.0100,0.2500,NearChanceUnstable,Unreliable,20,0") != std::string::npos,
           "gated row not rendered with gate flag");
  c.expect(b.rollups.size() == 1 && b.rollups[0].mean_pcri == -0.2 && b.rollups[0].datasets == 1,
           "rollup includes the gated row");
  c.expect(b.flags.gated.size() == 1 && b.flags.gated[0].p_whole == 0.255, "gated pair not flagged");
  return c;
}

Check tiling() {
  Check c;
  std::mt19937_64 rng(8);
  for (int n = 1; n <= 5; ++n) {
    for (int h = n; h <= 64; ++h) {
      for (int w = n; w <= 64; ++w) {
        const auto plan = plan_grid(h, w, GridSpec{n});
        std::vector<int> cover(static_cast<std::size_t>(h * w), 0);
        for (const auto& v : plan.views) {
          for (int r = v.bounds.top; r < v.bounds.bottom(); ++r) {
            for (int col = v.bounds.left; col < v.bounds.right(); ++col) ++cover[static_cast<std::size_t>(r * w + col)];
          }
        }
        const bool exact = std::all_of(cover.begin(), cover.end(), [](int k) { return k == 1; });
        c.expect(exact, "plan " + std::to_string(h) + "x" + std::to_string(w) + " n=" + std::to_string(n) +
                            " does not tile exactly");
        Image img(h, w);
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng());
        std::vector<Image> tiles;
        for (const auto& v : plan.views) tiles.push_back(crop(img, v));
        c.expect(stitch(plan, tiles) == img, "crops of " + std::to_string(h) + "x" + std::to_string(w) +
                                                 " n=" + std::to_string(n) + " do not reassemble");
      }
    }
  }
  return c;
}

Check cost_model() {
  Check c;
  ingest::SyntheticDatasetSpec spec;
  spec.n_samples = 13;
  const auto m = ingest::build_synthetic_manifest(spec);
  SyntheticAdapter inner(SyntheticModelSpec::parse("local"));
  testing::CountingAdapter counting(inner);
  RunConfig cfg;
  cfg.grids = {2, 3};
  const auto out = run_pipeline(cfg, counting, {m});
  c.expect(counting.calls.load() == 14 * 13, "adapter saw " + std::to_string(counting.calls.load()) + " calls");
  c.expect(out.adapter_calls == 14 * 13, "pipeline counted " + std::to_string(out.adapter_calls) + " calls");
  return c;
}

Check replay() {
  Check c;
  testing::TempDir dir("acc_replay");
  ingest::SyntheticDatasetSpec spec;
  spec.layout = ingest::DistractorLayout::AllButTarget;
  spec.clean_samples = 10;
  const auto ds = ingest::generate_synthetic_dataset(spec, dir / "syn", std::vector<int>{2, 3});
  RunConfig run;
  run.manifests = {ds.manifest_path};
  run.source = SyntheticModelSpec::parse("distractible:0");
  run.out_dir = dir / "run";
  std::ostringstream log;
  c.expect(cmd_run(run, log) == 0, "cmd_run failed: " + log.str());
  RunConfig score = run;
  score.source = ReplaySource{dir / "run" / "cache.jsonl", ""};
  score.out_dir = dir / "score";
  c.expect(cmd_score(score, log) == 0, "cmd_score failed: " + log.str());
  for (const char* f : {"report.csv", "report.json", "report.md"}) {
    c.expect(testing::slurp(dir / "run" / f) == testing::slurp(dir / "score" / f), std::string(f) + " differs");
  }
  return c;
}

Check published_values() {
  Check c;
  c.expect(engine::interpret(0.237, Gate::Valid) == Label::NeedsGlobalContext, "ChartQA 0.237");
  c.expect(engine::interpret(-0.038, Gate::Valid) == Label::GlobalDistracts, "AMBER -0.038");
  c.expect(engine::interpret(-0.516, Gate::Valid) == Label::GlobalDistracts, "BLINK -0.516");
  return c;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Check()>>> criteria = {
      {"formula fidelity (1000 pairs, tol 1e-12, < 1 s)", formula_fidelity},
      {"max-aggregation oracle (200 matrices, exact, < 1 s)", max_aggregation},
      {"LocalSolver PCRI_2 = 0.0000, Robust (< 10 s)", local_solver},
      {"Distractible P_whole 0.5, P_patch 1.0, PCRI_2 -1.0, GlobalDistracts", distractible},
      {"GlobalIntegrator PCRI_2 = 1.0, NeedsGlobalContext", global_integrator},
      {"bootstrap SE within 15% of 0.025 for 5 seeds, reproducible (< 5 s)", bootstrap},
      {"validity gate examples, gated rows Unreliable and excluded from rollups", gate},
      {"tiling exact and crops reassemble for H, W in [n, 64], n in 1..5", tiling},
      {"grids {2,3} cost exactly 14 adapter calls per sample", cost_model},
      {"run then score yields byte-identical reports", replay},
      {"published PCRI values map to the expected labels", published_values},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      c = criteria[i].second();
    } catch (const std::exception& e) {
      c.ok = false;
      c.why = std::string("exception: ") + e.what();
    }
    std::cout << (c.ok ? "[PASS]" : "[FAIL]") << " criterion " << (i + 1) << ": " << criteria[i].first;
    if (!c.ok) std::cout << " -- " << c.why;
    std::cout << '\n';
    failures += c.ok ? 0 : 1;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
