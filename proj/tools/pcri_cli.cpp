// pcri: patch context robustness evaluation from the command line.
//
//   pcri synth --out data/syn --layout all_but_target --clean 10
//   pcri run   --manifest data/syn/manifest.jsonl --synthetic distractible:0 --out out
//   pcri score --manifest data/syn/manifest.jsonl --replay out/cache.jsonl --out out2
//   pcri run   --manifest bench.jsonl --endpoint-url http://localhost:8000/v1 --model my-vlm

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcri/pcri.hpp"

namespace {

struct CommonFlags {
  std::vector<std::string> manifests;
  std::vector<int> grids{1, 2, 3};
  std::uint64_t seed = 0;
  double delta = 0.01;
  int bootstrap = 1000;
  double epsilon = 0.02;
  std::string out = "pcri_out";
  int max_parallel = 0;
  std::string model;
  std::string replay;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--manifest", f.manifests, "Dataset manifest (JSON lines); repeatable")->required();
  cmd->add_option("--grids", f.grids, "Grid sizes n, comma separated (1 is always included)")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "Seed for bootstrap and shuffle floors")->capture_default_str();
  cmd->add_option("--delta", f.delta, "Gate margin delta")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--bootstrap", f.bootstrap, "Bootstrap resamples B")->capture_default_str()->check(CLI::Range(2, 1000000));
  cmd->add_option("--epsilon", f.epsilon, "Half-width of the Robust band")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
  cmd->add_option("--max-parallel", f.max_parallel, "Concurrent inference requests")->check(CLI::NonNegativeNumber);
  cmd->add_option("--model", f.model, "Model name (endpoint model, or model key in a replay cache)");
  cmd->add_option("--replay", f.replay, "Replay responses from this cache file");
}

pcri::RunConfig to_config(const CommonFlags& f) {
  pcri::RunConfig cfg;
  for (const auto& m : f.manifests) cfg.manifests.emplace_back(m);
  cfg.grids = f.grids;
  cfg.seed = f.seed;
  cfg.delta = f.delta;
  cfg.bootstrap = f.bootstrap;
  cfg.epsilon_band = f.epsilon;
  cfg.out_dir = f.out;
  cfg.max_parallel = f.max_parallel;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch Context Robustness Index (PCRI) evaluation harness"};
  app.require_subcommand(1);

  // run -----------------------------------------------------------------------
  CommonFlags run_flags;
  std::string endpoint_url;
  std::string synthetic;
  pcri::ModelEndpointConfig endpoint;
  auto* run = app.add_subcommand("run", "Evaluate a model on full images and patch grids");
  add_common(run, run_flags);
  auto* url_opt = run->add_option("--endpoint-url", endpoint_url, "Chat-completions base URL, e.g. http://host:8000/v1");
  auto* syn_opt = run->add_option("--synthetic", synthetic, "Synthetic oracle: local | distractible[:T] | global[:C]");
  run->add_option("--token-env", endpoint.auth_token_env_var_name, "Environment variable holding the bearer token")
      ->capture_default_str();
  run->add_option("--timeout", endpoint.timeout_s, "Per-request timeout in seconds")->capture_default_str();
  run->add_option("--retries", endpoint.retry.max_attempts, "Attempts per view (transport errors, 429, 5xx)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  run->add_option("--backoff", endpoint.retry.backoff_base_s, "Base retry backoff in seconds")->capture_default_str();
  url_opt->excludes(syn_opt);

  // score ---------------------------------------------------------------------
  CommonFlags score_flags;
  auto* score = app.add_subcommand("score", "Recompute a report from a response cache");
  add_common(score, score_flags);

  // synth ---------------------------------------------------------------------
  pcri::ingest::SyntheticDatasetSpec spec;
  std::string synth_out = "synthetic";
  std::string layout = "none";
  std::vector<int> synth_grids{2, 3};
  auto* synth = app.add_subcommand("synth", "Generate a synthetic fixture dataset with closed-form expectations");
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--dataset-id", spec.dataset_id)->capture_default_str();
  synth->add_option("--samples", spec.n_samples)->capture_default_str();
  synth->add_option("--height", spec.height)->capture_default_str();
  synth->add_option("--width", spec.width)->capture_default_str();
  synth->add_option("--target-grid", spec.target_grid)->capture_default_str();
  synth->add_option("--target-row", spec.target_row)->capture_default_str();
  synth->add_option("--target-col", spec.target_col)->capture_default_str();
  synth->add_option("--layout", layout, "none | all_but_target")
      ->check(CLI::IsMember({"none", "all_but_target"}))
      ->capture_default_str();
  synth->add_option("--clean", spec.clean_samples, "Leading samples without distractors")->capture_default_str();
  synth->add_option("--choices", spec.num_choices)->capture_default_str();
  synth->add_option("--seed", spec.seed)->capture_default_str();
  synth->add_option("--grids", synth_grids, "Grids for the expected values")->delimiter(',')->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    pcri::RunConfig cfg = to_config(run_flags);
    const int sources = (endpoint_url.empty() ? 0 : 1) + (synthetic.empty() ? 0 : 1) + (run_flags.replay.empty() ? 0 : 1);
    if (sources != 1) {
      std::cerr << "error: choose exactly one of --endpoint-url, --replay, --synthetic\n";
      return pcri::exit_code::kFatal;
    }
    try {
      if (!endpoint_url.empty()) {
        if (run_flags.model.empty()) {
          std::cerr << "error: --endpoint-url requires --model\n";
          return pcri::exit_code::kFatal;
        }
        endpoint.base_url = endpoint_url;
        endpoint.model_name = run_flags.model;
        if (run_flags.max_parallel > 0) endpoint.max_parallel_requests = run_flags.max_parallel;
        cfg.source = endpoint;
      } else if (!synthetic.empty()) {
        cfg.source = pcri::SyntheticModelSpec::parse(synthetic);
        cfg.model_override = run_flags.model;
      } else {
        cfg.source = pcri::ReplaySource{run_flags.replay, run_flags.model};
      }
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return pcri::exit_code::kFatal;
    }
    return pcri::cmd_run(cfg);
  }

  if (score->parsed()) {
    if (score_flags.replay.empty()) {
      std::cerr << "error: score requires --replay\n";
      return pcri::exit_code::kFatal;
    }
    pcri::RunConfig cfg = to_config(score_flags);
    cfg.source = pcri::ReplaySource{score_flags.replay, score_flags.model};
    return pcri::cmd_score(cfg);
  }

  try {
    spec.layout = layout == "all_but_target" ? pcri::ingest::DistractorLayout::AllButTarget
                                             : pcri::ingest::DistractorLayout::None;
    const auto ds = pcri::ingest::generate_synthetic_dataset(spec, synth_out, synth_grids);
    std::cout << "wrote " << ds.manifest.samples.size() << " samples to " << ds.manifest_path.string() << '\n'
              << "closed-form expectations in " << (std::filesystem::path(synth_out) / "expected.json").string()
              << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pcri::exit_code::kFatal;
  }
  return pcri::exit_code::kOk;
}
