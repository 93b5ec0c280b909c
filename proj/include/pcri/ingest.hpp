#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcri/adapters.hpp"
#include "pcri/core.hpp"
#include "pcri/engine.hpp"
#include "pcri/image.hpp"
#include "pcri/metrics.hpp"
#include "pcri/patcher.hpp"

namespace pcri::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

struct DatasetManifest {
  std::string dataset_id;
  TaskType task = TaskType::OpenVQA;
  std::string metric;
  engine::ChanceSpec chance;
  std::string prompt_template = "{query}";
  std::vector<Sample> samples;
  fs::path base_dir;
};

inline json bounds_to_json(const PixelBounds& b) { return json::array({b.top, b.left, b.height, b.width}); }

inline PixelBounds bounds_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("bounds must be [top, left, height, width]");
  return PixelBounds{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

inline json chance_to_json(const engine::ChanceSpec& c) {
  switch (c.kind) {
    case engine::ChanceKind::Balanced: return {{"kind", "balanced"}, {"num_classes", c.num_classes}};
    case engine::ChanceKind::ClassPrior: return {{"kind", "class_prior"}, {"priors", c.priors}};
    case engine::ChanceKind::Retrieval: return {{"kind", "retrieval"}, {"k", c.k}, {"n", c.candidates}};
    case engine::ChanceKind::Documented: return {{"kind", "documented"}, {"value", c.value}};
    case engine::ChanceKind::Shuffle: return {{"kind", "shuffle"}, {"rounds", c.shuffle_rounds}};
  }
  return {};
}

/// Parses and checks a chance spec against the dataset's task type.
inline engine::ChanceSpec chance_from_json(const json& j, TaskType task) {
  auto bad = [](const std::string& why) { return Error(ErrorCode::InvalidChanceSpec, why); };
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) throw bad("chance needs a string 'kind'");
  const auto kind = j["kind"].get<std::string>();
  const bool classification = task == TaskType::MultipleChoice || task == TaskType::YesNo;
  engine::ChanceSpec c;
  try {
    if (kind == "balanced") {
      c.kind = engine::ChanceKind::Balanced;
      c.num_classes = j.at("num_classes").get<int>();
      if (!classification) throw bad("balanced floor applies to multiple_choice or yes_no tasks only");
      if (c.num_classes < 2) throw bad("balanced floor needs num_classes >= 2");
      if (task == TaskType::YesNo && c.num_classes != 2) throw bad("yes_no tasks have exactly 2 classes");
    } else if (kind == "class_prior") {
      c.kind = engine::ChanceKind::ClassPrior;
      c.priors = j.at("priors").get<std::vector<double>>();
      if (!classification) throw bad("class_prior floor applies to multiple_choice or yes_no tasks only");
      if (c.priors.size() < 2) throw bad("class_prior needs at least 2 priors");
      if (task == TaskType::YesNo && c.priors.size() != 2) throw bad("yes_no tasks have exactly 2 priors");
      double sum = 0.0;
      for (double p : c.priors) {
        if (!(p >= 0.0 && p <= 1.0)) throw bad("priors must lie in [0, 1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-6) throw bad("priors must sum to 1");
      if (*std::max_element(c.priors.begin(), c.priors.end()) >= 1.0) throw bad("a prior of 1 leaves no headroom");
    } else if (kind == "retrieval") {
      c.kind = engine::ChanceKind::Retrieval;
      c.k = j.at("k").get<int>();
      c.candidates = j.at("n").get<int>();
      if (c.k < 1 || c.candidates <= c.k) throw bad("retrieval floor needs 1 <= k < n");
    } else if (kind == "documented") {
      c.kind = engine::ChanceKind::Documented;
      c.value = j.at("value").get<double>();
      if (!(c.value >= 0.0 && c.value < 1.0)) throw bad("documented floor must lie in [0, 1)");
    } else if (kind == "shuffle") {
      c.kind = engine::ChanceKind::Shuffle;
      c.shuffle_rounds = j.value("rounds", 100);
      if (c.shuffle_rounds < 1) throw bad("shuffle rounds must be >= 1");
    } else {
      throw bad("unknown chance kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw bad(std::string("malformed chance spec: ") + e.what());
  }
  return c;
}

inline json scene_to_json(const Scene& s) {
  json d = json::array();
  for (const auto& b : s.distractors) d.push_back(bounds_to_json(b));
  return {{"target", bounds_to_json(s.target)},
          {"answer", s.answer},
          {"wrong_answer", s.wrong_answer},
          {"distractors", d}};
}

inline Scene scene_from_json(const json& j) {
  Scene s;
  s.target = bounds_from_json(j.at("target"));
  s.answer = j.at("answer").get<std::string>();
  s.wrong_answer = j.at("wrong_answer").get<std::string>();
  for (const auto& d : j.value("distractors", json::array())) s.distractors.push_back(bounds_from_json(d));
  return s;
}

/// Reads a JSON-lines manifest: the first record carries dataset fields, each
/// later record one sample. Images are decoded eagerly, relative to the
/// manifest's directory.
inline DatasetManifest load_manifest(const fs::path& path,
                                     const metrics::MetricRegistry& registry = metrics::MetricRegistry::builtin()) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::set<std::string> seen;
  bool have_header = false;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(lineno); };
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw Error(ErrorCode::ParseError, where() + ": not a JSON object");
    try {
      if (!have_header) {
        have_header = true;
        m.dataset_id = rec.at("dataset_id").get<std::string>();
        const auto task_name = rec.at("task").get<std::string>();
        const auto task = parse_task_type(task_name);
        if (!task) throw Error(ErrorCode::ParseError, where() + ": unknown task '" + task_name + "'");
        m.task = *task;
        m.metric = rec.value("metric", metrics::default_metric_id(m.task));
        if (!registry.contains(m.metric)) {
          throw Error(ErrorCode::UnknownMetric, where() + ": metric '" + m.metric + "' is not registered");
        }
        if (!rec.contains("chance")) throw Error(ErrorCode::InvalidChanceSpec, where() + ": header has no 'chance'");
        m.chance = chance_from_json(rec["chance"], m.task);
        m.prompt_template = rec.value("prompt_template", std::string("{query}"));
        continue;
      }
      Sample s;
      s.task = m.task;
      s.id = rec.at("id").get<std::string>();
      if (s.id.empty()) throw Error(ErrorCode::ParseError, where() + ": empty sample id");
      if (!seen.insert(s.id).second) {
        throw Error(ErrorCode::DuplicateSampleId, where() + ": duplicate sample id '" + s.id + "'");
      }
      s.image_path = rec.at("image").get<std::string>();
      s.query = rec.at("query").get<std::string>();
      s.ground_truth = rec.at("ground_truth").get<std::vector<std::string>>();
      if (s.ground_truth.empty()) throw Error(ErrorCode::ParseError, where() + ": ground_truth is empty");
      if (rec.contains("choices")) s.choices = rec["choices"].get<std::vector<std::string>>();
      if (s.choices.has_value() != (m.task == TaskType::MultipleChoice)) {
        throw Error(ErrorCode::ParseError, where() + ": 'choices' must be present exactly for multiple_choice");
      }
      if (rec.contains("scene")) s.scene = scene_from_json(rec["scene"]);

      const fs::path image_file = m.base_dir / s.image_path;
      if (!fs::is_regular_file(image_file)) {
        throw Error(ErrorCode::MissingImage, where() + ": image not found: " + image_file.string());
      }
      try {
        s.image = image::load(image_file);
      } catch (const Error&) {
        throw Error(ErrorCode::MissingImage, where() + ": image not decodable: " + image_file.string());
      }
      m.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, where() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw Error(ErrorCode::ParseError, where() + ": " + e.what());
    }
  }
  if (!have_header) throw Error(ErrorCode::ParseError, path.string() + ": manifest has no header record");
  return m;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest " + path.string());
  json header = {{"dataset_id", m.dataset_id},
                 {"task", to_string(m.task)},
                 {"metric", m.metric},
                 {"chance", chance_to_json(m.chance)},
                 {"prompt_template", m.prompt_template}};
  out << header.dump() << '\n';
  for (const auto& s : m.samples) {
    json rec = {{"id", s.id}, {"image", s.image_path}, {"query", s.query}, {"ground_truth", s.ground_truth}};
    if (s.choices) rec["choices"] = *s.choices;
    if (s.scene) rec["scene"] = scene_to_json(*s.scene);
    out << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Response cache files
// ---------------------------------------------------------------------------

inline json cache_record_to_json(const CacheRecord& r) {
  json j = {{"model", r.key.model},         {"dataset", r.key.dataset},   {"sample", r.key.sample},
            {"view", r.key.view},           {"prompt_hash", r.key.prompt_hash}, {"raw_response", r.raw_response},
            {"timestamp", r.timestamp},     {"attempts", r.attempt_count}};
  if (r.error != InferenceError::None) {
    j["error"] = to_string(r.error);
    j["error_detail"] = r.error_detail;
  }
  return j;
}

/// Loads a JSON-lines cache. Later duplicates of a key are dropped and reported in `warnings`.
inline void load_cache(const fs::path& path, ResponseCache& cache, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open cache " + path.string());
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::ParseError, where + ": not a JSON object");
    CacheRecord r;
    try {
      r.key = CacheKey{j.at("model").get<std::string>(), j.at("dataset").get<std::string>(),
                       j.at("sample").get<std::string>(), j.at("view").get<std::string>(),
                       j.at("prompt_hash").get<std::string>()};
      r.raw_response = j.at("raw_response").get<std::string>();
      r.timestamp = j.value("timestamp", std::string());
      r.attempt_count = j.value("attempts", 1);
      if (j.contains("error")) {
        const auto name = j["error"].get<std::string>();
        r.error = parse_inference_error(name);
        if (r.error == InferenceError::None) throw Error(ErrorCode::ParseError, where + ": unknown error '" + name + "'");
        r.error_detail = j.value("error_detail", std::string());
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    const std::string key_text = r.key.to_string();
    if (!cache.insert(std::move(r)) && warnings != nullptr) {
      warnings->push_back(where + ": duplicate cache key " + key_text + " ignored");
    }
  }
}

/// Append-only cache file; concurrent writers are serialized line by line.
class CacheWriter {
 public:
  explicit CacheWriter(const fs::path& path) : out_(path, std::ios::app) {
    if (!out_) throw Error(ErrorCode::Io, "cannot open cache for append: " + path.string());
  }

  void append(const CacheRecord& r) {
    const std::string line = cache_record_to_json(r).dump();
    std::lock_guard lock(mu_);
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

enum class DistractorLayout { None, AllButTarget };

struct SyntheticDatasetSpec {
  std::string dataset_id = "synthetic";
  int n_samples = 20;
  int height = 64;
  int width = 64;
  int target_grid = 2;
  int target_row = 0;
  int target_col = 0;
  DistractorLayout layout = DistractorLayout::None;
  // With AllButTarget, the first `clean_samples` samples carry no distractors.
  int clean_samples = 0;
  int num_choices = 8;
  std::uint64_t seed = 0;
};

struct ClosedForm {
  double p_whole = 0.0;
  std::map<int, double> p_patch;
  std::map<int, PcriValue> pcri;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  fs::path manifest_path;
};

namespace detail {

struct NamedColor {
  const char* name;
  std::uint8_t r, g, b;
};

inline constexpr NamedColor kPalette[] = {
    {"red", 220, 30, 30},     {"green", 30, 160, 60},  {"blue", 30, 60, 220},     {"yellow", 230, 210, 20},
    {"purple", 130, 40, 170}, {"orange", 240, 130, 20}, {"cyan", 20, 200, 210},    {"brown", 120, 70, 30},
    {"pink", 240, 120, 180},  {"gray", 128, 128, 128}, {"black", 10, 10, 10},     {"olive", 110, 120, 30},
};

inline constexpr int kPaletteSize = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));

// Square glyph a quarter of the tile's short side, centred in the tile.
inline PixelBounds glyph_in(const PixelBounds& tile) {
  const int side = std::max(1, std::min(tile.height, tile.width) / 4);
  return PixelBounds{tile.top + (tile.height - side) / 2, tile.left + (tile.width - side) / 2, side, side};
}

inline std::string letter(int i) { return std::string(1, static_cast<char>('A' + i)); }

}  // namespace detail

inline void validate(const SyntheticDatasetSpec& spec) {
  auto bad = [](const std::string& why) { return Error(ErrorCode::InvalidSpec, why); };
  if (spec.dataset_id.empty()) throw bad("dataset_id is empty");
  if (spec.n_samples < 1) throw bad("n_samples must be >= 1");
  if (spec.target_grid < 1) throw bad("target grid must be >= 1");
  if (spec.target_row < 0 || spec.target_row >= spec.target_grid || spec.target_col < 0 ||
      spec.target_col >= spec.target_grid) {
    throw bad("target cell lies outside its grid");
  }
  if (spec.height / spec.target_grid < 4 || spec.width / spec.target_grid < 4) {
    throw bad("tiles must be at least 4x4 px to hold a glyph strictly inside");
  }
  if (spec.num_choices < 2 || spec.num_choices > detail::kPaletteSize) {
    throw bad("num_choices must lie in [2, " + std::to_string(detail::kPaletteSize) + "]");
  }
  if (spec.clean_samples < 0 || spec.clean_samples > spec.n_samples) throw bad("clean_samples out of range");
}

/// Builds scenes, rasters and the manifest in memory (no files written).
inline DatasetManifest build_synthetic_manifest(const SyntheticDatasetSpec& spec) {
  validate(spec);
  const auto plan = plan_grid(spec.height, spec.width, GridSpec{spec.target_grid});
  const std::size_t target_index = static_cast<std::size_t>(spec.target_row * spec.target_grid + spec.target_col);
  const PixelBounds target = detail::glyph_in(plan.views[target_index].bounds);

  std::vector<std::string> choices;
  for (int i = 0; i < spec.num_choices; ++i) choices.emplace_back(detail::kPalette[i].name);

  DatasetManifest m;
  m.dataset_id = spec.dataset_id;
  m.task = TaskType::MultipleChoice;
  m.metric = "exact_match";
  m.chance.kind = engine::ChanceKind::Balanced;
  m.chance.num_classes = spec.num_choices;
  m.prompt_template = "{query}\n{choices}\nAnswer with the option letter.";

  std::mt19937_64 rng(spec.seed);
  const int width_digits = std::max(3, static_cast<int>(std::to_string(spec.n_samples - 1).size()));
  for (int i = 0; i < spec.n_samples; ++i) {
    const int answer = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_choices));
    const int wrong = (answer + 1) % spec.num_choices;

    Scene scene;
    scene.target = target;
    scene.answer = detail::letter(answer);
    scene.wrong_answer = detail::letter(wrong);
    const bool distracted = spec.layout == DistractorLayout::AllButTarget && i >= spec.clean_samples;
    if (distracted) {
      for (std::size_t j = 0; j < plan.views.size(); ++j) {
        if (j != target_index) scene.distractors.push_back(detail::glyph_in(plan.views[j].bounds));
      }
    }

    Image img(spec.height, spec.width, 255);
    const auto& tc = detail::kPalette[answer];
    image::fill_rect(img, scene.target, tc.r, tc.g, tc.b);
    const auto& dc = detail::kPalette[wrong];
    for (const auto& d : scene.distractors) image::fill_rect(img, d, dc.r, dc.g, dc.b);

    std::string id = std::to_string(i);
    id = "s" + std::string(static_cast<std::size_t>(width_digits) - id.size(), '0') + id;

    Sample s;
    s.id = id;
    s.image_path = "images/" + id + ".png";
    s.image = std::move(img);
    s.query = "What color is the small square marker?";
    s.ground_truth = {scene.answer};
    s.task = TaskType::MultipleChoice;
    s.choices = choices;
    s.scene = std::move(scene);
    m.samples.push_back(std::move(s));
  }
  return m;
}

/// Exact expected P_whole, P_patch and PCRI of a synthetic model on a
/// manifest whose samples all carry scenes, derived from tile geometry.
inline ClosedForm closed_form(const DatasetManifest& m, const SyntheticModelSpec& model, std::span<const int> grids) {
  ClosedForm cf;
  if (m.samples.empty()) throw Error(ErrorCode::EmptyDataset, "no samples");
  const double count = static_cast<double>(m.samples.size());

  auto solves = [&](const Scene& sc, const PixelBounds& tile, long long image_area) {
    if (!tile.contains(sc.target)) return false;
    if (model.kind == SyntheticKind::Distractible) {
      const auto hits = std::count_if(sc.distractors.begin(), sc.distractors.end(),
                                      [&](const PixelBounds& d) { return tile.intersects(d); });
      return hits <= model.threshold;
    }
    if (model.kind == SyntheticKind::GlobalIntegrator) {
      return static_cast<double>(tile.area()) >= model.coverage_fraction * static_cast<double>(image_area);
    }
    return true;
  };

  int whole_hits = 0;
  std::map<int, int> patch_hits;
  for (const auto& s : m.samples) {
    if (!s.scene) throw Error(ErrorCode::InvalidSpec, "sample '" + s.id + "' has no scene");
    const long long area = static_cast<long long>(s.image.height) * s.image.width;
    whole_hits += solves(*s.scene, PixelBounds{0, 0, s.image.height, s.image.width}, area) ? 1 : 0;
    for (int n : grids) {
      if (n <= 1) continue;
      const auto plan = plan_grid(s.image.height, s.image.width, GridSpec{n});
      const bool any = std::any_of(plan.views.begin(), plan.views.end(),
                                   [&](const View& v) { return solves(*s.scene, v.bounds, area); });
      patch_hits[n] += any ? 1 : 0;
    }
  }
  cf.p_whole = whole_hits / count;
  for (int n : grids) {
    if (n <= 1) continue;
    cf.p_patch[n] = patch_hits[n] / count;
    cf.pcri[n] = engine::compute_pcri(cf.p_patch[n], cf.p_whole);
  }
  return cf;
}

/// Writes images/, manifest.jsonl and expected.json (closed forms for the
/// three default synthetic models) under `dir`.
inline SyntheticDataset generate_synthetic_dataset(const SyntheticDatasetSpec& spec, const fs::path& dir,
                                                   std::span<const int> grids) {
  SyntheticDataset out{build_synthetic_manifest(spec), dir / "manifest.jsonl"};
  out.manifest.base_dir = dir;
  fs::create_directories(dir / "images");
  for (const auto& s : out.manifest.samples) image::save_png(s.image, dir / s.image_path);
  write_manifest(out.manifest, out.manifest_path);

  json expected = json::object();
  for (const char* name : {"local", "distractible:0", "global:1"}) {
    const auto model = SyntheticModelSpec::parse(name);
    const auto cf = closed_form(out.manifest, model, grids);
    json row = {{"p_whole", cf.p_whole}};
    for (const auto& [n, p] : cf.p_patch) {
      const auto pc = cf.pcri.at(n);
      row["p_patch"][std::to_string(n)] = p;
      row["pcri"][std::to_string(n)] = pc ? json(*pc) : json(nullptr);
    }
    expected[model.name()] = row;
  }
  std::ofstream(dir / "expected.json") << expected.dump(2) << '\n';
  return out;
}

}  // namespace pcri::ingest
