#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "pcri/core.hpp"

namespace pcri {

// ---------------------------------------------------------------------------
// Requests and outcomes
// ---------------------------------------------------------------------------

struct InferenceRequest {
  const Sample& sample;
  const View& view;
  const Image& view_image;
  const std::string& prompt;
  const std::string& dataset_id;
};

enum class InferenceError { None, Timeout, AuthError, RateLimited, ServerError, Transport, MalformedResponse };

inline const char* to_string(InferenceError e) {
  switch (e) {
    case InferenceError::None: return "None";
    case InferenceError::Timeout: return "Timeout";
    case InferenceError::AuthError: return "AuthError";
    case InferenceError::RateLimited: return "RateLimited";
    case InferenceError::ServerError: return "ServerError";
    case InferenceError::Transport: return "Transport";
    case InferenceError::MalformedResponse: return "MalformedResponse";
  }
  return "Unknown";
}

inline InferenceError parse_inference_error(std::string_view s) {
  for (auto e : {InferenceError::Timeout, InferenceError::AuthError, InferenceError::RateLimited,
                 InferenceError::ServerError, InferenceError::Transport, InferenceError::MalformedResponse}) {
    if (s == to_string(e)) return e;
  }
  return InferenceError::None;
}

struct InferenceOutcome {
  std::string raw_response;
  InferenceError error = InferenceError::None;
  std::string detail;
  int attempts = 1;

  bool ok() const { return error == InferenceError::None; }
};

/// Source of model responses for one view at a time.
class Adapter {
 public:
  virtual ~Adapter() = default;
  virtual std::string model_id() const = 0;
  virtual InferenceOutcome infer(const InferenceRequest& req) = 0;
  // Upper bound on concurrent infer() calls the pipeline may issue.
  virtual int max_parallel() const { return 1; }
};

// ---------------------------------------------------------------------------
// Prompt rendering and cache keys
// ---------------------------------------------------------------------------

/// Replaces "{query}" in the template; multiple-choice options are listed as
/// "A. text" lines, substituted for "{choices}" or appended when absent.
inline std::string render_prompt(std::string_view tmpl, const Sample& sample) {
  std::string out(tmpl);
  auto replace_all = [&out](std::string_view key, const std::string& value) {
    for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size())) {
      out.replace(pos, key.size(), value);
    }
  };
  std::string choices;
  if (sample.choices) {
    for (std::size_t i = 0; i < sample.choices->size(); ++i) {
      if (i) choices += '\n';
      choices += static_cast<char>('A' + static_cast<int>(i % 26));
      choices += ". ";
      choices += (*sample.choices)[i];
    }
  }
  const bool has_choice_slot = out.find("{choices}") != std::string::npos;
  replace_all("{query}", sample.query);
  if (has_choice_slot) {
    replace_all("{choices}", choices);
  } else if (!choices.empty()) {
    out += '\n';
    out += choices;
  }
  return out;
}

/// 64-bit FNV-1a of the rendered prompt, as 16 lowercase hex digits.
inline std::string prompt_hash(std::string_view prompt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : prompt) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct CacheKey {
  std::string model;
  std::string dataset;
  std::string sample;
  std::string view;
  std::string prompt_hash;

  auto tie() const { return std::tie(model, dataset, sample, view, prompt_hash); }
  bool operator<(const CacheKey& o) const { return tie() < o.tie(); }
  bool operator==(const CacheKey& o) const { return tie() == o.tie(); }

  std::string to_string() const {
    return model + "|" + dataset + "|" + sample + "|" + view + "|" + prompt_hash;
  }
};

struct CacheRecord {
  CacheKey key;
  std::string raw_response;
  std::string timestamp;
  int attempt_count = 1;
  // Failed views are cached too so a replay reproduces their zero scores.
  InferenceError error = InferenceError::None;
  std::string error_detail;
};

/// In-memory response cache; one record per key, first insert wins.
class ResponseCache {
 public:
  bool insert(CacheRecord rec) {
    std::lock_guard lock(mu_);
    auto key = rec.key;
    return records_.emplace(std::move(key), std::move(rec)).second;
  }

  std::optional<CacheRecord> find(const CacheKey& key) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const CacheKey& key) const {
    std::lock_guard lock(mu_);
    return records_.count(key) != 0;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  std::vector<std::string> models() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : records_) {
      if (out.empty() || out.back() != k.model) out.push_back(k.model);
    }
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::map<CacheKey, CacheRecord> records_;
};

inline CacheKey make_cache_key(std::string_view model, const InferenceRequest& req) {
  return CacheKey{std::string(model), req.dataset_id, req.sample.id, req.view.descriptor(), prompt_hash(req.prompt)};
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

inline std::string infer_replay(const ResponseCache& cache, const CacheKey& key) {
  auto rec = cache.find(key);
  if (!rec) throw Error(ErrorCode::CacheMiss, key.to_string());
  return rec->raw_response;
}

/// Serves responses from a cache; a miss throws instead of falling back to a live model.
class ReplayAdapter final : public Adapter {
 public:
  ReplayAdapter(const ResponseCache& cache, std::string model) : cache_(cache), model_(std::move(model)) {}

  std::string model_id() const override { return model_; }

  InferenceOutcome infer(const InferenceRequest& req) override {
    auto rec = cache_.find(make_cache_key(model_, req));
    if (!rec) throw Error(ErrorCode::CacheMiss, make_cache_key(model_, req).to_string());
    return InferenceOutcome{rec->raw_response, rec->error, rec->error_detail, rec->attempt_count};
  }

 private:
  const ResponseCache& cache_;
  std::string model_;
};

// ---------------------------------------------------------------------------
// Synthetic oracle models
// ---------------------------------------------------------------------------

enum class SyntheticKind { LocalSolver, Distractible, GlobalIntegrator };

struct SyntheticModelSpec {
  SyntheticKind kind = SyntheticKind::LocalSolver;
  int threshold = 0;             // Distractible: max visible distractors tolerated
  double coverage_fraction = 1;  // GlobalIntegrator: min view area / image area

  /// "local", "distractible[:T]", or "global[:C]".
  static SyntheticModelSpec parse(std::string_view text) {
    const auto colon = text.find(':');
    const std::string_view name = text.substr(0, colon);
    const std::string arg = colon == std::string_view::npos ? "" : std::string(text.substr(colon + 1));
    SyntheticModelSpec spec;
    try {
      if (name == "local") {
        spec.kind = SyntheticKind::LocalSolver;
        if (!arg.empty()) throw Error(ErrorCode::Config, "local takes no parameter");
      } else if (name == "distractible") {
        spec.kind = SyntheticKind::Distractible;
        spec.threshold = arg.empty() ? 0 : std::stoi(arg);
        if (spec.threshold < 0) throw Error(ErrorCode::Config, "distractible threshold must be >= 0");
      } else if (name == "global") {
        spec.kind = SyntheticKind::GlobalIntegrator;
        spec.coverage_fraction = arg.empty() ? 1.0 : std::stod(arg);
        if (!(spec.coverage_fraction > 0.0 && spec.coverage_fraction <= 1.0)) {
          throw Error(ErrorCode::Config, "global coverage must lie in (0, 1]");
        }
      } else {
        throw Error(ErrorCode::Config, "unknown synthetic model '" + std::string(text) + "'");
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::Config, "bad synthetic model parameter in '" + std::string(text) + "'");
    }
    return spec;
  }

  std::string name() const {
    switch (kind) {
      case SyntheticKind::LocalSolver: return "synthetic-local";
      case SyntheticKind::Distractible: return "synthetic-distractible-" + std::to_string(threshold);
      case SyntheticKind::GlobalIntegrator: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", coverage_fraction);
        return std::string("synthetic-global-") + buf;
      }
    }
    return "synthetic";
  }
};

inline int visible_distractors(const Scene& scene, const PixelBounds& view) {
  int count = 0;
  for (const auto& d : scene.distractors) count += view.intersects(d) ? 1 : 0;
  return count;
}

/// Deterministic oracle response for `view` of a scene occupying `image_h` x `image_w`.
inline std::string infer_synthetic(const SyntheticModelSpec& spec, const Scene& scene, const PixelBounds& view,
                                   int image_h, int image_w) {
  const bool target_visible = view.contains(scene.target);
  bool correct = false;
  switch (spec.kind) {
    case SyntheticKind::LocalSolver:
      correct = target_visible;
      break;
    case SyntheticKind::Distractible:
      correct = target_visible && visible_distractors(scene, view) <= spec.threshold;
      break;
    case SyntheticKind::GlobalIntegrator: {
      const double image_area = static_cast<double>(image_h) * static_cast<double>(image_w);
      correct = target_visible && static_cast<double>(view.area()) >= spec.coverage_fraction * image_area;
      break;
    }
  }
  return correct ? scene.answer : scene.wrong_answer;
}

class SyntheticAdapter final : public Adapter {
 public:
  explicit SyntheticAdapter(SyntheticModelSpec spec, std::string model = {})
      : spec_(spec), model_(model.empty() ? spec.name() : std::move(model)) {}

  std::string model_id() const override { return model_; }

  InferenceOutcome infer(const InferenceRequest& req) override {
    if (!req.sample.scene) {
      throw Error(ErrorCode::InvalidSpec, "sample '" + req.sample.id + "' carries no scene for the synthetic model");
    }
    InferenceOutcome out;
    out.raw_response =
        infer_synthetic(spec_, *req.sample.scene, req.view.bounds, req.sample.image.height, req.sample.image.width);
    return out;
  }

  int max_parallel() const override { return 1; }

 private:
  SyntheticModelSpec spec_;
  std::string model_;
};

}  // namespace pcri
