#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pcri {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
  DimensionTooSmall,
  OutOfBounds,
  EmptyReferences,
  EmptyDataset,
  EmptyList,
  MissingGranularity,
  MissingParameters,
  UndefinedBaseline,
  ParseError,
  DuplicateSampleId,
  MissingImage,
  UnknownMetric,
  InvalidChanceSpec,
  InvalidSpec,
  CacheMiss,
  ImageDecode,
  Io,
  Config,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::EmptyReferences: return "EmptyReferences";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::MissingGranularity: return "MissingGranularity";
    case ErrorCode::MissingParameters: return "MissingParameters";
    case ErrorCode::UndefinedBaseline: return "UndefinedBaseline";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateSampleId: return "DuplicateSampleId";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::UnknownMetric: return "UnknownMetric";
    case ErrorCode::InvalidChanceSpec: return "InvalidChanceSpec";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::CacheMiss: return "CacheMiss";
    case ErrorCode::ImageDecode: return "ImageDecode";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Task types
// ---------------------------------------------------------------------------

enum class TaskType { Captioning, MultipleChoice, YesNo, OpenVQA };

inline const char* to_string(TaskType t) {
  switch (t) {
    case TaskType::Captioning: return "captioning";
    case TaskType::MultipleChoice: return "multiple_choice";
    case TaskType::YesNo: return "yes_no";
    case TaskType::OpenVQA: return "open_vqa";
  }
  return "unknown";
}

inline std::optional<TaskType> parse_task_type(std::string_view s) {
  if (s == "captioning") return TaskType::Captioning;
  if (s == "multiple_choice") return TaskType::MultipleChoice;
  if (s == "yes_no") return TaskType::YesNo;
  if (s == "open_vqa") return TaskType::OpenVQA;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Raster image: row-major, interleaved RGB, 8 bits per channel.
// ---------------------------------------------------------------------------

struct Image {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w),
        pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * kChannels, fill) {}

  std::size_t offset(int row, int col) const {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
            static_cast<std::size_t>(col)) * kChannels;
  }

  bool operator==(const Image&) const = default;
};

// ---------------------------------------------------------------------------
// Views
// ---------------------------------------------------------------------------

struct GridSpec {
  int n = 1;

  bool operator==(const GridSpec&) const = default;
  auto operator<=>(const GridSpec&) const = default;
};

struct PixelBounds {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  long long area() const { return static_cast<long long>(height) * width; }
  int bottom() const { return top + height; }
  int right() const { return left + width; }

  bool contains(const PixelBounds& inner) const {
    return inner.top >= top && inner.left >= left && inner.bottom() <= bottom() &&
           inner.right() <= right();
  }
  bool intersects(const PixelBounds& o) const {
    return top < o.bottom() && o.top < bottom() && left < o.right() && o.left < right();
  }

  bool operator==(const PixelBounds&) const = default;
};

enum class ViewKind { Full, Patch };

struct View {
  std::string sample_id;
  ViewKind kind = ViewKind::Full;
  GridSpec grid{1};
  int row = 0;
  int col = 0;
  PixelBounds bounds;

  // Stable key used by the response cache: "full" or "n<grid>r<row>c<col>".
  std::string descriptor() const {
    if (kind == ViewKind::Full) return "full";
    return "n" + std::to_string(grid.n) + "r" + std::to_string(row) + "c" + std::to_string(col);
  }

  // Row-major patch index; 0 for the full view.
  int index() const { return kind == ViewKind::Full ? 0 : row * grid.n + col; }

  bool operator==(const View&) const = default;
};

// Orders views full-first, then by grid, then row-major.
inline bool view_less(const View& a, const View& b) {
  if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
  if (a.kind != b.kind) return a.kind == ViewKind::Full;
  if (a.grid.n != b.grid.n) return a.grid.n < b.grid.n;
  return a.index() < b.index();
}

// ---------------------------------------------------------------------------
// Samples and records
// ---------------------------------------------------------------------------

/// Ground-truth layout of a generated scene, read by the synthetic models.
struct Scene {
  PixelBounds target;
  std::string answer;
  std::string wrong_answer;
  std::vector<PixelBounds> distractors;

  bool operator==(const Scene&) const = default;
};

struct Sample {
  std::string id;
  std::string image_path;
  Image image;
  std::string query;
  std::vector<std::string> ground_truth;
  TaskType task = TaskType::OpenVQA;
  std::optional<std::vector<std::string>> choices;
  std::optional<Scene> scene;
};

struct ScoredRecord {
  View view;
  std::string raw_response;
  std::string normalized_answer;
  double score = 0.0;
  bool failed = false;
  std::string error;
};

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

// An undefined PCRI (full-image performance of zero) is the empty state.
using PcriValue = std::optional<double>;

enum class Gate { Valid, NearChanceUnstable };
enum class Label { Robust, GlobalDistracts, NeedsGlobalContext, Unreliable };

inline const char* to_string(Gate g) {
  return g == Gate::Valid ? "Valid" : "NearChanceUnstable";
}

inline const char* to_string(Label l) {
  switch (l) {
    case Label::Robust: return "Robust";
    case Label::GlobalDistracts: return "GlobalDistracts";
    case Label::NeedsGlobalContext: return "NeedsGlobalContext";
    case Label::Unreliable: return "Unreliable";
  }
  return "Unknown";
}

struct PcriResult {
  std::string model_id;
  std::string dataset_id;
  TaskType task = TaskType::OpenVQA;
  int n = 2;
  double p_whole = 0.0;
  double p_patch = 0.0;
  PcriValue pcri;
  double se_whole = 0.0;
  double chance_floor = 0.0;
  double delta_min = 0.0;
  Gate gate = Gate::Valid;
  Label label = Label::Unreliable;
  int sample_count = 0;
  int failed_views = 0;
};

// ---------------------------------------------------------------------------
// Answer normalization
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
inline bool is_terminal_punct(char c) { return c == '.' || c == ',' || c == '!' || c == '?'; }

// Lowercase, collapse whitespace runs, trim, and strip trailing punctuation.
inline std::string canonical_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  while (!out.empty() && (is_terminal_punct(out.back()) || out.back() == ' ')) out.pop_back();
  return out;
}

// True if `s` starts with `word` followed by end of string or a non-alphanumeric.
inline bool starts_with_word(std::string_view s, std::string_view word) {
  if (s.substr(0, word.size()) != word) return false;
  return s.size() == word.size() || !is_alnum(s[word.size()]);
}

}  // namespace detail

/// Canonical answer form used for scoring. Idempotent for every task type.
inline std::string normalize_answer(std::string_view raw, TaskType task) {
  std::string text = detail::canonical_text(raw);
  if (task == TaskType::MultipleChoice && text.size() >= 2 &&
      std::isalpha(static_cast<unsigned char>(text[0])) && (text[1] == ')' || text[1] == '.') &&
      (text.size() == 2 || text[2] == ' ')) {
    return text.substr(0, 1);
  }
  if (task == TaskType::YesNo) {
    if (detail::starts_with_word(text, "yes")) return "yes";
    if (detail::starts_with_word(text, "no")) return "no";
  }
  return text;
}

}  // namespace pcri
