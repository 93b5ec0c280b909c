#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "pcri/core.hpp"
#include "pcri/engine.hpp"

namespace pcri::report {

struct RunHeader {
  std::uint64_t seed = 0;
  double delta = 0.01;
  int bootstrap = 1000;
  double epsilon_band = 0.02;
  std::vector<int> grids{1, 2, 3};
};

struct Rollup {
  TaskType task = TaskType::OpenVQA;
  int n = 2;
  double mean_pcri = 0.0;
  int datasets = 0;
};

struct DeltaRow {
  std::string model_id;
  std::string dataset_id;
  int from_n = 2;
  int to_n = 3;
  PcriValue from;
  PcriValue to;
  std::optional<double> percent;  // empty when the baseline is zero or undefined
};

struct FlaggedPair {
  std::string model_id;
  std::string dataset_id;
  int n = 2;
  double p_whole = 0.0;
  double p_patch = 0.0;
};

struct Flags {
  std::map<std::pair<std::string, std::string>, int> failed_views;  // (model, dataset) -> count
  std::vector<FlaggedPair> gated;
  std::vector<FlaggedPair> undefined;
};

struct ReportBundle {
  RunHeader header;
  std::vector<PcriResult> results;
  std::vector<Rollup> rollups;
  std::vector<DeltaRow> deltas;
  Flags flags;
};

enum class Format { Csv, Structured, Markdown };

/// Fixed 4-decimal rendering with round-half-even on the decimal value.
inline std::string format_fixed4(double x) {
  if (!std::isfinite(x)) return "NA";
  const bool negative = x < 0.0;
  const double scaled = std::abs(x) * 1e4;
  double whole = std::floor(scaled);
  const double frac = scaled - whole;
  if (std::abs(frac - 0.5) < 1e-7) {
    if (std::fmod(whole, 2.0) != 0.0) whole += 1.0;
  } else if (frac > 0.5) {
    whole += 1.0;
  }
  const auto units = static_cast<long long>(whole);
  const long long ip = units / 10000;
  const long long fp = units % 10000;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%lld.%04lld", (negative && units != 0) ? "-" : "", ip, fp);
  return buf;
}

inline std::string format_pcri(const PcriValue& v) { return v ? format_fixed4(*v) : "NA"; }

/// Unweighted mean of defined, Valid PCRI per (task, n); empty groups omitted.
inline std::vector<Rollup> rollup_by_task(std::span<const PcriResult> results) {
  std::map<std::pair<TaskType, int>, std::vector<double>> groups;
  for (const auto& r : results) {
    if (r.gate != Gate::Valid || !r.pcri) continue;
    groups[{r.task, r.n}].push_back(*r.pcri);
  }
  std::vector<Rollup> out;
  for (const auto& [key, values] : groups) {
    double sum = 0.0;
    for (double v : values) sum += v;
    out.push_back(Rollup{key.first, key.second, sum / static_cast<double>(values.size()),
                         static_cast<int>(values.size())});
  }
  return out;
}

/// PCRI change between each pair of consecutive patch grids (n > 1) of a (model, dataset).
inline std::vector<DeltaRow> granularity_deltas(std::span<const PcriResult> results) {
  std::map<std::pair<std::string, std::string>, std::map<int, PcriValue>> by_pair;
  for (const auto& r : results) by_pair[{r.model_id, r.dataset_id}][r.n] = r.pcri;
  std::vector<DeltaRow> out;
  for (const auto& [pair, per_n] : by_pair) {
    for (auto it = per_n.begin(); it != per_n.end() && std::next(it) != per_n.end(); ++it) {
      auto next = std::next(it);
      DeltaRow row{pair.first, pair.second, it->first, next->first, it->second, next->second, std::nullopt};
      try {
        row.percent = engine::granularity_delta(it->second, next->second);
      } catch (const Error&) {
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

inline ReportBundle build_bundle(RunHeader header, std::vector<PcriResult> results) {
  std::stable_sort(results.begin(), results.end(), [](const PcriResult& a, const PcriResult& b) {
    return std::tie(a.model_id, a.dataset_id, a.n) < std::tie(b.model_id, b.dataset_id, b.n);
  });
  ReportBundle bundle;
  bundle.header = std::move(header);
  bundle.rollups = rollup_by_task(results);
  bundle.deltas = granularity_deltas(results);
  for (const auto& r : results) {
    bundle.flags.failed_views[{r.model_id, r.dataset_id}] = r.failed_views;
    const FlaggedPair fp{r.model_id, r.dataset_id, r.n, r.p_whole, r.p_patch};
    if (r.gate != Gate::Valid) bundle.flags.gated.push_back(fp);
    if (!r.pcri) bundle.flags.undefined.push_back(fp);
  }
  bundle.results = std::move(results);
  return bundle;
}

inline constexpr const char* kColumns[] = {"model", "dataset", "n",    "p_whole", "p_patch", "pcri",
                                           "se",    "floor",   "gate", "label",   "samples", "failed_views"};

namespace detail {

inline std::vector<std::string> row_fields(const PcriResult& r) {
  return {r.model_id,
          r.dataset_id,
          std::to_string(r.n),
          format_fixed4(r.p_whole),
          format_fixed4(r.p_patch),
          format_pcri(r.pcri),
          format_fixed4(r.se_whole),
          format_fixed4(r.chance_floor),
          to_string(r.gate),
          to_string(r.label),
          std::to_string(r.sample_count),
          std::to_string(r.failed_views)};
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string grids_text(const std::vector<int>& grids) {
  std::string s;
  for (std::size_t i = 0; i < grids.size(); ++i) s += (i ? "," : "") + std::to_string(grids[i]);
  return s;
}

}  // namespace detail

inline std::string render_csv(const ReportBundle& b) {
  std::ostringstream out;
  for (std::size_t i = 0; i < std::size(kColumns); ++i) out << (i ? "," : "") << kColumns[i];
  out << '\n';
  for (const auto& r : b.results) {
    const auto fields = detail::row_fields(r);
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << detail::csv_escape(fields[i]);
    out << '\n';
  }
  return out.str();
}

inline std::string render_structured(const ReportBundle& b) {
  using nlohmann::ordered_json;
  auto num_or_null = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json doc;
  doc["run"] = {{"seed", b.header.seed},
                {"delta", b.header.delta},
                {"bootstrap", b.header.bootstrap},
                {"epsilon_band", b.header.epsilon_band},
                {"grids", b.header.grids}};
  doc["columns"] = kColumns;
  doc["results"] = ordered_json::array();
  for (const auto& r : b.results) {
    doc["results"].push_back({{"model", r.model_id},
                              {"dataset", r.dataset_id},
                              {"task", to_string(r.task)},
                              {"n", r.n},
                              {"p_whole", r.p_whole},
                              {"p_patch", r.p_patch},
                              {"pcri", num_or_null(r.pcri)},
                              {"se", r.se_whole},
                              {"floor", r.chance_floor},
                              {"delta_min", r.delta_min},
                              {"gate", to_string(r.gate)},
                              {"label", to_string(r.label)},
                              {"samples", r.sample_count},
                              {"failed_views", r.failed_views}});
  }
  doc["rollups"] = ordered_json::array();
  for (const auto& r : b.rollups) {
    doc["rollups"].push_back({{"task", to_string(r.task)}, {"n", r.n}, {"mean_pcri", r.mean_pcri},
                              {"datasets", r.datasets}});
  }
  doc["deltas"] = ordered_json::array();
  for (const auto& d : b.deltas) {
    doc["deltas"].push_back({{"model", d.model_id},
                             {"dataset", d.dataset_id},
                             {"from_n", d.from_n},
                             {"to_n", d.to_n},
                             {"from_pcri", num_or_null(d.from)},
                             {"to_pcri", num_or_null(d.to)},
                             {"percent_change", num_or_null(d.percent)}});
  }
  auto pairs = [](const std::vector<FlaggedPair>& v) {
    ordered_json arr = ordered_json::array();
    for (const auto& p : v) {
      arr.push_back({{"model", p.model_id}, {"dataset", p.dataset_id}, {"n", p.n}, {"p_whole", p.p_whole},
                     {"p_patch", p.p_patch}});
    }
    return arr;
  };
  ordered_json failed = ordered_json::array();
  for (const auto& [key, count] : b.flags.failed_views) {
    failed.push_back({{"model", key.first}, {"dataset", key.second}, {"failed_views", count}});
  }
  doc["flags"] = {{"failed_views", failed}, {"gated", pairs(b.flags.gated)}, {"undefined", pairs(b.flags.undefined)}};
  return doc.dump(2) + "\n";
}

inline std::string render_markdown(const ReportBundle& b) {
  std::ostringstream out;
  out << "# PCRI report\n\n";
  out << "seed " << b.header.seed << " | delta " << format_fixed4(b.header.delta) << " | bootstrap B "
      << b.header.bootstrap << " | epsilon band " << format_fixed4(b.header.epsilon_band) << " | grids "
      << detail::grids_text(b.header.grids) << "\n\n";

  out << "## Results\n\n|";
  for (const char* c : kColumns) out << ' ' << c << " |";
  out << "\n|";
  for (std::size_t i = 0; i < std::size(kColumns); ++i) out << "---|";
  out << '\n';
  for (const auto& r : b.results) {
    out << '|';
    for (const auto& f : detail::row_fields(r)) out << ' ' << f << " |";
    out << '\n';
  }

  out << "\n## Mean PCRI by task type\n\n";
  if (b.rollups.empty()) {
    out << "No valid, defined results.\n";
  } else {
    out << "| task | n | mean_pcri | datasets |\n|---|---|---|---|\n";
    for (const auto& r : b.rollups) {
      out << "| " << to_string(r.task) << " | " << r.n << " | " << format_fixed4(r.mean_pcri) << " | " << r.datasets
          << " |\n";
    }
  }

  out << "\n## Granularity change\n\n";
  if (b.deltas.empty()) {
    out << "Fewer than two patch grids configured.\n";
  } else {
    out << "| model | dataset | from | to | pcri_from | pcri_to | change_pct |\n|---|---|---|---|---|---|---|\n";
    for (const auto& d : b.deltas) {
      out << "| " << d.model_id << " | " << d.dataset_id << " | " << d.from_n << " | " << d.to_n << " | "
          << format_pcri(d.from) << " | " << format_pcri(d.to) << " | "
          << (d.percent ? format_fixed4(*d.percent) : std::string("NA")) << " |\n";
    }
  }

  out << "\n## Flags\n\n";
  bool any = false;
  for (const auto& [key, count] : b.flags.failed_views) {
    if (count == 0) continue;
    any = true;
    out << "- " << key.first << " / " << key.second << ": " << count << " failed views scored 0\n";
  }
  for (const auto& g : b.flags.gated) {
    any = true;
    out << "- " << g.model_id << " / " << g.dataset_id << " n=" << g.n
        << ": near chance, PCRI not interpretable (p_whole " << format_fixed4(g.p_whole) << ", p_patch "
        << format_fixed4(g.p_patch) << ")\n";
  }
  for (const auto& u : b.flags.undefined) {
    any = true;
    out << "- " << u.model_id << " / " << u.dataset_id << " n=" << u.n << ": PCRI undefined (p_whole 0, p_patch "
        << format_fixed4(u.p_patch) << ")\n";
  }
  if (!any) out << "None.\n";
  return out.str();
}

inline std::string render(const ReportBundle& b, Format f) {
  switch (f) {
    case Format::Csv: return render_csv(b);
    case Format::Structured: return render_structured(b);
    case Format::Markdown: return render_markdown(b);
  }
  return {};
}

}  // namespace pcri::report
