// Decoding logits into per-feature predictions with abstention, scoring
// against sparse gold assignments, and grouped metric reports.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "walsnet/common.hpp"
#include "walsnet/loss.hpp"
#include "walsnet/model.hpp"
#include "walsnet/wals.hpp"

namespace walsnet {

struct PredictedValue {
  std::size_t value = 0;   // value index within the feature
  double confidence = 0;   // winning probability
};

// Abstained features are absent.
struct Prediction {
  std::map<std::string, PredictedValue> by_feature;
};

// Per feature: argmax over its observed values of the per-class probability
// (sigmoid in flat mode, masked softmax in multitask mode); emitted only
// when the winner's probability reaches tau. Ties go to the lowest value
// index; unobserved classes are never candidates.
template <class Real>
Prediction decode(const Real* logits, const LabelSpace& space, OutputMode mode,
                  double tau = 0.5) {
  Prediction pred;
  for (const auto& [fid, slice] : space.feature_slice) {
    const auto [begin, end] = slice;
    std::size_t best = end;
    double best_p = -1;
    if (mode == OutputMode::Flat) {
      for (std::size_t c = begin; c < end; ++c) {
        if (!space.observed[c]) continue;
        const double p = detail::sigmoid_d(static_cast<double>(logits[c]));
        if (p > best_p) {
          best_p = p;
          best = c;
        }
      }
    } else {
      double maxv = kMaskLogit;
      for (std::size_t c = begin; c < end; ++c)
        if (space.observed[c]) maxv = std::max(maxv, static_cast<double>(logits[c]));
      double z = 0;
      std::vector<double> p(end - begin, 0.0);
      for (std::size_t c = begin; c < end; ++c) {
        const double x = space.observed[c] ? static_cast<double>(logits[c]) : kMaskLogit;
        p[c - begin] = std::exp(x - maxv);
        z += p[c - begin];
      }
      for (std::size_t c = begin; c < end; ++c) {
        if (!space.observed[c]) continue;
        const double pc = p[c - begin] / z;
        if (pc > best_p) {
          best_p = pc;
          best = c;
        }
      }
    }
    if (best != end && best_p >= tau)
      pred.by_feature[fid] = PredictedValue{best - begin, best_p};
  }
  return pred;
}

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0;

  std::uint64_t n() const { return tp + fp + fn; }
  void add(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
  }
};

// One record per gold-defined (example, feature) pair.
struct ScoredItem {
  std::string language;
  std::string feature;
  Counts counts;
};

// Features undefined in gold are skipped entirely; a correct emission is a
// TP, a wrong one both FP and FN, an abstention an FN.
inline void score_example(const Prediction& pred, const LanguageRecord& gold,
                          std::vector<ScoredItem>& out) {
  for (const auto& [fid, vidx] : gold.assignments) {
    ScoredItem item;
    item.language = gold.iso639_3.empty() ? gold.wals_code : gold.iso639_3;
    item.feature = fid;
    auto it = pred.by_feature.find(fid);
    if (it == pred.by_feature.end()) {
      item.counts.fn = 1;
    } else if (it->second.value == vidx) {
      item.counts.tp = 1;
    } else {
      item.counts.fp = 1;
      item.counts.fn = 1;
    }
    out.push_back(std::move(item));
  }
}

enum class Grouping { ChapterType, MacroArea, Family, Feature, Overall };

inline const char* to_string(Grouping g) {
  switch (g) {
    case Grouping::ChapterType: return "chapter_type";
    case Grouping::MacroArea: return "macro_area";
    case Grouping::Family: return "family";
    case Grouping::Feature: return "feature";
    case Grouping::Overall: return "overall";
  }
  return "overall";
}

struct ReportRow {
  std::string group;
  Counts counts;
  double a = 0, p = 0, r = 0, f1 = 0;
  std::size_t rank = 0;  // 1-based for ranked views, 0 elsewhere
};

struct MetricsReport {
  Grouping grouping = Grouping::Overall;
  std::vector<ReportRow> rows;
};

namespace detail {

inline void fill_rates(ReportRow& row) {
  const auto& c = row.counts;
  const std::uint64_t n = c.n();
  row.a = n ? static_cast<double>(c.tp) / static_cast<double>(n) : 0;
  row.p = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0;
  row.r = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0;
  row.f1 = row.p + row.r > 0 ? 2 * row.p * row.r / (row.p + row.r) : 0;
}

}  // namespace detail

// Micro aggregation: counts are pooled per group, then rates computed once.
// Family and feature views are ranked by accuracy descending (ties by name);
// other views sort by group name.
inline MetricsReport aggregate(const std::vector<ScoredItem>& items,
                               const std::map<std::string, const LanguageRecord*>& records,
                               const FeatureCatalog& catalog, Grouping grouping) {
  std::map<std::string, Counts> groups;
  for (const auto& item : items) {
    std::string key;
    switch (grouping) {
      case Grouping::Overall: key = "overall"; break;
      case Grouping::Feature: key = item.feature; break;
      case Grouping::ChapterType: {
        const WalsFeature* f = catalog.find(item.feature);
        if (!f) throw ConfigError("unknown feature: " + item.feature);
        key = to_string(f->chapter_type);
        break;
      }
      case Grouping::MacroArea:
      case Grouping::Family: {
        auto it = records.find(item.language);
        if (it == records.end()) throw ConfigError("unknown language: " + item.language);
        key = grouping == Grouping::MacroArea ? it->second->macro_area : it->second->family;
        break;
      }
    }
    groups[key].add(item.counts);
  }
  MetricsReport report;
  report.grouping = grouping;
  for (auto& [key, counts] : groups) {
    ReportRow row;
    row.group = key;
    row.counts = counts;
    detail::fill_rates(row);
    report.rows.push_back(std::move(row));
  }
  if (grouping == Grouping::Family || grouping == Grouping::Feature) {
    std::sort(report.rows.begin(), report.rows.end(), [](const ReportRow& x, const ReportRow& y) {
      if (x.a != y.a) return x.a > y.a;
      return x.group < y.group;
    });
    for (std::size_t i = 0; i < report.rows.size(); ++i) report.rows[i].rank = i + 1;
  }
  return report;
}

inline const char* kReportFooter =
    "# conventions: N = TP+FP+FN over gold-defined (example, feature) pairs;\n"
    "# a wrong prediction counts as FP and FN; an abstention counts as FN;\n"
    "# gold-undefined features are skipped; A=TP/N, P=TP/(TP+FP), R=TP/(TP+FN),\n"
    "# F1 = harmonic mean; counts pooled per group before computing rates.\n";

inline std::string render_report_delimited(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "group\tN\tTP\tFP\tFN\tA\tP\tR\tF1\trank\n";
  for (const auto& row : report.rows) {
    out << row.group << '\t' << row.counts.n() << '\t' << row.counts.tp << '\t' << row.counts.fp
        << '\t' << row.counts.fn << '\t' << row.a << '\t' << row.p << '\t' << row.r << '\t'
        << row.f1 << '\t';
    if (row.rank) out << row.rank;
    out << '\n';
  }
  out << kReportFooter;
  return out.str();
}

inline std::string render_report_text(const MetricsReport& report) {
  std::size_t width = 12;
  for (const auto& row : report.rows) width = std::max(width, row.group.size());
  char buf[256];
  std::ostringstream out;
  out << "grouping: " << to_string(report.grouping) << '\n';
  std::snprintf(buf, sizeof(buf), "%-*s %8s %8s %8s %8s %7s %7s %7s %7s %5s\n",
                static_cast<int>(width), "group", "N", "TP", "FP", "FN", "A", "P", "R", "F1",
                "rank");
  out << buf;
  for (const auto& row : report.rows) {
    char rank[24] = "";
    if (row.rank) std::snprintf(rank, sizeof(rank), "%zu", row.rank);
    std::snprintf(buf, sizeof(buf),
                  "%-*s %8llu %8llu %8llu %8llu %7.4f %7.4f %7.4f %7.4f %5s\n",
                  static_cast<int>(width), row.group.c_str(),
                  static_cast<unsigned long long>(row.counts.n()),
                  static_cast<unsigned long long>(row.counts.tp),
                  static_cast<unsigned long long>(row.counts.fp),
                  static_cast<unsigned long long>(row.counts.fn), row.a, row.p, row.r, row.f1,
                  rank);
    out << buf;
  }
  out << kReportFooter;
  return out.str();
}

}  // namespace walsnet
