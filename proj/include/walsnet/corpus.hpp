// Corpus ingestion: TSV parsing, WALS join, length filtering, split routing,
// and exactly mergeable per-split statistics.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "walsnet/common.hpp"
#include "walsnet/iso639.hpp"
#include "walsnet/wals.hpp"

namespace walsnet {

enum class Split { Train, Dev, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "train";
}

inline std::optional<Split> split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

struct Example {
  std::string text;      // UTF-8; its bytes are the model input
  std::string language;  // ISO 639-3
  Split split = Split::Train;
};

struct RawExample {
  std::string code;  // ISO 639-1 or 639-3, as found in the corpus
  std::string text;
};

// Input corpus format: `code <TAB> text`, one example per line.
inline std::vector<RawExample> parse_corpus_tsv(const std::string& text,
                                                const std::string& file = "<corpus>") {
  std::vector<RawExample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(file, lineno, "missing tab separator");
    RawExample ex;
    ex.code = line.substr(0, tab);
    ex.text = line.substr(tab + 1);
    if (ex.code.empty()) throw ParseError(file, lineno, "empty language code");
    if (!utf8_char_count(ex.text, nullptr))
      throw ParseError(file, lineno, "text is not valid UTF-8");
    out.push_back(std::move(ex));
  }
  return out;
}

struct JoinReport {
  std::map<std::string, std::uint64_t> dropped_by_code;  // original code -> example count
  std::uint64_t dropped_examples = 0;
  std::uint64_t matched_examples = 0;
  std::set<std::string> matched_languages;

  std::size_t dropped_languages() const { return dropped_by_code.size(); }
};

// Examples whose code resolves to no pruned WALS record are dropped and reported.
inline std::vector<Example> join_corpus(const std::vector<RawExample>& raw,
                                        const std::vector<LanguageRecord>& records, Split split,
                                        JoinReport* report) {
  std::map<std::string, const LanguageRecord*> by_iso;
  for (const auto& r : records)
    if (!r.iso639_3.empty()) by_iso.emplace(r.iso639_3, &r);  // first record wins

  std::vector<Example> out;
  out.reserve(raw.size());
  for (const auto& ex : raw) {
    std::string iso3;
    if (ex.code.size() == 2) {
      if (auto conv = try_iso1_to_iso3(ex.code)) iso3 = *conv;
    } else if (ex.code.size() == 3) {
      iso3 = ex.code;
    }
    auto it = iso3.empty() ? by_iso.end() : by_iso.find(iso3);
    if (it == by_iso.end()) {
      if (report) {
        ++report->dropped_by_code[ex.code];
        ++report->dropped_examples;
      }
      continue;
    }
    if (report) {
      ++report->matched_examples;
      report->matched_languages.insert(iso3);
    }
    out.push_back(Example{ex.text, iso3, split});
  }
  return out;
}

inline std::string render_join_report(const JoinReport& report) {
  std::ostringstream out;
  out << "matched_examples\t" << report.matched_examples << '\n';
  out << "matched_languages\t" << report.matched_languages.size() << '\n';
  out << "dropped_examples\t" << report.dropped_examples << '\n';
  out << "dropped_languages\t" << report.dropped_languages() << '\n';
  for (const auto& [code, count] : report.dropped_by_code)
    out << "dropped\t" << code << '\t' << count << '\n';
  return out.str();
}

// Inclusive character-count bounds.
inline bool filter_by_length(std::string_view text, std::size_t min_chars = 5,
                             std::size_t max_chars = 600) {
  std::size_t n = 0;
  if (!utf8_char_count(text, &n)) throw ParseError("text is not valid UTF-8");
  return n >= min_chars && n <= max_chars;
}

// Exact sum / count / sum-of-squares form so shard accumulators merge losslessly.
struct SplitAccumulator {
  std::set<std::string> languages;
  std::uint64_t n = 0;
  std::uint64_t bytes_sum = 0;
  std::uint64_t bytes_sumsq = 0;
  std::uint64_t bytes_max = 0;
  std::uint64_t chars_sum = 0;
  std::uint64_t chars_sumsq = 0;

  void add(const Example& ex) {
    std::size_t chars = 0;
    if (!utf8_char_count(ex.text, &chars)) throw ParseError("text is not valid UTF-8");
    const std::uint64_t bytes = ex.text.size();
    languages.insert(ex.language);
    ++n;
    bytes_sum += bytes;
    bytes_sumsq += bytes * bytes;
    bytes_max = std::max(bytes_max, bytes);
    chars_sum += static_cast<std::uint64_t>(chars);
    chars_sumsq += static_cast<std::uint64_t>(chars) * chars;
  }

  void merge(const SplitAccumulator& o) {
    languages.insert(o.languages.begin(), o.languages.end());
    n += o.n;
    bytes_sum += o.bytes_sum;
    bytes_sumsq += o.bytes_sumsq;
    bytes_max = std::max(bytes_max, o.bytes_max);
    chars_sum += o.chars_sum;
    chars_sumsq += o.chars_sumsq;
  }
};

struct SplitStats {
  std::uint64_t n_languages = 0;
  std::uint64_t n = 0;
  std::uint64_t max_bytes = 0;
  std::uint64_t total_bytes = 0;
  double mean_bytes = 0;
  double std_bytes = 0;
  std::uint64_t total_chars = 0;
  double mean_chars = 0;
  double std_chars = 0;
};

struct CorpusStats {
  SplitStats per_split[3];  // indexed by Split

  SplitStats& of(Split s) { return per_split[static_cast<int>(s)]; }
  const SplitStats& of(Split s) const { return per_split[static_cast<int>(s)]; }
};

namespace detail {

inline SplitStats finalize(const SplitAccumulator& acc) {
  SplitStats s;
  s.n_languages = acc.languages.size();
  s.n = acc.n;
  s.max_bytes = acc.bytes_max;
  s.total_bytes = acc.bytes_sum;
  s.total_chars = acc.chars_sum;
  if (acc.n == 0) return s;
  const long double n = static_cast<long double>(acc.n);
  const long double mb = static_cast<long double>(acc.bytes_sum) / n;
  const long double mc = static_cast<long double>(acc.chars_sum) / n;
  // Population standard deviation.
  const long double vb = static_cast<long double>(acc.bytes_sumsq) / n - mb * mb;
  const long double vc = static_cast<long double>(acc.chars_sumsq) / n - mc * mc;
  s.mean_bytes = static_cast<double>(mb);
  s.mean_chars = static_cast<double>(mc);
  s.std_bytes = static_cast<double>(std::sqrt(std::max<long double>(0, vb)));
  s.std_chars = static_cast<double>(std::sqrt(std::max<long double>(0, vc)));
  return s;
}

}  // namespace detail

inline CorpusStats corpus_stats(const std::vector<Example>& examples) {
  SplitAccumulator acc[3];
  for (const auto& ex : examples) acc[static_cast<int>(ex.split)].add(ex);
  CorpusStats stats;
  for (int i = 0; i < 3; ++i) stats.per_split[i] = detail::finalize(acc[i]);
  return stats;
}

inline std::string render_stats_tsv(const CorpusStats& stats) {
  std::ostringstream out;
  out << "split\tN_L\tN\tS_max\tN_B\tmu_B\tsigma_B\tN_C\tmu_C\tsigma_C\n";
  out.precision(10);
  for (Split s : {Split::Train, Split::Dev, Split::Test}) {
    const SplitStats& r = stats.of(s);
    out << to_string(s) << '\t' << r.n_languages << '\t' << r.n << '\t' << r.max_bytes << '\t'
        << r.total_bytes << '\t' << r.mean_bytes << '\t' << r.std_bytes << '\t' << r.total_chars
        << '\t' << r.mean_chars << '\t' << r.std_chars << '\n';
  }
  return out.str();
}

inline std::string render_stats_text(const CorpusStats& stats) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-6s %6s %12s %10s %14s %8s %8s %14s %8s %8s\n", "split",
                "N_L", "N", "S_max", "N_B", "mu_B", "sig_B", "N_C", "mu_C", "sig_C");
  out += buf;
  for (Split s : {Split::Train, Split::Dev, Split::Test}) {
    const SplitStats& r = stats.of(s);
    std::snprintf(buf, sizeof(buf),
                  "%-6s %6llu %12llu %10llu %14llu %8.1f %8.1f %14llu %8.1f %8.1f\n", to_string(s),
                  static_cast<unsigned long long>(r.n_languages),
                  static_cast<unsigned long long>(r.n),
                  static_cast<unsigned long long>(r.max_bytes),
                  static_cast<unsigned long long>(r.total_bytes), r.mean_bytes, r.std_bytes,
                  static_cast<unsigned long long>(r.total_chars), r.mean_chars, r.std_chars);
    out += buf;
  }
  return out;
}

// Split manifest: `filename <TAB> {train|dev|test}` per line.
inline std::map<std::string, Split> parse_split_manifest(const std::string& text,
                                                         const std::string& file = "<manifest>") {
  std::map<std::string, Split> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw ParseError(file, lineno, "expected `filename <TAB> split`");
    std::string name = trim(cols[0]);
    auto sp = split_from_string(trim(cols[1]));
    if (!sp) throw ParseError(file, lineno, "unknown split '" + cols[1] + "'");
    if (out.count(name)) throw ParseError(file, lineno, "file assigned twice: " + name);
    out[name] = *sp;
  }
  return out;
}

inline Split split_for_file(const std::map<std::string, Split>& manifest,
                            const std::string& filename) {
  auto it = manifest.find(filename);
  if (it == manifest.end())
    throw ConfigError("file not assigned to any split: " + filename);
  return it->second;
}

}  // namespace walsnet
