// WALS database: catalog and language parsing, pruning, and the global label space.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "walsnet/common.hpp"

namespace walsnet {

enum class ChapterType {
  Phonology,
  Morphology,
  NominalCategories,
  NominalSyntax,
  VerbalCategories,
  WordOrder,
  SimpleClauses,
  ComplexSentences,
  Lexicon,
  SignLanguages,
  Other,
};

inline const char* to_string(ChapterType t) {
  switch (t) {
    case ChapterType::Phonology: return "Phonology";
    case ChapterType::Morphology: return "Morphology";
    case ChapterType::NominalCategories: return "Nominal Categories";
    case ChapterType::NominalSyntax: return "Nominal Syntax";
    case ChapterType::VerbalCategories: return "Verbal Categories";
    case ChapterType::WordOrder: return "Word Order";
    case ChapterType::SimpleClauses: return "Simple Clauses";
    case ChapterType::ComplexSentences: return "Complex Sentences";
    case ChapterType::Lexicon: return "Lexicon";
    case ChapterType::SignLanguages: return "Sign Languages";
    case ChapterType::Other: return "Other";
  }
  return "Other";
}

inline std::optional<ChapterType> chapter_type_from_string(std::string_view s) {
  static const std::pair<std::string_view, ChapterType> table[] = {
      {"Phonology", ChapterType::Phonology},
      {"Morphology", ChapterType::Morphology},
      {"Nominal Categories", ChapterType::NominalCategories},
      {"Nominal Syntax", ChapterType::NominalSyntax},
      {"Verbal Categories", ChapterType::VerbalCategories},
      {"Word Order", ChapterType::WordOrder},
      {"Simple Clauses", ChapterType::SimpleClauses},
      {"Complex Sentences", ChapterType::ComplexSentences},
      {"Lexicon", ChapterType::Lexicon},
      {"Sign Languages", ChapterType::SignLanguages},
      {"Other", ChapterType::Other},
  };
  for (const auto& [name, t] : table)
    if (name == s) return t;
  return std::nullopt;
}

struct WalsFeature {
  std::string id;            // e.g. "81A"
  std::string name;
  std::string chapter;       // numeric prefix of the id
  ChapterType chapter_type = ChapterType::Other;
  std::vector<std::string> values;  // ordered; cell values resolve to indices here
};

struct FeatureCatalog {
  std::vector<WalsFeature> features;
  std::map<std::string, std::size_t> index;  // feature id -> position

  std::size_t n_features() const { return features.size(); }

  const WalsFeature* find(const std::string& id) const {
    auto it = index.find(id);
    return it == index.end() ? nullptr : &features[it->second];
  }
};

struct LanguageRecord {
  std::string wals_code;
  std::string iso639_3;  // empty when absent
  std::string name;
  std::string family;
  std::string genus;
  std::string macro_area;
  std::map<std::string, std::size_t> assignments;  // feature id -> value index
};

// Global class space: one class per (feature, value), features laid out contiguously.
struct LabelSpace {
  std::vector<std::pair<std::string, std::size_t>> classes;
  std::map<std::pair<std::string, std::size_t>, std::size_t> class_of;
  std::map<std::string, std::pair<std::size_t, std::size_t>> feature_slice;  // id -> [begin, end)
  std::vector<bool> observed;
  std::size_t total_classes = 0;

  std::size_t index_of(const std::string& fid, std::size_t value) const {
    auto it = class_of.find({fid, value});
    if (it == class_of.end())
      throw ConfigError("class not in label space: " + fid + "/" + std::to_string(value));
    return it->second;
  }
};

namespace detail {

inline std::string chapter_of_id(const std::string& id) {
  std::size_t i = 0;
  while (i < id.size() && id[i] >= '0' && id[i] <= '9') ++i;
  return id.substr(0, i);
}

// One logical CSV record per physical line; quoted cells may contain commas.
inline std::vector<std::string> parse_csv_line(const std::string& line, const std::string& file,
                                               std::size_t lineno) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  std::size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          i += 2;
          continue;
        }
        quoted = false;
        ++i;
      } else {
        cur += c;
        ++i;
      }
    } else if (c == '"') {
      if (!cur.empty()) throw ParseError(file, lineno, "stray quote inside cell");
      quoted = true;
      ++i;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
      ++i;
    } else {
      cur += c;
      ++i;
    }
  }
  if (quoted) throw ParseError(file, lineno, "unterminated quoted cell");
  cells.push_back(cur);
  return cells;
}

// Cell conventions: plain value name, or the WALS export form "<k> <value name>"
// with k a 1-based value number.
inline std::size_t resolve_value_cell(const WalsFeature& feature, const std::string& cell,
                                      const std::string& file, std::size_t lineno) {
  std::size_t sp = cell.find(' ');
  if (sp != std::string::npos && sp > 0) {
    bool numeric = true;
    for (std::size_t i = 0; i < sp; ++i)
      if (cell[i] < '0' || cell[i] > '9') numeric = false;
    if (numeric) {
      std::size_t k = std::stoul(cell.substr(0, sp));
      std::string rest = cell.substr(sp + 1);
      if (k >= 1 && k <= feature.values.size() && feature.values[k - 1] == rest) return k - 1;
    }
  }
  for (std::size_t i = 0; i < feature.values.size(); ++i)
    if (feature.values[i] == cell) return i;
  throw ParseError(file, lineno,
                   "unknown value '" + cell + "' for feature " + feature.id);
}

}  // namespace detail

// Catalog file: `feature_id <TAB> chapter_type <TAB> feature_name <TAB> v1 | v2 | ...`
inline FeatureCatalog parse_catalog(const std::string& text,
                                    const std::string& file = "<catalog>") {
  FeatureCatalog catalog;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 4) throw ParseError(file, lineno, "expected 4 tab-separated columns");
    WalsFeature f;
    f.id = trim(cols[0]);
    if (f.id.empty()) throw ParseError(file, lineno, "empty feature id");
    if (catalog.index.count(f.id))
      throw ParseError(file, lineno, "duplicate feature id " + f.id);
    auto ct = chapter_type_from_string(trim(cols[1]));
    if (!ct) throw ParseError(file, lineno, "unknown chapter type '" + cols[1] + "'");
    f.chapter_type = *ct;
    f.name = trim(cols[2]);
    f.chapter = detail::chapter_of_id(f.id);
    for (const auto& raw : split(cols[3], '|')) {
      std::string v = trim(raw);
      if (v.empty()) throw ParseError(file, lineno, "empty value name in feature " + f.id);
      if (std::find(f.values.begin(), f.values.end(), v) != f.values.end())
        throw ParseError(file, lineno, "duplicate value '" + v + "' in feature " + f.id);
      f.values.push_back(std::move(v));
    }
    if (f.values.empty()) throw ParseError(file, lineno, "feature " + f.id + " has no values");
    catalog.index[f.id] = catalog.features.size();
    catalog.features.push_back(std::move(f));
  }
  return catalog;
}

inline std::string write_catalog(const FeatureCatalog& catalog) {
  std::string out;
  for (const auto& f : catalog.features) {
    out += f.id;
    out += '\t';
    out += to_string(f.chapter_type);
    out += '\t';
    out += f.name;
    out += '\t';
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      if (i) out += " | ";
      out += f.values[i];
    }
    out += '\n';
  }
  return out;
}

// Languages file: CSV with header `wals_code,iso_code,name,genus,family,macroarea,<feature_id>...`;
// empty feature cell = unattested.
inline std::vector<LanguageRecord> parse_languages(const std::string& text,
                                                   const FeatureCatalog& catalog,
                                                   const std::string& file = "<languages>") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(file, 1, "empty languages file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::parse_csv_line(line, file, lineno);
  constexpr std::size_t kFixed = 6;
  if (header.size() < kFixed) throw ParseError(file, lineno, "header too short");
  const char* expected[kFixed] = {"wals_code", "iso_code", "name",
                                  "genus",     "family",   "macroarea"};
  for (std::size_t i = 0; i < kFixed; ++i)
    if (trim(header[i]) != expected[i])
      throw ParseError(file, lineno,
                       "expected header column '" + std::string(expected[i]) + "', got '" +
                           header[i] + "'");
  std::vector<const WalsFeature*> columns;
  for (std::size_t i = kFixed; i < header.size(); ++i) {
    std::string fid = trim(header[i]);
    const WalsFeature* f = catalog.find(fid);
    if (!f) throw ParseError(file, lineno, "unknown feature id '" + fid + "' in header");
    columns.push_back(f);
  }

  std::vector<LanguageRecord> records;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::parse_csv_line(line, file, lineno);
    if (cells.size() != kFixed + columns.size())
      throw ParseError(file, lineno,
                       "expected " + std::to_string(kFixed + columns.size()) + " cells, got " +
                           std::to_string(cells.size()));
    LanguageRecord rec;
    rec.wals_code = trim(cells[0]);
    if (rec.wals_code.empty()) throw ParseError(file, lineno, "empty wals_code");
    if (seen.count(rec.wals_code))
      throw ParseError(file, lineno, "duplicate language code " + rec.wals_code);
    seen[rec.wals_code] = lineno;
    rec.iso639_3 = trim(cells[1]);
    if (!rec.iso639_3.empty()) {
      bool ok = rec.iso639_3.size() == 3;
      for (char c : rec.iso639_3)
        if (c < 'a' || c > 'z') ok = false;
      if (!ok)
        throw ParseError(file, lineno, "iso_code '" + rec.iso639_3 + "' is not a 3-letter code");
    }
    rec.name = trim(cells[2]);
    rec.genus = trim(cells[3]);
    rec.family = trim(cells[4]);
    rec.macro_area = trim(cells[5]);
    for (std::size_t i = 0; i < columns.size(); ++i) {
      std::string cell = trim(cells[kFixed + i]);
      if (cell.empty()) continue;
      rec.assignments[columns[i]->id] =
          detail::resolve_value_cell(*columns[i], cell, file, lineno);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

namespace detail {

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail

// Canonical CSV serialization with one column per catalog feature and cells
// in the `<k> <value name>` form (k 1-based).
inline std::string write_languages(const std::vector<LanguageRecord>& records,
                                   const FeatureCatalog& catalog) {
  std::string out = "wals_code,iso_code,name,genus,family,macroarea";
  for (const auto& f : catalog.features) {
    out += ',';
    out += detail::csv_cell(f.id);
  }
  out += '\n';
  for (const auto& r : records) {
    out += detail::csv_cell(r.wals_code);
    out += ',';
    out += detail::csv_cell(r.iso639_3);
    out += ',';
    out += detail::csv_cell(r.name);
    out += ',';
    out += detail::csv_cell(r.genus);
    out += ',';
    out += detail::csv_cell(r.family);
    out += ',';
    out += detail::csv_cell(r.macro_area);
    for (const auto& f : catalog.features) {
      out += ',';
      auto it = r.assignments.find(f.id);
      if (it != r.assignments.end())
        out += detail::csv_cell(std::to_string(it->second + 1) + " " + f.values[it->second]);
    }
    out += '\n';
  }
  return out;
}

inline std::pair<FeatureCatalog, std::vector<LanguageRecord>> parse_wals(
    const std::string& catalog_text, const std::string& languages_text,
    const std::string& catalog_file = "<catalog>", const std::string& languages_file = "<languages>") {
  FeatureCatalog catalog = parse_catalog(catalog_text, catalog_file);
  auto records = parse_languages(languages_text, catalog, languages_file);
  return {std::move(catalog), std::move(records)};
}

// Drops records with no ISO 639-3 code and records with no attested features.
inline std::vector<LanguageRecord> prune_languages(const std::vector<LanguageRecord>& records) {
  std::vector<LanguageRecord> out;
  out.reserve(records.size());
  for (const auto& r : records)
    if (!r.iso639_3.empty() && !r.assignments.empty()) out.push_back(r);
  return out;
}

using ClassCounts = std::map<std::pair<std::string, std::size_t>, std::uint64_t>;

// Classes with zero observed count stay in the space, masked, so indices are
// stable no matter which split produced the counts.
inline LabelSpace build_label_space(const FeatureCatalog& catalog, const ClassCounts& counts) {
  LabelSpace space;
  for (const auto& f : catalog.features) {
    std::size_t begin = space.classes.size();
    for (std::size_t v = 0; v < f.values.size(); ++v) {
      space.class_of[{f.id, v}] = space.classes.size();
      space.classes.emplace_back(f.id, v);
    }
    space.feature_slice[f.id] = {begin, space.classes.size()};
  }
  space.total_classes = space.classes.size();
  space.observed.assign(space.total_classes, false);
  for (const auto& [key, count] : counts) {
    auto it = space.class_of.find(key);
    if (it == space.class_of.end())
      throw ConfigError("count for class not in catalog: " + key.first + "/" +
                        std::to_string(key.second));
    if (count > 0) space.observed[it->second] = true;
  }
  return space;
}

inline std::string write_class_counts(const ClassCounts& counts) {
  std::string out = "feature_id\tvalue_index\tcount\n";
  for (const auto& [key, count] : counts) {
    out += key.first;
    out += '\t';
    out += std::to_string(key.second);
    out += '\t';
    out += std::to_string(count);
    out += '\n';
  }
  return out;
}

inline ClassCounts parse_class_counts(const std::string& text,
                                      const std::string& file = "<counts>") {
  ClassCounts counts;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || lineno == 1) continue;  // header
    auto cols = split(line, '\t');
    if (cols.size() != 3) throw ParseError(file, lineno, "expected 3 columns");
    try {
      counts[{trim(cols[0]), std::stoul(cols[1])}] = std::stoull(cols[2]);
    } catch (const std::exception&) {
      throw ParseError(file, lineno, "malformed count row");
    }
  }
  return counts;
}

}  // namespace walsnet
