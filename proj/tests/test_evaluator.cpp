#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "walsnet/evaluator.hpp"
#include "walsnet/wals.hpp"

using namespace walsnet;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LabelSpace two_feature_space(std::vector<bool> observed_pattern) {
  FeatureCatalog catalog = parse_catalog(
      "1A\tPhonology\tTone Count\tLow | Mid | High\n"
      "2A\tMorphology\tAffix Site\tPrefix | Suffix\n",
      "c.tsv");
  ClassCounts counts;
  for (std::size_t c = 0; c < observed_pattern.size(); ++c) {
    const std::string fid = c < 3 ? "1A" : "2A";
    const std::size_t v = c < 3 ? c : c - 3;
    if (observed_pattern[c]) counts[{fid, v}] = 1;
  }
  return build_label_space(catalog, counts);
}

// Deterministic evaluation fixture: five languages, ten features, every
// (language, feature) cell either correct, wrong, abstained, or undefined in
// gold. The table is the single source both the library and the test's
// brute-force recomputation read from.
struct EvalFixture {
  FeatureCatalog catalog;
  std::vector<LanguageRecord> records;
  std::map<std::string, const LanguageRecord*> by_iso;
  std::vector<char> cell;  // [lang * 10 + feature]: c / w / a / -
  std::vector<ScoredItem> items;
};

EvalFixture make_eval_fixture() {
  EvalFixture fx;
  std::string catalog_text;
  const char* chapters[3] = {"Phonology", "Morphology", "Word Order"};
  for (int f = 0; f < 10; ++f) {
    catalog_text += std::to_string(f + 1) + "A\t" + chapters[f % 3] + "\tFeature " +
                    std::to_string(f + 1) + "\tOne | Two | Three\n";
  }
  fx.catalog = parse_catalog(catalog_text, "c.tsv");

  const char* isos[5] = {"aaa", "bbb", "ccc", "ddd", "eee"};
  const char* families[5] = {"F-One", "F-One", "F-Two", "F-Two", "F-Three"};
  const char* areas[5] = {"Eurasia", "Africa", "Eurasia", "Africa", "Papunesia"};
  fx.records.resize(5);
  fx.cell.resize(50);
  std::vector<Prediction> preds(5);
  for (int l = 0; l < 5; ++l) {
    LanguageRecord& r = fx.records[l];
    r.wals_code = isos[l];
    r.iso639_3 = isos[l];
    r.name = std::string("Lang ") + isos[l];
    r.family = families[l];
    r.macro_area = areas[l];
    for (int f = 0; f < 10; ++f) {
      const char kinds[4] = {'c', 'w', 'a', '-'};
      const char kind = kinds[(l * 7 + f * 3) % 4];
      fx.cell[l * 10 + f] = kind;
      if (kind == '-') continue;
      const std::string fid = std::to_string(f + 1) + "A";
      const std::size_t gold_value = (l + f) % 3;
      r.assignments[fid] = gold_value;
      if (kind == 'c') preds[l].by_feature[fid] = PredictedValue{gold_value, 0.9};
      if (kind == 'w') preds[l].by_feature[fid] = PredictedValue{(gold_value + 1) % 3, 0.9};
    }
  }
  for (int l = 0; l < 5; ++l) fx.by_iso.emplace(fx.records[l].iso639_3, &fx.records[l]);
  for (int l = 0; l < 5; ++l) score_example(preds[l], fx.records[l], fx.items);
  return fx;
}

// Key of the group a cell lands in under the given view, mirroring nothing
// from the library but the published grouping definitions.
std::string group_key(const EvalFixture& fx, int l, int f, Grouping g) {
  switch (g) {
    case Grouping::Overall: return "overall";
    case Grouping::Feature: return std::to_string(f + 1) + "A";
    case Grouping::ChapterType: {
      const char* chapters[3] = {"Phonology", "Morphology", "Word Order"};
      return chapters[f % 3];
    }
    case Grouping::MacroArea: return fx.records[l].macro_area;
    case Grouping::Family: return fx.records[l].family;
  }
  return "";
}

}  // namespace

TEST_CASE("flat decode picks the best observed sigmoid above the threshold") {
  LabelSpace space = two_feature_space({true, false, true, true, true});
  // 1A: the masked middle class holds the largest logit and must lose.
  std::vector<double> logits = {1.0, 5.0, 0.5, -3.0, -4.0};
  Prediction pred = decode(logits.data(), space, OutputMode::Flat);
  REQUIRE(pred.by_feature.count("1A") == 1);
  CHECK(pred.by_feature["1A"].value == 0);
  CHECK(pred.by_feature["1A"].confidence == Catch::Approx(sigmoid_ref(1.0)).epsilon(1e-14));
  // 2A: both sigmoids fall below tau, so the feature abstains.
  CHECK(pred.by_feature.count("2A") == 0);

  // A zero logit sits exactly at tau and is emitted.
  std::vector<double> at_tau = {0.0, -9.0, -9.0, -9.0, -9.0};
  Prediction boundary = decode(at_tau.data(), space, OutputMode::Flat);
  REQUIRE(boundary.by_feature.count("1A") == 1);
  CHECK(boundary.by_feature["1A"].confidence == 0.5);

  // Exact ties resolve to the lowest value index.
  std::vector<double> tied = {2.0, -9.0, 2.0, -9.0, -9.0};
  Prediction tie = decode(tied.data(), space, OutputMode::Flat);
  REQUIRE(tie.by_feature.count("1A") == 1);
  CHECK(tie.by_feature["1A"].value == 0);
}

TEST_CASE("multitask decode runs a masked softmax per feature") {
  LabelSpace space = two_feature_space({true, false, true, true, true});
  std::vector<double> logits = {1.0, 50.0, 1.0, 3.0, 2.0};
  Prediction pred = decode(logits.data(), space, OutputMode::Multitask);
  // 1A: the two observed classes tie at probability one half; the lowest
  // value index wins and one half meets tau.
  REQUIRE(pred.by_feature.count("1A") == 1);
  CHECK(pred.by_feature["1A"].value == 0);
  CHECK(pred.by_feature["1A"].confidence == 0.5);
  // 2A: softmax over (3, 2).
  REQUIRE(pred.by_feature.count("2A") == 1);
  CHECK(pred.by_feature["2A"].value == 0);
  const double p = std::exp(3.0) / (std::exp(3.0) + std::exp(2.0));
  CHECK(pred.by_feature["2A"].confidence == Catch::Approx(p).epsilon(1e-14));

  // Three observed equal logits: probability one third misses tau.
  LabelSpace full = two_feature_space({true, true, true, true, true});
  std::vector<double> flat3 = {1.0, 1.0, 1.0, 0.0, 0.0};
  Prediction abstain = decode(flat3.data(), full, OutputMode::Multitask);
  CHECK(abstain.by_feature.count("1A") == 0);

  // A raised tau silences an otherwise confident feature.
  Prediction strict = decode(logits.data(), space, OutputMode::Multitask, 0.999);
  CHECK(strict.by_feature.count("2A") == 0);
}

TEST_CASE("scoring charges TP for hits, FP plus FN for misses, FN for abstentions") {
  LanguageRecord gold;
  gold.wals_code = "abc";
  gold.iso639_3 = "abc";
  gold.assignments["1A"] = 1;
  gold.assignments["2A"] = 0;
  gold.assignments["3A"] = 2;

  Prediction pred;
  pred.by_feature["1A"] = PredictedValue{1, 0.8};  // hit
  pred.by_feature["2A"] = PredictedValue{1, 0.7};  // miss
  // 3A abstains; 9A is not in gold and must not appear at all.
  pred.by_feature["9A"] = PredictedValue{0, 0.9};

  std::vector<ScoredItem> items;
  score_example(pred, gold, items);
  REQUIRE(items.size() == 3);
  std::map<std::string, Counts> by_feature;
  for (const auto& item : items) {
    CHECK(item.language == "abc");
    by_feature[item.feature] = item.counts;
  }
  CHECK(by_feature["1A"].tp == 1);
  CHECK(by_feature["1A"].fp == 0);
  CHECK(by_feature["1A"].fn == 0);
  CHECK(by_feature["2A"].tp == 0);
  CHECK(by_feature["2A"].fp == 1);
  CHECK(by_feature["2A"].fn == 1);
  CHECK(by_feature["3A"].tp == 0);
  CHECK(by_feature["3A"].fp == 0);
  CHECK(by_feature["3A"].fn == 1);
  CHECK(by_feature.count("9A") == 0);

  // Without an ISO code the WALS code identifies the language.
  LanguageRecord no_iso = gold;
  no_iso.iso639_3.clear();
  items.clear();
  score_example(pred, no_iso, items);
  CHECK(items[0].language == "abc");
}

TEST_CASE("pooled counts give a one-third accuracy and one-half rates") {
  std::vector<ScoredItem> items(2);
  items[0] = {"aaa", "1A", {1, 0, 0}};
  items[1] = {"aaa", "1A", {0, 1, 1}};
  FeatureCatalog catalog = parse_catalog("1A\tPhonology\tTone Count\tLow | Mid\n", "c.tsv");
  MetricsReport report = aggregate(items, {}, catalog, Grouping::Overall);
  REQUIRE(report.rows.size() == 1);
  const ReportRow& row = report.rows[0];
  CHECK(row.group == "overall");
  CHECK(row.counts.n() == 3);
  CHECK(row.a == 1.0 / 3.0);
  CHECK(row.p == 0.5);
  CHECK(row.r == 0.5);
  CHECK(row.f1 == 0.5);
}

TEST_CASE("every grouped view equals an independent recomputation") {
  EvalFixture fx = make_eval_fixture();

  for (Grouping g : {Grouping::Overall, Grouping::ChapterType, Grouping::MacroArea,
                     Grouping::Family, Grouping::Feature}) {
    MetricsReport report = aggregate(fx.items, fx.by_iso, fx.catalog, g);

    // Brute force straight from the decision table.
    std::map<std::string, Counts> expect;
    for (int l = 0; l < 5; ++l) {
      for (int f = 0; f < 10; ++f) {
        const char kind = fx.cell[l * 10 + f];
        if (kind == '-') continue;
        Counts& c = expect[group_key(fx, l, f, g)];
        if (kind == 'c') c.tp += 1;
        if (kind == 'w') {
          c.fp += 1;
          c.fn += 1;
        }
        if (kind == 'a') c.fn += 1;
      }
    }

    REQUIRE(report.rows.size() == expect.size());
    for (const ReportRow& row : report.rows) {
      INFO(to_string(g) << " group " << row.group);
      REQUIRE(expect.count(row.group) == 1);
      const Counts& c = expect[row.group];
      CHECK(row.counts.tp == c.tp);
      CHECK(row.counts.fp == c.fp);
      CHECK(row.counts.fn == c.fn);
      const std::uint64_t n = c.tp + c.fp + c.fn;
      CHECK(row.a == (n ? static_cast<double>(c.tp) / static_cast<double>(n) : 0.0));
      CHECK(row.p == (c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                                  : 0.0));
      CHECK(row.r == (c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                                  : 0.0));
      const double f1 = row.p + row.r > 0 ? 2 * row.p * row.r / (row.p + row.r) : 0.0;
      CHECK(row.f1 == f1);
      // N includes every error twice over its two legs, so both precision
      // and recall dominate accuracy.
      CHECK(row.p >= row.a);
      CHECK(row.r >= row.a);
    }
  }
}

TEST_CASE("family and feature views rank by accuracy, others sort by name") {
  EvalFixture fx = make_eval_fixture();

  for (Grouping g : {Grouping::Family, Grouping::Feature}) {
    MetricsReport report = aggregate(fx.items, fx.by_iso, fx.catalog, g);
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      CHECK(report.rows[i].rank == i + 1);
      if (i == 0) continue;
      const ReportRow& prev = report.rows[i - 1];
      const ReportRow& cur = report.rows[i];
      CHECK((prev.a > cur.a || (prev.a == cur.a && prev.group < cur.group)));
    }
  }

  for (Grouping g : {Grouping::Overall, Grouping::ChapterType, Grouping::MacroArea}) {
    MetricsReport report = aggregate(fx.items, fx.by_iso, fx.catalog, g);
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      CHECK(report.rows[i].rank == 0);
      if (i > 0) CHECK(report.rows[i - 1].group < report.rows[i].group);
    }
  }
}

TEST_CASE("aggregate rejects items it cannot attribute") {
  EvalFixture fx = make_eval_fixture();
  std::vector<ScoredItem> stray(1);
  stray[0] = {"zzz", "1A", {1, 0, 0}};
  CHECK_THROWS_AS(aggregate(stray, fx.by_iso, fx.catalog, Grouping::Family), ConfigError);
  stray[0] = {"aaa", "99A", {1, 0, 0}};
  CHECK_THROWS_AS(aggregate(stray, fx.by_iso, fx.catalog, Grouping::ChapterType), ConfigError);
}

TEST_CASE("report renderers are deterministic and carry the conventions footer") {
  EvalFixture fx = make_eval_fixture();
  MetricsReport report = aggregate(fx.items, fx.by_iso, fx.catalog, Grouping::Feature);

  const std::string tsv = render_report_delimited(report);
  CHECK(tsv == render_report_delimited(report));
  CHECK(tsv.rfind("group\tN\tTP\tFP\tFN\tA\tP\tR\tF1\trank\n", 0) == 0);
  CHECK(tsv.find(kReportFooter) != std::string::npos);

  const std::string text = render_report_text(report);
  CHECK(text == render_report_text(report));
  CHECK(text.rfind("grouping: feature\n", 0) == 0);
  CHECK(text.find(kReportFooter) != std::string::npos);

  MetricsReport empty;
  empty.grouping = Grouping::Overall;
  const std::string empty_tsv = render_report_delimited(empty);
  CHECK(empty_tsv == std::string("group\tN\tTP\tFP\tFN\tA\tP\tR\tF1\trank\n") + kReportFooter);
}
