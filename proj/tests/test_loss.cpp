#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "walsnet/gradcheck.hpp"
#include "walsnet/loss.hpp"
#include "walsnet/wals.hpp"

using namespace walsnet;

namespace {

// Exact unsigned rational, reduced. Cross-multiplication runs in 128 bits so
// sums over per-class weight terms never round.
struct Frac {
  unsigned long long num = 0, den = 1;
};

Frac make_frac(unsigned long long n, unsigned long long d) {
  REQUIRE(d != 0);
  const unsigned long long g = std::gcd(n, d);
  return {n / g, d / g};
}

Frac frac_add(Frac a, Frac b) {
  const unsigned __int128 n =
      static_cast<unsigned __int128>(a.num) * b.den + static_cast<unsigned __int128>(b.num) * a.den;
  const unsigned __int128 d = static_cast<unsigned __int128>(a.den) * b.den;
  // 128-bit Euclid keeps the reduced terms inside 64 bits.
  unsigned __int128 x = n, y = d;
  while (y != 0) {
    const unsigned __int128 r = x % y;
    x = y;
    y = r;
  }
  const unsigned __int128 rn = n / x, rd = d / x;
  REQUIRE(rn <= ~0ull);
  REQUIRE(rd <= ~0ull);
  return {static_cast<unsigned long long>(rn), static_cast<unsigned long long>(rd)};
}

bool frac_eq(Frac a, Frac b) {
  return static_cast<unsigned __int128>(a.num) * b.den ==
         static_cast<unsigned __int128>(b.num) * a.den;
}

struct LossFixture {
  FeatureCatalog catalog;
  LabelSpace space;
  ClassWeights weights;
  std::vector<ExampleGold> gold;
};

LossFixture make_fixture() {
  LossFixture fx;
  fx.catalog = parse_catalog(
      "1A\tPhonology\tTone Count\tLow | Mid | High\n"
      "2A\tMorphology\tAffix Site\tPrefix | Suffix\n",
      "catalog.tsv");
  ClassCounts counts;
  counts[{"1A", 0}] = 3;
  counts[{"1A", 1}] = 2;
  counts[{"2A", 0}] = 1;
  counts[{"2A", 1}] = 4;
  fx.space = build_label_space(fx.catalog, counts);
  fx.weights = build_weights(fx.catalog, fx.space, counts);
  fx.gold.resize(2);
  fx.gold[0].items = {{0, 3, 0}, {3, 5, 4}};
  fx.gold[1].items = {{0, 3, 1}, {3, 5, 3}};
  return fx;
}

Tensor<double> random_logits(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Tensor<double> t({rows, cols});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 2.0);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("class weight is inverse frequency scaled by the feature total") {
  // N_L = 10 attested examples, M_L = 4 values, N_c = 5: w = 10 / (5 * 4).
  CHECK(class_weight(10, 5, 4) == 0.5);
  CHECK(class_weight(7, 2, 3) == 7.0 / 6.0);
  CHECK(class_weight(0, 0, 3) == 0.0);
  CHECK(class_weight(9, 0, 3) == 0.0);  // unattested class contributes nothing
  CHECK_THROWS_AS(class_weight(1, 1, 0), ConfigError);
}

TEST_CASE("weighted counts of observed classes sum to the feature invariant") {
  // For every observed class, w(c) * N_c = N_L / M_L exactly, so the sum over
  // a feature is (#observed) * N_L / M_L. Checked in exact rationals for 1000
  // random count vectors.
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng() % 9;  // value count 2..10
    std::vector<std::uint64_t> counts(m);
    std::uint64_t n_l = 0;
    std::size_t observed = 0;
    for (auto& c : counts) {
      c = rng() % 1000;  // zero included: unobserved classes appear
      n_l += c;
      if (c > 0) ++observed;
    }
    if (n_l == 0) continue;

    Frac sum{0, 1};
    for (std::uint64_t c : counts) {
      if (c == 0) {
        CHECK(class_weight(n_l, c, m) == 0.0);
        continue;
      }
      const double w = class_weight(n_l, c, m);
      CHECK(w == static_cast<double>(n_l) / (static_cast<double>(c) * static_cast<double>(m)));
      // w * N_c as an exact rational: (N_L * N_c) / (N_c * M_L).
      sum = frac_add(sum, make_frac(n_l * c, c * static_cast<unsigned long long>(m)));
    }
    const Frac expected = make_frac(n_l * observed, m);
    CHECK(frac_eq(sum, expected));
  }
}

TEST_CASE("build_weights fills per-class weights, counts, and feature totals") {
  LossFixture fx = make_fixture();
  REQUIRE(fx.weights.w.size() == 5);
  CHECK(fx.weights.w[0] == 5.0 / 9.0);   // 1A Low: 5 / (3 * 3)
  CHECK(fx.weights.w[1] == 5.0 / 6.0);   // 1A Mid: 5 / (2 * 3)
  CHECK(fx.weights.w[2] == 0.0);         // 1A High unattested
  CHECK(fx.weights.w[3] == 5.0 / 2.0);   // 2A Prefix: 5 / (1 * 2)
  CHECK(fx.weights.w[4] == 5.0 / 8.0);   // 2A Suffix: 5 / (4 * 2)
  CHECK(fx.weights.counts == std::vector<std::uint64_t>{3, 2, 0, 1, 4});
  CHECK(fx.weights.feature_total.at("1A") == 5);
  CHECK(fx.weights.feature_total.at("2A") == 5);
  CHECK(fx.space.observed == std::vector<bool>{true, true, false, true, true});
}

TEST_CASE("label occurrence counting distinguishes example and language modes") {
  FeatureCatalog catalog = parse_catalog("1A\tPhonology\tTone Count\tLow | Mid | High\n", "c.tsv");
  LanguageRecord a, b;
  a.wals_code = "aaa";
  a.iso639_3 = "aaa";
  a.assignments["1A"] = 0;
  b.wals_code = "bbb";
  b.iso639_3 = "bbb";
  b.assignments["1A"] = 1;
  std::vector<LanguageRecord> records{a, b};

  std::vector<Example> examples;
  examples.push_back({"one", "aaa", Split::Train});
  examples.push_back({"two", "aaa", Split::Train});
  examples.push_back({"three", "bbb", Split::Train});

  ClassCounts per_example = count_label_occurrences(examples, records, CountMode::PerExample);
  CHECK(per_example[{"1A", 0}] == 2);
  CHECK(per_example[{"1A", 1}] == 1);

  ClassCounts per_language = count_label_occurrences(examples, records, CountMode::PerLanguage);
  CHECK(per_language[{"1A", 0}] == 1);
  CHECK(per_language[{"1A", 1}] == 1);

  examples.push_back({"four", "zzz", Split::Train});
  CHECK_THROWS_AS(count_label_occurrences(examples, records), ConfigError);
}

TEST_CASE("mask_logits floors unobserved classes") {
  LossFixture fx = make_fixture();
  Tensor<double> logits = random_logits(2, 5, 1);
  Tensor<double> orig = logits;
  mask_logits(logits, fx.space.observed);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      if (fx.space.observed[c])
        CHECK(logits.at(r, c) == orig.at(r, c));
      else
        CHECK(logits.at(r, c) == kMaskLogit);
    }
  }
  Tensor<double> wrong({2, 4});
  CHECK_THROWS_AS(mask_logits(wrong, fx.space.observed), ConfigError);
}

TEST_CASE("gold items carry the label-space slice of each attested feature") {
  LossFixture fx = make_fixture();
  LanguageRecord r;
  r.assignments["1A"] = 2;
  r.assignments["2A"] = 1;
  ExampleGold g = gold_for_language(r, fx.space);
  REQUIRE(g.items.size() == 2);
  CHECK(g.items[0].begin == 0);
  CHECK(g.items[0].end == 3);
  CHECK(g.items[0].gold == 2);
  CHECK(g.items[1].begin == 3);
  CHECK(g.items[1].end == 5);
  CHECK(g.items[1].gold == 4);
}

TEST_CASE("flat loss value matches the closed form on one example") {
  LossFixture fx = make_fixture();
  Tensor<double> logits({1, 5});
  logits.data = {0.7, -0.3, 9.9, 0.2, -1.1};
  std::vector<ExampleGold> gold(1);
  gold[0].items = {{0, 3, 0}, {3, 5, 4}};

  auto softplus = [](double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); };

  LossResult<double> pos = flat_loss(logits, gold, fx.weights, fx.space.observed,
                                     FlatLossForm::PositiveOnly);
  const double expect_pos = fx.weights.w[0] * softplus(-0.7) + fx.weights.w[4] * softplus(1.1);
  CHECK(pos.value == Catch::Approx(expect_pos).epsilon(1e-14));

  LossResult<double> two = flat_loss(logits, gold, fx.weights, fx.space.observed,
                                     FlatLossForm::TwoSided);
  // Negative terms carry weight one; the unattested class 2 contributes none.
  const double expect_two = expect_pos + softplus(-0.3) + softplus(0.2);
  CHECK(two.value == Catch::Approx(expect_two).epsilon(1e-14));

  std::vector<ExampleGold> short_gold;
  CHECK_THROWS_AS(flat_loss(logits, short_gold, fx.weights, fx.space.observed), ConfigError);
}

TEST_CASE("losses average over the batch") {
  LossFixture fx = make_fixture();
  Tensor<double> logits = random_logits(2, 5, 3);
  Tensor<double> row0({1, 5}), row1({1, 5});
  for (std::size_t c = 0; c < 5; ++c) {
    row0.at(0, c) = logits.at(0, c);
    row1.at(0, c) = logits.at(1, c);
  }
  std::vector<ExampleGold> g0{fx.gold[0]}, g1{fx.gold[1]};

  for (int which : {0, 1}) {
    auto eval = [&](const Tensor<double>& l, const std::vector<ExampleGold>& g) {
      return which == 0 ? flat_loss(l, g, fx.weights, fx.space.observed, FlatLossForm::TwoSided).value
                        : multitask_loss(l, g, fx.weights, fx.space.observed).value;
    };
    const double joint = eval(logits, fx.gold);
    const double split = (eval(row0, g0) + eval(row1, g1)) / 2.0;
    CHECK(joint == Catch::Approx(split).epsilon(1e-14));
  }
}

TEST_CASE("flat loss gradients match finite differences") {
  LossFixture fx = make_fixture();
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    for (FlatLossForm form : {FlatLossForm::PositiveOnly, FlatLossForm::TwoSided}) {
      Tensor<double> logits = random_logits(2, 5, seed);
      LossResult<double> res = flat_loss(logits, fx.gold, fx.weights, fx.space.observed, form);
      auto loss = [&] {
        return flat_loss(logits, fx.gold, fx.weights, fx.space.observed, form).value;
      };
      CHECK(grad_check_array(logits.data, res.d_logits.data, loss) < 1e-4);
    }
  }
}

TEST_CASE("multitask loss gradients match finite differences") {
  LossFixture fx = make_fixture();
  for (std::uint64_t seed : {8u, 9u, 10u}) {
    Tensor<double> logits = random_logits(2, 5, seed);
    LossResult<double> res = multitask_loss(logits, fx.gold, fx.weights, fx.space.observed);
    auto loss = [&] { return multitask_loss(logits, fx.gold, fx.weights, fx.space.observed).value; };
    CHECK(grad_check_array(logits.data, res.d_logits.data, loss) < 1e-4);
  }
}

TEST_CASE("multitask loss with per-task scales matches the scaled recomputation") {
  LossFixture fx = make_fixture();
  std::map<std::string, double> scales = build_task_scales(fx.catalog, fx.weights, 40);
  // 40 examples, 2 features, N_L = 5 for both: scale = 40 / (2 * 5) = 4.
  CHECK(scales.at("1A") == 4.0);
  CHECK(scales.at("2A") == 4.0);

  Tensor<double> logits = random_logits(2, 5, 11);
  LossResult<double> scaled =
      multitask_loss(logits, fx.gold, fx.weights, fx.space.observed, &scales, &fx.space);
  LossResult<double> plain = multitask_loss(logits, fx.gold, fx.weights, fx.space.observed);
  CHECK(scaled.value == Catch::Approx(4.0 * plain.value).epsilon(1e-14));
  for (std::size_t i = 0; i < plain.d_logits.data.size(); ++i)
    CHECK(scaled.d_logits.data[i] == Catch::Approx(4.0 * plain.d_logits.data[i]).epsilon(1e-12));

  CHECK_THROWS_AS(multitask_loss(logits, fx.gold, fx.weights, fx.space.observed, &scales, nullptr),
                  ConfigError);

  // A feature nobody attests gets scale zero rather than a division blowup.
  ClassCounts empty_counts;
  empty_counts[{"1A", 0}] = 1;
  LabelSpace space2 = build_label_space(fx.catalog, empty_counts);
  ClassWeights cw2 = build_weights(fx.catalog, space2, empty_counts);
  std::map<std::string, double> scales2 = build_task_scales(fx.catalog, cw2, 10);
  CHECK(scales2.at("2A") == 0.0);
}

TEST_CASE("masked classes get exactly zero gradient and vanishing probability") {
  FeatureCatalog catalog =
      parse_catalog("1A\tPhonology\tTone Count\tA | B | C | D | E | F\n", "c.tsv");
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    // Random observation pattern keeping at least the gold class observed.
    ClassCounts counts;
    const std::size_t gold_value = rng() % 6;
    counts[{"1A", gold_value}] = 1 + rng() % 5;
    for (std::size_t v = 0; v < 6; ++v)
      if (v != gold_value && rng() % 2) counts[{"1A", v}] = 1 + rng() % 5;

    LabelSpace space = build_label_space(catalog, counts);
    ClassWeights cw = build_weights(catalog, space, counts);
    Tensor<double> logits = random_logits(1, 6, 1000 + trial);
    std::vector<ExampleGold> gold(1);
    gold[0].items = {{0, 6, gold_value}};

    LossResult<double> res = multitask_loss(logits, gold, cw, space.observed);
    REQUIRE(std::isfinite(res.value));

    // Reference softmax over the masked row.
    double maxv = kMaskLogit;
    for (std::size_t c = 0; c < 6; ++c)
      if (space.observed[c]) maxv = std::max(maxv, logits.at(0, c));
    double z = 0;
    for (std::size_t c = 0; c < 6; ++c)
      z += std::exp((space.observed[c] ? logits.at(0, c) : kMaskLogit) - maxv);
    for (std::size_t c = 0; c < 6; ++c) {
      if (space.observed[c]) continue;
      const double p = std::exp(kMaskLogit - maxv) / z;
      CHECK(p < 1e-30);
      CHECK(res.d_logits.at(0, c) == 0.0);
    }

    // Flat two-sided loss also never touches unobserved classes.
    LossResult<double> flat =
        flat_loss(logits, gold, cw, space.observed, FlatLossForm::TwoSided);
    for (std::size_t c = 0; c < 6; ++c)
      if (!space.observed[c]) CHECK(flat.d_logits.at(0, c) == 0.0);
  }
}

TEST_CASE("an unobserved gold class is a configuration error") {
  LossFixture fx = make_fixture();
  Tensor<double> logits = random_logits(1, 5, 44);
  std::vector<ExampleGold> gold(1);
  gold[0].items = {{0, 3, 2}};  // class 2 has count zero
  CHECK_THROWS_AS(multitask_loss(logits, gold, fx.weights, fx.space.observed), ConfigError);
}

TEST_CASE("recurrent penalty covers LSTM weight matrices only") {
  ModelConfig cfg;
  cfg.embedding = EmbeddingMode::ByteUnigram;
  cfg.conv = {{3, 3}};
  cfg.lstm_layers = 2;
  cfg.lstm_hidden = 4;
  cfg.n_classes = 5;
  ModelParams<double> p = init_params<double>(cfg, 13);

  const double lambda = 0.05;
  long double expect = 0;
  for (const auto& layer : p.lstm)
    for (const Tensor<double>* t : {&layer.fwd.W, &layer.fwd.U, &layer.bwd.W, &layer.bwd.U})
      for (double v : t->data) expect += static_cast<long double>(v) * v;
  CHECK(recurrent_l2_penalty(p, lambda) == lambda * static_cast<double>(expect));

  // Biases, embeddings, conv, and head stay outside the penalty.
  const double before = recurrent_l2_penalty(p, lambda);
  p.lstm[0].fwd.b.data[0] += 1e6;
  p.embedding.data[0] += 1e6;
  p.head_w.data[0] += 1e6;
  CHECK(recurrent_l2_penalty(p, lambda) == before);

  ModelParams<double> grads = zero_grads(p);
  add_recurrent_l2_grad(p, lambda, grads);
  CHECK(grads.lstm[0].fwd.W.data[0] == 2.0 * lambda * p.lstm[0].fwd.W.data[0]);
  CHECK(grads.lstm[1].bwd.U.data[5] == 2.0 * lambda * p.lstm[1].bwd.U.data[5]);
  CHECK(grads.lstm[0].fwd.b.data == std::vector<double>(16, 0.0));
  CHECK(grads.head_w.data == std::vector<double>(p.head_w.data.size(), 0.0));
  CHECK(grads.embedding.data == std::vector<double>(p.embedding.data.size(), 0.0));
}
