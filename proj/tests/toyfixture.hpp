// Synthetic three-language corpus with pairwise disjoint byte alphabets and a
// six-feature catalog. Feature "6A" takes one value everywhere, so its other
// two values are unobserved; language ccc leaves "5A" unassigned, so that
// feature has a gold-undefined case and one unobserved value of its own.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "walsnet/walsnet.hpp"

namespace toy {

using namespace walsnet;

inline const char* kCatalogText =
    "1A\tPhonology\tTone Count\tLow | Mid | High\n"
    "2A\tMorphology\tAffix Site\tPrefix | Suffix | Infix\n"
    "3A\tNominal Categories\tCase Marks\tNone | Weak | Rich\n"
    "4A\tWord Order\tVerb Slot\tFirst | Middle | Last\n"
    "5A\tVerbal Categories\tTense Splits\tOne | Two | Three\n"
    "6A\tLexicon\tHand Words\tShared | Split | Mixed\n";

inline const char* kLanguagesCsv =
    "wals_code,iso_code,name,genus,family,macroarea,1A,2A,3A,4A,5A,6A\n"
    "aaa,aaa,Alpha,Alphic,F-Alpha,Eurasia,1 Low,2 Suffix,3 Rich,1 First,2 Two,1 Shared\n"
    "bbb,bbb,Beta,Betic,F-Beta,Africa,2 Mid,3 Infix,1 None,2 Middle,3 Three,1 Shared\n"
    "ccc,ccc,Gamma,Gammic,F-Alpha,Papunesia,3 High,1 Prefix,2 Weak,3 Last,,1 Shared\n";

struct ToyData {
  FeatureCatalog catalog;
  std::vector<LanguageRecord> records;
  std::vector<Example> train;
  std::vector<Example> dev;
};

// 8..14 lowercase letters drawn from an 8-letter alphabet starting at `lo`.
inline std::string toy_text(std::mt19937_64& rng, char lo) {
  std::string s(8 + rng() % 7, '\0');
  for (auto& c : s) c = static_cast<char>(lo + rng() % 8);
  return s;
}

inline ToyData make_toy(std::uint64_t seed, std::size_t n_train = 200, std::size_t n_dev = 60) {
  ToyData d;
  d.catalog = parse_catalog(kCatalogText, "<toy catalog>");
  d.records = parse_languages(kLanguagesCsv, d.catalog, "<toy languages>");
  auto rng = make_rng(seed, "toy");
  const char lows[3] = {'a', 'i', 'q'};
  const char* isos[3] = {"aaa", "bbb", "ccc"};
  for (std::size_t i = 0; i < n_train; ++i)
    d.train.push_back(Example{toy_text(rng, lows[i % 3]), isos[i % 3], Split::Train});
  for (std::size_t i = 0; i < n_dev; ++i)
    d.dev.push_back(Example{toy_text(rng, lows[i % 3]), isos[i % 3], Split::Dev});
  return d;
}

// Smallest config that still exercises every stage: one conv block, two
// biLSTM layers with the residual add, byte unigrams. Minimum input: 4 tokens.
inline ModelConfig tiny_model(std::size_t n_classes) {
  ModelConfig m;
  m.embedding = EmbeddingMode::ByteUnigram;
  m.conv = {{3, 3}};
  m.lstm_layers = 2;
  m.lstm_hidden = 4;
  m.n_classes = n_classes;
  return m;
}

}  // namespace toy
