// Class weighting, unobserved-class masking, and the two training losses:
// flat weighted sigmoid cross-entropy over all classes, and per-feature
// softmax cross-entropy summed across features.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "walsnet/common.hpp"
#include "walsnet/corpus.hpp"
#include "walsnet/model.hpp"
#include "walsnet/tensor.hpp"
#include "walsnet/wals.hpp"

namespace walsnet {

inline constexpr double kMaskLogit = -1e9;

// w(c): zero for unattested classes, reciprocal-frequency otherwise.
inline double class_weight(std::uint64_t n_feature, std::uint64_t n_class,
                           std::uint64_t n_values) {
  if (n_values == 0) throw ConfigError("feature with zero values");
  if (n_class == 0) return 0.0;
  return static_cast<double>(n_feature) /
         (static_cast<double>(n_class) * static_cast<double>(n_values));
}

struct ClassWeights {
  std::vector<double> w;                             // [C]
  std::vector<std::uint64_t> counts;                 // [C], N_c
  std::map<std::string, std::uint64_t> feature_total;  // feature id -> N_L
};

enum class CountMode { PerExample, PerLanguage };

// Counts gold class occurrences over the given examples. PerExample charges
// each example with all of its language's assignments; PerLanguage charges
// each distinct language once.
inline ClassCounts count_label_occurrences(const std::vector<Example>& examples,
                                           const std::vector<LanguageRecord>& records,
                                           CountMode mode = CountMode::PerExample) {
  std::map<std::string, const LanguageRecord*> by_iso;
  for (const auto& r : records)
    if (!r.iso639_3.empty()) by_iso.emplace(r.iso639_3, &r);
  ClassCounts counts;
  std::set<std::string> seen;
  for (const auto& ex : examples) {
    if (mode == CountMode::PerLanguage && !seen.insert(ex.language).second) continue;
    auto it = by_iso.find(ex.language);
    if (it == by_iso.end()) throw ConfigError("example language has no record: " + ex.language);
    for (const auto& [fid, vidx] : it->second->assignments) ++counts[{fid, vidx}];
  }
  return counts;
}

inline ClassWeights build_weights(const FeatureCatalog& catalog, const LabelSpace& space,
                                  const ClassCounts& counts) {
  ClassWeights cw;
  cw.w.assign(space.total_classes, 0.0);
  cw.counts.assign(space.total_classes, 0);
  for (const auto& f : catalog.features) {
    auto [begin, end] = space.feature_slice.at(f.id);
    std::uint64_t n_feature = 0;
    for (std::size_t c = begin; c < end; ++c) {
      auto it = counts.find(space.classes[c]);
      cw.counts[c] = it == counts.end() ? 0 : it->second;
      n_feature += cw.counts[c];
    }
    cw.feature_total[f.id] = n_feature;
    for (std::size_t c = begin; c < end; ++c)
      cw.w[c] = class_weight(n_feature, cw.counts[c], f.values.size());
  }
  return cw;
}

// Delimited dump, one class per line.
inline std::string render_weights(const LabelSpace& space, const ClassWeights& cw) {
  std::ostringstream out;
  out << "feature_id\tvalue_index\tN_c\tw\n";
  out.precision(17);
  for (std::size_t c = 0; c < space.total_classes; ++c)
    out << space.classes[c].first << '\t' << space.classes[c].second << '\t' << cw.counts[c]
        << '\t' << cw.w[c] << '\n';
  return out.str();
}

// Unobserved positions are pushed to a large negative constant so that
// softmax assigns them exactly zero probability after underflow.
template <class Real>
void mask_logits(Tensor<Real>& logits, const std::vector<bool>& observed) {
  const std::size_t C = observed.size();
  if (logits.shape.back() != C) throw ConfigError("mask length mismatch");
  const std::size_t rows = logits.data.size() / C;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c)
      if (!observed[c]) logits.data[r * C + c] = static_cast<Real>(kMaskLogit);
}

// Gold labels of one example: each attested feature contributes its label
// space slice [begin, end) and the gold class index within the full space.
struct ExampleGold {
  struct Item {
    std::size_t begin = 0, end = 0, gold = 0;
  };
  std::vector<Item> items;
};

inline ExampleGold gold_for_language(const LanguageRecord& record, const LabelSpace& space) {
  ExampleGold gold;
  for (const auto& [fid, vidx] : record.assignments) {
    auto [begin, end] = space.feature_slice.at(fid);
    gold.items.push_back({begin, end, begin + vidx});
  }
  return gold;
}

template <class Real>
struct LossResult {
  double value = 0;
  Tensor<Real> d_logits;
};

enum class FlatLossForm { PositiveOnly, TwoSided };

namespace detail {

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

inline double sigmoid_d(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : 1.0 - 1.0 / (1.0 + std::exp(x));
}

}  // namespace detail

// Sigmoid cross-entropy over the flat class vector, averaged over the batch.
// PositiveOnly keeps exactly the weighted gold-class terms; TwoSided adds
// unit-weight negative terms for the other observed values of each attested
// feature. Classes of unattested features never contribute, and unobserved
// classes are excluded entirely.
template <class Real>
LossResult<Real> flat_loss(const Tensor<Real>& logits, const std::vector<ExampleGold>& gold,
                           const ClassWeights& weights, const std::vector<bool>& observed,
                           FlatLossForm form = FlatLossForm::PositiveOnly) {
  const std::size_t B = logits.shape[0];
  if (gold.size() != B) throw ConfigError("gold batch size mismatch");
  LossResult<Real> res;
  res.d_logits = Tensor<Real>(logits.shape);
  const double inv_n = 1.0 / static_cast<double>(B);
  double total = 0;
  for (std::size_t n = 0; n < B; ++n) {
    const Real* lr = logits.row(n);
    Real* gr = res.d_logits.row(n);
    for (const auto& item : gold[n].items) {
      if (observed[item.gold]) {
        const double w = weights.w[item.gold];
        const double x = static_cast<double>(lr[item.gold]);
        total += w * detail::softplus(-x);
        gr[item.gold] += static_cast<Real>(-w * (1.0 - detail::sigmoid_d(x)) * inv_n);
      }
      if (form == FlatLossForm::TwoSided) {
        for (std::size_t c = item.begin; c < item.end; ++c) {
          if (c == item.gold || !observed[c]) continue;
          const double x = static_cast<double>(lr[c]);
          total += detail::softplus(x);
          gr[c] += static_cast<Real>(detail::sigmoid_d(x) * inv_n);
        }
      }
    }
  }
  res.value = total * inv_n;
  return res;
}

// Per-feature softmax cross-entropy, summed over attested features and
// averaged over the batch. Unobserved classes are masked before the softmax;
// their probability underflows to zero, so their gradients are exactly zero.
// Optional per-task scales multiply each feature's term.
template <class Real>
LossResult<Real> multitask_loss(const Tensor<Real>& logits, const std::vector<ExampleGold>& gold,
                                const ClassWeights& weights, const std::vector<bool>& observed,
                                const std::map<std::string, double>* task_scale = nullptr,
                                const LabelSpace* space = nullptr) {
  const std::size_t B = logits.shape[0];
  if (gold.size() != B) throw ConfigError("gold batch size mismatch");
  if (task_scale && !space) throw ConfigError("task scaling needs the label space");
  LossResult<Real> res;
  res.d_logits = Tensor<Real>(logits.shape);
  const double inv_n = 1.0 / static_cast<double>(B);
  double total = 0;
  std::vector<double> prob;
  for (std::size_t n = 0; n < B; ++n) {
    const Real* lr = logits.row(n);
    Real* gr = res.d_logits.row(n);
    for (const auto& item : gold[n].items) {
      if (!observed[item.gold]) throw ConfigError("gold class is unobserved");
      double scale = 1.0;
      if (task_scale) scale = task_scale->at(space->classes[item.begin].first);
      const std::size_t M = item.end - item.begin;
      prob.assign(M, 0.0);
      double maxv = kMaskLogit;
      for (std::size_t c = item.begin; c < item.end; ++c) {
        const double x = observed[c] ? static_cast<double>(lr[c]) : kMaskLogit;
        prob[c - item.begin] = x;
        maxv = std::max(maxv, x);
      }
      double z = 0;
      for (std::size_t j = 0; j < M; ++j) {
        prob[j] = std::exp(prob[j] - maxv);
        z += prob[j];
      }
      for (std::size_t j = 0; j < M; ++j) prob[j] /= z;
      const double p_gold = prob[item.gold - item.begin];
      const double w = weights.w[item.gold] * scale;
      total += -w * std::log(p_gold);
      for (std::size_t c = item.begin; c < item.end; ++c) {
        const double indicator = c == item.gold ? 1.0 : 0.0;
        gr[c] += static_cast<Real>(w * (prob[c - item.begin] - indicator) * inv_n);
      }
    }
  }
  res.value = total * inv_n;
  return res;
}

// Per-feature loss scales: total example count over (feature count * N_L).
inline std::map<std::string, double> build_task_scales(const FeatureCatalog& catalog,
                                                       const ClassWeights& cw,
                                                       std::uint64_t n_examples) {
  std::map<std::string, double> scales;
  const double denom_features = static_cast<double>(catalog.n_features());
  for (const auto& f : catalog.features) {
    const std::uint64_t n_l = cw.feature_total.at(f.id);
    scales[f.id] = n_l == 0 ? 0.0
                            : static_cast<double>(n_examples) /
                                  (denom_features * static_cast<double>(n_l));
  }
  return scales;
}

// L2 penalty on the recurrent weight matrices (biases excluded).
template <class Real>
double recurrent_l2_penalty(const ModelParams<Real>& params, double lambda) {
  long double sq = 0;
  for (const auto& layer : params.lstm)
    for (const Tensor<Real>* t : {&layer.fwd.W, &layer.fwd.U, &layer.bwd.W, &layer.bwd.U})
      for (Real v : t->data) sq += static_cast<long double>(v) * v;
  return lambda * static_cast<double>(sq);
}

template <class Real>
void add_recurrent_l2_grad(const ModelParams<Real>& params, double lambda,
                           ModelParams<Real>& grads) {
  for (std::size_t l = 0; l < params.lstm.size(); ++l) {
    auto add = [&](const Tensor<Real>& p, Tensor<Real>& g) {
      for (std::size_t i = 0; i < p.data.size(); ++i)
        g.data[i] += static_cast<Real>(2.0 * lambda * static_cast<double>(p.data[i]));
    };
    add(params.lstm[l].fwd.W, grads.lstm[l].fwd.W);
    add(params.lstm[l].fwd.U, grads.lstm[l].fwd.U);
    add(params.lstm[l].bwd.W, grads.lstm[l].bwd.W);
    add(params.lstm[l].bwd.U, grads.lstm[l].bwd.U);
  }
}

}  // namespace walsnet
