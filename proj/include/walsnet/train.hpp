// Training loop: epoch shuffling with length-bucketed batch assembly,
// forward/loss/backward, global clipping, AdaDelta with decayed learning
// rate, periodic dev evaluation, and checkpointing. The whole run is a
// deterministic function of (seed, config, data): batches derive from the
// step index alone and dropout masks from (seed, step, site, slot), so a
// resumed run retraces the uninterrupted one exactly.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "walsnet/checkpoint.hpp"
#include "walsnet/common.hpp"
#include "walsnet/corpus.hpp"
#include "walsnet/evaluator.hpp"
#include "walsnet/featurizer.hpp"
#include "walsnet/loss.hpp"
#include "walsnet/model.hpp"
#include "walsnet/optim.hpp"
#include "walsnet/wals.hpp"

namespace walsnet {

struct TrainConfig {
  double lr0 = 5e-5;
  double decay_factor = 0.9;
  double decay_steps = 3e5;
  double clip_norm = 10.0;
  std::size_t batch_size = 8;
  double lambda_reg = 0.05;
  std::size_t max_steps = 0;
  std::size_t eval_interval = 100;
  std::size_t checkpoint_interval = 0;  // 0: only best and final
  std::uint64_t seed = 0;
  FlatLossForm flat_form = FlatLossForm::TwoSided;
  CountMode count_mode = CountMode::PerExample;
  bool per_task_scale = false;
  double decode_tau = 0.5;
  std::size_t threads = 1;

  void validate() const {
    if (lr0 <= 0 || decay_factor <= 0 || decay_steps <= 0 || clip_norm <= 0)
      throw ConfigError("optimizer settings must be positive");
    if (batch_size == 0 || max_steps == 0 || eval_interval == 0 || threads == 0)
      throw ConfigError("loop settings must be positive");
    if (lambda_reg < 0) throw ConfigError("regularization scale must be non-negative");
  }
};

struct FeaturizedSet {
  std::vector<TokenSeq> seqs;
  std::vector<ExampleGold> golds;
  std::vector<std::string> languages;
  std::vector<std::size_t> char_len;
  std::size_t dropped_short = 0;  // examples below the conv stack's minimum
};

// Featurizes and attaches gold labels. Examples whose token sequence is
// shorter than the model's minimum are dropped and counted, not fatal:
// the model itself refuses them.
inline FeaturizedSet featurize_examples(const std::vector<Example>& examples,
                                        const std::map<std::string, const LanguageRecord*>& records,
                                        const LabelSpace& space, const ModelConfig& cfg,
                                        std::size_t threads = 1) {
  FeaturizedSet set;
  const std::size_t min_tokens = min_input_tokens(cfg);
  std::vector<TokenSeq> seqs(examples.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      seqs[i] = featurize(examples[i].text, cfg.embedding, cfg.ngram_order, cfg.char_order);
  };
  if (threads <= 1 || examples.size() < 2 * threads) {
    work(0, examples.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (examples.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(examples.size(), begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (seqs[i].size() < min_tokens) {
      ++set.dropped_short;
      continue;
    }
    auto it = records.find(examples[i].language);
    if (it == records.end())
      throw ConfigError("example language has no record: " + examples[i].language);
    std::size_t chars = 0;
    utf8_char_count(examples[i].text, &chars);
    set.seqs.push_back(std::move(seqs[i]));
    set.golds.push_back(gold_for_language(*it->second, space));
    set.languages.push_back(examples[i].language);
    set.char_len.push_back(chars);
  }
  return set;
}

inline std::map<std::string, const LanguageRecord*> index_records(
    const std::vector<LanguageRecord>& records) {
  std::map<std::string, const LanguageRecord*> by_iso;
  for (const auto& r : records)
    if (!r.iso639_3.empty()) by_iso.emplace(r.iso639_3, &r);
  return by_iso;
}

namespace detail {

inline void fisher_yates(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

// Batch list for one epoch: seeded shuffle, then a stable regrouping into
// 50-char length buckets, sliced into consecutive batches.
inline std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& char_len,
                                                           std::size_t batch_size,
                                                           std::uint64_t seed,
                                                           std::uint64_t epoch) {
  std::vector<std::size_t> order(char_len.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = make_rng(seed, "epoch", epoch);
  fisher_yates(order, rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return char_len[a] / 50 < char_len[b] / 50;
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  return batches;
}

}  // namespace detail

// Overall decode-and-score accuracy of the current parameters on a split.
template <class Real>
double evaluate_accuracy(ModelParams<Real>& params, const ModelConfig& cfg,
                         const FeaturizedSet& data,
                         const std::map<std::string, const LanguageRecord*>& records,
                         const LabelSpace& space, double tau, std::size_t batch_size) {
  if (data.seqs.empty()) return 0.0;
  Counts total;
  for (std::size_t i = 0; i < data.seqs.size(); i += batch_size) {
    const std::size_t end = std::min(data.seqs.size(), i + batch_size);
    std::vector<TokenSeq> batch(data.seqs.begin() + i, data.seqs.begin() + end);
    Tensor<Real> logits = model_forward(params, cfg, batch, RunMode::Infer, 0);
    for (std::size_t e = 0; e < batch.size(); ++e) {
      Prediction pred = decode(logits.row(e), space, cfg.output, tau);
      std::vector<ScoredItem> items;
      score_example(pred, *records.at(data.languages[i + e]), items);
      for (const auto& item : items) total.add(item.counts);
    }
  }
  return total.n() ? static_cast<double>(total.tp) / static_cast<double>(total.n()) : 0.0;
}

template <class Real>
struct TrainResult {
  std::uint64_t steps_done = 0;
  double best_dev_accuracy = -1;
  std::uint64_t best_step = 0;
  double final_loss = 0;
  std::string loss_log;
  std::size_t dropped_short_train = 0;
  std::size_t dropped_short_dev = 0;
};

// Runs (or resumes) training and writes checkpoints plus the loss log under
// out_dir. When `resume` is given, its params/optimizer/step carry on and
// its config must match `mcfg`.
template <class Real>
TrainResult<Real> train(const FeatureCatalog& catalog, const LabelSpace& space,
                        const std::vector<Example>& train_examples,
                        const std::vector<Example>& dev_examples,
                        const std::vector<LanguageRecord>& records, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, const std::string& out_dir,
                        const Checkpoint<Real>* resume = nullptr) {
  mcfg.validate();
  tcfg.validate();
  if (mcfg.n_classes != space.total_classes)
    throw ConfigError("model output dim does not match the label space");
  std::filesystem::create_directories(out_dir);

  auto by_iso = index_records(records);
  FeaturizedSet train_set = featurize_examples(train_examples, by_iso, space, mcfg, tcfg.threads);
  FeaturizedSet dev_set = featurize_examples(dev_examples, by_iso, space, mcfg, tcfg.threads);
  if (train_set.seqs.empty()) throw ConfigError("no trainable examples after filtering");

  ClassCounts counts = count_label_occurrences(train_examples, records, tcfg.count_mode);
  ClassWeights weights = build_weights(catalog, space, counts);
  std::map<std::string, double> task_scales;
  if (tcfg.per_task_scale)
    task_scales = build_task_scales(catalog, weights, train_examples.size());

  const std::string catalog_text = write_catalog(catalog);
  const std::string counts_text = write_class_counts(counts);

  ModelParams<Real> params;
  OptimizerState<Real> opt;
  std::uint64_t step = 0;
  if (resume) {
    require_same_model(resume->config, mcfg);
    if (resume->catalog_text != catalog_text)
      throw ConfigError("checkpoint catalog does not match the prepared dataset");
    params = resume->params;
    opt = resume->opt;
    step = resume->step;
  } else {
    params = init_params<Real>(mcfg, tcfg.seed);
    opt = init_optimizer(params);
  }

  TrainResult<Real> result;
  result.dropped_short_train = train_set.dropped_short;
  result.dropped_short_dev = dev_set.dropped_short;
  std::ostringstream log;
  log.precision(17);
  log << "step\tlr\ttrain_loss\tdev_accuracy\n";

  auto save = [&](const std::string& name) {
    Checkpoint<Real> ck;
    ck.step = step;
    ck.config = mcfg;
    ck.catalog_text = catalog_text;
    ck.class_counts_text = counts_text;
    ck.params = params;
    ck.opt = opt;
    save_checkpoint_file(ck, out_dir + "/" + name);
  };

  const std::size_t per_epoch =
      (train_set.seqs.size() + tcfg.batch_size - 1) / tcfg.batch_size;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::vector<std::size_t>> batches;

  while (step < tcfg.max_steps) {
    const std::uint64_t epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      batches = detail::epoch_batches(train_set.char_len, tcfg.batch_size, tcfg.seed, epoch);
      cached_epoch = epoch;
    }
    const auto& batch_ids = batches[step % per_epoch];
    std::vector<TokenSeq> batch;
    std::vector<ExampleGold> gold;
    for (std::size_t id : batch_ids) {
      batch.push_back(train_set.seqs[id]);
      gold.push_back(train_set.golds[id]);
    }

    BatchCache<Real> cache;
    const std::uint64_t step_seed = derive_seed(tcfg.seed, "step", step);
    Tensor<Real> logits = model_forward(params, mcfg, batch, RunMode::Train, step_seed, &cache);
    LossResult<Real> loss =
        mcfg.output == OutputMode::Flat
            ? flat_loss(logits, gold, weights, space.observed, tcfg.flat_form)
            : multitask_loss(logits, gold, weights, space.observed,
                             tcfg.per_task_scale ? &task_scales : nullptr,
                             tcfg.per_task_scale ? &space : nullptr);
    const double total_loss = loss.value + recurrent_l2_penalty(params, tcfg.lambda_reg);
    if (!std::isfinite(total_loss)) {
      std::ostringstream msg;
      msg << "diverged: non-finite loss at step " << step << " (batch examples";
      for (std::size_t id : batch_ids) msg << ' ' << id;
      msg << ")";
      throw std::runtime_error(msg.str());
    }

    ModelParams<Real> grads = zero_grads(params);
    model_backward(params, mcfg, batch, cache, loss.d_logits, grads);
    add_recurrent_l2_grad(params, tcfg.lambda_reg, grads);
    clip_global(trainable_arrays(grads), tcfg.clip_norm);
    const double lr = lr_schedule(static_cast<double>(step), tcfg.lr0, tcfg.decay_factor,
                                  tcfg.decay_steps);
    adadelta_step(params, grads, opt, lr);
    ++step;
    result.final_loss = total_loss;

    if (step % tcfg.eval_interval == 0 || step == tcfg.max_steps) {
      const double acc = evaluate_accuracy(params, mcfg, dev_set, by_iso, space, tcfg.decode_tau,
                                           tcfg.batch_size);
      log << step << '\t' << lr << '\t' << total_loss << '\t' << acc << '\n';
      if (acc > result.best_dev_accuracy) {
        result.best_dev_accuracy = acc;
        result.best_step = step;
        save("checkpoint_best.ckpt");
      }
    }
    if (tcfg.checkpoint_interval && step % tcfg.checkpoint_interval == 0)
      save("checkpoint_" + std::to_string(step) + ".ckpt");
  }

  save("checkpoint_final.ckpt");
  result.steps_done = step;
  result.loss_log = log.str();
  std::ofstream log_file(out_dir + "/loss_log.tsv", std::ios::trunc);
  log_file << result.loss_log;
  return result;
}

}  // namespace walsnet
