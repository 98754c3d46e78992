#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "walsnet/train.hpp"

#include "toyfixture.hpp"

using namespace walsnet;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct ToyRun {
  FeatureCatalog catalog;
  std::vector<LanguageRecord> records;
  LabelSpace space;
  std::vector<Example> train_ex, dev_ex;
  ModelConfig mcfg;
};

ToyRun make_run(std::uint64_t seed) {
  ToyRun run;
  run.catalog = parse_catalog(toy::kCatalogText, "catalog.tsv");
  run.records = parse_languages(toy::kLanguagesCsv, run.catalog, "languages.csv");
  toy::ToyData data = toy::make_toy(seed, 24, 12);
  run.train_ex = data.train;
  run.dev_ex = data.dev;
  ClassCounts counts = count_label_occurrences(run.train_ex, run.records, CountMode::PerExample);
  run.space = build_label_space(run.catalog, counts);
  run.mcfg = toy::tiny_model(run.space.total_classes);
  return run;
}

TrainConfig quick_config(std::uint64_t seed, std::size_t max_steps) {
  TrainConfig tcfg;
  tcfg.seed = seed;
  tcfg.max_steps = max_steps;
  tcfg.eval_interval = 2;
  tcfg.batch_size = 6;
  tcfg.lr0 = 1.0;
  tcfg.lambda_reg = 0.0;
  return tcfg;
}

}  // namespace

TEST_CASE("epoch batches partition the data deterministically") {
  std::vector<std::size_t> char_len(37);
  std::mt19937_64 rng(4);
  for (auto& l : char_len) l = 5 + rng() % 300;

  auto a = detail::epoch_batches(char_len, 8, 11, 0);
  auto b = detail::epoch_batches(char_len, 8, 11, 0);
  CHECK(a == b);

  auto c = detail::epoch_batches(char_len, 8, 11, 1);
  CHECK(a != c);
  auto d = detail::epoch_batches(char_len, 8, 12, 0);
  CHECK(a != d);

  // Every example appears exactly once and batches respect the size cap.
  std::vector<int> seen(char_len.size(), 0);
  std::size_t flat = 0;
  for (const auto& batch : a) {
    CHECK(batch.size() <= 8);
    CHECK(!batch.empty());
    for (std::size_t id : batch) {
      REQUIRE(id < char_len.size());
      ++seen[id];
      ++flat;
    }
  }
  CHECK(flat == char_len.size());
  for (int s : seen) CHECK(s == 1);

  // Length buckets (50 chars wide) are non-decreasing across the epoch.
  std::vector<std::size_t> order;
  for (const auto& batch : a)
    for (std::size_t id : batch) order.push_back(id);
  for (std::size_t i = 1; i < order.size(); ++i)
    CHECK(char_len[order[i - 1]] / 50 <= char_len[order[i]] / 50);
}

TEST_CASE("featurization drops and counts too-short examples") {
  ToyRun run = make_run(3);
  auto by_iso = index_records(run.records);

  std::vector<Example> examples;
  examples.push_back({"ab", "aaa", Split::Train});        // 3 tokens, below the minimum of 4
  examples.push_back({"abcdef", "aaa", Split::Train});    // 7 tokens
  examples.push_back({"ghijklm", "bbb", Split::Train});   // 8 tokens

  FeaturizedSet set = featurize_examples(examples, by_iso, run.space, run.mcfg);
  CHECK(set.dropped_short == 1);
  REQUIRE(set.seqs.size() == 2);
  CHECK(set.languages == std::vector<std::string>{"aaa", "bbb"});
  CHECK(set.char_len == std::vector<std::size_t>{6, 7});
  CHECK(set.seqs[0].size() == 7);
  CHECK(set.golds[0].items.size() == 6);  // every toy language attests six features

  examples.push_back({"unknown tongue", "zzz", Split::Train});
  CHECK_THROWS_AS(featurize_examples(examples, by_iso, run.space, run.mcfg), ConfigError);

  // Threaded featurization returns the same content.
  examples.pop_back();
  FeaturizedSet threaded = featurize_examples(examples, by_iso, run.space, run.mcfg, 4);
  REQUIRE(threaded.seqs.size() == set.seqs.size());
  for (std::size_t i = 0; i < set.seqs.size(); ++i) {
    REQUIRE(threaded.seqs[i].size() == set.seqs[i].size());
    for (std::size_t t = 0; t < set.seqs[i].size(); ++t)
      CHECK(threaded.seqs[i][t].ids == set.seqs[i][t].ids);
  }
  CHECK(threaded.char_len == set.char_len);
}

TEST_CASE("train config validation") {
  TrainConfig ok = quick_config(1, 4);
  CHECK_NOTHROW(ok.validate());
  TrainConfig no_steps = ok;
  no_steps.max_steps = 0;
  CHECK_THROWS_AS(no_steps.validate(), ConfigError);
  TrainConfig bad_lr = ok;
  bad_lr.lr0 = 0;
  CHECK_THROWS_AS(bad_lr.validate(), ConfigError);
  TrainConfig bad_lambda = ok;
  bad_lambda.lambda_reg = -1;
  CHECK_THROWS_AS(bad_lambda.validate(), ConfigError);
  TrainConfig bad_batch = ok;
  bad_batch.batch_size = 0;
  CHECK_THROWS_AS(bad_batch.validate(), ConfigError);
}

TEST_CASE("train rejects a label-space size mismatch and all-short data") {
  ToyRun run = make_run(5);
  ModelConfig wrong = run.mcfg;
  wrong.n_classes += 1;
  CHECK_THROWS_AS(train<double>(run.catalog, run.space, run.train_ex, run.dev_ex, run.records,
                                wrong, quick_config(1, 2), "/tmp/walsnet_train_reject"),
                  ConfigError);

  std::vector<Example> shorties;
  shorties.push_back({"ab", "aaa", Split::Train});
  CHECK_THROWS_AS(train<double>(run.catalog, run.space, shorties, run.dev_ex, run.records,
                                run.mcfg, quick_config(1, 2), "/tmp/walsnet_train_reject"),
                  ConfigError);
}

TEST_CASE("identical seeds reproduce the loss log and best checkpoint bit for bit") {
  ToyRun run = make_run(7);
  const std::string dir_a = "/tmp/walsnet_train_a";
  const std::string dir_b = "/tmp/walsnet_train_b";
  const std::string dir_c = "/tmp/walsnet_train_c";
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  std::filesystem::remove_all(dir_c);

  TrainResult<double> a = train<double>(run.catalog, run.space, run.train_ex, run.dev_ex,
                                        run.records, run.mcfg, quick_config(21, 6), dir_a);
  TrainResult<double> b = train<double>(run.catalog, run.space, run.train_ex, run.dev_ex,
                                        run.records, run.mcfg, quick_config(21, 6), dir_b);
  TrainConfig other = quick_config(22, 6);
  TrainResult<double> c = train<double>(run.catalog, run.space, run.train_ex, run.dev_ex,
                                        run.records, run.mcfg, other, dir_c);

  CHECK(a.loss_log == b.loss_log);
  CHECK(a.loss_log == slurp(dir_a + "/loss_log.tsv"));
  CHECK(a.loss_log.rfind("step\tlr\ttrain_loss\tdev_accuracy\n", 0) == 0);
  CHECK(a.steps_done == 6);
  CHECK(a.best_dev_accuracy == b.best_dev_accuracy);
  CHECK(a.best_step == b.best_step);
  CHECK(slurp(dir_a + "/checkpoint_best.ckpt") == slurp(dir_b + "/checkpoint_best.ckpt"));
  CHECK(slurp(dir_a + "/checkpoint_final.ckpt") == slurp(dir_b + "/checkpoint_final.ckpt"));

  CHECK(a.loss_log != c.loss_log);

  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  std::filesystem::remove_all(dir_c);
}

TEST_CASE("resuming mid-run retraces the uninterrupted trajectory") {
  ToyRun run = make_run(9);
  const std::string dir_full = "/tmp/walsnet_train_full";
  const std::string dir_part = "/tmp/walsnet_train_part";
  std::filesystem::remove_all(dir_full);
  std::filesystem::remove_all(dir_part);

  TrainResult<double> full = train<double>(run.catalog, run.space, run.train_ex, run.dev_ex,
                                           run.records, run.mcfg, quick_config(33, 10), dir_full);

  train<double>(run.catalog, run.space, run.train_ex, run.dev_ex, run.records, run.mcfg,
                quick_config(33, 5), dir_part);
  Checkpoint<double> mid = load_checkpoint_file<double>(dir_part + "/checkpoint_final.ckpt");
  CHECK(mid.step == 5);
  TrainResult<double> rest =
      train<double>(run.catalog, run.space, run.train_ex, run.dev_ex, run.records, run.mcfg,
                    quick_config(33, 10), dir_part, &mid);
  CHECK(rest.steps_done == 10);

  // The final checkpoints agree byte for byte, and the log lines the resumed
  // run emits equal the suffix of the uninterrupted log.
  CHECK(slurp(dir_full + "/checkpoint_final.ckpt") == slurp(dir_part + "/checkpoint_final.ckpt"));
  const std::string header = "step\tlr\ttrain_loss\tdev_accuracy\n";
  REQUIRE(rest.loss_log.rfind(header, 0) == 0);
  const std::string tail = rest.loss_log.substr(header.size());
  REQUIRE(!tail.empty());
  CHECK(full.loss_log.size() >= tail.size());
  CHECK(full.loss_log.substr(full.loss_log.size() - tail.size()) == tail);

  // A mismatching catalog in the resume checkpoint is refused.
  Checkpoint<double> tampered = mid;
  tampered.catalog_text += "9A\tLexicon\tExtra\tX | Y\n";
  CHECK_THROWS_AS(train<double>(run.catalog, run.space, run.train_ex, run.dev_ex, run.records,
                                run.mcfg, quick_config(33, 10), dir_part, &tampered),
                  ConfigError);

  std::filesystem::remove_all(dir_full);
  std::filesystem::remove_all(dir_part);
}

TEST_CASE("dev accuracy does not depend on the evaluation batch size") {
  ToyRun run = make_run(11);
  auto by_iso = index_records(run.records);
  FeaturizedSet dev = featurize_examples(run.dev_ex, by_iso, run.space, run.mcfg);
  ModelParams<double> params = init_params<double>(run.mcfg, 77);

  const double acc3 = evaluate_accuracy(params, run.mcfg, dev, by_iso, run.space, 0.5, 3);
  const double acc64 = evaluate_accuracy(params, run.mcfg, dev, by_iso, run.space, 0.5, 64);
  CHECK(acc3 == acc64);

  FeaturizedSet empty;
  CHECK(evaluate_accuracy(params, run.mcfg, empty, by_iso, run.space, 0.5, 8) == 0.0);
}

TEST_CASE("training reports dropped examples per split") {
  ToyRun run = make_run(13);
  std::vector<Example> train_ex = run.train_ex;
  train_ex.push_back({"ab", "aaa", Split::Train});
  std::vector<Example> dev_ex = run.dev_ex;
  dev_ex.push_back({"x", "bbb", Split::Dev});
  dev_ex.push_back({"yz", "ccc", Split::Dev});

  const std::string dir = "/tmp/walsnet_train_dropped";
  std::filesystem::remove_all(dir);
  TrainResult<double> res = train<double>(run.catalog, run.space, train_ex, dev_ex, run.records,
                                          run.mcfg, quick_config(1, 2), dir);
  CHECK(res.dropped_short_train == 1);
  CHECK(res.dropped_short_dev == 2);
  std::filesystem::remove_all(dir);
}
