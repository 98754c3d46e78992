// Command line front end. Subcommands: prepare, stats, train, eval, predict.
// Every command writes a run manifest into --out; all errors go to standard
// error prefixed "walsnet: error:"; exit code 0 iff the command succeeded.
#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "walsnet/walsnet.hpp"

namespace {

using namespace walsnet;

std::string num_str(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct CommonOpts {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out;
};

void add_common(CLI::App* sub, CommonOpts& c) {
  sub->add_option("--seed", c.seed, "Base seed; determines all stochastic behavior")
      ->capture_default_str();
  sub->add_option("--threads", c.threads, "Worker thread cap")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->set_config("--config", "", "Flat key = value settings file; flags override it");
}

RunManifest base_manifest(const std::string& command, const CommonOpts& c) {
  RunManifest m;
  m.command = command;
  m.seed = c.seed;
  m.threads = c.threads;
  return m;
}

// Conv stack syntax: "FILTERSxWIDTH,..." such as "20x5,40x5,60x3"; "none"
// selects an empty stack (tokens feed the LSTM directly).
std::vector<ConvSpec> parse_conv_spec(const std::string& s) {
  std::vector<ConvSpec> out;
  if (s.empty() || s == "none") return out;
  for (const auto& part : split(s, ',')) {
    const std::string p = trim(part);
    const std::size_t x = p.find('x');
    if (x == std::string::npos || x == 0 || x + 1 == p.size())
      throw ConfigError("bad conv spec element '" + p + "' (want FILTERSxWIDTH)");
    ConvSpec spec;
    try {
      spec.filters = std::stoul(p.substr(0, x));
      spec.width = std::stoul(p.substr(x + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad conv spec element '" + p + "' (want FILTERSxWIDTH)");
    }
    if (spec.filters == 0 || spec.width == 0)
      throw ConfigError("conv filters and width must be positive: '" + p + "'");
    out.push_back(spec);
  }
  return out;
}

std::string render_conv_spec(const std::vector<ConvSpec>& conv) {
  if (conv.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(conv[i].filters) + "x" + std::to_string(conv[i].width);
  }
  return out;
}

std::optional<Grouping> grouping_from_string(std::string_view s) {
  for (Grouping g : {Grouping::ChapterType, Grouping::MacroArea, Grouping::Family,
                     Grouping::Feature, Grouping::Overall})
    if (s == to_string(g)) return g;
  return std::nullopt;
}

CountMode count_mode_from_string(const std::string& s) {
  if (s == "per_example") return CountMode::PerExample;
  if (s == "per_language") return CountMode::PerLanguage;
  throw ConfigError("unknown count mode: " + s);
}

FlatLossForm flat_form_from_string(const std::string& s) {
  if (s == "positive_only") return FlatLossForm::PositiveOnly;
  if (s == "two_sided") return FlatLossForm::TwoSided;
  throw ConfigError("unknown flat loss form: " + s);
}

// ---------------------------------------------------------------------------
// Prepared dataset directory: catalog.tsv, languages.csv, {train,dev,test}.tsv
// (rows `iso3 <TAB> text`), class_counts.tsv, join_report.txt.

struct PreparedData {
  FeatureCatalog catalog;
  std::vector<LanguageRecord> records;
  std::array<std::vector<Example>, 3> splits;
};

std::vector<Example> load_split_file(const std::string& path, Split split) {
  std::vector<Example> out;
  for (auto& raw : parse_corpus_tsv(read_file(path), path))
    out.push_back(Example{std::move(raw.text), std::move(raw.code), split});
  return out;
}

PreparedData load_prepared(const std::string& dir) {
  PreparedData d;
  d.catalog = parse_catalog(read_file(dir + "/catalog.tsv"), dir + "/catalog.tsv");
  d.records = parse_languages(read_file(dir + "/languages.csv"), d.catalog, dir + "/languages.csv");
  for (Split s : {Split::Train, Split::Dev, Split::Test}) {
    const std::string path = dir + "/" + to_string(s) + ".tsv";
    if (std::filesystem::exists(path))
      d.splits[static_cast<std::size_t>(s)] = load_split_file(path, s);
  }
  return d;
}

void digest_prepared(RunManifest& m, const std::string& dir) {
  for (const char* name : {"catalog.tsv", "languages.csv", "train.tsv", "dev.tsv", "test.tsv",
                           "class_counts.tsv"}) {
    const std::string path = dir + "/" + name;
    if (std::filesystem::exists(path)) m.input_digests[path] = digest_file(path);
  }
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareOpts {
  CommonOpts common;
  std::string catalog_path;
  std::string languages_path;
  std::string splits_path;
  std::vector<std::string> corpus_paths;
  std::size_t min_chars = 5;
  std::size_t max_chars = 600;
  std::string count_mode = "per_example";
};

int cmd_prepare(const PrepareOpts& o) {
  auto [catalog, all_records] =
      parse_wals(read_file(o.catalog_path), read_file(o.languages_path), o.catalog_path,
                 o.languages_path);
  const std::vector<LanguageRecord> records = prune_languages(all_records);
  const auto split_map = parse_split_manifest(read_file(o.splits_path), o.splits_path);

  JoinReport report;
  std::array<std::vector<Example>, 3> splits;
  std::uint64_t length_filtered = 0;
  for (const auto& path : o.corpus_paths) {
    const Split s = split_for_file(split_map, std::filesystem::path(path).filename().string());
    auto joined = join_corpus(parse_corpus_tsv(read_file(path), path), records, s, &report);
    for (auto& ex : joined) {
      if (!filter_by_length(ex.text, o.min_chars, o.max_chars)) {
        ++length_filtered;
        continue;
      }
      splits[static_cast<std::size_t>(s)].push_back(std::move(ex));
    }
  }

  const ClassCounts counts = count_label_occurrences(
      splits[static_cast<std::size_t>(Split::Train)], records, count_mode_from_string(o.count_mode));

  std::filesystem::create_directories(o.common.out);
  write_file(o.common.out + "/catalog.tsv", write_catalog(catalog));
  write_file(o.common.out + "/languages.csv", write_languages(records, catalog));
  for (Split s : {Split::Train, Split::Dev, Split::Test}) {
    std::string shard;
    for (const auto& ex : splits[static_cast<std::size_t>(s)])
      shard += ex.language + "\t" + ex.text + "\n";
    write_file(o.common.out + "/" + to_string(s) + ".tsv", shard);
  }
  write_file(o.common.out + "/class_counts.tsv", write_class_counts(counts));
  write_file(o.common.out + "/join_report.txt", render_join_report(report));

  RunManifest m = base_manifest("prepare", o.common);
  m.input_digests[o.catalog_path] = digest_file(o.catalog_path);
  m.input_digests[o.languages_path] = digest_file(o.languages_path);
  m.input_digests[o.splits_path] = digest_file(o.splits_path);
  for (const auto& path : o.corpus_paths) m.input_digests[path] = digest_file(path);
  m.config["min_chars"] = std::to_string(o.min_chars);
  m.config["max_chars"] = std::to_string(o.max_chars);
  m.config["count_mode"] = o.count_mode;
  write_manifest(m, o.common.out);

  std::cout << "languages: " << records.size() << " usable records, "
            << report.matched_languages.size() << " seen in the corpus, "
            << report.dropped_languages() << " corpus codes unmatched\n";
  std::cout << "examples: train " << splits[0].size() << ", dev " << splits[1].size() << ", test "
            << splits[2].size() << " (" << report.dropped_examples << " unmatched, "
            << length_filtered << " outside [" << o.min_chars << ", " << o.max_chars
            << "] characters)\n";
  std::cout << "wrote " << o.common.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// stats

struct StatsOpts {
  CommonOpts common;
  std::string data;
};

int cmd_stats(const StatsOpts& o) {
  const PreparedData d = load_prepared(o.data);
  std::vector<Example> all;
  for (const auto& split : d.splits) all.insert(all.end(), split.begin(), split.end());
  const CorpusStats stats = corpus_stats(all);

  std::filesystem::create_directories(o.common.out);
  write_file(o.common.out + "/stats.tsv", render_stats_tsv(stats));
  const std::string text = render_stats_text(stats);
  write_file(o.common.out + "/stats.txt", text);

  RunManifest m = base_manifest("stats", o.common);
  digest_prepared(m, o.data);
  write_manifest(m, o.common.out);

  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  CommonOpts common;
  std::string data;
  std::string embedding = "byte_ngram";
  std::size_t ngram_order = 7;
  std::size_t char_order = 5;
  std::string conv = "20x5,40x5,60x3";
  std::size_t lstm_layers = 2;
  std::size_t lstm_hidden = 128;
  bool no_residual = false;
  double dropout = 0.5;
  std::string output = "flat";
  std::string flat_form = "two_sided";
  std::string count_mode = "per_example";
  bool per_task_scale = false;
  std::string dtype = "f64";
  std::string resume;
  TrainConfig tcfg;
};

ModelConfig model_config_from(const TrainOpts& o) {
  ModelConfig m;
  m.embedding = *embedding_mode_from_string(o.embedding);
  m.ngram_order = o.ngram_order;
  m.char_order = o.char_order;
  m.conv = parse_conv_spec(o.conv);
  m.lstm_layers = o.lstm_layers;
  m.lstm_hidden = o.lstm_hidden;
  m.residual = !o.no_residual;
  m.dropout = o.dropout;
  m.output = *output_mode_from_string(o.output);
  return m;
}

template <class Real>
int run_train(const TrainOpts& o, ModelConfig mcfg, const TrainConfig& tcfg) {
  std::optional<Checkpoint<Real>> resume;
  if (!o.resume.empty()) resume = load_checkpoint_file<Real>(o.resume);

  const PreparedData d = load_prepared(o.data);
  const auto& train_split = d.splits[static_cast<std::size_t>(Split::Train)];
  const auto& dev_split = d.splits[static_cast<std::size_t>(Split::Dev)];
  const ClassCounts counts = count_label_occurrences(train_split, d.records, tcfg.count_mode);
  const LabelSpace space = build_label_space(d.catalog, counts);
  mcfg.n_classes = space.total_classes;
  mcfg.validate();

  const TrainResult<Real> result =
      train<Real>(d.catalog, space, train_split, dev_split, d.records, mcfg, tcfg, o.common.out,
                  resume ? &*resume : nullptr);

  RunManifest m = base_manifest("train", o.common);
  digest_prepared(m, o.data);
  if (!o.resume.empty()) m.input_digests[o.resume] = digest_file(o.resume);
  m.config["embedding"] = to_string(mcfg.embedding);
  m.config["ngram_order"] = std::to_string(mcfg.ngram_order);
  m.config["char_order"] = std::to_string(mcfg.char_order);
  m.config["conv"] = render_conv_spec(mcfg.conv);
  m.config["lstm_layers"] = std::to_string(mcfg.lstm_layers);
  m.config["lstm_hidden"] = std::to_string(mcfg.lstm_hidden);
  m.config["residual"] = mcfg.residual ? "true" : "false";
  m.config["dropout"] = num_str(mcfg.dropout);
  m.config["output"] = to_string(mcfg.output);
  m.config["n_classes"] = std::to_string(mcfg.n_classes);
  m.config["dtype"] = o.dtype;
  m.config["lr0"] = num_str(tcfg.lr0);
  m.config["decay_factor"] = num_str(tcfg.decay_factor);
  m.config["decay_steps"] = num_str(tcfg.decay_steps);
  m.config["clip_norm"] = num_str(tcfg.clip_norm);
  m.config["batch_size"] = std::to_string(tcfg.batch_size);
  m.config["lambda"] = num_str(tcfg.lambda_reg);
  m.config["max_steps"] = std::to_string(tcfg.max_steps);
  m.config["eval_interval"] = std::to_string(tcfg.eval_interval);
  m.config["checkpoint_interval"] = std::to_string(tcfg.checkpoint_interval);
  m.config["flat_form"] = o.flat_form;
  m.config["count_mode"] = o.count_mode;
  m.config["per_task_scale"] = o.per_task_scale ? "true" : "false";
  m.config["tau"] = num_str(tcfg.decode_tau);
  if (!o.resume.empty()) m.config["resume"] = o.resume;
  write_manifest(m, o.common.out);

  std::cout << "trained to step " << result.steps_done << "; best dev accuracy "
            << result.best_dev_accuracy << " at step " << result.best_step << "\n";
  if (result.dropped_short_train || result.dropped_short_dev)
    std::cout << "dropped below the model minimum length: " << result.dropped_short_train
              << " train, " << result.dropped_short_dev << " dev\n";
  std::cout << "checkpoints and loss_log.tsv in " << o.common.out << "\n";
  return 0;
}

int cmd_train(TrainOpts& o, bool dtype_given) {
  ModelConfig mcfg = model_config_from(o);
  TrainConfig tcfg = o.tcfg;
  tcfg.seed = o.common.seed;
  tcfg.threads = o.common.threads;
  tcfg.flat_form = flat_form_from_string(o.flat_form);
  tcfg.count_mode = count_mode_from_string(o.count_mode);
  tcfg.per_task_scale = o.per_task_scale;
  tcfg.validate();

  if (!o.resume.empty()) {
    const std::string stored = checkpoint_dtype_file(o.resume);
    if (dtype_given && stored != o.dtype)
      throw ConfigError("checkpoint dtype " + stored + " does not match --dtype " + o.dtype);
    o.dtype = stored;
  }
  return o.dtype == "f32" ? run_train<float>(o, mcfg, tcfg) : run_train<double>(o, mcfg, tcfg);
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  CommonOpts common;
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::vector<std::string> groupings;
  double tau = 0.5;
  std::size_t batch_size = 8;
};

template <class Real>
int run_eval(const EvalOpts& o) {
  Checkpoint<Real> ck = load_checkpoint_file<Real>(o.checkpoint);
  const PreparedData d = load_prepared(o.data);
  if (write_catalog(d.catalog) != ck.catalog_text)
    throw ConfigError("checkpoint catalog does not match the prepared dataset");
  const ClassCounts counts = parse_class_counts(ck.class_counts_text, o.checkpoint);
  const LabelSpace space = build_label_space(d.catalog, counts);
  if (ck.config.n_classes != space.total_classes)
    throw ConfigError("checkpoint output dim does not match the label space");

  const Split sp = *split_from_string(o.split);
  const auto& examples = d.splits[static_cast<std::size_t>(sp)];
  const auto by_iso = index_records(d.records);
  const FeaturizedSet set =
      featurize_examples(examples, by_iso, space, ck.config, o.common.threads);

  std::vector<ScoredItem> items;
  for (std::size_t i = 0; i < set.seqs.size(); i += o.batch_size) {
    const std::size_t end = std::min(set.seqs.size(), i + o.batch_size);
    std::vector<TokenSeq> batch(set.seqs.begin() + i, set.seqs.begin() + end);
    Tensor<Real> logits = model_forward(ck.params, ck.config, batch, RunMode::Infer, 0);
    for (std::size_t e = 0; e < batch.size(); ++e) {
      const Prediction pred = decode(logits.row(e), space, ck.config.output, o.tau);
      score_example(pred, *by_iso.at(set.languages[i + e]), items);
    }
  }

  std::filesystem::create_directories(o.common.out);
  std::string overall_text;
  for (const auto& name : o.groupings) {
    const MetricsReport report = aggregate(items, by_iso, d.catalog, *grouping_from_string(name));
    write_file(o.common.out + "/report_" + name + ".tsv", render_report_delimited(report));
    const std::string text = render_report_text(report);
    write_file(o.common.out + "/report_" + name + ".txt", text);
    if (overall_text.empty() || report.grouping == Grouping::Overall) overall_text = text;
  }

  RunManifest m = base_manifest("eval", o.common);
  m.input_digests[o.checkpoint] = digest_file(o.checkpoint);
  digest_prepared(m, o.data);
  m.config["split"] = o.split;
  m.config["tau"] = num_str(o.tau);
  m.config["batch_size"] = std::to_string(o.batch_size);
  std::string glist;
  for (const auto& name : o.groupings) glist += (glist.empty() ? "" : ",") + name;
  m.config["groupings"] = glist;
  write_manifest(m, o.common.out);

  std::cout << "evaluated " << set.seqs.size() << " examples on split '" << o.split << "'";
  if (set.dropped_short)
    std::cout << " (" << set.dropped_short << " below the model minimum length)";
  std::cout << "\n" << overall_text;
  std::cout << "reports in " << o.common.out << "\n";
  return 0;
}

int cmd_eval(EvalOpts& o) {
  if (o.groupings.empty())
    o.groupings = {"overall", "chapter_type", "macro_area", "family", "feature"};
  const std::string dtype = checkpoint_dtype_file(o.checkpoint);
  return dtype == "f32" ? run_eval<float>(o) : run_eval<double>(o);
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
  CommonOpts common;
  std::string checkpoint;
  double tau = 0.5;
  bool allow_short = false;
};

template <class Real>
int run_predict(const PredictOpts& o) {
  Checkpoint<Real> ck = load_checkpoint_file<Real>(o.checkpoint);
  const FeatureCatalog catalog = parse_catalog(ck.catalog_text, o.checkpoint);
  const ClassCounts counts = parse_class_counts(ck.class_counts_text, o.checkpoint);
  const LabelSpace space = build_label_space(catalog, counts);

  std::string text((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  std::size_t chars = 0;
  if (!utf8_char_count(text, &chars)) throw ConfigError("input text is not valid UTF-8");
  if (chars < 5) {
    if (!o.allow_short)
      throw ConfigError("input has fewer than 5 characters (pass --allow-short to try anyway)");
    std::cerr << "walsnet: warning: input has fewer than 5 characters; prediction is unreliable\n";
  }

  std::vector<TokenSeq> batch{
      featurize(text, ck.config.embedding, ck.config.ngram_order, ck.config.char_order)};
  Tensor<Real> logits = model_forward(ck.params, ck.config, batch, RunMode::Infer, 0);
  const Prediction pred = decode(logits.row(0), space, ck.config.output, o.tau);

  std::ostringstream out;
  out << "feature_id\tfeature\tvalue\tconfidence\n";
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& [fid, pv] : pred.by_feature) {
    const WalsFeature* f = catalog.find(fid);
    out << fid << '\t' << f->name << '\t' << f->values[pv.value] << '\t' << pv.confidence << '\n';
  }

  std::filesystem::create_directories(o.common.out);
  write_file(o.common.out + "/predictions.tsv", out.str());
  RunManifest m = base_manifest("predict", o.common);
  m.input_digests[o.checkpoint] = digest_file(o.checkpoint);
  m.config["tau"] = num_str(o.tau);
  m.config["allow_short"] = o.allow_short ? "true" : "false";
  m.config["input_digest"] = fnv_hex(fnv1a64(text));
  write_manifest(m, o.common.out);

  std::cout << out.str();
  return 0;
}

int cmd_predict(const PredictOpts& o) {
  const std::string dtype = checkpoint_dtype_file(o.checkpoint);
  return dtype == "f32" ? run_predict<float>(o) : run_predict<double>(o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WALS typological feature prediction from raw multilingual text"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kArtifactVersion);
  app.failure_message([](const CLI::App*, const CLI::Error& e) {
    return std::string("walsnet: error: ") + e.what() + "\n";
  });

  PrepareOpts po;
  CLI::App* prepare = app.add_subcommand("prepare", "Join WALS records with a raw corpus");
  add_common(prepare, po.common);
  prepare->add_option("--catalog", po.catalog_path, "Feature catalog TSV")->required();
  prepare->add_option("--languages", po.languages_path, "WALS languages CSV")->required();
  prepare->add_option("--splits", po.splits_path, "Manifest mapping corpus files to splits")
      ->required();
  prepare->add_option("--corpus", po.corpus_paths, "Corpus TSV files (`code<TAB>text` rows)")
      ->required()
      ->expected(-1);
  prepare->add_option("--min-chars", po.min_chars, "Shortest kept text")->capture_default_str();
  prepare->add_option("--max-chars", po.max_chars, "Longest kept text")->capture_default_str();
  prepare->add_option("--count-mode", po.count_mode, "Class counting unit")
      ->capture_default_str()
      ->check(CLI::IsMember({"per_example", "per_language"}));

  StatsOpts so;
  CLI::App* stats = app.add_subcommand("stats", "Summarize a prepared dataset");
  add_common(stats, so.common);
  stats->add_option("--data", so.data, "Prepared dataset directory")->required();

  TrainOpts to;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a prepared dataset");
  add_common(train_cmd, to.common);
  train_cmd->add_option("--data", to.data, "Prepared dataset directory")->required();
  train_cmd->add_option("--embedding", to.embedding, "Input representation")
      ->capture_default_str()
      ->check(CLI::IsMember({"byte_unigram", "byte_ngram", "char_ngram_hash"}));
  train_cmd->add_option("--ngram-order", to.ngram_order, "Byte n-gram order")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--char-order", to.char_order, "Hashed char n-gram order")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--conv", to.conv, "Conv stack as FILTERSxWIDTH,... or 'none'")
      ->capture_default_str();
  train_cmd->add_option("--lstm-layers", to.lstm_layers, "Recurrent depth")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--lstm-hidden", to.lstm_hidden, "Recurrent width per direction")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--no-residual", to.no_residual, "Disable the layer 1 to 2 residual add");
  train_cmd->add_option("--dropout", to.dropout, "Drop probability")->capture_default_str();
  train_cmd->add_option("--output", to.output, "Head form")
      ->capture_default_str()
      ->check(CLI::IsMember({"flat", "multitask"}));
  train_cmd->add_option("--lr0", to.tcfg.lr0, "Initial learning rate")->capture_default_str();
  train_cmd->add_option("--decay-factor", to.tcfg.decay_factor, "Learning rate decay factor")
      ->capture_default_str();
  train_cmd->add_option("--decay-steps", to.tcfg.decay_steps, "Steps per decay period")
      ->capture_default_str();
  train_cmd->add_option("--clip-norm", to.tcfg.clip_norm, "Global gradient norm cap")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", to.tcfg.batch_size, "Examples per step")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--lambda", to.tcfg.lambda_reg, "Recurrent weight L2 scale")
      ->capture_default_str();
  train_cmd->add_option("--max-steps", to.tcfg.max_steps, "Total optimization steps")->required();
  train_cmd->add_option("--eval-interval", to.tcfg.eval_interval, "Steps between dev evaluations")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd
      ->add_option("--checkpoint-interval", to.tcfg.checkpoint_interval,
                   "Steps between periodic checkpoints (0: only best and final)")
      ->capture_default_str();
  train_cmd->add_option("--flat-form", to.flat_form, "Flat loss negative term handling")
      ->capture_default_str()
      ->check(CLI::IsMember({"positive_only", "two_sided"}));
  train_cmd->add_option("--count-mode", to.count_mode, "Class counting unit")
      ->capture_default_str()
      ->check(CLI::IsMember({"per_example", "per_language"}));
  train_cmd->add_flag("--per-task-scale", to.per_task_scale,
                      "Rescale each feature's loss share in multitask mode");
  train_cmd->add_option("--tau", to.tcfg.decode_tau, "Decoding confidence threshold")
      ->capture_default_str();
  train_cmd->add_option("--dtype", to.dtype, "Parameter scalar type")
      ->capture_default_str()
      ->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_option("--resume", to.resume, "Checkpoint to continue from");

  EvalOpts eo;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  add_common(eval_cmd, eo.common);
  eval_cmd->add_option("--checkpoint", eo.checkpoint, "Trained checkpoint file")->required();
  eval_cmd->add_option("--data", eo.data, "Prepared dataset directory")->required();
  eval_cmd->add_option("--split", eo.split, "Split to score")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd
      ->add_option("--grouping", eo.groupings,
                   "Report grouping; repeatable (default: all five views)")
      ->check(CLI::IsMember({"overall", "chapter_type", "macro_area", "family", "feature"}));
  eval_cmd->add_option("--tau", eo.tau, "Decoding confidence threshold")->capture_default_str();
  eval_cmd->add_option("--batch-size", eo.batch_size, "Examples per forward pass")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  PredictOpts ro;
  CLI::App* predict = app.add_subcommand("predict", "Predict features for text on standard input");
  add_common(predict, ro.common);
  predict->add_option("--checkpoint", ro.checkpoint, "Trained checkpoint file")->required();
  predict->add_option("--tau", ro.tau, "Decoding confidence threshold")->capture_default_str();
  predict->add_flag("--allow-short", ro.allow_short,
                    "Attempt prediction on input below 5 characters");

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(prepare)) return cmd_prepare(po);
    if (app.got_subcommand(stats)) return cmd_stats(so);
    if (app.got_subcommand(train_cmd)) return cmd_train(to, train_cmd->count("--dtype") > 0);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(eo);
    if (app.got_subcommand(predict)) return cmd_predict(ro);
    throw ConfigError("no command selected");
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "walsnet: error: " << e.what() << "\n";
    return 1;
  }
}
