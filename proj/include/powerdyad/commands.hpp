#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "powerdyad/baseline.hpp"
#include "powerdyad/checkpoint.hpp"
#include "powerdyad/corpus.hpp"
#include "powerdyad/evaluation.hpp"
#include "powerdyad/features.hpp"
#include "powerdyad/masking.hpp"
#include "powerdyad/training.hpp"
#include "powerdyad/tuning.hpp"

// Library side of the `powerdyad` subcommands.  Each function reads and
// writes only the paths it is given.
namespace powerdyad::commands {

namespace fs = std::filesystem;

inline constexpr const char* kMessagesFile = "messages.jsonl";
inline constexpr const char* kInstancesFile = "instances.jsonl";
inline constexpr const char* kSplitsFile = "splits.tsv";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kBaselineFile = "baseline_model.txt";
inline constexpr const char* kTrainRecordFile = "train_record.json";
inline constexpr const char* kResolvedConfigFile = "resolved_config.json";
inline constexpr const char* kMetadataFile = "run_metadata.json";

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path.string(), j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  return format_iso8601_utc(std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count());
}

// ---------------------------------------------------------------------------
// Run configuration file
// ---------------------------------------------------------------------------

/// `{"model": {...}, "train": {...}, "search_space": {...}, "baseline": {...},
///   "embeddings": {"oov_policy": "zero_vector"}}`; every section optional.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SearchSpace search;
  BaselineOptions baseline;
  OovPolicy oov_policy = OovPolicy::zero_vector;

  void override_seed(std::uint64_t seed) {
    model.seed = seed;
    train.seed = seed;
    baseline.seed = seed;
  }

  nlohmann::json to_json() const {
    return {{"model", powerdyad::to_json(model)},
            {"train", powerdyad::to_json(train)},
            {"search_space", powerdyad::to_json(search)},
            {"baseline",
             {{"ngram_range", {baseline.n_min, baseline.n_max}},
              {"weighting", baseline.weighting == NgramWeighting::count ? "count" : "binary"},
              {"max_features", baseline.max_features},
              {"include_structural", baseline.include_structural},
              {"c_grid", baseline.c_grid},
              {"max_iterations", baseline.max_iterations},
              {"tolerance", baseline.tolerance},
              {"seed", baseline.seed}}},
            {"embeddings", {{"oov_policy", to_string(oov_policy)}}}};
  }
};

inline RunConfig load_run_config(const std::optional<fs::path>& path) {
  RunConfig c;
  if (!path) return c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path->string()));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path->string() + ": " + e.what());
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("search_space")) c.search = search_space_from_json(j["search_space"]);
  if (j.contains("baseline")) c.baseline = baseline_options_from_json(j["baseline"]);
  if (j.contains("embeddings") && j["embeddings"].contains("oov_policy"))
    c.oov_policy = parse_oov_policy(j["embeddings"]["oov_policy"].get<std::string>());
  return c;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestOptions {
  fs::path source;
  fs::path out;
  std::optional<fs::path> rules;
};

struct IngestSummary {
  std::size_t threads = 0;
  std::size_t emails = 0;
  IngestReport report;
  std::vector<std::string> warnings;
};

/// Reads and masks a corpus and writes the store: messages.jsonl (with
/// masked_body), dominance.tsv and skip_report.json.  The store is itself a
/// valid ingest source.
inline IngestSummary cmd_ingest(const IngestOptions& opt) {
  const auto rules = opt.rules ? MaskRules::load(opt.rules->string()) : MaskRules::defaults();
  auto corpus = ingest_corpus(opt.source);
  mask_corpus(corpus, rules);
  fs::create_directories(opt.out);

  std::string messages;
  for (const auto& t : corpus.threads)
    for (const auto& e : t.emails) messages += email_to_json(e).dump() + "\n";
  write_file((opt.out / kMessagesFile).string(), messages);
  std::string dominance;
  for (const auto& r : corpus.dominance) dominance += r.superior + "\t" + r.subordinate + "\n";
  write_file((opt.out / kDominanceFile).string(), dominance);
  write_json(opt.out / "skip_report.json", {{"files", corpus.report.files},
                                            {"records", corpus.report.records},
                                            {"parsed", corpus.report.parsed},
                                            {"malformed", corpus.report.malformed},
                                            {"skipped", corpus.report.warnings},
                                            {"threads", corpus.threads.size()},
                                            {"mask_rules_version", rules.version}});
  IngestSummary s;
  s.threads = corpus.threads.size();
  s.emails = corpus.email_count();
  s.report = corpus.report;
  if (corpus.report.records == 0) s.warnings.push_back("no message records found in " + opt.source.string());
  if (corpus.report.malformed) s.warnings.push_back(std::to_string(corpus.report.malformed) + " malformed records skipped");
  return s;
}

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

struct BuildOptions {
  fs::path corpus;  // an ingest store or any ingest source
  fs::path out;
  Formulation formulation = Formulation::per_thread;
  std::uint64_t seed = 0;
  std::optional<fs::path> manifest;
  SplitRatios ratios;
};

struct BuildSummary {
  std::size_t instances = 0;
  std::size_t train = 0, dev = 0, test = 0;
  std::size_t unrelated_pairs = 0;
  std::size_t unassigned = 0;  // instances an external manifest did not mention
};

inline BuildSummary cmd_build(const BuildOptions& opt) {
  auto corpus = ingest_corpus(opt.corpus);
  auto extracted = extract_pairs(corpus.threads, corpus.dominance, opt.formulation, opt.seed);
  auto& instances = extracted.instances;

  SplitManifest manifest;
  std::vector<std::string> unassigned;
  if (opt.manifest) {
    manifest = apply_external_manifest(
        instances, SplitManifest::parse(read_file(opt.manifest->string()), opt.manifest->string()), &unassigned);
    const std::set<std::string> drop(unassigned.begin(), unassigned.end());
    std::erase_if(instances, [&](const DyadInstance& i) { return drop.count(i.id) > 0; });
  } else {
    if (instances.empty()) throw DataError("build: corpus yields no related interacting pairs");
    manifest = make_splits(instances, opt.ratios, opt.seed);
  }

  fs::create_directories(opt.out);
  std::string lines;
  for (const auto& inst : instances) lines += instance_to_json(inst).dump() + "\n";
  write_file((opt.out / kInstancesFile).string(), lines);
  write_file((opt.out / kSplitsFile).string(), manifest.serialize());

  BuildSummary s;
  s.instances = instances.size();
  s.train = manifest.count(Split::train);
  s.dev = manifest.count(Split::dev);
  s.test = manifest.count(Split::test);
  s.unrelated_pairs = extracted.report.unrelated_pairs;
  s.unassigned = unassigned.size();
  write_json(opt.out / "build_report.json", {{"formulation", to_string(opt.formulation)},
                                             {"seed", opt.seed},
                                             {"instances", s.instances},
                                             {"train", s.train},
                                             {"dev", s.dev},
                                             {"test", s.test},
                                             {"interacting_pairs", extracted.report.interacting_pairs},
                                             {"skipped_unrelated_pairs", s.unrelated_pairs},
                                             {"unassigned_by_manifest", s.unassigned},
                                             {"split_source", manifest.external ? "external" : "ratio"},
                                             {"split_grouping", "unordered_pair"},
                                             {"email_cap_counts", "post_masking_tokens"}});
  return s;
}

inline Dataset load_dataset(const fs::path& dir) {
  const auto text = read_file((dir / kInstancesFile).string());
  std::vector<DyadInstance> instances;
  for (const auto& line : split_lines(text)) {
    if (trim(line).empty()) continue;
    try {
      instances.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError((dir / kInstancesFile).string() + ": " + e.what());
    }
  }
  const auto splits_path = dir / kSplitsFile;
  auto manifest = SplitManifest::parse(read_file(splits_path.string()), splits_path.string());
  manifest = apply_external_manifest(instances, std::move(manifest));
  const auto formulation = instances.empty() ? Formulation::per_thread : instances.front().formulation;
  return Dataset(formulation, std::move(instances), std::move(manifest));
}

inline std::shared_ptr<const EmbeddingTable> load_table(const std::optional<fs::path>& path, int dim, OovPolicy policy) {
  if (!path) throw UsageError("an embedding file is required (--embeddings)");
  return std::make_shared<const EmbeddingTable>(load_embeddings(path->string(), dim, policy));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  fs::path data;
  fs::path out;
  std::optional<fs::path> config;
  std::optional<fs::path> embeddings;
  std::optional<std::uint64_t> seed;
  bool baseline = false;
  std::vector<Split>* access_log = nullptr;
};

struct TrainSummary {
  double best_dev_accuracy = 0.0;
  int best_epoch = 0;
  std::size_t epochs = 0;
};

/// Neural: checkpoint.bin + train_record.json.  Baseline: baseline_model.txt +
/// train_record.json.  Both write resolved_config.json and run_metadata.json
/// (the only file with wall-clock data).
inline TrainSummary cmd_train(const TrainOptions& opt) {
  auto cfg = load_run_config(opt.config);
  if (opt.seed) cfg.override_seed(*opt.seed);
  auto data = load_dataset(opt.data);
  data.set_access_log(opt.access_log);
  const auto train_set = data.split(Split::train);
  const auto dev_set = data.split(Split::dev);
  fs::create_directories(opt.out);
  write_json(opt.out / kResolvedConfigFile, cfg.to_json());

  TrainSummary s;
  const auto started = std::chrono::steady_clock::now();
  if (opt.baseline) {
    const auto r = train_baseline(train_set, dev_set, cfg.baseline);
    r.model.save((opt.out / kBaselineFile).string());
    auto scores = nlohmann::json::array();
    for (const auto& [c, acc] : r.c_scores) scores.push_back({{"c", c}, {"dev_accuracy", acc}});
    write_json(opt.out / kTrainRecordFile,
               {{"model", "svm_baseline"}, {"best_dev_accuracy", r.dev_accuracy}, {"c", r.model.c}, {"c_scores", scores}});
    s.best_dev_accuracy = r.dev_accuracy;
  } else {
    const auto table = load_table(opt.embeddings, cfg.model.embedding_dim, cfg.oov_policy);
    const auto r = train(cfg.model, cfg.train, train_set, dev_set, table);
    r.checkpoint.save((opt.out / kCheckpointFile).string());
    write_json(opt.out / kTrainRecordFile, r.record.to_json());
    s.best_dev_accuracy = r.record.best_dev_accuracy;
    s.best_epoch = r.record.best_epoch;
    s.epochs = r.record.epochs.size();
  }
  write_json(opt.out / kMetadataFile,
             {{"finished_at", utc_now()},
              {"wall_time_seconds",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}});
  return s;
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

struct TuneOptions {
  fs::path data;
  fs::path out;
  std::optional<fs::path> config;
  std::optional<fs::path> embeddings;
  std::optional<std::uint64_t> seed;
  std::size_t budget = 30;
  int jobs = 1;
  std::vector<Split>* access_log = nullptr;
};

inline TuneResult cmd_tune(const TuneOptions& opt) {
  auto cfg = load_run_config(opt.config);
  if (opt.seed) cfg.override_seed(*opt.seed);
  auto data = load_dataset(opt.data);
  data.set_access_log(opt.access_log);
  const auto train_set = data.split(Split::train);
  const auto dev_set = data.split(Split::dev);
  const auto table = load_table(opt.embeddings, cfg.model.embedding_dim, cfg.oov_policy);
  auto result = tune(cfg.search, cfg.model, cfg.train, opt.budget, train_set, dev_set, table, cfg.train.seed, opt.jobs);

  fs::create_directories(opt.out);
  write_json(opt.out / kResolvedConfigFile, cfg.to_json());
  std::string log;
  for (const auto& t : result.trials) log += t.log_record().dump() + "\n";
  write_file((opt.out / "trial_log.jsonl").string(), log);
  auto ranking = nlohmann::json::array();
  for (std::size_t i = 0; i < result.ranked.size(); ++i) {
    const auto& t = result.ranked[i];
    ranking.push_back({{"rank", i + 1}, {"trial", t.id}, {"dev_accuracy", t.dev_accuracy}, {"status", t.ok ? "ok" : "failed"},
                       {"parameter_count", t.parameter_count}, {"config_hash", hex64(t.hash)}});
  }
  write_json(opt.out / "ranking.json", ranking);
  if (!result.ranked.empty() && result.ranked.front().ok) {
    auto best = cfg;
    best.model = result.ranked.front().model;
    best.train = result.ranked.front().train;
    write_json(opt.out / "best_config.json", best.to_json());
  }
  return result;
}

// ---------------------------------------------------------------------------
// eval / report
// ---------------------------------------------------------------------------

struct EvalOptions {
  fs::path data;
  fs::path model;  // checkpoint.bin or baseline_model.txt
  fs::path out;
  std::optional<fs::path> embeddings;
  std::optional<fs::path> config;  // only consulted for the OOV policy
  Split split = Split::test;
  std::size_t exemplars = 5;
};

inline bool is_checkpoint_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  char magic[8] = {};
  in.read(magic, 8);
  return in && std::string_view(magic, 8) == std::string_view("PDYCKPT\0", 8);
}

/// Writes report.txt (table + exemplars) and report.jsonl.
inline EvalReport cmd_eval(const EvalOptions& opt) {
  const auto cfg = load_run_config(opt.config);
  const auto data = load_dataset(opt.data);
  const auto instances = data.split(opt.split);
  EvalReport report;
  if (is_checkpoint_file(opt.model)) {
    const auto ck = Checkpoint::load(opt.model.string());
    const auto table = load_table(opt.embeddings, ck.model.embedding_dim, cfg.oov_policy);
    const auto model = ck.instantiate(table);
    const FeatureBuilder builder(table, ck.model, ck.standardizer);
    report = evaluate(to_string(ck.model.architecture), data.formulation(), opt.split, instances,
                      neural_scorer(model, builder), opt.exemplars);
  } else {
    const auto model = BaselineModel::load(opt.model.string());
    report = evaluate("svm_baseline", data.formulation(), opt.split, instances, model.scorer(), opt.exemplars);
  }
  fs::create_directories(opt.out);
  write_file((opt.out / "report.txt").string(), render_text(report));
  write_file((opt.out / "report.jsonl").string(), emit_jsonl(report));
  return report;
}

struct ReportOptions {
  std::vector<fs::path> inputs;
  fs::path out;
};

inline SummaryTable cmd_report(const ReportOptions& opt) {
  if (opt.inputs.empty()) throw UsageError("report: at least one eval report is required");
  std::vector<EvalReport> reports;
  for (const auto& p : opt.inputs) {
    auto r = parse_jsonl_reports(read_file(p.string()));
    reports.insert(reports.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  const auto table = summarize(reports);
  fs::create_directories(opt.out);
  write_file((opt.out / "summary.txt").string(), render_summary(table));
  write_file((opt.out / "summary.jsonl").string(), emit_jsonl(table));
  return table;
}

}  // namespace powerdyad::commands
