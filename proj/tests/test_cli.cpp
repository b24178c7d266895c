#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "support.hpp"

using namespace powerdyad;
using testing_support::TempDir;
namespace pc = powerdyad::commands;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(POWERDYAD_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Synthetic store: planted-marker instances split 60/20/20, plus embeddings.
struct Store {
  TempDir dir;
  fs::path data = dir / "data";
  fs::path emb = dir / "emb.txt";
  fs::path config = dir / "config.json";

  explicit Store(Formulation f = Formulation::grouped, std::size_t n = 40) {
    auto inst = synthetic::planted_markers(n, 17);
    for (auto& i : inst) i.formulation = f;
    if (f == Formulation::per_thread)
      for (auto& i : inst) i.thread_id = i.emails_a_to_b.empty() ? i.emails_b_to_a[0].thread_id : i.emails_a_to_b[0].thread_id;
    testing_support::write_store(data, inst, make_splits(inst, {}, 1));
    testing_support::write_embedding_file(emb, inst, 6);
    write_file(config.string(), nlohmann::json{{"model",
                                                {{"architecture", "separated_cnn"},
                                                 {"embedding_dim", 6},
                                                 {"email_cap", 12},
                                                 {"max_emails_per_direction", 4},
                                                 {"conv_filters", 3},
                                                 {"kernel_widths", {2, 3}},
                                                 {"dense_hidden", 5}}},
                                               {"train", {{"max_epochs", 4}, {"min_epochs", 2}, {"patience", 2},
                                                          {"batch_size", 8}, {"learning_rate", 0.01}}},
                                               {"search_space", {{"dense_hidden", {3, 5}}, {"learning_rate", {0.01, 0.003}}}}}
                                        .dump());
  }
};

}  // namespace

TEST(CmdIngest, FixtureStore) {
  TempDir d;
  synthetic::write_fixture_corpus(d / "raw");
  const auto s = pc::cmd_ingest({d / "raw", d / "store", std::nullopt});
  EXPECT_EQ(s.threads, 3u);
  EXPECT_TRUE(s.warnings.empty());
  const auto skip = pc::read_json(d / "store" / "skip_report.json");
  EXPECT_TRUE(skip["skipped"].empty());
  const auto corpus = ingest_corpus(d / "store");
  EXPECT_EQ(corpus.threads.size(), 3u);
  for (const auto& t : corpus.threads)
    for (const auto& e : t.emails) ASSERT_TRUE(e.masked_body.has_value());
  // Re-ingesting the store is a fixpoint.
  pc::cmd_ingest({d / "store", d / "store2", std::nullopt});
  EXPECT_EQ(read_file((d / "store" / "messages.jsonl").string()), read_file((d / "store2" / "messages.jsonl").string()));
}

TEST(CmdIngest, EmptySourceWarnsAndSucceeds) {
  TempDir d;
  fs::create_directories(d / "raw");
  write_file((d / "raw" / "dominance.tsv").string(), "");
  const auto s = pc::cmd_ingest({d / "raw", d / "store", std::nullopt});
  EXPECT_EQ(s.threads, 0u);
  EXPECT_FALSE(s.warnings.empty());
  EXPECT_EQ(run_cli("ingest " + q(d / "raw") + " --out " + q(d / "store3"), d / "log"), exit_code::kSuccess);
  EXPECT_NE(read_file((d / "log").string()).find("warning"), std::string::npos);
}

TEST(CmdIngest, MissingDominanceExitCode) {
  TempDir d;
  fs::create_directories(d / "raw");
  EXPECT_EQ(run_cli("ingest " + q(d / "raw") + " --out " + q(d / "store"), d / "log"), exit_code::kDataContract);
  EXPECT_NE(read_file((d / "log").string()).find("dominance.tsv"), std::string::npos);
}

TEST(CmdBuild, FixtureCounts) {
  TempDir d;
  synthetic::write_fixture_corpus(d / "raw");
  pc::cmd_ingest({d / "raw", d / "store", std::nullopt});
  pc::BuildOptions o;
  o.corpus = d / "store";
  o.out = d / "pt";
  o.formulation = Formulation::per_thread;
  const auto pt = pc::cmd_build(o);
  EXPECT_EQ(pt.instances, 4u);
  EXPECT_EQ(pt.train + pt.dev + pt.test, 4u);
  o.out = d / "gr";
  o.formulation = Formulation::grouped;
  const auto gr = pc::cmd_build(o);
  EXPECT_EQ(gr.instances, 3u);
  EXPECT_LE(gr.instances, pt.instances);
  const auto ds = pc::load_dataset(d / "pt");
  EXPECT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.formulation(), Formulation::per_thread);
}

TEST(CmdBuild, ExternalManifest) {
  TempDir d;
  synthetic::write_fixture_corpus(d / "raw");
  write_file((d / "m.tsv").string(), "pt|t1|alice|bob\ttrain\npt|t3|dave|erin\ttest\n");
  EXPECT_EQ(run_cli("build " + q(d / "raw") + " --formulation per-thread --manifest " + q(d / "m.tsv") + " --out " +
                        q(d / "out"),
                    d / "log"),
            exit_code::kSuccess);
  const auto report = pc::read_json(d / "out" / "build_report.json");
  EXPECT_EQ(report["train"], 1);
  EXPECT_EQ(report["test"], 1);
  EXPECT_EQ(report["unassigned_by_manifest"], 2);
  EXPECT_EQ(pc::load_dataset(d / "out").size(), 2u);

  write_file((d / "bad.tsv").string(), "pt|t9|x|y\ttrain\n");
  EXPECT_EQ(run_cli("build " + q(d / "raw") + " --manifest " + q(d / "bad.tsv") + " --out " + q(d / "o2"), d / "log"),
            exit_code::kDataContract);
}

TEST(CmdTrainEval, EvalReproducesStoredDevAccuracy) {
  Store s;
  pc::TrainOptions t;
  t.data = s.data;
  t.out = s.dir / "run";
  t.config = s.config;
  t.embeddings = s.emb;
  std::vector<Split> log;
  t.access_log = &log;
  const auto summary = pc::cmd_train(t);
  for (auto sp : log) EXPECT_NE(sp, Split::test);
  const auto record = TrainRecord::from_json(pc::read_json(s.dir / "run" / pc::kTrainRecordFile));
  EXPECT_EQ(record.best_dev_accuracy, summary.best_dev_accuracy);

  pc::EvalOptions e;
  e.data = s.data;
  e.model = s.dir / "run" / pc::kCheckpointFile;
  e.out = s.dir / "eval";
  e.embeddings = s.emb;
  e.split = Split::dev;
  const auto rep = pc::cmd_eval(e);
  EXPECT_EQ(rep.accuracy, record.best_dev_accuracy);
  const auto text = read_file((s.dir / "eval" / "report.txt").string());
  EXPECT_NE(text.find("Sequential-CNN-LSTM"), std::string::npos);
  EXPECT_NE(text.find("most_confident_incorrect"), std::string::npos);
  EXPECT_EQ(parse_jsonl_reports(read_file((s.dir / "eval" / "report.jsonl").string())).at(0), rep);
}

TEST(CmdTrainEval, BaselineThroughCli) {
  Store s;
  EXPECT_EQ(run_cli("train --baseline --data " + q(s.data) + " --out " + q(s.dir / "b"), s.dir / "log"),
            exit_code::kSuccess);
  EXPECT_TRUE(fs::exists(s.dir / "b" / pc::kBaselineFile));
  EXPECT_EQ(run_cli("eval --data " + q(s.data) + " --model " + q(s.dir / "b" / pc::kBaselineFile) + " --split dev --out " +
                        q(s.dir / "e"),
                    s.dir / "log"),
            exit_code::kSuccess);
  const auto rep = parse_jsonl_reports(read_file((s.dir / "e" / "report.jsonl").string())).at(0);
  EXPECT_EQ(rep.model, "svm_baseline");
  EXPECT_EQ(rep.accuracy, pc::read_json(s.dir / "b" / pc::kTrainRecordFile)["best_dev_accuracy"].get<double>());
}

TEST(CmdTrainEval, RerunIsByteIdentical) {
  Store s;
  for (const char* run : {"r1", "r2"}) {
    ASSERT_EQ(run_cli("train --data " + q(s.data) + " --config " + q(s.config) + " --embeddings " + q(s.emb) +
                          " --seed 3 --out " + q(s.dir / run),
                      s.dir / "log"),
              exit_code::kSuccess)
        << read_file((s.dir / "log").string());
  }
  for (const char* f : {pc::kCheckpointFile, pc::kTrainRecordFile, pc::kResolvedConfigFile})
    EXPECT_EQ(read_file((s.dir / "r1" / f).string()), read_file((s.dir / "r2" / f).string())) << f;
}

TEST(CmdTrainEval, WrongEmbeddingDimensionIsDataError) {
  Store s;
  write_file((s.dir / "e3.txt").string(), "x 1 2 3\n");
  EXPECT_EQ(run_cli("train --data " + q(s.data) + " --config " + q(s.config) + " --embeddings " + q(s.dir / "e3.txt") +
                        " --out " + q(s.dir / "r"),
                    s.dir / "log"),
            exit_code::kDataContract);
  EXPECT_NE(read_file((s.dir / "log").string()).find("e3.txt:1"), std::string::npos);
}

TEST(CmdTune, LogAndRanking) {
  Store s;
  ASSERT_EQ(run_cli("tune --data " + q(s.data) + " --config " + q(s.config) + " --embeddings " + q(s.emb) +
                        " --budget 3 --jobs 2 --seed 1 --out " + q(s.dir / "t"),
                    s.dir / "log"),
            exit_code::kSuccess)
      << read_file((s.dir / "log").string());
  const auto trials = split_lines(read_file((s.dir / "t" / "trial_log.jsonl").string()));
  std::size_t n = 0;
  for (const auto& l : trials) n += !trim(l).empty();
  EXPECT_EQ(n, 3u);
  const auto ranking = pc::read_json(s.dir / "t" / "ranking.json");
  ASSERT_EQ(ranking.size(), 3u);
  EXPECT_GE(ranking[0]["dev_accuracy"].get<double>(), ranking[2]["dev_accuracy"].get<double>());
  EXPECT_TRUE(fs::exists(s.dir / "t" / "best_config.json"));
}

TEST(CmdReport, MergesReports) {
  TempDir d;
  EvalReport a{"separated_cnn", "per_thread", "test", 0.8, 8, 10, {}, {}};
  EvalReport b{"svm_baseline", "per_thread", "test", 0.7, 7, 10, {}, {}};
  write_file((d / "a.jsonl").string(), emit_jsonl(a));
  write_file((d / "b.jsonl").string(), emit_jsonl(b));
  ASSERT_EQ(run_cli("report " + q(d / "a.jsonl") + " " + q(d / "b.jsonl") + " --out " + q(d / "s"), d / "log"),
            exit_code::kSuccess);
  const auto text = read_file((d / "s" / "summary.txt").string());
  EXPECT_NE(text.find("**80.0**"), std::string::npos) << text;
  EXPECT_NE(text.find("70.0"), std::string::npos);
  const auto table = parse_summary_jsonl(read_file((d / "s" / "summary.jsonl").string()));
  EXPECT_EQ(table, summarize({a, b}));
  EXPECT_EQ(run_cli("report --out " + q(d / "s2"), d / "log"), exit_code::kUsage);
}

TEST(Cli, UsageErrors) {
  TempDir d;
  EXPECT_EQ(run_cli("", d / "log"), exit_code::kUsage);
  EXPECT_EQ(run_cli("frobnicate", d / "log"), exit_code::kUsage);
  EXPECT_EQ(run_cli("build x --formulation sideways --out y", d / "log"), exit_code::kUsage);
  EXPECT_EQ(run_cli("eval --data x --model y --split validation --out z", d / "log"), exit_code::kUsage);
  EXPECT_EQ(run_cli("--help", d / "log"), exit_code::kSuccess);
}

TEST(Cli, BadConfigIsUsageError) {
  Store s;
  write_file((s.dir / "bad.json").string(), R"({"model": {"architecture": "rnn"}})");
  EXPECT_EQ(run_cli("train --data " + q(s.data) + " --config " + q(s.dir / "bad.json") + " --embeddings " + q(s.emb) +
                        " --out " + q(s.dir / "r"),
                    s.dir / "log"),
            exit_code::kUsage);
}

TEST(Cli, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(fs::path(POWERDYAD_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(pc::load_run_config(entry.path())) << entry.path();
  }
}
