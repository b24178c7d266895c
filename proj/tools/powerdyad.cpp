// powerdyad: ingest, build, train, tune, eval, report.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "powerdyad/commands.hpp"

namespace pc = powerdyad::commands;
using powerdyad::exit_code::kDataContract;
using powerdyad::exit_code::kNumerical;
using powerdyad::exit_code::kSuccess;
using powerdyad::exit_code::kUsage;

namespace {

std::optional<pc::fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return pc::fs::path(s);
}

// Env vars only provide default locations, never behaviour.
std::string env_default(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise power-relation prediction from email threads"};
  app.require_subcommand(1);

  std::string source, corpus, data, out, config, embeddings, rules, manifest, model_path;
  std::string formulation = "per-thread", split = "test";
  std::uint64_t seed = 0;
  bool seed_given = false, baseline = false;
  int jobs = 1;
  std::size_t budget = 30, exemplars = 5;
  double train_ratio = 0.6, dev_ratio = 0.2, test_ratio = 0.2;
  std::vector<std::string> inputs;

  auto* ingest = app.add_subcommand("ingest", "Read, validate and mask a raw corpus");
  ingest->add_option("source", source, "Directory with *.jsonl message files and dominance.tsv")->required();
  ingest->add_option("--rules", rules, "Masking ruleset file (default: built-in rules)");

  auto* build = app.add_subcommand("build", "Extract dyad instances and assign splits");
  build->add_option("corpus", corpus, "Ingest store (or raw corpus directory)")->required();
  build->add_option("--manifest", manifest, "External split manifest (id<TAB>split)");
  build->add_option("--train-ratio", train_ratio);
  build->add_option("--dev-ratio", dev_ratio);
  build->add_option("--test-ratio", test_ratio);

  auto* train = app.add_subcommand("train", "Train one model on the train split");
  train->add_flag("--baseline", baseline, "Train the n-gram linear SVM instead of a neural model");

  auto* tune = app.add_subcommand("tune", "Random search over a config grid");
  tune->add_option("--budget", budget, "Number of trials")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Score a trained model on one split");
  eval->add_option("--model", model_path, "checkpoint.bin or baseline_model.txt")->required();
  eval->add_option("--exemplars", exemplars, "Exemplars per category");

  auto* report = app.add_subcommand("report", "Merge eval reports into one summary table");
  report->add_option("reports", inputs, "report.jsonl files");

  for (auto* sub : {ingest, build, train, tune, eval, report})
    sub->add_option("--out", out, "Output directory")->required();
  for (auto* sub : {train, tune, eval}) {
    sub->add_option("--data", data, "Instance store written by build")->required();
    sub->add_option("--embeddings", embeddings, "Word-vector text file")
        ->default_str(env_default("POWERDYAD_EMBEDDINGS", ""));
    sub->add_option("--config", config, "Run config JSON");
  }
  for (auto* sub : {build, train, tune})
    sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { seed = s; seed_given = true; }, "Seed");
  build->add_option("--formulation", formulation, "per-thread or grouped")
      ->check(CLI::IsMember({"per-thread", "per_thread", "grouped"}));
  eval->add_option("--split", split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  tune->add_option("--jobs", jobs, "Parallel trial workers")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kSuccess : kUsage;
  }
  if (embeddings.empty()) embeddings = env_default("POWERDYAD_EMBEDDINGS", "");

  try {
    if (*ingest) {
      const auto s = pc::cmd_ingest({source, out, opt_path(rules)});
      for (const auto& w : s.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "ingested " << s.emails << " emails in " << s.threads << " threads\n";
    } else if (*build) {
      pc::BuildOptions o;
      o.corpus = corpus;
      o.out = out;
      o.formulation = powerdyad::parse_formulation(formulation);
      o.seed = seed;
      o.manifest = opt_path(manifest);
      o.ratios = {train_ratio, dev_ratio, test_ratio};
      const auto s = pc::cmd_build(o);
      std::cout << "instances " << s.instances << " (train " << s.train << ", dev " << s.dev << ", test " << s.test
                << ")\n";
      if (s.unassigned) std::cerr << "warning: " << s.unassigned << " instances not in manifest were dropped\n";
    } else if (*train) {
      pc::TrainOptions o;
      o.data = data;
      o.out = out;
      o.config = opt_path(config);
      o.embeddings = opt_path(embeddings);
      if (seed_given) o.seed = seed;
      o.baseline = baseline;
      const auto s = pc::cmd_train(o);
      std::cout << "best dev accuracy " << s.best_dev_accuracy;
      if (!baseline) std::cout << " at epoch " << s.best_epoch << " of " << s.epochs;
      std::cout << "\n";
    } else if (*tune) {
      pc::TuneOptions o;
      o.data = data;
      o.out = out;
      o.config = opt_path(config);
      o.embeddings = opt_path(embeddings);
      if (seed_given) o.seed = seed;
      o.budget = budget;
      o.jobs = jobs;
      const auto r = pc::cmd_tune(o);
      std::cout << r.trials.size() << " trials";
      if (!r.ranked.empty())
        std::cout << ", best trial " << r.ranked.front().id << " dev accuracy " << r.ranked.front().dev_accuracy;
      std::cout << "\n";
    } else if (*eval) {
      pc::EvalOptions o;
      o.data = data;
      o.model = model_path;
      o.out = out;
      o.embeddings = opt_path(embeddings);
      o.config = opt_path(config);
      o.split = powerdyad::parse_split(split);
      o.exemplars = exemplars;
      const auto r = pc::cmd_eval(o);
      std::cout << powerdyad::render_text(r);
    } else if (*report) {
      pc::ReportOptions o;
      for (const auto& i : inputs) o.inputs.emplace_back(i);
      o.out = out;
      std::cout << powerdyad::render_summary(pc::cmd_report(o));
    }
  } catch (const powerdyad::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const powerdyad::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataContract;
  } catch (const powerdyad::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataContract;
  }
  return kSuccess;
}
