#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "powerdyad/corpus.hpp"
#include "powerdyad/error.hpp"
#include "powerdyad/models.hpp"

namespace powerdyad {

/// The one place a probability becomes a label.
inline int predicted_label(double probability) { return probability >= 0.5 ? 1 : 0; }

inline double accuracy_ratio(std::size_t correct, std::size_t total) {
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

struct PredictionRow {
  std::string instance_id;
  int gold = 0;
  int predicted = 0;
  double probability = 0.5;

  friend bool operator==(const PredictionRow&, const PredictionRow&) = default;
};

struct ExemplarRow {
  std::string category;
  PredictionRow row;
  std::string snippet;

  friend bool operator==(const ExemplarRow&, const ExemplarRow&) = default;
};

struct EvalReport {
  std::string model;
  std::string formulation;
  std::string split;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<PredictionRow> rows;
  std::vector<ExemplarRow> exemplars;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// probability that person_a is the superior
using Scorer = std::function<double(const DyadInstance&)>;

inline Scorer neural_scorer(const PowerModel& model, const FeatureBuilder& builder) {
  return [&model, &builder](const DyadInstance& inst) { return model.score(builder.build(inst)).probability; };
}

inline std::string text_snippet(const DyadInstance& inst, std::size_t max_chars = 160) {
  std::string out;
  for (const auto* dir : {&inst.emails_a_to_b, &inst.emails_b_to_a}) {
    for (const auto& e : *dir) {
      for (char c : e.text()) {
        const bool space = c == '\n' || c == '\r' || c == '\t' || c == ' ';
        if (space) {
          if (!out.empty() && out.back() != ' ') out.push_back(' ');
        } else {
          out.push_back(c);
        }
        if (out.size() >= max_chars) return out + "...";
      }
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    }
    if (!out.empty()) break;  // A->B text if there is any, otherwise B->A
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

/// Scores every instance and picks exemplars: the k most and least confident
/// correct and incorrect predictions (confidence = |p - 0.5|, ties by id).
inline EvalReport evaluate(std::string model_name, Formulation formulation, Split split,
                           const std::vector<DyadInstance>& instances, const Scorer& scorer, std::size_t k = 5) {
  EvalReport r;
  r.model = std::move(model_name);
  r.formulation = to_string(formulation);
  r.split = to_string(split);
  std::map<std::string, const DyadInstance*> by_id;
  for (const auto& inst : instances) {
    const double p = scorer(inst);
    const int pred = predicted_label(p);
    r.rows.push_back({inst.id, inst.label, pred, p});
    if (pred == inst.label) ++r.correct;
    by_id[inst.id] = &inst;
  }
  r.total = r.rows.size();
  r.accuracy = accuracy_ratio(r.correct, r.total);

  auto pick = [&](const char* category, bool correct, bool most) {
    std::vector<const PredictionRow*> pool;
    for (const auto& row : r.rows)
      if ((row.gold == row.predicted) == correct) pool.push_back(&row);
    std::sort(pool.begin(), pool.end(), [most](const PredictionRow* x, const PredictionRow* y) {
      const double cx = std::abs(x->probability - 0.5), cy = std::abs(y->probability - 0.5);
      if (cx != cy) return most ? cx > cy : cx < cy;
      return x->instance_id < y->instance_id;
    });
    for (std::size_t i = 0; i < pool.size() && i < k; ++i) {
      r.exemplars.push_back({category, *pool[i], text_snippet(*by_id[pool[i]->instance_id])});
    }
  };
  pick("most_confident_correct", true, true);
  pick("least_confident_correct", true, false);
  pick("most_confident_incorrect", false, true);
  pick("least_confident_incorrect", false, false);
  return r;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON
// ---------------------------------------------------------------------------

inline std::string emit_jsonl(const EvalReport& r) {
  std::string out;
  out += nlohmann::json{{"record", "summary"}, {"model", r.model}, {"formulation", r.formulation},
                        {"split", r.split}, {"accuracy", r.accuracy}, {"correct", r.correct}, {"total", r.total}}
             .dump() +
         "\n";
  auto row_json = [](const PredictionRow& p) {
    return nlohmann::json{{"instance_id", p.instance_id}, {"gold", p.gold}, {"predicted", p.predicted},
                          {"probability", p.probability}};
  };
  for (const auto& p : r.rows) {
    auto j = row_json(p);
    j["record"] = "prediction";
    out += j.dump() + "\n";
  }
  for (const auto& e : r.exemplars) {
    auto j = row_json(e.row);
    j["record"] = "exemplar";
    j["category"] = e.category;
    j["snippet"] = e.snippet;
    out += j.dump() + "\n";
  }
  return out;
}

/// Reads one or more reports; each begins with a summary record.
inline std::vector<EvalReport> parse_jsonl_reports(std::string_view text) {
  std::vector<EvalReport> reports;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      const auto kind = j.at("record").get<std::string>();
      if (kind == "summary") {
        EvalReport r;
        r.model = j.at("model").get<std::string>();
        r.formulation = j.at("formulation").get<std::string>();
        r.split = j.at("split").get<std::string>();
        r.accuracy = j.at("accuracy").get<double>();
        r.correct = j.at("correct").get<std::size_t>();
        r.total = j.at("total").get<std::size_t>();
        reports.push_back(std::move(r));
        continue;
      }
      if (reports.empty()) throw DataError("record before summary");
      PredictionRow p{j.at("instance_id").get<std::string>(), j.at("gold").get<int>(), j.at("predicted").get<int>(),
                      j.at("probability").get<double>()};
      if (kind == "prediction") {
        reports.back().rows.push_back(std::move(p));
      } else if (kind == "exemplar") {
        reports.back().exemplars.push_back({j.at("category").get<std::string>(), std::move(p),
                                            j.at("snippet").get<std::string>()});
      } else {
        throw DataError("unknown record type " + kind);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("report line " + std::to_string(i + 1) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("report line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Model x formulation accuracy table
// ---------------------------------------------------------------------------

inline const std::vector<std::pair<std::string, std::string>>& summary_models() {
  static const std::vector<std::pair<std::string, std::string>> rows{
      {"svm_baseline", "SVM Baseline"},
      {"batched_cnn", "Batched-CNN"},
      {"separated_cnn", "Separated-CNN"},
      {"sequential_cnn_lstm", "Sequential-CNN-LSTM"}};
  return rows;
}

struct SummaryCell {
  std::string model;
  std::string formulation;
  std::string split;
  double accuracy = 0.0;
  bool best = false;  // best in its formulation column

  friend bool operator==(const SummaryCell&, const SummaryCell&) = default;
};

struct SummaryTable {
  std::vector<SummaryCell> cells;

  friend bool operator==(const SummaryTable&, const SummaryTable&) = default;
};

/// One cell per (model, formulation).  When several splits are present the
/// test split wins, then dev, then train.
inline SummaryTable summarize(const std::vector<EvalReport>& reports) {
  auto split_rank = [](const std::string& s) { return s == "test" ? 0 : s == "dev" ? 1 : 2; };
  std::map<std::pair<std::string, std::string>, const EvalReport*> chosen;
  for (const auto& r : reports) {
    auto& slot = chosen[{r.model, r.formulation}];
    if (!slot || split_rank(r.split) < split_rank(slot->split)) slot = &r;
  }
  SummaryTable t;
  for (const auto& [key, r] : chosen) t.cells.push_back({r->model, r->formulation, r->split, r->accuracy, false});
  std::map<std::string, double> best;
  for (const auto& c : t.cells) {
    auto it = best.find(c.formulation);
    if (it == best.end() || c.accuracy > it->second) best[c.formulation] = c.accuracy;
  }
  for (auto& c : t.cells) c.best = c.accuracy == best[c.formulation];
  return t;
}

inline std::string emit_jsonl(const SummaryTable& t) {
  std::string out;
  for (const auto& c : t.cells) {
    out += nlohmann::json{{"record", "cell"}, {"model", c.model}, {"formulation", c.formulation},
                          {"split", c.split}, {"accuracy", c.accuracy}, {"best", c.best}}
               .dump() +
           "\n";
  }
  return out;
}

inline SummaryTable parse_summary_jsonl(std::string_view text) {
  SummaryTable t;
  for (const auto& line : split_lines(text)) {
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("record") != "cell") throw DataError("expected cell record");
      t.cells.push_back({j.at("model").get<std::string>(), j.at("formulation").get<std::string>(),
                         j.at("split").get<std::string>(), j.at("accuracy").get<double>(), j.at("best").get<bool>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("summary: ") + e.what());
    }
  }
  return t;
}

inline std::string format_percent(double acc) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << acc * 100.0;
  return s.str();
}

/// Fixed-width table; the best cell of each column is wrapped in `**`.
inline std::string render_summary(const SummaryTable& t) {
  std::ostringstream out;
  out << std::left << std::setw(22) << "Model" << std::right << std::setw(12) << "Per-Thread" << std::setw(12)
      << "Grouped" << "\n";
  out << std::string(46, '-') << "\n";
  auto cell = [&](const std::string& model, const std::string& formulation) -> std::string {
    for (const auto& c : t.cells) {
      if (c.model == model && c.formulation == formulation) {
        const auto v = format_percent(c.accuracy);
        return c.best ? "**" + v + "**" : v;
      }
    }
    return "-";
  };
  std::vector<std::pair<std::string, std::string>> rows = summary_models();
  for (const auto& c : t.cells) {
    const bool known = std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.first == c.model; });
    if (!known) rows.emplace_back(c.model, c.model);
  }
  for (const auto& [key, label] : rows) {
    out << std::left << std::setw(22) << label << std::right << std::setw(12) << cell(key, "per_thread")
        << std::setw(12) << cell(key, "grouped") << "\n";
  }
  return out.str();
}

inline std::string relation_name(int label) { return label == 1 ? "Superior" : "Subordinate"; }

inline std::string render_text(const EvalReport& r) {
  std::ostringstream out;
  out << "model: " << r.model << "   formulation: " << r.formulation << "   split: " << r.split << "\n";
  out << "accuracy: " << std::fixed << std::setprecision(4) << r.accuracy << " (" << r.correct << "/" << r.total
      << ")\n\n";
  out << render_summary(summarize({r})) << "\n";
  out << "Exemplars (relation of person A to person B)\n";
  std::string current;
  for (const auto& e : r.exemplars) {
    if (e.category != current) {
      current = e.category;
      out << "\n[" << current << "]\n";
      out << std::left << std::setw(12) << "actual" << std::setw(12) << "predicted" << std::setw(9) << "p(A sup)"
          << "text\n";
    }
    out << std::left << std::setw(12) << relation_name(e.row.gold) << std::setw(12) << relation_name(e.row.predicted)
        << std::setw(9) << std::setprecision(3) << e.row.probability << e.snippet << "\n";
  }
  return out.str();
}

}  // namespace powerdyad
