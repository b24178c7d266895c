#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "powerdyad/corpus.hpp"
#include "powerdyad/error.hpp"
#include "powerdyad/evaluation.hpp"
#include "powerdyad/features.hpp"
#include "powerdyad/nn/params.hpp"
#include "powerdyad/util.hpp"

namespace powerdyad {

enum class NgramWeighting { binary, count };

/// (column, value) pairs sorted by column, no duplicates.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

inline double sparse_dot(const SparseVector& x, const std::vector<double>& w) {
  double s = 0.0;
  for (const auto& [i, v] : x) s += v * w[i];
  return s;
}

/// Every token of a direction's masked emails, concatenated in order.
inline std::vector<std::string> direction_tokens(std::span<const Email> emails) {
  std::vector<std::string> out;
  for (const auto& e : emails) {
    auto t = tokenize(e.text());
    out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  return out;
}

class NgramVectorizer {
 public:
  int n_min = 1;
  int n_max = 2;
  NgramWeighting weighting = NgramWeighting::count;
  std::size_t max_features = 50000;

  template <typename Fn>
  void for_each_ngram(const std::vector<std::string>& tokens, Fn&& fn) const {
    for (int n = n_min; n <= n_max; ++n) {
      if (tokens.size() < static_cast<std::size_t>(n)) break;
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (int k = 1; k < n; ++k) g += " " + tokens[i + static_cast<std::size_t>(k)];
        fn(g);
      }
    }
  }

  /// Keeps the max_features most frequent ngrams over both directions of the
  /// training instances (ties lexicographic); columns follow sorted order.
  void fit(std::span<const DyadInstance> train) {
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& inst : train)
      for (const auto* dir : {&inst.emails_a_to_b, &inst.emails_b_to_a})
        for_each_ngram(direction_tokens(*dir), [&](const std::string& g) { ++freq[g]; });
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > max_features) ranked.resize(max_features);
    std::vector<std::string> kept;
    for (auto& r : ranked) kept.push_back(std::move(r.first));
    set_vocabulary(std::move(kept));
  }

  void set_vocabulary(std::vector<std::string> ngrams) {
    std::sort(ngrams.begin(), ngrams.end());
    ngrams.erase(std::unique(ngrams.begin(), ngrams.end()), ngrams.end());
    vocabulary_.clear();
    for (std::size_t i = 0; i < ngrams.size(); ++i) vocabulary_.emplace(ngrams[i], static_cast<std::uint32_t>(i));
    ngrams_ = std::move(ngrams);
  }

  std::size_t size() const { return ngrams_.size(); }
  const std::vector<std::string>& ngrams() const { return ngrams_; }

  std::optional<std::uint32_t> index_of(const std::string& ngram) const {
    const auto it = vocabulary_.find(ngram);
    if (it == vocabulary_.end()) return std::nullopt;
    return it->second;
  }

  /// Unseen ngrams are dropped.  Columns are shifted by `offset`.
  SparseVector transform(const std::vector<std::string>& tokens, std::uint32_t offset = 0) const {
    std::map<std::uint32_t, double> acc;
    for_each_ngram(tokens, [&](const std::string& g) {
      if (auto idx = index_of(g)) {
        auto& v = acc[*idx + offset];
        v = weighting == NgramWeighting::count ? v + 1.0 : 1.0;
      }
    });
    return {acc.begin(), acc.end()};
  }

 private:
  std::vector<std::string> ngrams_;
  std::unordered_map<std::string, std::uint32_t> vocabulary_;
};

struct BaselineOptions {
  int n_min = 1;
  int n_max = 2;
  NgramWeighting weighting = NgramWeighting::count;
  std::size_t max_features = 50000;
  bool include_structural = true;
  std::vector<double> c_grid{0.001, 0.01, 0.1, 1.0, 10.0};
  int max_iterations = 1000;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
};

inline BaselineOptions baseline_options_from_json(const nlohmann::json& j, BaselineOptions o = {}) {
  try {
    if (j.contains("ngram_range")) {
      const auto r = j["ngram_range"].get<std::vector<int>>();
      if (r.size() != 2 || r[0] < 1 || r[1] < r[0]) throw UsageError("baseline: ngram_range must be [min, max]");
      o.n_min = r[0];
      o.n_max = r[1];
    }
    if (j.contains("weighting")) {
      const auto w = j["weighting"].get<std::string>();
      if (w != "count" && w != "binary") throw UsageError("baseline: weighting must be count or binary");
      o.weighting = w == "count" ? NgramWeighting::count : NgramWeighting::binary;
    }
    if (j.contains("max_features")) o.max_features = j["max_features"].get<std::size_t>();
    if (j.contains("include_structural")) o.include_structural = j["include_structural"].get<bool>();
    if (j.contains("c_grid")) o.c_grid = j["c_grid"].get<std::vector<double>>();
    if (j.contains("max_iterations")) o.max_iterations = j["max_iterations"].get<int>();
    if (j.contains("tolerance")) o.tolerance = j["tolerance"].get<double>();
    if (j.contains("seed")) o.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("baseline config: ") + e.what());
  }
  if (o.c_grid.empty()) throw UsageError("baseline: c_grid is empty");
  return o;
}

/// Feature layout: [A->B ngram block | B->A ngram block | structural], where
/// the structural block is (A recipients, A words, B recipients, B words,
/// A absent, B absent) when enabled.
inline SparseVector featurize_pair(const DyadInstance& inst, const NgramVectorizer& vectorizer,
                                   const Standardizer* standardizer = nullptr) {
  const auto v = static_cast<std::uint32_t>(vectorizer.size());
  SparseVector x = vectorizer.transform(direction_tokens(inst.emails_a_to_b), 0);
  const auto b = vectorizer.transform(direction_tokens(inst.emails_b_to_a), v);
  x.insert(x.end(), b.begin(), b.end());
  if (standardizer) {
    const auto sa = structural_features(inst.emails_a_to_b);
    const auto sb = structural_features(inst.emails_b_to_a);
    const auto za = standardizer->apply(sa), zb = standardizer->apply(sb);
    const double extra[6] = {za[0], za[1], zb[0], zb[1], sa.degenerate ? 1.0 : 0.0, sb.degenerate ? 1.0 : 0.0};
    for (std::uint32_t k = 0; k < 6; ++k)
      if (extra[k] != 0.0) x.emplace_back(2 * v + k, extra[k]);
  }
  return x;
}

/// L2-regularized hinge-loss linear classifier trained by dual coordinate
/// descent.  The bias is an extra constant feature.
struct LinearSvm {
  std::vector<double> weights;
  double bias = 0.0;

  double decision(const SparseVector& x) const { return sparse_dot(x, weights) + bias; }

  static LinearSvm fit(const std::vector<SparseVector>& xs, const std::vector<int>& labels, std::size_t dim, double c,
                       int max_iterations, double tolerance, std::uint64_t seed) {
    LinearSvm m;
    m.weights.assign(dim, 0.0);
    const std::size_t n = xs.size();
    std::vector<double> alpha(n, 0.0), qd(n, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& [j, v] : xs[i]) qd[i] += v * v;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(seed, "svm"));
    for (int iter = 0; iter < max_iterations; ++iter) {
      rng.shuffle(order);
      double pg_max = -1e300, pg_min = 1e300;
      for (auto i : order) {
        const double y = labels[i] == 1 ? 1.0 : -1.0;
        const double g = y * m.decision(xs[i]) - 1.0;
        double pg = g;
        if (alpha[i] == 0.0) pg = std::min(g, 0.0);
        else if (alpha[i] == c) pg = std::max(g, 0.0);
        pg_max = std::max(pg_max, pg);
        pg_min = std::min(pg_min, pg);
        if (std::abs(pg) > 1e-12) {
          const double old = alpha[i];
          alpha[i] = std::clamp(old - g / qd[i], 0.0, c);
          const double d = (alpha[i] - old) * y;
          for (const auto& [j, v] : xs[i]) m.weights[j] += d * v;
          m.bias += d;
        }
      }
      if (pg_max - pg_min < tolerance) break;
    }
    return m;
  }
};

struct BaselineModel {
  static constexpr int kVersion = 1;

  NgramVectorizer vectorizer;
  bool include_structural = true;
  Standardizer standardizer;
  double c = 1.0;
  LinearSvm svm;

  SparseVector features(const DyadInstance& inst) const {
    return featurize_pair(inst, vectorizer, include_structural ? &standardizer : nullptr);
  }

  double decision(const DyadInstance& inst) const { return svm.decision(features(inst)); }

  /// Squashed margin, so predicted_label() agrees with sign(decision).
  double probability(const DyadInstance& inst) const { return nn::sigmoid(decision(inst)); }

  Scorer scorer() const {
    return [this](const DyadInstance& inst) { return probability(inst); };
  }

  std::size_t dimension() const { return 2 * vectorizer.size() + (include_structural ? 6 : 0); }

  std::string serialize() const {
    std::string out = "powerdyad-baseline " + std::to_string(kVersion) + "\n";
    out += "ngram_range " + std::to_string(vectorizer.n_min) + " " + std::to_string(vectorizer.n_max) + "\n";
    out += std::string("weighting ") + (vectorizer.weighting == NgramWeighting::count ? "count" : "binary") + "\n";
    out += "max_features " + std::to_string(vectorizer.max_features) + "\n";
    out += "include_structural " + std::to_string(include_structural ? 1 : 0) + "\n";
    out += "standardizer " + format_double(standardizer.mean[0]) + " " + format_double(standardizer.mean[1]) + " " +
           format_double(standardizer.stddev[0]) + " " + format_double(standardizer.stddev[1]) + "\n";
    out += "c " + format_double(c) + "\n";
    out += "bias " + format_double(svm.bias) + "\n";
    out += "vocabulary " + std::to_string(vectorizer.size()) + "\n";
    for (std::size_t i = 0; i < vectorizer.size(); ++i) out += vectorizer.ngrams()[i] + "\n";
    out += "weights " + std::to_string(svm.weights.size()) + "\n";
    for (double w : svm.weights) out += format_double(w) + "\n";
    return out;
  }

  static BaselineModel parse(std::string_view text) {
    const auto lines = split_lines(text);
    std::size_t pos = 0;
    auto next = [&]() -> const std::string& {
      if (pos >= lines.size()) throw DataError("baseline model: unexpected end of file");
      return lines[pos++];
    };
    auto fields = [&](const char* key, std::size_t count) {
      auto f = split_on(next(), ' ');
      if (f.empty() || f[0] != key || f.size() != count + 1)
        throw DataError(std::string("baseline model: expected '") + key + "' at line " + std::to_string(pos));
      return std::vector<std::string>(f.begin() + 1, f.end());
    };
    auto num = [&](const std::string& s) {
      double v;
      if (!parse_double(s, v)) throw DataError("baseline model: bad number '" + s + "' at line " + std::to_string(pos));
      return v;
    };
    BaselineModel m;
    const auto header = fields("powerdyad-baseline", 1);
    if (header[0] != std::to_string(kVersion)) throw DataError("baseline model: unsupported version " + header[0]);
    const auto range = fields("ngram_range", 2);
    m.vectorizer.n_min = static_cast<int>(num(range[0]));
    m.vectorizer.n_max = static_cast<int>(num(range[1]));
    m.vectorizer.weighting = fields("weighting", 1)[0] == "count" ? NgramWeighting::count : NgramWeighting::binary;
    m.vectorizer.max_features = static_cast<std::size_t>(num(fields("max_features", 1)[0]));
    m.include_structural = fields("include_structural", 1)[0] == "1";
    const auto st = fields("standardizer", 4);
    m.standardizer.mean = {num(st[0]), num(st[1])};
    m.standardizer.stddev = {num(st[2]), num(st[3])};
    m.c = num(fields("c", 1)[0]);
    m.svm.bias = num(fields("bias", 1)[0]);
    const auto vocab = static_cast<std::size_t>(num(fields("vocabulary", 1)[0]));
    std::vector<std::string> ngrams;
    for (std::size_t i = 0; i < vocab; ++i) ngrams.push_back(next());
    m.vectorizer.set_vocabulary(ngrams);
    if (m.vectorizer.size() != vocab) throw DataError("baseline model: duplicate vocabulary entries");
    const auto nw = static_cast<std::size_t>(num(fields("weights", 1)[0]));
    if (nw != m.dimension()) throw DataError("baseline model: weight count does not match vocabulary");
    for (std::size_t i = 0; i < nw; ++i) m.svm.weights.push_back(num(next()));
    return m;
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static BaselineModel load(const std::string& path) { return parse(read_file(path)); }
};

struct BaselineResult {
  BaselineModel model;
  double dev_accuracy = 0.0;
  std::vector<std::pair<double, double>> c_scores;  // (C, dev accuracy)
};

/// Fits the vectorizer on train, trains one SVM per C and keeps the best on
/// dev (ties go to the smaller C).
inline BaselineResult train_baseline(std::span<const DyadInstance> train_set, std::span<const DyadInstance> dev_set,
                                     const BaselineOptions& options = {}) {
  if (train_set.empty()) throw UsageError("baseline: empty training split");
  int positives = 0;
  for (const auto& inst : train_set) positives += inst.label;
  if (positives == 0 || positives == static_cast<int>(train_set.size())) {
    throw DataError("baseline: training split has a single class (" + std::to_string(positives) + " of " +
                    std::to_string(train_set.size()) + " positive)");
  }
  BaselineModel model;
  model.vectorizer.n_min = options.n_min;
  model.vectorizer.n_max = options.n_max;
  model.vectorizer.weighting = options.weighting;
  model.vectorizer.max_features = options.max_features;
  model.vectorizer.fit(train_set);
  model.include_structural = options.include_structural;
  model.standardizer = Standardizer::fit(train_set);

  std::vector<SparseVector> xs;
  std::vector<int> ys;
  for (const auto& inst : train_set) {
    xs.push_back(model.features(inst));
    ys.push_back(inst.label);
  }
  std::vector<SparseVector> dev_xs;
  for (const auto& inst : dev_set) dev_xs.push_back(model.features(inst));

  BaselineResult result;
  double best_acc = -1.0;
  std::vector<double> grid = options.c_grid;
  std::sort(grid.begin(), grid.end());
  for (double c : grid) {
    auto svm = LinearSvm::fit(xs, ys, model.dimension(), c, options.max_iterations, options.tolerance, options.seed);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dev_xs.size(); ++i)
      if (predicted_label(nn::sigmoid(svm.decision(dev_xs[i]))) == dev_set[i].label) ++correct;
    const double acc = accuracy_ratio(correct, dev_xs.size());
    result.c_scores.emplace_back(c, acc);
    if (acc > best_acc) {
      best_acc = acc;
      model.c = c;
      model.svm = std::move(svm);
    }
  }
  result.dev_accuracy = best_acc;
  result.model = std::move(model);
  return result;
}

}  // namespace powerdyad
