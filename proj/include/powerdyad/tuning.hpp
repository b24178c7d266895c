#pragma once

#include <algorithm>
#include <atomic>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "powerdyad/training.hpp"

namespace powerdyad {

/// Finite axes for random search.  An empty axis keeps the base value.
struct SearchSpace {
  std::vector<nn::Activation> conv_activation;
  std::vector<int> dense_hidden;
  std::vector<int> batch_size;
  std::vector<double> dropout_rate;
  std::vector<int> conv_filters;
  std::vector<int> email_cap;
  std::vector<double> learning_rate;

  std::size_t grid_size() const {
    std::size_t n = 1;
    for (std::size_t s : axis_sizes()) n *= s;
    return n;
  }

  /// Mixed-radix decoding of a grid index into concrete configs.
  std::pair<ModelConfig, TrainConfig> point(std::size_t index, ModelConfig model, TrainConfig train) const {
    const auto sizes = axis_sizes();
    std::array<std::size_t, 7> digit{};
    for (std::size_t a = 0; a < sizes.size(); ++a) {
      digit[a] = index % sizes[a];
      index /= sizes[a];
    }
    if (!conv_activation.empty()) model.conv_activation = conv_activation[digit[0]];
    if (!dense_hidden.empty()) model.dense_hidden = dense_hidden[digit[1]];
    if (!batch_size.empty()) train.batch_size = batch_size[digit[2]];
    if (!dropout_rate.empty()) model.dropout_rate = dropout_rate[digit[3]];
    if (!conv_filters.empty()) model.conv_filters = conv_filters[digit[4]];
    if (!email_cap.empty()) model.email_cap = email_cap[digit[5]];
    if (!learning_rate.empty()) train.learning_rate = learning_rate[digit[6]];
    return {model, train};
  }

 private:
  std::array<std::size_t, 7> axis_sizes() const {
    auto sz = [](std::size_t n) { return n == 0 ? std::size_t{1} : n; };
    return {sz(conv_activation.size()), sz(dense_hidden.size()), sz(batch_size.size()), sz(dropout_rate.size()),
            sz(conv_filters.size()),    sz(email_cap.size()),    sz(learning_rate.size())};
  }
};

inline SearchSpace search_space_from_json(const nlohmann::json& j) {
  SearchSpace s;
  try {
    if (j.contains("conv_activation"))
      for (const auto& a : j["conv_activation"]) s.conv_activation.push_back(nn::parse_activation(a.get<std::string>()));
    if (j.contains("dense_hidden")) s.dense_hidden = j["dense_hidden"].get<std::vector<int>>();
    if (j.contains("batch_size")) s.batch_size = j["batch_size"].get<std::vector<int>>();
    if (j.contains("dropout_rate")) s.dropout_rate = j["dropout_rate"].get<std::vector<double>>();
    if (j.contains("conv_filters")) s.conv_filters = j["conv_filters"].get<std::vector<int>>();
    if (j.contains("email_cap")) s.email_cap = j["email_cap"].get<std::vector<int>>();
    if (j.contains("learning_rate")) s.learning_rate = j["learning_rate"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("search space: ") + e.what());
  }
  return s;
}

inline nlohmann::json to_json(const SearchSpace& s) {
  nlohmann::json acts = nlohmann::json::array();
  for (auto a : s.conv_activation) acts.push_back(nn::to_string(a));
  return {{"conv_activation", acts},       {"dense_hidden", s.dense_hidden}, {"batch_size", s.batch_size},
          {"dropout_rate", s.dropout_rate}, {"conv_filters", s.conv_filters}, {"email_cap", s.email_cap},
          {"learning_rate", s.learning_rate}};
}

inline std::uint64_t config_hash(const ModelConfig& m, const TrainConfig& t) {
  return fnv1a(nlohmann::json{{"model", to_json(m)}, {"train", to_json(t)}}.dump());
}

struct Trial {
  int id = 0;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t hash = 0;
  std::size_t parameter_count = 0;
  bool ok = false;
  double dev_accuracy = 0.0;
  int best_epoch = 0;
  std::string message;

  nlohmann::json log_record() const {
    return {{"trial", id},
            {"config_hash", hex64(hash)},
            {"dev_accuracy", dev_accuracy},
            {"status", ok ? "ok" : "failed"},
            {"parameter_count", parameter_count},
            {"best_epoch", best_epoch},
            {"message", message},
            {"config", {{"model", to_json(model)}, {"train", to_json(train)}}}};
  }
};

/// Higher dev accuracy first, then fewer parameters, then config hash.
/// Failed trials sort last.
inline bool trial_ranks_before(const Trial& x, const Trial& y) {
  if (x.ok != y.ok) return x.ok;
  if (x.dev_accuracy != y.dev_accuracy) return x.dev_accuracy > y.dev_accuracy;
  if (x.parameter_count != y.parameter_count) return x.parameter_count < y.parameter_count;
  if (x.hash != y.hash) return x.hash < y.hash;
  return x.id < y.id;
}

struct TuneResult {
  std::vector<Trial> trials;  // trial-id order (the trial log)
  std::vector<Trial> ranked;
};

/// Random search: the grid is ordered by a seeded hash of each point's index
/// and the first `budget` points are trained.  Trials may run on `jobs`
/// threads; the outcome does not depend on completion order.
inline TuneResult tune(const SearchSpace& space, const ModelConfig& base_model, const TrainConfig& base_train,
                       std::size_t budget, std::span<const DyadInstance> train_set,
                       std::span<const DyadInstance> dev_set, std::shared_ptr<const EmbeddingTable> table,
                       std::uint64_t seed, int jobs = 1) {
  if (budget < 1) throw UsageError("tune: budget must be >= 1");
  const auto grid = space.grid_size();
  std::vector<std::size_t> points(grid);
  for (std::size_t i = 0; i < grid; ++i) points[i] = i;
  std::sort(points.begin(), points.end(), [seed](std::size_t a, std::size_t b) {
    const auto ha = mix_seed(seed, static_cast<std::uint64_t>(a)), hb = mix_seed(seed, static_cast<std::uint64_t>(b));
    return ha != hb ? ha < hb : a < b;
  });
  points.resize(std::min(budget, grid));

  TuneResult result;
  result.trials.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto& t = result.trials[i];
    t.id = static_cast<int>(i);
    std::tie(t.model, t.train) = space.point(points[i], base_model, base_train);
    t.model.validate();
    t.train.validate();
    t.hash = config_hash(t.model, t.train);
  }

  auto run = [&](Trial& t) {
    t.parameter_count = PowerModel(t.model, table).parameter_count();
    try {
      const auto r = train(t.model, t.train, train_set, dev_set, table);
      t.ok = true;
      t.dev_accuracy = r.record.best_dev_accuracy;
      t.best_epoch = r.record.best_epoch;
    } catch (const NumericalError& e) {
      t.ok = false;
      t.message = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(points.size())));
  if (workers == 1) {
    for (auto& t : result.trials) run(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i; (i = next.fetch_add(1)) < result.trials.size();) run(result.trials[i]);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  result.ranked = result.trials;
  std::sort(result.ranked.begin(), result.ranked.end(), trial_ranks_before);
  return result;
}

}  // namespace powerdyad
