#pragma once

#include <chrono>
#include <cmath>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "powerdyad/checkpoint.hpp"
#include "powerdyad/corpus.hpp"
#include "powerdyad/evaluation.hpp"
#include "powerdyad/models.hpp"
#include "powerdyad/nn/params.hpp"

namespace powerdyad {

struct TrainConfig {
  int max_epochs = 70;
  int min_epochs = 30;
  int patience = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_epochs < 1) throw UsageError("train config: max_epochs must be positive");
    if (min_epochs < 0 || min_epochs > max_epochs) throw UsageError("train config: need 0 <= min_epochs <= max_epochs");
    if (patience < 1) throw UsageError("train config: patience must be >= 1");
    if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw UsageError("train config: bad learning_rate");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs},       {"min_epochs", c.min_epochs}, {"patience", c.patience},
          {"batch_size", c.batch_size},       {"learning_rate", c.learning_rate},
          {"optimizer", "adam(0.9,0.999,1e-8)"}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"].get<int>();
    if (j.contains("min_epochs")) c.min_epochs = j["min_epochs"].get<int>();
    if (j.contains("patience")) c.patience = j["patience"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Patience-based early stopping with an epoch floor.  Only strict
/// improvements move the best epoch, so the earliest best is kept.
class EarlyStopping {
 public:
  EarlyStopping(int min_epochs, int max_epochs, int patience)
      : min_epochs_(min_epochs), max_epochs_(max_epochs), patience_(patience) {}

  /// Returns true if `value` is a new best.
  bool observe(int epoch, double value) {
    last_epoch_ = epoch;
    if (best_epoch_ == 0 || value > best_value_) {
      best_epoch_ = epoch;
      best_value_ = value;
      return true;
    }
    return false;
  }

  bool should_stop() const {
    if (last_epoch_ >= max_epochs_) return true;
    return last_epoch_ >= min_epochs_ && last_epoch_ - best_epoch_ >= patience_;
  }

  int best_epoch() const { return best_epoch_; }
  double best_value() const { return best_value_; }

 private:
  int min_epochs_, max_epochs_, patience_;
  int last_epoch_ = 0;
  int best_epoch_ = 0;
  double best_value_ = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_dev_accuracy = 0.0;
  double wall_time_seconds = 0.0;  // metadata, not part of to_json()
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();

  /// Deterministic part of the record.
  nlohmann::json to_json() const {
    auto epochs_json = nlohmann::json::array();
    for (const auto& e : epochs)
      epochs_json.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_accuracy", e.dev_accuracy}});
    return {{"epochs", epochs_json},
            {"best_epoch", best_epoch},
            {"best_dev_accuracy", best_dev_accuracy},
            {"seed", seed},
            {"config", config}};
  }

  static TrainRecord from_json(const nlohmann::json& j) {
    TrainRecord r;
    for (const auto& e : j.at("epochs"))
      r.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("dev_accuracy").get<double>()});
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best_dev_accuracy = j.at("best_dev_accuracy").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
    return r;
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainRecord record;
};

/// Mini-batch training with Adam and dev-set early stopping.  Batches are
/// processed sequentially, so the result is a pure function of the inputs and
/// seeds.  The returned checkpoint holds the best-dev parameters.
inline TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                         std::span<const DyadInstance> train_set, std::span<const DyadInstance> dev_set,
                         std::shared_ptr<const EmbeddingTable> table) {
  train_config.validate();
  model_config.validate();
  if (train_set.empty()) throw UsageError("train: empty training split");
  if (dev_set.empty()) throw UsageError("train: empty dev split");
  {
    std::set<std::string> ids;
    for (const auto& inst : train_set) ids.insert(inst.id);
    for (const auto& inst : dev_set)
      if (ids.count(inst.id)) throw DataError("train and dev splits share instance " + inst.id);
  }
  const auto started = std::chrono::steady_clock::now();

  const auto standardizer = Standardizer::fit(train_set);
  const FeatureBuilder builder(table, model_config, standardizer);
  std::vector<DyadInput> train_inputs, dev_inputs;
  train_inputs.reserve(train_set.size());
  dev_inputs.reserve(dev_set.size());
  for (const auto& inst : train_set) train_inputs.push_back(builder.build(inst));
  for (const auto& inst : dev_set) dev_inputs.push_back(builder.build(inst));

  PowerModel model(model_config, table);
  nn::Adam optimizer(model.parameters(), train_config.learning_rate);
  nn::ParameterSet grad = model.parameters().zeros_like();
  nn::ParameterSet best = model.parameters();

  TrainRecord record;
  record.seed = train_config.seed;
  record.config = {{"model", to_json(model_config)}, {"train", to_json(train_config)}};
  EarlyStopping stopper(train_config.min_epochs, train_config.max_epochs, train_config.patience);

  std::vector<std::size_t> order(train_inputs.size());
  for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(mix_seed(train_config.seed, static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order);
    Rng dropout(mix_seed(mix_seed(train_config.seed, static_cast<std::uint64_t>(epoch)), "dropout"));

    double epoch_loss = 0.0;
    const auto batch = static_cast<std::size_t>(train_config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto end = std::min(order.size(), start + batch);
      grad.set_zero();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        batch_loss += model.accumulate_gradient(train_inputs[order[k]], train_set[order[k]].label, grad, &dropout);
      }
      if (!std::isfinite(batch_loss) || !grad.all_finite()) {
        std::string ids;
        for (std::size_t k = start; k < end; ++k) ids += (k > start ? "," : "") + train_set[order[k]].id;
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " in batch [" + ids + "]");
      }
      grad.scale(1.0 / static_cast<double>(end - start));
      optimizer.step(model.parameters(), grad);
      epoch_loss += batch_loss;
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < dev_inputs.size(); ++i) {
      if (predicted_label(model.score(dev_inputs[i]).probability) == dev_set[i].label) ++correct;
    }
    const double dev_acc = accuracy_ratio(correct, dev_inputs.size());
    record.epochs.push_back({epoch, epoch_loss / static_cast<double>(train_inputs.size()), dev_acc});
    if (stopper.observe(epoch, dev_acc)) best = model.parameters();
    if (stopper.should_stop()) break;
  }
  record.best_epoch = stopper.best_epoch();
  record.best_dev_accuracy = stopper.best_value();
  record.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  TrainResult result;
  result.record = std::move(record);
  auto& ck = result.checkpoint;
  ck.model = model_config;
  ck.train = to_json(train_config);
  ck.embedding_fingerprint = table->fingerprint();
  ck.seed = train_config.seed;
  ck.standardizer = standardizer;
  ck.params = std::move(best);
  return result;
}

}  // namespace powerdyad
