#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "powerdyad/corpus.hpp"
#include "powerdyad/error.hpp"
#include "powerdyad/features.hpp"
#include "powerdyad/nn/params.hpp"

namespace powerdyad {

enum class Architecture { batched_cnn, separated_cnn, sequential_cnn_lstm };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::batched_cnn: return "batched_cnn";
    case Architecture::separated_cnn: return "separated_cnn";
    case Architecture::sequential_cnn_lstm: return "sequential_cnn_lstm";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "batched_cnn") return Architecture::batched_cnn;
  if (s == "separated_cnn") return Architecture::separated_cnn;
  if (s == "sequential_cnn_lstm") return Architecture::sequential_cnn_lstm;
  throw UsageError("unknown architecture: " + std::string(s));
}

enum class EmailMerge { mean, max };

struct ModelConfig {
  Architecture architecture = Architecture::separated_cnn;
  int embedding_dim = 100;
  int email_cap = 200;
  int doc_cap = 0;  // batched document cap; 0 means 4 * email_cap
  int max_emails_per_direction = 16;
  int conv_filters = 100;
  std::vector<int> kernel_widths{3, 4, 5};
  nn::Activation conv_activation = nn::Activation::relu;
  EmailMerge email_merge = EmailMerge::mean;
  int lstm_hidden = 64;
  int dense_hidden = 64;
  double dropout_rate = 0.0;
  bool shared_encoder = true;  // one encoder (and one LSTM) for both directions
  std::uint64_t seed = 0;

  int document_cap() const { return doc_cap > 0 ? doc_cap : 4 * email_cap; }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v < 1) throw UsageError(std::string("model config: ") + what + " must be positive");
    };
    positive(embedding_dim, "embedding_dim");
    positive(email_cap, "email_cap");
    positive(max_emails_per_direction, "max_emails_per_direction");
    positive(conv_filters, "conv_filters");
    positive(dense_hidden, "dense_hidden");
    if (architecture == Architecture::sequential_cnn_lstm) positive(lstm_hidden, "lstm_hidden");
    if (kernel_widths.empty()) throw UsageError("model config: kernel_widths is empty");
    const int text_cap = architecture == Architecture::batched_cnn ? document_cap() : email_cap;
    for (int w : kernel_widths) {
      positive(w, "kernel width");
      if (w > text_cap) throw UsageError("model config: kernel width " + std::to_string(w) + " exceeds text cap");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("model config: dropout_rate must be in [0,1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"architecture", to_string(c.architecture)},
          {"embedding_dim", c.embedding_dim},
          {"email_cap", c.email_cap},
          {"doc_cap", c.document_cap()},
          {"max_emails_per_direction", c.max_emails_per_direction},
          {"conv_filters", c.conv_filters},
          {"kernel_widths", c.kernel_widths},
          {"conv_activation", nn::to_string(c.conv_activation)},
          {"pooling", "global_max"},
          {"email_merge", c.email_merge == EmailMerge::mean ? "mean" : "max"},
          {"lstm_hidden", c.lstm_hidden},
          {"dense_hidden", c.dense_hidden},
          {"dense_activation", "relu"},
          {"dropout_rate", c.dropout_rate},
          {"dropout_placement", "cnn_outputs,dense_output"},
          {"shared_encoder", c.shared_encoder},
          {"fusion_order", "a_branch,b_branch,a_structural,b_structural,a_absent,b_absent"},
          {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown enum values are usage errors.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  try {
    if (j.contains("architecture")) c.architecture = parse_architecture(j["architecture"].get<std::string>());
    if (j.contains("embedding_dim")) c.embedding_dim = j["embedding_dim"].get<int>();
    if (j.contains("email_cap")) c.email_cap = j["email_cap"].get<int>();
    if (j.contains("doc_cap")) c.doc_cap = j["doc_cap"].get<int>();
    if (j.contains("max_emails_per_direction")) c.max_emails_per_direction = j["max_emails_per_direction"].get<int>();
    if (j.contains("conv_filters")) c.conv_filters = j["conv_filters"].get<int>();
    if (j.contains("kernel_widths")) c.kernel_widths = j["kernel_widths"].get<std::vector<int>>();
    if (j.contains("conv_activation")) c.conv_activation = nn::parse_activation(j["conv_activation"].get<std::string>());
    if (j.contains("pooling") && j["pooling"] != "global_max") throw UsageError("only global_max pooling is supported");
    if (j.contains("dense_activation") && j["dense_activation"] != "relu")
      throw UsageError("only relu dense activation is supported");
    if (j.contains("email_merge")) {
      const auto m = j["email_merge"].get<std::string>();
      if (m != "mean" && m != "max") throw UsageError("email_merge must be mean or max");
      c.email_merge = m == "mean" ? EmailMerge::mean : EmailMerge::max;
    }
    if (j.contains("lstm_hidden")) c.lstm_hidden = j["lstm_hidden"].get<int>();
    if (j.contains("dense_hidden")) c.dense_hidden = j["dense_hidden"].get<int>();
    if (j.contains("dropout_rate")) c.dropout_rate = j["dropout_rate"].get<double>();
    if (j.contains("shared_encoder")) c.shared_encoder = j["shared_encoder"].get<bool>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model inputs
// ---------------------------------------------------------------------------

/// Everything one participant sent to the other.  `emails` holds token ids
/// of the most recent max_emails_per_direction emails in chronological order,
/// each capped at email_cap; `document` is the batched concatenation.
struct DirectionInput {
  std::vector<std::vector<TokenId>> emails;
  std::vector<TokenId> document;
  StructuralFeatures raw;
  std::array<double, 2> structural{0.0, 0.0};  // standardized
  int slots = 0;

  bool absent() const { return emails.empty(); }

  std::vector<bool> presence_mask() const {
    std::vector<bool> mask(static_cast<std::size_t>(slots), false);
    for (std::size_t i = 0; i < emails.size() && i < mask.size(); ++i) mask[i] = true;
    return mask;
  }

  /// Matrix for a slot; padded slots are all zeros.
  Eigen::MatrixXd email_matrix(std::size_t slot, const EmbeddingTable& table, int cap) const {
    if (slot >= emails.size()) return Eigen::MatrixXd::Zero(cap, table.dimension());
    return embed_ids(emails[slot], table, cap);
  }
};

struct DyadInput {
  DirectionInput a;  // person_a -> person_b
  DirectionInput b;  // person_b -> person_a
};

class FeatureBuilder {
 public:
  FeatureBuilder(std::shared_ptr<const EmbeddingTable> table, const ModelConfig& config, Standardizer standardizer)
      : table_(std::move(table)), config_(config), standardizer_(standardizer) {
    if (table_->dimension() != config_.embedding_dim) {
      throw DataError("embedding table dimension " + std::to_string(table_->dimension()) +
                      " does not match model embedding_dim " + std::to_string(config_.embedding_dim));
    }
  }

  DirectionInput direction(std::span<const Email> emails) const {
    DirectionInput d;
    d.slots = config_.max_emails_per_direction;
    d.raw = structural_features(emails);
    d.structural = standardizer_.apply(d.raw);
    const auto keep = std::min<std::size_t>(emails.size(), static_cast<std::size_t>(config_.max_emails_per_direction));
    for (std::size_t i = emails.size() - keep; i < emails.size(); ++i) {
      d.emails.push_back(tokenize_email(emails[i], *table_, config_.email_cap).token_ids);
    }
    const auto doc_cap = static_cast<std::size_t>(config_.document_cap());
    for (std::size_t i = 0; i < emails.size() && d.document.size() < doc_cap; ++i) {
      if (i > 0) d.document.push_back(EmbeddingTable::kSeparator);
      for (const auto& tok : tokenize(emails[i].text())) {
        if (d.document.size() >= doc_cap) break;
        d.document.push_back(table_->id_of(tok));
      }
    }
    if (d.document.size() > doc_cap) d.document.resize(doc_cap);
    return d;
  }

  DyadInput build(const DyadInstance& inst) const {
    return {direction(inst.emails_a_to_b), direction(inst.emails_b_to_a)};
  }

  const Standardizer& standardizer() const { return standardizer_; }

 private:
  std::shared_ptr<const EmbeddingTable> table_;
  ModelConfig config_;
  Standardizer standardizer_;
};

struct PowerScore {
  double probability = 0.5;
  bool a_superior = true;  // probability >= 0.5
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

inline constexpr double kLossEpsilon = 1e-7;

/// Binary cross-entropy with the probability clamped to [eps, 1 - eps].
inline double binary_cross_entropy(double p, int label) {
  const double q = std::clamp(p, kLossEpsilon, 1.0 - kLossEpsilon);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

/// d loss / d logit; zero where the clamp is active.
inline double binary_cross_entropy_logit_grad(double p, int label) {
  if (p < kLossEpsilon || p > 1.0 - kLossEpsilon) return 0.0;
  return p - static_cast<double>(label);
}

// ---------------------------------------------------------------------------
// PowerModel
// ---------------------------------------------------------------------------

class PowerModel {
 public:
  enum class Side { a = 0, b = 1 };

  PowerModel(ModelConfig config, std::shared_ptr<const EmbeddingTable> table)
      : config_(std::move(config)), table_(std::move(table)) {
    config_.validate();
    if (table_->dimension() != config_.embedding_dim) {
      throw DataError("embedding table dimension " + std::to_string(table_->dimension()) +
                      " does not match model embedding_dim " + std::to_string(config_.embedding_dim));
    }
    build_layout();
    initialize();
  }

  /// Adopts trained parameters after checking names and shapes.
  PowerModel(ModelConfig config, std::shared_ptr<const EmbeddingTable> table, nn::ParameterSet params)
      : PowerModel(std::move(config), std::move(table)) {
    params_.check_same_layout(params);
    params_ = std::move(params);
  }

  const ModelConfig& config() const { return config_; }
  const EmbeddingTable& table() const { return *table_; }
  std::shared_ptr<const EmbeddingTable> table_ptr() const { return table_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  int encoding_size() const { return config_.conv_filters * static_cast<int>(config_.kernel_widths.size()); }

  int direction_size() const {
    return config_.architecture == Architecture::sequential_cnn_lstm ? config_.lstm_hidden : encoding_size();
  }

  int fusion_size() const { return 2 * direction_size() + 6; }

  // -- inference ------------------------------------------------------------

  double logit(const DyadInput& in) const {
    Trace t;
    return forward(in, t, nullptr);
  }

  PowerScore score(const DyadInput& in) const {
    const double p = nn::sigmoid(logit(in));
    return {p, p >= 0.5};
  }

  /// CNN encoding of one (cap x dim) matrix: per kernel width, convolution
  /// over the token axis, activation, global max pooling; concatenated.
  Eigen::VectorXd encode_email(const Eigen::MatrixXd& matrix, Side side = Side::a) const {
    ConvTrace tr;
    return conv_forward(matrix, encoder(side), tr);
  }

  Eigen::VectorXd direction_representation(const DirectionInput& d, Side side) const {
    DirectionTrace tr;
    return direction_forward(d, side, tr, nullptr);
  }

  /// A-branch, B-branch, A-structural, B-structural, A-absent, B-absent.
  Eigen::VectorXd fused(const DyadInput& in) const {
    Trace t;
    forward(in, t, nullptr);
    return t.fused;
  }

  // -- training -------------------------------------------------------------

  /// Adds d(loss)/d(params) into `grad` and returns the loss.  With a
  /// generator, dropout is active.
  double accumulate_gradient(const DyadInput& in, int label, nn::ParameterSet& grad, Rng* dropout = nullptr) const {
    Trace t;
    const double z = forward(in, t, config_.dropout_rate > 0.0 ? dropout : nullptr);
    const double p = nn::sigmoid(z);
    const double loss = binary_cross_entropy(p, label);
    backward(t, binary_cross_entropy_logit_grad(p, label), grad);
    return loss;
  }

  double loss(const DyadInput& in, int label) const { return binary_cross_entropy(nn::sigmoid(logit(in)), label); }

 private:
  struct EncoderLayout {
    std::vector<int> weight, bias;  // per kernel width
  };
  struct LstmLayout {
    int weight = -1, bias = -1;
  };

  struct ConvTrace {
    Eigen::MatrixXd x;
    std::vector<std::vector<Eigen::Index>> argmax;  // [width][filter]
    std::vector<Eigen::VectorXd> zmax;              // [width] -> filter
    Eigen::VectorXd drop;                           // empty when dropout inactive
  };

  struct LstmStep {
    Eigen::VectorXd x, h_prev, c_prev, i, f, g, o, tanh_c;
  };

  struct DirectionTrace {
    bool absent = true;
    std::vector<ConvTrace> convs;
    std::vector<Eigen::VectorXd> encodings;  // after dropout
    std::vector<int> max_source;             // max merge: which email won each coordinate
    std::vector<LstmStep> steps;
  };

  struct Trace {
    DirectionTrace dir[2];
    Eigen::VectorXd fused, pre, hidden, drop;
  };

  void build_layout() {
    const int d = config_.embedding_dim;
    const int f = config_.conv_filters;
    auto add_encoder = [&](const std::string& prefix) {
      EncoderLayout e;
      for (int w : config_.kernel_widths) {
        e.weight.push_back(params_.add(prefix + ".conv" + std::to_string(w) + ".weight", f, w * d));
        e.bias.push_back(params_.add(prefix + ".conv" + std::to_string(w) + ".bias", f, 1));
      }
      return e;
    };
    if (config_.shared_encoder) {
      encoders_[0] = encoders_[1] = add_encoder("encoder");
    } else {
      encoders_[0] = add_encoder("encoder_a");
      encoders_[1] = add_encoder("encoder_b");
    }
    if (config_.architecture == Architecture::sequential_cnn_lstm) {
      const int h = config_.lstm_hidden;
      const int in = encoding_size();
      auto add_lstm = [&](const std::string& prefix) {
        LstmLayout l;
        l.weight = params_.add(prefix + ".weight", 4 * h, in + h);
        l.bias = params_.add(prefix + ".bias", 4 * h, 1);
        return l;
      };
      if (config_.shared_encoder) {
        lstms_[0] = lstms_[1] = add_lstm("lstm");
      } else {
        lstms_[0] = add_lstm("lstm_a");
        lstms_[1] = add_lstm("lstm_b");
      }
    }
    dense_w_ = params_.add("dense.weight", config_.dense_hidden, fusion_size());
    dense_b_ = params_.add("dense.bias", config_.dense_hidden, 1);
    out_w_ = params_.add("output.weight", 1, config_.dense_hidden);
    out_b_ = params_.add("output.bias", 1, 1);
  }

  void initialize() {
    Rng rng(mix_seed(config_.seed, "init"));
    for (auto& t : params_.tensors()) {
      if (t.name.ends_with(".bias")) continue;  // zero
      Eigen::Index fan_in = t.value.cols(), fan_out = t.value.rows();
      if (t.name.find("lstm") != std::string::npos) fan_out /= 4;
      nn::glorot_uniform(t.value, fan_in, fan_out, rng);
    }
    // Forget-gate bias starts at one.
    for (std::size_t s = 0; s < (config_.shared_encoder ? 1u : 2u); ++s) {
      if (lstms_[s].bias < 0) continue;
      params_[lstms_[s].bias].middleRows(config_.lstm_hidden, config_.lstm_hidden).setOnes();
    }
  }

  const EncoderLayout& encoder(Side s) const { return encoders_[static_cast<int>(s)]; }

  Eigen::VectorXd dropout_mask(Eigen::Index n, Rng* rng) const {
    if (!rng) return {};
    const double keep = 1.0 - config_.dropout_rate;
    Eigen::VectorXd m(n);
    for (Eigen::Index i = 0; i < n; ++i) m(i) = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    return m;
  }

  Eigen::VectorXd conv_forward(const Eigen::MatrixXd& x, const EncoderLayout& enc, ConvTrace& tr) const {
    const int d = config_.embedding_dim;
    const int f = config_.conv_filters;
    if (x.cols() != d) throw DataError("encoder input has wrong embedding dimension");
    Eigen::VectorXd out(encoding_size());
    tr.x = x;
    tr.argmax.assign(config_.kernel_widths.size(), {});
    tr.zmax.assign(config_.kernel_widths.size(), {});
    const Eigen::Index rows = x.rows();
    for (std::size_t k = 0; k < config_.kernel_widths.size(); ++k) {
      const int w = config_.kernel_widths[k];
      if (rows < w) throw DataError("encoder input shorter than kernel width");
      const Eigen::Index positions = rows - w + 1;
      const auto& weight = params_[enc.weight[k]];
      Eigen::MatrixXd z = x.topRows(positions) * weight.leftCols(d).transpose();
      for (int j = 1; j < w; ++j) z.noalias() += x.middleRows(j, positions) * weight.middleCols(j * d, d).transpose();
      z.rowwise() += params_[enc.bias[k]].col(0).transpose();
      auto& am = tr.argmax[k];
      auto& zm = tr.zmax[k];
      am.resize(static_cast<std::size_t>(f));
      zm.resize(f);
      for (int c = 0; c < f; ++c) {
        Eigen::Index best = 0;
        double v = z(0, c);
        for (Eigen::Index t = 1; t < positions; ++t) {
          if (z(t, c) > v) v = z(t, c), best = t;
        }
        am[static_cast<std::size_t>(c)] = best;
        zm(c) = v;
        out(static_cast<Eigen::Index>(k) * f + c) = nn::activate(config_.conv_activation, v);
      }
    }
    return out;
  }

  void conv_backward(const ConvTrace& tr, const Eigen::VectorXd& dout, const EncoderLayout& enc,
                     nn::ParameterSet& grad) const {
    const int d = config_.embedding_dim;
    const int f = config_.conv_filters;
    for (std::size_t k = 0; k < config_.kernel_widths.size(); ++k) {
      const int w = config_.kernel_widths[k];
      auto& gw = grad[enc.weight[k]];
      auto& gb = grad[enc.bias[k]];
      for (int c = 0; c < f; ++c) {
        const double g = dout(static_cast<Eigen::Index>(k) * f + c) *
                         nn::activation_derivative(config_.conv_activation, tr.zmax[k](c));
        if (g == 0.0) continue;
        const auto t = tr.argmax[k][static_cast<std::size_t>(c)];
        for (int j = 0; j < w; ++j) gw.row(c).segment(j * d, d) += g * tr.x.row(t + j);
        gb(c, 0) += g;
      }
    }
  }

  Eigen::VectorXd encode_with_trace(const std::vector<TokenId>& ids, int cap, Side side, DirectionTrace& tr,
                                    Rng* rng) const {
    ConvTrace ct;
    Eigen::VectorXd e = conv_forward(embed_ids(ids, *table_, cap), encoder(side), ct);
    ct.drop = dropout_mask(e.size(), rng);
    if (ct.drop.size()) e = e.cwiseProduct(ct.drop);
    tr.convs.push_back(std::move(ct));
    return e;
  }

  Eigen::VectorXd direction_forward(const DirectionInput& d, Side side, DirectionTrace& tr, Rng* rng) const {
    tr = {};
    tr.absent = d.absent();
    const auto n = static_cast<Eigen::Index>(direction_size());
    if (tr.absent) return Eigen::VectorXd::Zero(n);
    switch (config_.architecture) {
      case Architecture::batched_cnn: {
        tr.encodings.push_back(encode_with_trace(d.document, config_.document_cap(), side, tr, rng));
        return tr.encodings.front();
      }
      case Architecture::separated_cnn: {
        for (const auto& ids : d.emails) tr.encodings.push_back(encode_with_trace(ids, config_.email_cap, side, tr, rng));
        return merge(tr);
      }
      case Architecture::sequential_cnn_lstm: {
        for (const auto& ids : d.emails) tr.encodings.push_back(encode_with_trace(ids, config_.email_cap, side, tr, rng));
        return lstm_forward(tr, lstms_[static_cast<int>(side)]);
      }
    }
    return Eigen::VectorXd::Zero(n);
  }

  /// Order-independent reduction: the mean sums encodings in a canonical
  /// (lexicographic) order so any permutation gives identical bits.
  Eigen::VectorXd merge(DirectionTrace& tr) const {
    const auto& encs = tr.encodings;
    const Eigen::Index n = encs.front().size();
    if (config_.email_merge == EmailMerge::mean) {
      std::vector<std::size_t> order(encs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return std::lexicographical_compare(encs[x].data(), encs[x].data() + n, encs[y].data(), encs[y].data() + n);
      });
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
      for (auto i : order) sum += encs[i];
      return sum / static_cast<double>(encs.size());
    }
    Eigen::VectorXd best = encs.front();
    tr.max_source.assign(static_cast<std::size_t>(n), 0);
    for (std::size_t e = 1; e < encs.size(); ++e) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (encs[e](i) > best(i)) best(i) = encs[e](i), tr.max_source[static_cast<std::size_t>(i)] = static_cast<int>(e);
      }
    }
    return best;
  }

  Eigen::VectorXd lstm_forward(DirectionTrace& tr, const LstmLayout& l) const {
    const int h = config_.lstm_hidden;
    const auto& w = params_[l.weight];
    const auto& b = params_[l.bias];
    const Eigen::Index in = encoding_size();
    Eigen::VectorXd hs = Eigen::VectorXd::Zero(h), cs = Eigen::VectorXd::Zero(h);
    for (const auto& x : tr.encodings) {
      LstmStep s;
      s.x = x;
      s.h_prev = hs;
      s.c_prev = cs;
      const Eigen::VectorXd z = w.leftCols(in) * x + w.rightCols(h) * hs + b.col(0);
      s.i = z.segment(0, h).unaryExpr([](double v) { return nn::sigmoid(v); });
      s.f = z.segment(h, h).unaryExpr([](double v) { return nn::sigmoid(v); });
      s.g = z.segment(2 * h, h).array().tanh();
      s.o = z.segment(3 * h, h).unaryExpr([](double v) { return nn::sigmoid(v); });
      cs = s.f.cwiseProduct(cs) + s.i.cwiseProduct(s.g);
      s.tanh_c = cs.array().tanh();
      hs = s.o.cwiseProduct(s.tanh_c);
      tr.steps.push_back(std::move(s));
    }
    return hs;
  }

  /// Returns the gradient with respect to each step's input.
  std::vector<Eigen::VectorXd> lstm_backward(const DirectionTrace& tr, const LstmLayout& l, const Eigen::VectorXd& dh_last,
                                             nn::ParameterSet& grad) const {
    const int h = config_.lstm_hidden;
    const Eigen::Index in = encoding_size();
    const auto& w = params_[l.weight];
    auto& gw = grad[l.weight];
    auto& gb = grad[l.bias];
    std::vector<Eigen::VectorXd> dx(tr.steps.size());
    Eigen::VectorXd dh = dh_last, dc = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd dz(4 * h);
    for (std::size_t t = tr.steps.size(); t-- > 0;) {
      const auto& s = tr.steps[t];
      const Eigen::ArrayXd one = Eigen::ArrayXd::Ones(h);
      dc += (dh.array() * s.o.array() * (one - s.tanh_c.array().square())).matrix();
      const Eigen::ArrayXd d_o = dh.array() * s.tanh_c.array();
      const Eigen::ArrayXd d_i = dc.array() * s.g.array();
      const Eigen::ArrayXd d_g = dc.array() * s.i.array();
      const Eigen::ArrayXd d_f = dc.array() * s.c_prev.array();
      dz.segment(0, h) = (d_i * s.i.array() * (one - s.i.array())).matrix();
      dz.segment(h, h) = (d_f * s.f.array() * (one - s.f.array())).matrix();
      dz.segment(2 * h, h) = (d_g * (one - s.g.array().square())).matrix();
      dz.segment(3 * h, h) = (d_o * s.o.array() * (one - s.o.array())).matrix();
      gw.leftCols(in).noalias() += dz * s.x.transpose();
      gw.rightCols(h).noalias() += dz * s.h_prev.transpose();
      gb.col(0) += dz;
      dx[t] = w.leftCols(in).transpose() * dz;
      dh = w.rightCols(h).transpose() * dz;
      dc = dc.cwiseProduct(s.f);
    }
    return dx;
  }

  void direction_backward(const DirectionTrace& tr, Side side, const Eigen::VectorXd& drep, nn::ParameterSet& grad) const {
    if (tr.absent) return;
    const auto& enc = encoder(side);
    auto conv_back = [&](std::size_t e, Eigen::VectorXd g) {
      const auto& ct = tr.convs[e];
      if (ct.drop.size()) g = g.cwiseProduct(ct.drop);
      conv_backward(ct, g, enc, grad);
    };
    switch (config_.architecture) {
      case Architecture::batched_cnn:
        conv_back(0, drep);
        break;
      case Architecture::separated_cnn:
        if (config_.email_merge == EmailMerge::mean) {
          const Eigen::VectorXd g = drep / static_cast<double>(tr.convs.size());
          for (std::size_t e = 0; e < tr.convs.size(); ++e) conv_back(e, g);
        } else {
          for (std::size_t e = 0; e < tr.convs.size(); ++e) {
            Eigen::VectorXd g = Eigen::VectorXd::Zero(drep.size());
            for (Eigen::Index i = 0; i < drep.size(); ++i)
              if (tr.max_source[static_cast<std::size_t>(i)] == static_cast<int>(e)) g(i) = drep(i);
            conv_back(e, g);
          }
        }
        break;
      case Architecture::sequential_cnn_lstm: {
        const auto dx = lstm_backward(tr, lstms_[static_cast<int>(side)], drep, grad);
        for (std::size_t e = 0; e < tr.convs.size(); ++e) conv_back(e, dx[e]);
        break;
      }
    }
  }

  double forward(const DyadInput& in, Trace& t, Rng* rng) const {
    if (in.a.absent() && in.b.absent()) throw DataError("cannot score a dyad with no emails in either direction");
    const Eigen::Index r = direction_size();
    t.fused.resize(fusion_size());
    t.fused.segment(0, r) = direction_forward(in.a, Side::a, t.dir[0], rng);
    t.fused.segment(r, r) = direction_forward(in.b, Side::b, t.dir[1], rng);
    t.fused(2 * r) = in.a.structural[0];
    t.fused(2 * r + 1) = in.a.structural[1];
    t.fused(2 * r + 2) = in.b.structural[0];
    t.fused(2 * r + 3) = in.b.structural[1];
    t.fused(2 * r + 4) = in.a.absent() ? 1.0 : 0.0;
    t.fused(2 * r + 5) = in.b.absent() ? 1.0 : 0.0;
    t.pre = params_[dense_w_] * t.fused + params_[dense_b_].col(0);
    t.hidden = t.pre.cwiseMax(0.0);
    t.drop = dropout_mask(t.hidden.size(), rng);
    const Eigen::VectorXd h = t.drop.size() ? Eigen::VectorXd(t.hidden.cwiseProduct(t.drop)) : t.hidden;
    return params_[out_w_].row(0).dot(h) + params_[out_b_](0, 0);
  }

  void backward(const Trace& t, double dlogit, nn::ParameterSet& grad) const {
    if (dlogit == 0.0) return;
    const Eigen::VectorXd h = t.drop.size() ? Eigen::VectorXd(t.hidden.cwiseProduct(t.drop)) : t.hidden;
    grad[out_w_].row(0) += dlogit * h.transpose();
    grad[out_b_](0, 0) += dlogit;
    Eigen::VectorXd dh = dlogit * params_[out_w_].row(0).transpose();
    if (t.drop.size()) dh = dh.cwiseProduct(t.drop);
    const Eigen::VectorXd dpre = (t.pre.array() > 0.0).select(dh, 0.0);
    grad[dense_w_].noalias() += dpre * t.fused.transpose();
    grad[dense_b_].col(0) += dpre;
    const Eigen::VectorXd dfused = params_[dense_w_].transpose() * dpre;
    const Eigen::Index r = direction_size();
    direction_backward(t.dir[0], Side::a, dfused.segment(0, r), grad);
    direction_backward(t.dir[1], Side::b, dfused.segment(r, r), grad);
  }

  ModelConfig config_;
  std::shared_ptr<const EmbeddingTable> table_;
  nn::ParameterSet params_;
  EncoderLayout encoders_[2];
  LstmLayout lstms_[2];
  int dense_w_ = -1, dense_b_ = -1, out_w_ = -1, out_b_ = -1;
};

inline std::string display_name(Architecture a) {
  switch (a) {
    case Architecture::batched_cnn: return "Batched-CNN";
    case Architecture::separated_cnn: return "Separated-CNN";
    case Architecture::sequential_cnn_lstm: return "Sequential-CNN-LSTM";
  }
  return "?";
}

}  // namespace powerdyad
