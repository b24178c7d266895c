#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "powerdyad/error.hpp"
#include "powerdyad/util.hpp"

namespace powerdyad::nn {

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
};

/// Ordered collection of named dense tensors.  The same type holds
/// gradients and optimizer moments (see zeros_like).
class ParameterSet {
 public:
  int add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    tensors_.push_back({std::move(name), Eigen::MatrixXd::Zero(rows, cols)});
    return static_cast<int>(tensors_.size()) - 1;
  }

  Eigen::MatrixXd& operator[](int i) { return tensors_[static_cast<std::size_t>(i)].value; }
  const Eigen::MatrixXd& operator[](int i) const { return tensors_[static_cast<std::size_t>(i)].value; }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  std::optional<int> find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].name == name) return static_cast<int>(i);
    return std::nullopt;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  /// Flat addressing across tensors, in tensor order then column-major.
  double& flat(std::size_t i) {
    for (auto& t : tensors_) {
      const auto sz = static_cast<std::size_t>(t.value.size());
      if (i < sz) return t.value.data()[i];
      i -= sz;
    }
    throw std::out_of_range("ParameterSet::flat");
  }

  std::string flat_name(std::size_t i) const {
    for (const auto& t : tensors_) {
      const auto sz = static_cast<std::size_t>(t.value.size());
      if (i < sz) return t.name + "[" + std::to_string(i) + "]";
      i -= sz;
    }
    return "?";
  }

  ParameterSet zeros_like() const {
    ParameterSet z;
    for (const auto& t : tensors_) z.add(t.name, t.value.rows(), t.value.cols());
    return z;
  }

  void set_zero() {
    for (auto& t : tensors_) t.value.setZero();
  }

  void scale(double s) {
    for (auto& t : tensors_) t.value *= s;
  }

  void add_scaled(const ParameterSet& other, double s) {
    for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].value += s * other.tensors_[i].value;
  }

  bool all_finite() const {
    for (const auto& t : tensors_)
      if (!t.value.allFinite()) return false;
    return true;
  }

  /// Throws if names or shapes differ.
  void check_same_layout(const ParameterSet& other) const {
    if (other.tensors_.size() != tensors_.size()) throw DataError("parameter count mismatch");
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      const auto& a = tensors_[i];
      const auto& b = other.tensors_[i];
      if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
        throw DataError("parameter layout mismatch at " + a.name + ": expected " + std::to_string(a.value.rows()) +
                        "x" + std::to_string(a.value.cols()) + ", found " + b.name + " " +
                        std::to_string(b.value.rows()) + "x" + std::to_string(b.value.cols()));
      }
    }
  }

 private:
  std::vector<Tensor> tensors_;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(const ParameterSet& like, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(ParameterSet& params, const ParameterSet& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.tensors().size(); ++i) {
      auto& p = params.tensors()[i].value;
      const auto& g = grad.tensors()[i].value;
      auto& m = m_.tensors()[i].value;
      auto& v = v_.tensors()[i].value;
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  ParameterSet m_, v_;
};

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw UsageError("unknown activation: " + std::string(s));
}

inline double activate(Activation a, double z) { return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

inline double activation_derivative(Activation a, double z) {
  if (a == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(z);
  return 1.0 - t * t;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Glorot-uniform initialization in tensor order.
inline void glorot_uniform(Eigen::MatrixXd& w, Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
}

}  // namespace powerdyad::nn
