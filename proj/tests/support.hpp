#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "powerdyad/powerdyad.hpp"
#include "powerdyad/synthetic.hpp"

namespace testing_support {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("powerdyad_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::shared_ptr<const powerdyad::EmbeddingTable> table_for(const std::vector<powerdyad::DyadInstance>& instances,
                                                                  int dim, std::uint64_t seed = 7) {
  return std::make_shared<const powerdyad::EmbeddingTable>(
      powerdyad::synthetic::random_embeddings(powerdyad::synthetic::vocabulary_of(instances), dim, seed));
}

/// Writes instances + a ratio split as a build store, plus an embedding file.
inline void write_store(const fs::path& dir, const std::vector<powerdyad::DyadInstance>& instances,
                        const powerdyad::SplitManifest& manifest) {
  fs::create_directories(dir);
  std::string lines;
  for (const auto& inst : instances) lines += powerdyad::instance_to_json(inst).dump() + "\n";
  powerdyad::write_file((dir / powerdyad::commands::kInstancesFile).string(), lines);
  powerdyad::write_file((dir / powerdyad::commands::kSplitsFile).string(), manifest.serialize());
}

inline void write_embedding_file(const fs::path& path, const std::vector<powerdyad::DyadInstance>& instances, int dim,
                                 std::uint64_t seed = 7) {
  const auto vocab = powerdyad::synthetic::vocabulary_of(instances);
  const auto table = powerdyad::synthetic::random_embeddings(vocab, dim, seed);
  powerdyad::write_file(path.string(), powerdyad::serialize_embeddings(vocab, table));
}

/// Small model sizes that keep unit tests fast.
inline powerdyad::ModelConfig toy_model(powerdyad::Architecture arch, int dim = 6) {
  powerdyad::ModelConfig c;
  c.architecture = arch;
  c.embedding_dim = dim;
  c.email_cap = 12;
  c.doc_cap = 30;
  c.max_emails_per_direction = 4;
  c.conv_filters = 3;
  c.kernel_widths = {2, 3};
  c.lstm_hidden = 4;
  c.dense_hidden = 5;
  c.seed = 11;
  return c;
}

inline std::vector<powerdyad::DyadInstance> subset(const std::vector<powerdyad::DyadInstance>& all,
                                                   const powerdyad::SplitManifest& m, powerdyad::Split s) {
  std::vector<powerdyad::DyadInstance> out;
  for (const auto& inst : all)
    if (m.assignments.at(inst.id) == s) out.push_back(inst);
  return out;
}

}  // namespace testing_support

namespace testing_support {

struct GradCheckResult {
  std::size_t total = 0;
  std::size_t within = 0;
  double worst = 0.0;
  std::string worst_name;

  double fraction() const { return total ? static_cast<double>(within) / static_cast<double>(total) : 0.0; }
};

/// Central differences on the summed loss against accumulate_gradient.
/// rel = |a - n| / max(|a|, |n|, floor).
inline GradCheckResult gradient_check(powerdyad::PowerModel& model,
                                      const std::vector<std::pair<powerdyad::DyadInput, int>>& batch,
                                      double h = 1e-5, double tol = 1e-4, double floor = 1e-6) {
  auto total_loss = [&] {
    double l = 0.0;
    for (const auto& [in, y] : batch) l += model.loss(in, y);
    return l;
  };
  auto grad = model.parameters().zeros_like();
  for (const auto& [in, y] : batch) model.accumulate_gradient(in, y, grad);
  GradCheckResult r;
  r.total = model.parameters().scalar_count();
  for (std::size_t i = 0; i < r.total; ++i) {
    double& p = model.parameters().flat(i);
    const double saved = p;
    p = saved + h;
    const double up = total_loss();
    p = saved - h;
    const double down = total_loss();
    p = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grad.flat(i);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    if (rel <= tol) ++r.within;
    if (rel > r.worst) r.worst = rel, r.worst_name = model.parameters().flat_name(i);
  }
  return r;
}

}  // namespace testing_support
