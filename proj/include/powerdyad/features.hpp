#pragma once

#include <cctype>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "powerdyad/corpus.hpp"
#include "powerdyad/error.hpp"
#include "powerdyad/util.hpp"

namespace powerdyad {

/// Placed between emails when a direction is batched into one document.
inline constexpr std::string_view kSeparatorToken = "<SEP>";

// ---------------------------------------------------------------------------
// Tokenizer: lowercase, split on whitespace, every ASCII punctuation
// character is its own token.  The reserved symbols pass through untouched.
// ---------------------------------------------------------------------------

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const auto n = text.size();
  auto is_space = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  auto is_punct = [](unsigned char c) { return c < 0x80 && std::ispunct(c); };
  while (i < n) {
    while (i < n && is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= n) break;
    std::size_t end = i;
    while (end < n && !is_space(static_cast<unsigned char>(text[end]))) ++end;
    const auto chunk = text.substr(i, end - i);
    i = end;
    if (chunk == kMaskToken || chunk == kSeparatorToken) {
      tokens.emplace_back(chunk);
      continue;
    }
    std::string word;
    for (unsigned char c : chunk) {
      if (is_punct(c)) {
        if (!word.empty()) tokens.push_back(std::move(word)), word.clear();
        tokens.emplace_back(1, static_cast<char>(c));
      } else {
        word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
      }
    }
    if (!word.empty()) tokens.push_back(std::move(word));
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

enum class OovPolicy { zero_vector, shared_unk };

inline std::string to_string(OovPolicy p) { return p == OovPolicy::zero_vector ? "zero_vector" : "shared_unk"; }

inline OovPolicy parse_oov_policy(std::string_view s) {
  if (s == "zero_vector") return OovPolicy::zero_vector;
  if (s == "shared_unk") return OovPolicy::shared_unk;
  throw UsageError("unknown oov_policy: " + std::string(s));
}

using TokenId = std::int32_t;

/// Immutable-after-load token -> vector map.  Rows 0..4 are reserved:
/// padding (always zero), mask token, separator, the shared UNK vector, and
/// the zero row used for OOV tokens under zero_vector.
/// The mask/separator rows are zero unless the file provides `<MASK>` /
/// `<SEP>`; UNK is the file's `<unk>` entry or else the vocabulary mean.
class EmbeddingTable {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kMask = 1;
  static constexpr TokenId kSeparator = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kZeroOov = 4;
  static constexpr TokenId kFirstWord = 5;

  explicit EmbeddingTable(int dimension, OovPolicy policy = OovPolicy::zero_vector)
      : dimension_(dimension), policy_(policy), rows_(static_cast<std::size_t>(kFirstWord) * dimension, 0.0),
        sum_(static_cast<std::size_t>(dimension), 0.0) {
    if (dimension < 1) throw UsageError("embedding dimension must be positive");
  }

  int dimension() const { return dimension_; }
  OovPolicy oov_policy() const { return policy_; }
  void set_oov_policy(OovPolicy p) { policy_ = p; }
  std::size_t vocabulary_size() const { return index_.size(); }

  /// Adds a vector; the first occurrence of a token wins.  Returns false for
  /// a duplicate.
  bool add(std::string_view token, std::span<const double> vec) {
    if (static_cast<int>(vec.size()) != dimension_) throw DataError("embedding vector has wrong dimension");
    for (double v : vec)
      if (!std::isfinite(v)) throw DataError("non-finite embedding component for token " + std::string(token));
    if (token == kMaskToken || token == kSeparatorToken || token == "<unk>") {
      const TokenId row = token == kMaskToken ? kMask : token == kSeparatorToken ? kSeparator : kUnk;
      if (row == kUnk) explicit_unk_ = true;
      std::copy(vec.begin(), vec.end(), rows_.begin() + static_cast<std::ptrdiff_t>(row) * dimension_);
      return true;
    }
    const auto id = static_cast<TokenId>(kFirstWord + index_.size());
    if (!index_.emplace(std::string(token), id).second) return false;
    rows_.insert(rows_.end(), vec.begin(), vec.end());
    for (int d = 0; d < dimension_; ++d) sum_[static_cast<std::size_t>(d)] += vec[static_cast<std::size_t>(d)];
    if (!explicit_unk_) {
      const double inv = 1.0 / static_cast<double>(index_.size());
      for (int d = 0; d < dimension_; ++d)
        rows_[static_cast<std::size_t>(kUnk * dimension_ + d)] = sum_[static_cast<std::size_t>(d)] * inv;
    }
    return true;
  }

  /// Never fails; unknown tokens resolve through the OOV policy.
  TokenId id_of(std::string_view token) const {
    if (token == kMaskToken) return kMask;
    if (token == kSeparatorToken) return kSeparator;
    const auto it = index_.find(std::string(token));
    if (it != index_.end()) return it->second;
    return policy_ == OovPolicy::zero_vector ? kZeroOov : kUnk;
  }

  std::span<const double> row(TokenId id) const {
    return {rows_.data() + static_cast<std::size_t>(id) * static_cast<std::size_t>(dimension_),
            static_cast<std::size_t>(dimension_)};
  }

  std::span<const double> lookup(std::string_view token) const { return row(id_of(token)); }

  /// Content hash of dimension, tokens and vectors (independent of insertion
  /// order of the lookup map, dependent on row order).
  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a_u64(static_cast<std::uint64_t>(dimension_));
    std::vector<std::pair<TokenId, const std::string*>> order;
    for (const auto& [tok, id] : index_) order.emplace_back(id, &tok);
    std::sort(order.begin(), order.end());
    for (const auto& [id, tok] : order) h = fnv1a(*tok, fnv1a_u64(static_cast<std::uint64_t>(id), h));
    for (double v : rows_) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = fnv1a_u64(bits, h);
    }
    return h;
  }

 private:
  int dimension_;
  OovPolicy policy_;
  std::vector<double> rows_;
  std::vector<double> sum_;
  bool explicit_unk_ = false;
  std::unordered_map<std::string, TokenId> index_;
};

struct EmbeddingLoadReport {
  std::size_t entries = 0;
  std::size_t duplicates = 0;
};

/// Standard text embedding format: token followed by `dimension` decimals.
inline EmbeddingTable load_embeddings(const std::string& path, int dimension,
                                      OovPolicy policy = OovPolicy::zero_vector,
                                      EmbeddingLoadReport* report = nullptr) {
  EmbeddingTable table(dimension, policy);
  EmbeddingLoadReport local;
  const auto text = read_file(path);
  std::vector<double> vec(static_cast<std::size_t>(dimension));
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + start, end - start);
    start = end + 1;
    ++line_no;
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t p = 0;
    while (p < line.size()) {
      while (p < line.size() && (line[p] == ' ' || line[p] == '\t')) ++p;
      const auto q = p;
      while (p < line.size() && line[p] != ' ' && line[p] != '\t') ++p;
      if (p > q) fields.push_back(line.substr(q, p - q));
    }
    const auto where = path + ":" + std::to_string(line_no);
    // word2vec-style "count dim" header
    long long hcount = 0, hdim = 0;
    if (line_no == 1 && fields.size() == 2 && parse_int(fields[0], hcount) && parse_int(fields[1], hdim) &&
        hdim == dimension && dimension != 1) {
      if (end == text.size()) break;
      continue;
    }
    if (static_cast<int>(fields.size()) - 1 != dimension) {
      throw DataError(where + ": expected " + std::to_string(dimension) + " components, found " +
                      std::to_string(static_cast<int>(fields.size()) - 1));
    }
    for (int d = 0; d < dimension; ++d) {
      if (!parse_double(fields[static_cast<std::size_t>(d) + 1], vec[static_cast<std::size_t>(d)]) ||
          !std::isfinite(vec[static_cast<std::size_t>(d)])) {
        throw DataError(where + ": component " + std::to_string(d + 1) + " is not a finite number");
      }
    }
    if (table.add(fields[0], vec)) {
      ++local.entries;
    } else {
      ++local.duplicates;
    }
    if (end == text.size()) break;
  }
  if (report) *report = local;
  return table;
}

inline std::string serialize_embeddings(const std::vector<std::string>& tokens, const EmbeddingTable& table) {
  std::string out;
  for (const auto& tok : tokens) {
    out += tok;
    for (double v : table.lookup(tok)) out += " " + format_double(v);
    out += "\n";
  }
  return out;
}

/// cap x dimension; rows past the token count are the padding vector (zeros).
inline Eigen::MatrixXd embed_ids(std::span<const TokenId> ids, const EmbeddingTable& table, int cap) {
  if (cap < 1) throw UsageError("embedding cap must be >= 1");
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(cap, table.dimension());
  const auto n = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(cap));
  for (std::size_t r = 0; r < n; ++r) {
    const auto v = table.row(ids[r]);
    for (int c = 0; c < table.dimension(); ++c) m(static_cast<Eigen::Index>(r), c) = v[static_cast<std::size_t>(c)];
  }
  return m;
}

inline std::vector<TokenId> token_ids(const std::vector<std::string>& tokens, const EmbeddingTable& table) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(table.id_of(t));
  return ids;
}

inline Eigen::MatrixXd embed_email(const std::vector<std::string>& tokens, const EmbeddingTable& table, int cap) {
  return embed_ids(token_ids(tokens, table), table, cap);
}

struct TokenizedEmail {
  std::string email_id;
  std::vector<TokenId> token_ids;  // length <= cap
  int cap = 0;
  int pad_length = 0;
};

/// Tokenizes the masked text and keeps the first `cap` tokens, so the cap
/// counts post-masking tokens.
inline TokenizedEmail tokenize_email(const Email& e, const EmbeddingTable& table, int cap) {
  TokenizedEmail t;
  t.email_id = e.id;
  t.cap = cap;
  auto tokens = tokenize(e.text());
  if (tokens.size() > static_cast<std::size_t>(cap)) tokens.resize(static_cast<std::size_t>(cap));
  t.token_ids = token_ids(tokens, table);
  t.pad_length = cap - static_cast<int>(t.token_ids.size());
  return t;
}

// ---------------------------------------------------------------------------
// Structural (non-lexical) features
// ---------------------------------------------------------------------------

struct StructuralFeatures {
  double avg_recipients = 0.0;
  double avg_words = 0.0;
  bool degenerate = false;  // sender had no emails in the instance

  friend bool operator==(const StructuralFeatures&, const StructuralFeatures&) = default;
};

/// Means over one sender's emails.  Words are tokens of the masked text,
/// punctuation included.  Counts are summed as integers, so the result does
/// not depend on email order.
inline StructuralFeatures structural_features(std::span<const Email> emails) {
  if (emails.empty()) return {0.0, 0.0, true};
  std::uint64_t recipients = 0, words = 0;
  for (const auto& e : emails) {
    recipients += e.recipients.size();
    words += tokenize(e.text()).size();
  }
  const auto n = static_cast<double>(emails.size());
  return {static_cast<double>(recipients) / n, static_cast<double>(words) / n, false};
}

/// Zero-mean/unit-variance scaling fitted on train-split statistics.  Absent
/// directions map to (0, 0); the models carry a separate absent bit.
struct Standardizer {
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> stddev{1.0, 1.0};

  static Standardizer fit(std::span<const DyadInstance> train) {
    std::array<double, 2> sum{0, 0}, sq{0, 0};
    std::size_t n = 0;
    for (const auto& inst : train) {
      for (const auto* dir : {&inst.emails_a_to_b, &inst.emails_b_to_a}) {
        const auto f = structural_features(*dir);
        if (f.degenerate) continue;
        const std::array<double, 2> v{f.avg_recipients, f.avg_words};
        for (int k = 0; k < 2; ++k) sum[k] += v[k], sq[k] += v[k] * v[k];
        ++n;
      }
    }
    Standardizer s;
    if (n == 0) return s;
    for (int k = 0; k < 2; ++k) {
      s.mean[k] = sum[k] / static_cast<double>(n);
      const double var = std::max(0.0, sq[k] / static_cast<double>(n) - s.mean[k] * s.mean[k]);
      s.stddev[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  std::array<double, 2> apply(const StructuralFeatures& f) const {
    if (f.degenerate) return {0.0, 0.0};
    return {(f.avg_recipients - mean[0]) / stddev[0], (f.avg_words - mean[1]) / stddev[1]};
  }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

// ---------------------------------------------------------------------------
// Feature cache: token-id sequences keyed by email id.
//
//   "PDYFCACHE" u32 version u64 table-fingerprint u64 count
//   count x { u32 id_len, id bytes, u32 n, n x i32 }
//
// Little-endian, fixed-width.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFeatureCacheVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
  using U = std::make_unsigned_t<T>;
  if (pos + sizeof(T) > in.size()) throw DataError("truncated binary record");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(u);
}

}  // namespace detail

inline std::string write_feature_cache(const std::vector<TokenizedEmail>& emails, std::uint64_t table_fingerprint) {
  std::string out = "PDYFCACHE";
  detail::put_le<std::uint32_t>(out, kFeatureCacheVersion);
  detail::put_le<std::uint64_t>(out, table_fingerprint);
  detail::put_le<std::uint64_t>(out, emails.size());
  for (const auto& e : emails) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.email_id.size()));
    out += e.email_id;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.token_ids.size()));
    for (auto id : e.token_ids) detail::put_le<std::int32_t>(out, id);
  }
  return out;
}

/// Returns nothing if the cache was written against a different table.
inline std::optional<std::unordered_map<std::string, std::vector<TokenId>>> read_feature_cache(
    std::string_view bytes, std::uint64_t table_fingerprint) {
  if (!bytes.starts_with("PDYFCACHE")) throw DataError("not a feature cache");
  std::size_t pos = 9;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kFeatureCacheVersion) throw DataError("unsupported feature cache version " + std::to_string(version));
  if (detail::get_le<std::uint64_t>(bytes, pos) != table_fingerprint) return std::nullopt;
  const auto count = detail::get_le<std::uint64_t>(bytes, pos);
  std::unordered_map<std::string, std::vector<TokenId>> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw DataError("truncated feature cache");
    std::string id(bytes.substr(pos, len));
    pos += len;
    const auto n = detail::get_le<std::uint32_t>(bytes, pos);
    std::vector<TokenId> ids(n);
    for (auto& t : ids) t = detail::get_le<std::int32_t>(bytes, pos);
    out.emplace(std::move(id), std::move(ids));
  }
  return out;
}

}  // namespace powerdyad
