#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "powerdyad/error.hpp"
#include "powerdyad/masking.hpp"
#include "powerdyad/util.hpp"

namespace powerdyad {

using ParticipantId = std::string;

struct Email {
  std::string id;
  std::string thread_id;
  ParticipantId sender;
  std::vector<ParticipantId> recipients;  // To and Cc, never contains sender
  Timestamp timestamp = 0;
  std::string body;
  std::optional<std::string> masked_body;

  /// The text downstream stages should see.
  const std::string& text() const { return masked_body ? *masked_body : body; }

  bool addressed_to(const ParticipantId& p) const {
    return std::find(recipients.begin(), recipients.end(), p) != recipients.end();
  }

  friend bool operator==(const Email&, const Email&) = default;
};

/// Thread emails are ordered by (timestamp, id).
inline bool chronological(const Email& a, const Email& b) {
  return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
}

struct Thread {
  std::string id;
  std::vector<Email> emails;
};

struct DominanceRecord {
  ParticipantId superior;
  ParticipantId subordinate;

  friend bool operator==(const DominanceRecord&, const DominanceRecord&) = default;
};

enum class Formulation { per_thread, grouped };

inline std::string to_string(Formulation f) {
  return f == Formulation::per_thread ? "per_thread" : "grouped";
}

inline Formulation parse_formulation(std::string_view s) {
  if (s == "per_thread" || s == "per-thread") return Formulation::per_thread;
  if (s == "grouped") return Formulation::grouped;
  throw UsageError("unknown formulation: " + std::string(s));
}

struct DyadInstance {
  std::string id;
  Formulation formulation = Formulation::per_thread;
  std::optional<std::string> thread_id;  // absent iff grouped
  ParticipantId person_a;
  ParticipantId person_b;
  std::vector<Email> emails_a_to_b;
  std::vector<Email> emails_b_to_a;
  int label = 0;  // 1 iff person_a is the superior

  /// Same dyad seen from the other side.
  DyadInstance swapped() const {
    DyadInstance s = *this;
    std::swap(s.person_a, s.person_b);
    std::swap(s.emails_a_to_b, s.emails_b_to_a);
    s.label = 1 - label;
    return s;
  }
};

enum class Split { train, dev, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw UsageError("unknown split: " + std::string(s));
}

struct SplitManifest {
  std::map<std::string, Split> assignments;
  std::uint64_t seed = 0;
  bool external = false;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(assignments.begin(), assignments.end(),
                                                  [s](const auto& kv) { return kv.second == s; }));
  }

  /// `instance_id<TAB>split` per line, preceded by one `#` comment line.
  std::string serialize() const {
    std::string out = "# powerdyad split manifest v1 seed=" + std::to_string(seed) +
                      " source=" + (external ? "external" : "ratio") + "\n";
    for (const auto& [id, split] : assignments) out += id + "\t" + to_string(split) + "\n";
    return out;
  }

  static SplitManifest parse(std::string_view text, const std::string& origin = "<manifest>") {
    SplitManifest m;
    m.external = true;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string_view line = lines[i];
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (trim(line).empty()) continue;
      if (line.front() == '#') {
        const auto pos = line.find("seed=");
        long long seed = 0;
        if (pos != std::string_view::npos) {
          auto rest = line.substr(pos + 5);
          rest = rest.substr(0, rest.find(' '));
          if (parse_int(rest, seed)) m.seed = static_cast<std::uint64_t>(seed);
        }
        if (line.find("source=ratio") != std::string_view::npos) m.external = false;
        continue;
      }
      const auto fields = split_on(line, '\t');
      const auto where = origin + ":" + std::to_string(i + 1);
      if (fields.size() != 2) throw DataError(where + ": expected instance_id<TAB>split");
      Split s;
      try {
        s = parse_split(trim(fields[1]));
      } catch (const UsageError&) {
        throw DataError(where + ": unknown split name '" + fields[1] + "'");
      }
      if (!m.assignments.emplace(fields[0], s).second) {
        throw DataError(where + ": duplicate instance id " + fields[0]);
      }
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct IngestReport {
  std::size_t files = 0;
  std::size_t records = 0;
  std::size_t parsed = 0;
  std::size_t malformed = 0;
  std::vector<std::string> warnings;  // one per skipped record, "file:line: reason"
};

struct Corpus {
  std::vector<Thread> threads;
  std::vector<DominanceRecord> dominance;
  IngestReport report;

  std::size_t email_count() const {
    std::size_t n = 0;
    for (const auto& t : threads) n += t.emails.size();
    return n;
  }
};

inline constexpr std::string_view kDominanceFile = "dominance.tsv";

namespace detail {

inline bool valid_participant(const std::string& p) {
  return !p.empty() && p.find_first_of("\t\n\r|") == std::string::npos;
}

/// Parses one message record.  Returns an error reason or an empty string.
inline std::string parse_email_record(std::string_view line, Email& out) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    return std::string("invalid JSON: ") + e.what();
  }
  if (!j.is_object()) return "record is not an object";
  auto str = [&](const char* key, std::string& dst) -> bool {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) return false;
    dst = it->get<std::string>();
    return true;
  };
  Email e;
  std::string ts;
  if (!str("id", e.id) || e.id.empty() || e.id.find_first_of("\t\n") != std::string::npos)
    return "missing or invalid id";
  if (!str("thread_id", e.thread_id) || e.thread_id.empty() ||
      e.thread_id.find_first_of("\t\n|") != std::string::npos)
    return "missing or invalid thread_id";
  if (!str("sender", e.sender) || !valid_participant(e.sender)) return "missing or invalid sender";
  if (!str("timestamp", ts) || !parse_iso8601_utc(ts, e.timestamp)) return "missing or non-UTC timestamp";
  if (!str("body", e.body)) return "missing body";
  for (const char* key : {"recipients", "cc"}) {
    auto it = j.find(key);
    if (it == j.end()) {
      if (std::string_view(key) == "recipients") return "missing recipients";
      continue;
    }
    if (!it->is_array()) return std::string(key) + " is not an array";
    for (const auto& r : *it) {
      if (!r.is_string() || !valid_participant(r.get<std::string>())) return "invalid recipient";
      auto p = r.get<std::string>();
      if (p != e.sender && !e.addressed_to(p)) e.recipients.push_back(std::move(p));
    }
  }
  if (e.recipients.empty()) return "no recipients other than the sender";
  if (auto it = j.find("masked_body"); it != j.end() && it->is_string()) {
    e.masked_body = it->get<std::string>();
  }
  out = std::move(e);
  return {};
}

}  // namespace detail

inline nlohmann::json email_to_json(const Email& e) {
  nlohmann::json j;
  j["id"] = e.id;
  j["thread_id"] = e.thread_id;
  j["sender"] = e.sender;
  j["recipients"] = e.recipients;
  j["timestamp"] = format_iso8601_utc(e.timestamp);
  j["body"] = e.body;
  if (e.masked_body) j["masked_body"] = *e.masked_body;
  return j;
}

inline Email email_from_json(const nlohmann::json& j) {
  Email e;
  const auto reason = detail::parse_email_record(j.dump(), e);
  if (!reason.empty()) throw DataError("bad email record: " + reason);
  return e;
}

inline std::vector<DominanceRecord> parse_dominance(std::string_view text, const std::string& origin) {
  std::vector<DominanceRecord> records;
  std::set<std::pair<std::string, std::string>> seen;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || line.front() == '#') continue;
    const auto where = origin + ":" + std::to_string(i + 1);
    const auto fields = split_on(line, '\t');
    if (fields.size() != 2 || !detail::valid_participant(fields[0]) ||
        !detail::valid_participant(fields[1])) {
      throw DataError(where + ": expected superior_id<TAB>subordinate_id");
    }
    if (fields[0] == fields[1]) throw DataError(where + ": participant dominates itself");
    if (seen.count({fields[1], fields[0]})) {
      throw DataError(where + ": dominance between " + fields[0] + " and " + fields[1] +
                      " recorded in both directions");
    }
    if (seen.insert({fields[0], fields[1]}).second) records.push_back({fields[0], fields[1]});
  }
  return records;
}

/// Reads every `*.jsonl` message file in `source` (sorted by name) and the
/// dominance file.  Malformed messages are skipped and reported.
inline Corpus ingest_corpus(const std::filesystem::path& source) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(source)) throw DataError("corpus source is not a directory: " + source.string());
  const auto dominance_path = source / kDominanceFile;
  if (!fs::is_regular_file(dominance_path)) {
    throw DataError("missing dominance file: " + dominance_path.string());
  }
  Corpus corpus;
  corpus.dominance = parse_dominance(read_file(dominance_path.string()), dominance_path.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(source)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::map<std::string, Thread> threads;
  std::set<std::string> ids;
  auto& report = corpus.report;
  for (const auto& file : files) {
    ++report.files;
    const auto lines = split_lines(read_file(file.string()));
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      ++report.records;
      Email e;
      auto reason = detail::parse_email_record(lines[i], e);
      if (reason.empty() && !ids.insert(e.id).second) reason = "duplicate email id " + e.id;
      if (!reason.empty()) {
        ++report.malformed;
        report.warnings.push_back(file.filename().string() + ":" + std::to_string(i + 1) + ": " + reason);
        continue;
      }
      ++report.parsed;
      auto& t = threads[e.thread_id];
      t.id = e.thread_id;
      t.emails.push_back(std::move(e));
    }
  }
  for (auto& [id, t] : threads) {
    std::sort(t.emails.begin(), t.emails.end(), chronological);
    corpus.threads.push_back(std::move(t));
  }
  return corpus;
}

/// Sets masked_body on every email.  Masking is applied to the current text,
/// so re-masking an already masked corpus is a no-op.
inline Email mask_boilerplate(Email email, const MaskRules& rules) {
  email.masked_body = mask_text(email.text(), rules);
  return email;
}

inline void mask_corpus(Corpus& corpus, const MaskRules& rules) {
  for (auto& t : corpus.threads)
    for (auto& e : t.emails) e = mask_boilerplate(std::move(e), rules);
}

// ---------------------------------------------------------------------------
// Pair extraction
// ---------------------------------------------------------------------------

struct ExtractReport {
  std::size_t interacting_pairs = 0;  // distinct (scope, unordered pair)
  std::size_t unrelated_pairs = 0;    // interacting but absent from the dominance relation
};

struct ExtractResult {
  std::vector<DyadInstance> instances;
  ExtractReport report;
};

namespace detail {

using UnorderedPair = std::pair<ParticipantId, ParticipantId>;

inline UnorderedPair make_pair_key(const ParticipantId& x, const ParticipantId& y) {
  return x < y ? UnorderedPair{x, y} : UnorderedPair{y, x};
}

/// Maps each unordered related pair to its superior.
inline std::map<UnorderedPair, ParticipantId> dominance_index(const std::vector<DominanceRecord>& records) {
  std::map<UnorderedPair, ParticipantId> index;
  for (const auto& r : records) {
    if (r.superior == r.subordinate) throw DataError("dominance record is reflexive: " + r.superior);
    const auto key = make_pair_key(r.superior, r.subordinate);
    auto [it, inserted] = index.emplace(key, r.superior);
    if (!inserted && it->second != r.superior) {
      throw DataError("dominance relation is not antisymmetric for " + key.first + " / " + key.second);
    }
  }
  return index;
}

inline DyadInstance make_instance(std::string id, Formulation formulation, std::optional<std::string> thread,
                                  const UnorderedPair& pair, const ParticipantId& superior,
                                  const std::vector<const Email*>& emails, std::uint64_t seed) {
  DyadInstance inst;
  inst.formulation = formulation;
  inst.thread_id = std::move(thread);
  const bool flip = (mix_seed(seed, id) & 1u) != 0;
  inst.person_a = flip ? pair.second : pair.first;
  inst.person_b = flip ? pair.first : pair.second;
  inst.id = std::move(id);
  for (const Email* e : emails) {
    if (e->sender == inst.person_a && e->addressed_to(inst.person_b)) inst.emails_a_to_b.push_back(*e);
    if (e->sender == inst.person_b && e->addressed_to(inst.person_a)) inst.emails_b_to_a.push_back(*e);
  }
  inst.label = inst.person_a == superior ? 1 : 0;
  return inst;
}

}  // namespace detail

inline std::string instance_id(Formulation f, const std::optional<std::string>& thread,
                               const ParticipantId& x, const ParticipantId& y) {
  const auto key = detail::make_pair_key(x, y);
  if (f == Formulation::grouped) return "g|" + key.first + "|" + key.second;
  return "pt|" + thread.value_or("") + "|" + key.first + "|" + key.second;
}

/// Builds one instance per related interacting pair, scoped to a thread
/// (per_thread) or to the whole corpus (grouped).  Role assignment is a
/// seeded hash of the instance id, so it does not depend on input order.
inline ExtractResult extract_pairs(const std::vector<Thread>& threads, const std::vector<DominanceRecord>& dominance,
                                   Formulation formulation, std::uint64_t seed) {
  const auto index = detail::dominance_index(dominance);
  ExtractResult result;

  // scope id ("" for grouped) -> pair -> emails exchanged by the pair
  std::map<std::string, std::map<detail::UnorderedPair, std::vector<const Email*>>> scopes;
  for (const auto& t : threads) {
    const std::string scope = formulation == Formulation::per_thread ? t.id : std::string();
    auto& pairs = scopes[scope];
    for (const auto& e : t.emails) {
      for (const auto& r : e.recipients) {
        if (r == e.sender) continue;
        pairs[detail::make_pair_key(e.sender, r)].push_back(&e);
      }
    }
  }

  for (auto& [scope, pairs] : scopes) {
    for (auto& [pair, emails] : pairs) {
      ++result.report.interacting_pairs;
      const auto rel = index.find(pair);
      if (rel == index.end()) {
        ++result.report.unrelated_pairs;
        continue;
      }
      std::sort(emails.begin(), emails.end(), [](const Email* a, const Email* b) { return chronological(*a, *b); });
      emails.erase(std::unique(emails.begin(), emails.end()), emails.end());
      std::optional<std::string> thread;
      if (formulation == Formulation::per_thread) thread = scope;
      auto id = instance_id(formulation, thread, pair.first, pair.second);
      result.instances.push_back(
          detail::make_instance(std::move(id), formulation, thread, pair, rel->second, emails, seed));
    }
  }
  std::sort(result.instances.begin(), result.instances.end(),
            [](const DyadInstance& a, const DyadInstance& b) { return a.id < b.id; });
  return result;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitRatios {
  double train = 0.6;
  double dev = 0.2;
  double test = 0.2;
};

/// Key under which instances must share a split: the unordered pair.
inline std::string split_group_key(const DyadInstance& inst) {
  const auto key = detail::make_pair_key(inst.person_a, inst.person_b);
  return key.first + "|" + key.second;
}

/// Ratio-based split.  Groups (pairs) are ordered by a seeded hash and filled
/// into train, then dev, then test until each reaches its rounded target.
inline SplitManifest make_splits(const std::vector<DyadInstance>& instances, SplitRatios ratios, std::uint64_t seed) {
  if (instances.empty()) throw UsageError("make_splits: no instances");
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9) {
    throw UsageError("make_splits: ratios must be non-negative and sum to 1");
  }
  std::map<std::string, std::vector<const DyadInstance*>> groups;
  for (const auto& inst : instances) groups[split_group_key(inst)].push_back(&inst);

  std::vector<std::pair<std::uint64_t, const std::string*>> order;
  order.reserve(groups.size());
  for (const auto& [key, members] : groups) order.emplace_back(mix_seed(seed, key), &key);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : *a.second < *b.second;
  });

  const auto n = static_cast<double>(instances.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
  const auto n_dev = static_cast<std::size_t>(std::llround(ratios.dev * n));

  SplitManifest manifest;
  manifest.seed = seed;
  std::size_t filled_train = 0, filled_dev = 0;
  for (const auto& [hash, key] : order) {
    const auto& members = groups[*key];
    Split s = Split::test;
    if (filled_train < n_train) {
      s = Split::train;
      filled_train += members.size();
    } else if (filled_dev < n_dev) {
      s = Split::dev;
      filled_dev += members.size();
    }
    for (const auto* inst : members) manifest.assignments[inst->id] = s;
  }
  return manifest;
}

/// Uses an externally supplied manifest verbatim.  Unknown ids are fatal;
/// instances the manifest does not mention are returned in `unassigned`.
inline SplitManifest apply_external_manifest(const std::vector<DyadInstance>& instances, SplitManifest external,
                                             std::vector<std::string>* unassigned = nullptr) {
  std::set<std::string> known;
  for (const auto& inst : instances) known.insert(inst.id);
  for (const auto& [id, split] : external.assignments) {
    if (!known.count(id)) throw DataError("split manifest references unknown instance id: " + id);
  }
  if (unassigned) {
    for (const auto& id : known)
      if (!external.assignments.count(id)) unassigned->push_back(id);
  }
  external.external = true;
  return external;
}

/// Instance list plus manifest, with split-scoped access.  The optional access
/// log records every split that was materialized, so tests can check that
/// training never touches the test split.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Formulation formulation, std::vector<DyadInstance> instances, SplitManifest manifest)
      : formulation_(formulation), instances_(std::move(instances)), manifest_(std::move(manifest)) {}

  Formulation formulation() const { return formulation_; }
  const SplitManifest& manifest() const { return manifest_; }
  std::size_t size() const { return instances_.size(); }

  void set_access_log(std::vector<Split>* log) { access_log_ = log; }

  std::vector<DyadInstance> split(Split s) const {
    if (access_log_) access_log_->push_back(s);
    std::vector<DyadInstance> out;
    for (const auto& inst : instances_) {
      const auto it = manifest_.assignments.find(inst.id);
      if (it != manifest_.assignments.end() && it->second == s) out.push_back(inst);
    }
    return out;
  }

  /// Whole-store access for serialization only.
  const std::vector<DyadInstance>& all_instances() const { return instances_; }

 private:
  Formulation formulation_ = Formulation::per_thread;
  std::vector<DyadInstance> instances_;
  SplitManifest manifest_;
  std::vector<Split>* access_log_ = nullptr;
};

inline nlohmann::json instance_to_json(const DyadInstance& inst) {
  nlohmann::json j;
  j["id"] = inst.id;
  j["formulation"] = to_string(inst.formulation);
  j["thread_id"] = inst.thread_id ? nlohmann::json(*inst.thread_id) : nlohmann::json(nullptr);
  j["person_a"] = inst.person_a;
  j["person_b"] = inst.person_b;
  j["label"] = inst.label;
  auto emails = [](const std::vector<Email>& list) {
    auto arr = nlohmann::json::array();
    for (const auto& e : list) arr.push_back(email_to_json(e));
    return arr;
  };
  j["emails_a_to_b"] = emails(inst.emails_a_to_b);
  j["emails_b_to_a"] = emails(inst.emails_b_to_a);
  return j;
}

inline DyadInstance instance_from_json(const nlohmann::json& j) {
  try {
    DyadInstance inst;
    inst.id = j.at("id").get<std::string>();
    inst.formulation = parse_formulation(j.at("formulation").get<std::string>());
    if (!j.at("thread_id").is_null()) inst.thread_id = j.at("thread_id").get<std::string>();
    inst.person_a = j.at("person_a").get<std::string>();
    inst.person_b = j.at("person_b").get<std::string>();
    inst.label = j.at("label").get<int>();
    for (const auto& e : j.at("emails_a_to_b")) inst.emails_a_to_b.push_back(email_from_json(e));
    for (const auto& e : j.at("emails_b_to_a")) inst.emails_b_to_a.push_back(email_from_json(e));
    if (inst.label != 0 && inst.label != 1) throw DataError("label must be 0 or 1");
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad instance record: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("bad instance record: ") + e.what());
  }
}

}  // namespace powerdyad
