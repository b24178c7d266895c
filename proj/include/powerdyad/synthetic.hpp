#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "powerdyad/corpus.hpp"
#include "powerdyad/features.hpp"
#include "powerdyad/util.hpp"

// Synthetic corpora with a known answer, used by the test suites and for
// smoke-testing the CLI without licensed data.
namespace powerdyad::synthetic {

inline std::string filler_word(std::size_t i) { return "f" + std::to_string(i); }

inline std::string random_sentence(Rng& rng, std::size_t words, std::size_t vocab) {
  std::string s;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) s += ' ';
    s += filler_word(rng.below(vocab));
  }
  return s;
}

/// Every distinct token in the instances' masked text.
inline std::vector<std::string> vocabulary_of(const std::vector<DyadInstance>& instances) {
  std::set<std::string> vocab;
  for (const auto& inst : instances)
    for (const auto* dir : {&inst.emails_a_to_b, &inst.emails_b_to_a})
      for (const auto& e : *dir)
        for (auto& t : tokenize(e.text())) vocab.insert(std::move(t));
  vocab.erase(std::string(kMaskToken));
  vocab.erase(std::string(kSeparatorToken));
  return {vocab.begin(), vocab.end()};
}

/// Gaussian vectors scaled by 1/sqrt(dim), one per token, seeded per token
/// so the table does not depend on token order.
inline EmbeddingTable random_embeddings(const std::vector<std::string>& tokens, int dim, std::uint64_t seed) {
  EmbeddingTable table(dim);
  std::vector<double> v(static_cast<std::size_t>(dim));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (const auto& tok : tokens) {
    Rng rng(mix_seed(seed, tok));
    for (auto& x : v) x = rng.normal() * scale;
    table.add(tok, v);
  }
  return table;
}

struct MarkerOptions {
  std::size_t filler_vocab = 200;
  std::size_t min_words = 8;
  std::size_t max_words = 16;
  std::size_t max_emails = 4;
  double absent_direction_rate = 0.1;
  double marker_rate = 1.0;  // per email
  std::vector<std::string> superior_markers{"approve", "decide", "must", "need"};
  std::vector<std::string> subordinate_markers{"completed", "report", "request", "update"};
};

namespace detail {

inline Email make_email(std::string id, std::string thread, const std::string& from, const std::string& to,
                        std::size_t extra_recipients, Timestamp ts, std::string body) {
  Email e;
  e.id = std::move(id);
  e.thread_id = std::move(thread);
  e.sender = from;
  e.recipients.push_back(to);
  for (std::size_t k = 0; k < extra_recipients; ++k) e.recipients.push_back("cc" + std::to_string(k));
  e.timestamp = ts;
  e.body = std::move(body);
  e.masked_body = e.body;
  return e;
}

}  // namespace detail

/// Lexical-signal task: the superior's emails carry superior markers and the
/// subordinate's carry subordinate markers.  Recipient counts and lengths are
/// drawn independently of the label.
inline std::vector<DyadInstance> planted_markers(std::size_t n, std::uint64_t seed, const MarkerOptions& opt = {}) {
  std::vector<DyadInstance> out;
  Rng rng(mix_seed(seed, "planted"));
  for (std::size_t i = 0; i < n; ++i) {
    DyadInstance inst;
    inst.id = "syn|" + std::to_string(seed) + "|" + std::to_string(i);
    inst.formulation = Formulation::grouped;
    inst.person_a = "a" + std::to_string(i);
    inst.person_b = "b" + std::to_string(i);
    inst.label = static_cast<int>(i % 2);
    const std::string thread = "syn-" + std::to_string(seed) + "-" + std::to_string(i);
    const bool empty_a = rng.bernoulli(opt.absent_direction_rate / 2);
    const bool empty_b = !empty_a && rng.bernoulli(opt.absent_direction_rate / 2);
    Timestamp ts = 1'000'000'000 + static_cast<Timestamp>(i) * 100'000;
    for (int side = 0; side < 2; ++side) {
      if ((side == 0 && empty_a) || (side == 1 && empty_b)) continue;
      const bool superior = (side == 0) == (inst.label == 1);
      const auto& markers = superior ? opt.superior_markers : opt.subordinate_markers;
      const std::size_t count = 1 + rng.below(opt.max_emails);
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t words = opt.min_words + rng.below(opt.max_words - opt.min_words + 1);
        std::vector<std::string> tokens;
        for (std::size_t w = 0; w < words; ++w) tokens.push_back(filler_word(rng.below(opt.filler_vocab)));
        if (rng.bernoulli(opt.marker_rate)) tokens[rng.below(tokens.size())] = markers[rng.below(markers.size())];
        const auto& from = side == 0 ? inst.person_a : inst.person_b;
        const auto& to = side == 0 ? inst.person_b : inst.person_a;
        auto e = detail::make_email(inst.id + "|" + std::to_string(side) + "|" + std::to_string(k), thread, from, to,
                                    rng.below(3), ts += 60 + static_cast<Timestamp>(rng.below(3600)),
                                    join(tokens, " "));
        (side == 0 ? inst.emails_a_to_b : inst.emails_b_to_a).push_back(std::move(e));
      }
    }
    out.push_back(std::move(inst));
  }
  return out;
}

struct OrderOptions {
  std::size_t filler_vocab = 200;
  std::size_t words = 10;
  std::string first_marker = "alpha";
  std::string second_marker = "omega";
};

/// Temporal-order task, generated in matched pairs: both members of a pair
/// contain exactly the same emails; only the order of the two marker emails
/// from A differs, and that order alone decides the label.
inline std::vector<DyadInstance> order_contrast(std::size_t pairs, std::uint64_t seed, const OrderOptions& opt = {}) {
  std::vector<DyadInstance> out;
  Rng rng(mix_seed(seed, "order"));
  for (std::size_t p = 0; p < pairs; ++p) {
    auto sentence_with = [&](const std::string& marker) {
      std::vector<std::string> tokens;
      for (std::size_t w = 0; w < opt.words; ++w) tokens.push_back(filler_word(rng.below(opt.filler_vocab)));
      tokens[rng.below(tokens.size())] = marker;
      return join(tokens, " ");
    };
    const auto first_body = sentence_with(opt.first_marker);
    const auto second_body = sentence_with(opt.second_marker);
    const auto reply_body = random_sentence(rng, opt.words, opt.filler_vocab);
    const std::size_t extra = rng.below(3);
    const Timestamp t0 = 1'000'000'000 + static_cast<Timestamp>(p) * 100'000;
    for (int variant = 0; variant < 2; ++variant) {
      DyadInstance inst;
      inst.id = "ord|" + std::to_string(seed) + "|" + std::to_string(p) + "|" + std::to_string(variant);
      inst.formulation = Formulation::per_thread;
      inst.thread_id = "ord-" + std::to_string(seed) + "-" + std::to_string(p) + "-" + std::to_string(variant);
      inst.person_a = "a" + std::to_string(p);
      inst.person_b = "b" + std::to_string(p);
      inst.label = variant == 0 ? 1 : 0;
      // variant 0: first marker precedes the second; variant 1: reversed
      const Timestamp ta = variant == 0 ? t0 : t0 + 600;
      const Timestamp tb = variant == 0 ? t0 + 600 : t0;
      inst.emails_a_to_b.push_back(
          detail::make_email(inst.id + "|m1", *inst.thread_id, inst.person_a, inst.person_b, extra, ta, first_body));
      inst.emails_a_to_b.push_back(
          detail::make_email(inst.id + "|m2", *inst.thread_id, inst.person_a, inst.person_b, extra, tb, second_body));
      std::sort(inst.emails_a_to_b.begin(), inst.emails_a_to_b.end(), chronological);
      inst.emails_b_to_a.push_back(
          detail::make_email(inst.id + "|r", *inst.thread_id, inst.person_b, inst.person_a, extra, t0 + 1200, reply_body));
      out.push_back(std::move(inst));
    }
  }
  return out;
}

/// Random bodies mixing greetings, signatures, punctuation, CRLF, blank
/// lines, non-ASCII bytes and the reserved tokens.
inline std::vector<Email> fuzz_emails(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> pieces{
      "Hi John,", "Hello all", "Dear Ms. Smith:", "hey", "Thanks,", "Best regards,", "Mary", "Vince J. Kaminski",
      "-VK", "Phone: (713) 853-3848", "Vice President, Research", "Enron Corp.", "Please send the Q3 report.",
      "We need to end all payments as of December 31, 2001.", "", "   ", "<MASK>", "<SEP>", "caf\xc3\xa9 na\xc3\xafve",
      "!!!", "a,b;c.d", "Don't use the ftp site.", "Sounds good.", "Yes", "--", "\t tabbed \t line"};
  std::vector<Email> out;
  Rng rng(mix_seed(seed, "fuzz"));
  for (std::size_t i = 0; i < n; ++i) {
    Email e;
    e.id = "fz" + std::to_string(i);
    e.thread_id = "fzt" + std::to_string(i % 37);
    e.sender = "s" + std::to_string(rng.below(20));
    e.recipients.push_back("r" + std::to_string(rng.below(20)));
    e.timestamp = static_cast<Timestamp>(rng.below(1'000'000'000));
    const std::size_t lines = rng.below(12);
    std::vector<std::string> body;
    for (std::size_t l = 0; l < lines; ++l) {
      std::string line = rng.bernoulli(0.4) ? random_sentence(rng, 1 + rng.below(20), 500)
                                             : pieces[rng.below(pieces.size())];
      if (rng.bernoulli(0.1)) line += "\r";
      body.push_back(std::move(line));
    }
    e.body = join(body, "\n");
    if (rng.bernoulli(0.05)) e.body += "\n";
    out.push_back(std::move(e));
  }
  return out;
}

/// Three threads for ingest/build tests:
///   t1: alice -> {bob, carol}; bob -> alice; carol -> {alice, bob}
///   t2: bob -> dave; dave -> bob            (peers only)
///   t3: alice -> bob; erin -> {dave, alice}
/// Dominance: alice > bob, alice > carol, erin > dave.
/// Per-thread instances: t1 {alice,bob}, t1 {alice,carol}, t3 {alice,bob},
/// t3 {dave,erin} = 4.  Grouped: {alice,bob}, {alice,carol}, {dave,erin} = 3.
inline void write_fixture_corpus(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file((dir / kDominanceFile).string(), "alice\tbob\nalice\tcarol\nerin\tdave\n");
  const char* messages =
      R"({"id":"m1","thread_id":"t1","sender":"alice","recipients":["bob"],"cc":["carol"],"timestamp":"2001-05-01T09:00:00Z","body":"Hi Bob,\nPlease send the Q3 report by Friday.\nThanks,\nAlice"})"
      "\n"
      R"({"id":"m2","thread_id":"t1","sender":"bob","recipients":["alice"],"timestamp":"2001-05-01T10:30:00Z","body":"Alice,\nThe model is nearly completed. Let me know who you'd like us to work with.\nBest regards,\nBob"})"
      "\n"
      R"({"id":"m3","thread_id":"t1","sender":"carol","recipients":["alice","bob"],"timestamp":"2001-05-01T11:00:00Z","body":"I can help with the numbers."})"
      "\n"
      R"({"id":"m4","thread_id":"t2","sender":"bob","recipients":["dave"],"timestamp":"2001-05-02T08:00:00Z","body":"Lunch today?"})"
      "\n"
      R"({"id":"m5","thread_id":"t2","sender":"dave","recipients":["bob"],"timestamp":"2001-05-02T08:05:00Z","body":"Sure, noon works."})"
      "\n"
      R"({"id":"m6","thread_id":"t3","sender":"alice","recipients":["bob"],"timestamp":"2001-05-03T14:00:00Z","body":"We need to end all payments as of December 31.\nAlice"})"
      "\n"
      R"({"id":"m7","thread_id":"t3","sender":"erin","recipients":["dave","alice"],"timestamp":"2001-05-03T15:00:00Z","body":"Hello Dave,\nI personally would like to see the results before we continue.\nRegards,\nErin\nPhone: (713) 555-0199"})"
      "\n";
  write_file((dir / "messages.jsonl").string(), messages);
}

/// Writes instances back out as a raw corpus (messages.jsonl plus
/// dominance.tsv) so the full ingest -> build path can run on them.
inline void write_raw_corpus(const std::filesystem::path& dir, const std::vector<DyadInstance>& instances) {
  std::filesystem::create_directories(dir);
  std::string messages, dominance;
  for (const auto& inst : instances) {
    for (const auto* list : {&inst.emails_a_to_b, &inst.emails_b_to_a})
      for (auto e : *list) {
        e.masked_body.reset();
        messages += email_to_json(e).dump() + "\n";
      }
    dominance += inst.label == 1 ? inst.person_a + "\t" + inst.person_b + "\n" : inst.person_b + "\t" + inst.person_a + "\n";
  }
  write_file((dir / "messages.jsonl").string(), messages);
  write_file((dir / kDominanceFile).string(), dominance);
}

}  // namespace powerdyad::synthetic
