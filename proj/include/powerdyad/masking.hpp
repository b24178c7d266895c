#pragma once

#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "powerdyad/error.hpp"
#include "powerdyad/util.hpp"

namespace powerdyad {

/// Reserved symbol that replaces a masked greeting or signature line.  The
/// tokenizer passes it through unchanged and the embedding table maps it to a
/// dedicated row.
inline constexpr std::string_view kMaskToken = "<MASK>";

struct MaskPattern {
  std::string source;
  std::regex regex;
};

/// Declarative greeting/signature ruleset.  A pattern prefixed with `(?i)`
/// matches case-insensitively; everything else is case-sensitive ECMAScript.
///
/// File layout:
///
///     [params]
///     version = 1
///     k = 3
///     m = 5
///     [greeting]
///     (?i)^\s*(hi|hello|dear)\b...
///     [signature]
///     ...
///
/// Blank lines and lines starting with `#` are ignored.
struct MaskRules {
  std::string version = "1";
  int greeting_lines = 3;   // k: greeting patterns apply to the first k lines
  int signature_lines = 5;  // m: signature patterns apply to the last m lines
  std::vector<MaskPattern> greeting;
  std::vector<MaskPattern> signature;

  static MaskPattern compile(const std::string& source) {
    std::string_view body = source;
    auto flags = std::regex::ECMAScript | std::regex::optimize;
    if (body.starts_with("(?i)")) {
      body.remove_prefix(4);
      flags |= std::regex::icase;
    }
    return MaskPattern{source, std::regex(std::string(body), flags)};
  }

  static MaskRules parse(std::string_view text, const std::string& origin = "<rules>") {
    MaskRules rules;
    rules.greeting.clear();
    rules.signature.clear();
    enum class Section { none, params, greeting, signature } section = Section::none;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto where = origin + ":" + std::to_string(i + 1);
      std::string_view line = lines[i];
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      const auto trimmed = trim(line);
      if (trimmed.empty() || trimmed.front() == '#') continue;
      if (trimmed == "[params]") { section = Section::params; continue; }
      if (trimmed == "[greeting]") { section = Section::greeting; continue; }
      if (trimmed == "[signature]") { section = Section::signature; continue; }
      switch (section) {
        case Section::none:
          throw UsageError(where + ": content outside of a section");
        case Section::params: {
          const auto eq = trimmed.find('=');
          if (eq == std::string_view::npos) throw UsageError(where + ": expected key = value");
          const auto key = trim(trimmed.substr(0, eq));
          const auto value = trim(trimmed.substr(eq + 1));
          long long n = 0;
          if (key == "version") {
            rules.version = std::string(value);
          } else if (key == "k" || key == "m") {
            if (!parse_int(value, n) || n < 0) throw UsageError(where + ": bad integer for " + std::string(key));
            (key == "k" ? rules.greeting_lines : rules.signature_lines) = static_cast<int>(n);
          } else {
            throw UsageError(where + ": unknown parameter " + std::string(key));
          }
          break;
        }
        case Section::greeting:
        case Section::signature: {
          try {
            auto pattern = compile(std::string(trimmed));
            (section == Section::greeting ? rules.greeting : rules.signature).push_back(std::move(pattern));
          } catch (const std::regex_error& e) {
            throw UsageError(where + ": invalid pattern: " + e.what());
          }
          break;
        }
      }
    }
    return rules;
  }

  static MaskRules load(const std::string& path) { return parse(read_file(path), path); }

  /// Built-in ruleset; identical to data/mask_rules.txt.
  static MaskRules defaults() { return parse(default_text(), "<default rules>"); }

  static std::string_view default_text() {
    return R"RULES(# Greeting/signature masking ruleset.
[params]
version = 1
k = 3
m = 5

[greeting]
(?i)^\s*(hi|hello|dear|hey|greetings|good (morning|afternoon|evening))\b[^.!?]{0,40}[,:!]?\s*$
(?i)^\s*(all|team|folks|everyone|guys)\s*[,:]\s*$

[signature]
(?i)^\s*(thanks|thank you|thx|regards|best|best regards|best wishes|kind regards|warm regards|sincerely|cheers|respectfully|many thanks|take care)(\s+[\w']+){0,3}\s*[,.!]*\s*$
^\s*[A-Z][a-z'-]+(\s+[A-Z]\.)?(\s+[A-Z][a-z'-]+)?\s*$
^\s*-{1,2}\s*[A-Za-z]{1,3}\s*$
(?i)(phone|tel|fax|cell|mobile|office)?\s*[:.]?\s*\(?\d{3}\)?[-. ]\d{3}[-. ]\d{4}
(?i)^\s*((senior|executive|assistant|managing)\s+)?(vice president|vp|director|manager|analyst|counsel|president|ceo|cfo|coo|trader|associate)\b[\w ,&/-]{0,40}$
(?i)^[\w&.\- ]{0,40}\b(corp|corporation|inc|llc|ltd|company)\.?\s*$
)RULES";
  }
};

namespace detail {

inline bool matches_any(const std::vector<MaskPattern>& patterns, const std::string& line) {
  for (const auto& p : patterns) {
    if (std::regex_search(line, p.regex)) return true;
  }
  return false;
}

}  // namespace detail

/// Masks greeting lines among the first k and signature lines among the last m.
/// Each masked line becomes exactly kMaskToken, so line count is preserved and
/// applying the function twice is the same as applying it once.
inline std::string mask_text(std::string_view text, const MaskRules& rules) {
  if (text.empty()) return {};
  auto lines = split_lines(text);
  const auto n = static_cast<int>(lines.size());
  for (int i = 0; i < n; ++i) {
    std::string_view raw = lines[static_cast<std::size_t>(i)];
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    const std::string probe(raw);
    if (trim(probe).empty() || probe == kMaskToken) continue;
    const bool in_head = i < rules.greeting_lines;
    const bool in_tail = i >= n - rules.signature_lines;
    if ((in_head && detail::matches_any(rules.greeting, probe)) ||
        (in_tail && detail::matches_any(rules.signature, probe))) {
      lines[static_cast<std::size_t>(i)] = std::string(kMaskToken);
    }
  }
  return join(lines, "\n");
}

}  // namespace powerdyad
