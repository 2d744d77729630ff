#pragma once

// Verifiable rewards over reasoning traces of the form
//   <think>...</think><answer>...</answer>
// Every functional form and constant is fixed here so scoring is exactly
// reproducible.

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lorarl/error.hpp"

namespace lorarl {

struct ReasoningTrace {
  std::string raw_text;
  std::optional<std::string> think_span;
  std::optional<std::string> answer_span;
  bool well_formed = false;
};

namespace tags {
inline constexpr std::string_view think_open = "<think>";
inline constexpr std::string_view think_close = "</think>";
inline constexpr std::string_view answer_open = "<answer>";
inline constexpr std::string_view answer_close = "</answer>";
inline constexpr std::array<std::string_view, 4> all = {think_open, think_close, answer_open, answer_close};
}  // namespace tags

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

inline bool all_space(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return is_space(c); });
}

inline size_t count_occurrences(std::string_view text, std::string_view needle) {
  size_t n = 0;
  for (size_t pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : s) {
    if (is_space(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace detail

inline ReasoningTrace parse_trace(std::string_view text) {
  ReasoningTrace tr;
  tr.raw_text = std::string(text);
  for (auto tag : tags::all) {
    if (detail::count_occurrences(text, tag) != 1) return tr;
  }
  const size_t p1 = text.find(tags::think_open);
  const size_t p2 = text.find(tags::think_close);
  const size_t p3 = text.find(tags::answer_open);
  const size_t p4 = text.find(tags::answer_close);
  const size_t think_begin = p1 + tags::think_open.size();
  const size_t think_end_tag = p2 + tags::think_close.size();
  const size_t answer_begin = p3 + tags::answer_open.size();
  const size_t answer_end_tag = p4 + tags::answer_close.size();
  if (!(think_begin <= p2 && think_end_tag <= p3 && answer_begin <= p4)) return tr;
  if (!detail::all_space(text.substr(0, p1))) return tr;
  if (!detail::all_space(text.substr(think_end_tag, p3 - think_end_tag))) return tr;
  if (!detail::all_space(text.substr(answer_end_tag))) return tr;
  tr.well_formed = true;
  tr.think_span = std::string(text.substr(think_begin, p2 - think_begin));
  tr.answer_span = std::string(text.substr(answer_begin, p4 - answer_begin));
  return tr;
}

// Canonical form of an answer: trimmed with internal whitespace collapsed;
// integers, reduced rationals "a/b" and finite decimals are mapped to one
// canonical rational spelling ("-3", "7/2").
namespace detail {
// cpp_int reads a leading "0" as an octal prefix, so feed it decimal digits
// without leading zeros.
inline boost::multiprecision::cpp_int decimal_int(std::string_view digits) {
  while (digits.size() > 1 && digits.front() == '0') digits.remove_prefix(1);
  if (digits.empty()) return 0;
  return boost::multiprecision::cpp_int(std::string(digits));
}
}  // namespace detail

inline std::string normalize_answer(std::string_view raw) {
  using boost::multiprecision::cpp_int;
  using boost::multiprecision::cpp_rational;
  const std::string s = detail::collapse_whitespace(raw);
  std::string_view body = s;
  bool negative = false;
  if (!body.empty() && (body.front() == '-' || body.front() == '+')) {
    negative = body.front() == '-';
    body.remove_prefix(1);
  }
  std::optional<cpp_rational> value;
  if (detail::all_digits(body)) {
    value = cpp_rational(detail::decimal_int(body));
  } else if (const size_t slash = body.find('/'); slash != std::string_view::npos) {
    const auto num = body.substr(0, slash);
    const auto den = body.substr(slash + 1);
    if (detail::all_digits(num) && detail::all_digits(den)) {
      const cpp_int d = detail::decimal_int(den);
      if (d != 0) value = cpp_rational(detail::decimal_int(num), d);
    }
  } else if (const size_t dot = body.find('.'); dot != std::string_view::npos) {
    const auto ip = body.substr(0, dot);
    const auto fp = body.substr(dot + 1);
    if ((ip.empty() || detail::all_digits(ip)) && (fp.empty() || detail::all_digits(fp)) &&
        !(ip.empty() && fp.empty())) {
      const std::string digits = std::string(ip) + std::string(fp);
      cpp_int scale = 1;
      for (size_t i = 0; i < fp.size(); ++i) scale *= 10;
      value = cpp_rational(detail::decimal_int(digits), scale);
    }
  }
  if (!value) return s;
  if (negative) *value = -*value;
  const cpp_int num = boost::multiprecision::numerator(*value);
  const cpp_int den = boost::multiprecision::denominator(*value);
  if (den == 1) return num.str();
  return num.str() + "/" + den.str();
}

enum class RewardKind { accuracy, format, length, cosine, tag_count, reasoning_steps, repetition_penalty };

inline constexpr std::array<RewardKind, 7> kAllRewardKinds = {
    RewardKind::accuracy,  RewardKind::format,          RewardKind::length,
    RewardKind::cosine,    RewardKind::tag_count,       RewardKind::reasoning_steps,
    RewardKind::repetition_penalty};

inline std::string_view to_string(RewardKind k) {
  switch (k) {
    case RewardKind::accuracy: return "accuracy";
    case RewardKind::format: return "format";
    case RewardKind::length: return "length";
    case RewardKind::cosine: return "cosine";
    case RewardKind::tag_count: return "tag_count";
    case RewardKind::reasoning_steps: return "reasoning_steps";
    case RewardKind::repetition_penalty: return "repetition_penalty";
  }
  return "?";
}

inline RewardKind reward_kind_from_string(std::string_view s) {
  for (RewardKind k : kAllRewardKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown reward kind: " + std::string(s));
}

struct RewardSpec {
  RewardKind kind = RewardKind::accuracy;
  double weight = 1.0;
};

inline void validate_specs(const std::vector<RewardSpec>& specs) {
  std::set<RewardKind> seen;
  for (const auto& s : specs) {
    if (!seen.insert(s.kind).second) {
      throw ConfigError("duplicate reward kind: " + std::string(to_string(s.kind)));
    }
    if (!std::isfinite(s.weight)) throw ConfigError("reward weight must be finite");
  }
}

struct RewardReport {
  std::map<RewardKind, double> scores;
  double total = 0.0;
};

inline double accuracy_reward(const ReasoningTrace& trace, std::string_view gold) {
  if (!trace.well_formed || !trace.answer_span) return 0.0;
  return normalize_answer(*trace.answer_span) == normalize_answer(gold) ? 1.0 : 0.0;
}

inline double format_reward(const ReasoningTrace& trace) { return trace.well_formed ? 1.0 : 0.0; }

struct CosineShape {
  double min_correct = 0.5;
  double max_correct = 1.0;
  double min_wrong = -1.0;
  double max_wrong = -0.5;
};

// length: 1 - len/max_len for correct answers, 0 otherwise.
// cosine: correct answers interpolate max_correct -> min_correct as len grows;
// wrong answers interpolate min_wrong -> max_wrong, so short wrong answers
// are penalized hardest.
inline double shaped_reward(RewardKind kind, bool correct, int completion_len, int max_len,
                            const CosineShape& shape = {}) {
  if (max_len <= 0) throw InputError("shaped_reward: max_len must be positive");
  if (completion_len < 0 || completion_len > max_len) {
    throw InputError("shaped_reward: completion_len " + std::to_string(completion_len) +
                     " outside [0, " + std::to_string(max_len) + "]");
  }
  const double progress = static_cast<double>(completion_len) / static_cast<double>(max_len);
  if (kind == RewardKind::length) return correct ? 1.0 - progress : 0.0;
  if (kind == RewardKind::cosine) {
    const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    if (correct) return shape.min_correct + (shape.max_correct - shape.min_correct) * c;
    return shape.max_wrong + (shape.min_wrong - shape.max_wrong) * c;
  }
  throw InputError("shaped_reward: kind must be length or cosine");
}

namespace detail {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool line_starts_with_enumerator(std::string_view line) {
  size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  line.remove_prefix(i);
  if (line.size() >= 2 && (line[0] == '-' || line[0] == '*') && line[1] == ' ') return true;
  size_t d = 0;
  if (line.starts_with("step")) {
    size_t j = 4;
    while (j < line.size() && line[j] == ' ') ++j;
    d = j;
    while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
    return d > j && d < line.size() && line[d] == ':';
  }
  while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
  return d > 0 && d < line.size() && (line[d] == '.' || line[d] == ')');
}

inline constexpr std::array<std::string_view, 6> kConnectives = {"first,", "second,", "third,",
                                                                  "next,",  "then,",   "finally,"};

}  // namespace detail

inline int count_step_markers(std::string_view text) {
  const std::string lower = detail::to_lower(text);
  int count = 0;
  size_t start = 0;
  while (start <= lower.size()) {
    size_t end = lower.find('\n', start);
    if (end == std::string::npos) end = lower.size();
    if (detail::line_starts_with_enumerator(std::string_view(lower).substr(start, end - start))) ++count;
    start = end + 1;
  }
  for (auto word : detail::kConnectives) {
    for (size_t pos = lower.find(word); pos != std::string::npos; pos = lower.find(word, pos + 1)) {
      const bool boundary = pos == 0 || !std::isalpha(static_cast<unsigned char>(lower[pos - 1]));
      if (boundary) ++count;
    }
  }
  return count;
}

// 0.25 for each of the four tags that appears exactly once.
inline double tag_count_reward(std::string_view text) {
  double score = 0.0;
  for (auto tag : tags::all)
    if (detail::count_occurrences(text, tag) == 1) score += 0.25;
  return score;
}

inline double reasoning_steps_reward(std::string_view text) {
  return std::min(1.0, static_cast<double>(count_step_markers(text)) / 3.0);
}

// Minus the fraction of word 3-grams that repeat an earlier 3-gram.
inline double repetition_penalty_reward(std::string_view text) {
  const auto words = detail::split_words(text);
  if (words.size() < 3) return 0.0;
  const size_t total = words.size() - 2;
  std::set<std::vector<std::string>> unique;
  for (size_t i = 0; i < total; ++i) unique.insert({words[i], words[i + 1], words[i + 2]});
  return -(1.0 - static_cast<double>(unique.size()) / static_cast<double>(total));
}

inline double aux_reward(RewardKind kind, std::string_view text) {
  switch (kind) {
    case RewardKind::tag_count: return tag_count_reward(text);
    case RewardKind::reasoning_steps: return reasoning_steps_reward(text);
    case RewardKind::repetition_penalty: return repetition_penalty_reward(text);
    default: throw InputError("aux_reward: kind must be tag_count, reasoning_steps or repetition_penalty");
  }
}

inline double total_reward(const std::map<RewardKind, double>& scores, const std::vector<RewardSpec>& specs) {
  double total = 0.0;
  for (const auto& s : specs) {
    const auto it = scores.find(s.kind);
    if (it == scores.end()) {
      throw ConfigError("total_reward: missing component " + std::string(to_string(s.kind)));
    }
    total += s.weight * it->second;
  }
  return total;
}

struct ScoreInput {
  std::string_view text;
  std::string_view gold;
  int completion_len = 0;
  int max_len = 1;
};

inline double score_kind(RewardKind kind, const ReasoningTrace& trace, const ScoreInput& in) {
  switch (kind) {
    case RewardKind::accuracy: return accuracy_reward(trace, in.gold);
    case RewardKind::format: return format_reward(trace);
    case RewardKind::length:
    case RewardKind::cosine:
      return shaped_reward(kind, accuracy_reward(trace, in.gold) == 1.0, in.completion_len, in.max_len);
    default: return aux_reward(kind, in.text);
  }
}

// Scores the kinds named in `specs` and their weighted total.
inline RewardReport score_completion(const ScoreInput& in, const std::vector<RewardSpec>& specs) {
  const ReasoningTrace trace = parse_trace(in.text);
  RewardReport report;
  for (const auto& s : specs) report.scores[s.kind] = score_kind(s.kind, trace, in);
  report.total = total_reward(report.scores, specs);
  return report;
}

}  // namespace lorarl
