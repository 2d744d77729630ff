#pragma once

// Synthetic arithmetic problems with exactly decidable answers, plus the
// JSONL dataset format {id, prompt, gold, difficulty}.

#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lorarl/error.hpp"
#include "lorarl/random.hpp"

namespace lorarl {

struct Problem {
  std::string id;
  std::string prompt;  // the expression, e.g. "7*8"
  std::string gold;    // canonical integer answer, e.g. "56"
  int difficulty = 1;

  friend bool operator==(const Problem&, const Problem&) = default;
};

struct Dataset {
  std::string name;
  std::vector<Problem> problems;
  uint64_t seed = 0;

  size_t size() const { return problems.size(); }
};

namespace detail {

struct Expr {
  std::string text;
  int64_t value = 0;
};

inline Expr binary(const Expr& a, char op, const Expr& b) {
  switch (op) {
    case '+': return {a.text + "+" + b.text, a.value + b.value};
    case '-': return {a.text + "-" + b.text, a.value - b.value};
    case '*': return {a.text + "*" + b.text, a.value * b.value};
  }
  throw InputError("unsupported operator");
}

inline Expr paren(const Expr& e) { return {"(" + e.text + ")", e.value}; }

inline Expr literal(Rng& rng, int lo, int hi) {
  const int64_t v = lo + static_cast<int64_t>(uniform_int(rng, static_cast<uint64_t>(hi - lo + 1)));
  return {std::to_string(v), v};
}

inline char pick_op(Rng& rng) {
  static constexpr char ops[] = {'+', '-', '*'};
  return ops[uniform_int(rng, 3)];
}

inline Expr two_level(Rng& rng, int lo, int hi) {
  const Expr a = literal(rng, lo, hi);
  const Expr b = literal(rng, lo, hi);
  const Expr c = literal(rng, lo, hi);
  const char op1 = pick_op(rng);
  const char op2 = pick_op(rng);
  if (uniform_int(rng, 2) == 0) return binary(paren(binary(a, op1, b)), op2, c);
  return binary(a, op1, paren(binary(b, op2, c)));
}

}  // namespace detail

// difficulty 1: a op b with single digits and op in {+,-,*}
// difficulty 2: three operands in [0,19] with one parenthesized pair
// difficulty 3: a difficulty-2 expression divided by a small exact divisor
inline Problem make_arithmetic_problem(Rng& rng, int difficulty) {
  detail::Expr e;
  if (difficulty == 1) {
    e = detail::binary(detail::literal(rng, 0, 9), detail::pick_op(rng), detail::literal(rng, 0, 9));
  } else if (difficulty == 2) {
    e = detail::two_level(rng, 0, 19);
  } else if (difficulty == 3) {
    const detail::Expr inner = detail::two_level(rng, 0, 19);
    std::vector<int64_t> divisors;
    for (int64_t d = 2; d <= 9; ++d)
      if (inner.value % d == 0) divisors.push_back(d);
    const int64_t d = divisors.empty() ? 1 : divisors[uniform_int(rng, divisors.size())];
    e = {"(" + inner.text + ")/" + std::to_string(d), inner.value / d};
  } else {
    throw InputError("difficulty must be 1, 2 or 3");
  }
  return Problem{"", e.text, std::to_string(e.value), difficulty};
}

inline Dataset gen_arithmetic(uint64_t seed, int count, int difficulty) {
  if (count < 1) throw InputError("count must be at least 1");
  if (difficulty < 1 || difficulty > 3) throw InputError("difficulty must be 1, 2 or 3");
  Dataset ds;
  ds.seed = seed;
  ds.name = "arith-d" + std::to_string(difficulty) + "-s" + std::to_string(seed);
  Rng rng = derive_rng({seed, static_cast<uint64_t>(difficulty), 0xa417ull});
  ds.problems.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Problem p = make_arithmetic_problem(rng, difficulty);
    char idx[16];
    std::snprintf(idx, sizeof idx, "%06d", i);
    p.id = ds.name + "-" + idx;
    ds.problems.push_back(std::move(p));
  }
  return ds;
}

inline void save_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  for (const auto& p : ds.problems) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["prompt"] = p.prompt;
    j["gold"] = p.gold;
    j["difficulty"] = p.difficulty;
    out << j.dump() << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

// The dataset name is taken from the file stem; the generator seed is not
// stored in the file and loads as 0.
inline Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  Dataset ds;
  ds.name = path.stem().string();
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw InputError(where + ": expected a JSON object");
    Problem p;
    for (const char* field : {"id", "prompt", "gold"}) {
      if (!j.contains(field) || !j[field].is_string()) {
        throw InputError(where + ": missing string field \"" + field + "\"");
      }
    }
    p.id = j["id"].get<std::string>();
    p.prompt = j["prompt"].get<std::string>();
    p.gold = j["gold"].get<std::string>();
    if (!j.contains("difficulty") || !j["difficulty"].is_number_integer()) {
      throw InputError(where + ": missing integer field \"difficulty\"");
    }
    p.difficulty = j["difficulty"].get<int>();
    if (!ids.insert(p.id).second) throw InputError(where + ": duplicate id " + p.id);
    ds.problems.push_back(std::move(p));
  }
  if (ds.problems.empty()) throw InputError("empty dataset: " + path.string());
  return ds;
}

}  // namespace lorarl
