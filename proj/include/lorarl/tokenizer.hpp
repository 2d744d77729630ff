#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "lorarl/error.hpp"

namespace lorarl {

// Fixed character-level vocabulary. Ids 0 and 1 are reserved for the
// end-of-sequence and beginning-of-sequence markers.
class Tokenizer {
 public:
  static constexpr int kEos = 0;
  static constexpr int kBos = 1;

  static constexpr std::string_view kAlphabet =
      " \n0123456789+-*/()=.,:;?!<>_abcdefghijklmnopqrstuvwxyz";

  static constexpr int size() { return 2 + static_cast<int>(kAlphabet.size()); }

  static int encode_char(char c) {
    const auto& table = lookup();
    const int id = table[static_cast<unsigned char>(c)];
    if (id < 0) {
      throw InputError(std::string("character not in vocabulary: '") + c + "'");
    }
    return id;
  }

  static bool encodable(std::string_view text) {
    const auto& table = lookup();
    for (char c : text) {
      if (table[static_cast<unsigned char>(c)] < 0) return false;
    }
    return true;
  }

  static std::vector<int> encode(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(encode_char(c));
    return ids;
  }

  // Special tokens are dropped; decoding stops at nothing.
  static std::string decode(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
      if (id < 2 || id >= size()) continue;
      out.push_back(kAlphabet[static_cast<size_t>(id - 2)]);
    }
    return out;
  }

 private:
  static const std::array<int, 256>& lookup() {
    static const std::array<int, 256> table = [] {
      std::array<int, 256> t{};
      t.fill(-1);
      for (size_t i = 0; i < kAlphabet.size(); ++i) {
        t[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i) + 2;
      }
      return t;
    }();
    return table;
  }
};

}  // namespace lorarl
