#pragma once

#include <array>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vdst {

// Reserved ids, fixed across vocabularies.
inline constexpr int kPad = 0;
inline constexpr int kStart = 1;
inline constexpr int kEnd = 2;  // "?"
inline constexpr int kYes = 3;
inline constexpr int kNo = 4;
inline constexpr int kNa = 5;
inline constexpr int kReservedCount = 6;

inline constexpr std::array<std::string_view, 12> kCategoryWords = {
    "cat", "dog", "car", "bus", "cup", "chair", "apple", "book", "bike", "lamp", "vase", "clock"};
inline constexpr std::array<std::string_view, 4> kSupercategoryWords = {"animal", "vehicle", "object", "food"};
inline constexpr std::array<std::string_view, 8> kColorWords = {"red",   "green", "blue",  "yellow",
                                                                "white", "black", "brown", "pink"};

class UnknownTokenError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class Vocabulary {
 public:
  Vocabulary() {
    for (std::string_view w : {"<pad>", "<start>", "?", "yes", "no", "na"}) add(std::string(w));
  }

  // Builds the question vocabulary for a world with the given attribute counts.
  static Vocabulary for_world(std::size_t categories, std::size_t supercategories, std::size_t colors) {
    if (categories > kCategoryWords.size() || colors > kColorWords.size() ||
        supercategories > kSupercategoryWords.size())
      throw std::invalid_argument("vocabulary: attribute count exceeds the word lists");
    Vocabulary v;
    for (std::string_view w : {"is", "it", "a"}) v.add(std::string(w));
    for (std::size_t i = 0; i < categories; ++i) v.add(std::string(kCategoryWords[i]));
    for (std::size_t i = 0; i < supercategories; ++i) v.add(std::string(kSupercategoryWords[i]));
    for (std::size_t i = 0; i < colors; ++i) v.add(std::string(kColorWords[i]));
    for (std::string_view w : {"top", "bottom", "left", "right", "big", "small"}) v.add(std::string(w));
    return v;
  }

  // Arbitrary word list after the reserved block; used by tests.
  static Vocabulary from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
  }

  std::size_t size() const { return words_.size(); }

  int id(std::string_view word) const {
    auto it = ids_.find(std::string(word));
    if (it == ids_.end()) throw UnknownTokenError("unknown word '" + std::string(word) + "'");
    return it->second;
  }
  bool contains(std::string_view word) const { return ids_.count(std::string(word)) > 0; }

  const std::string& word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
      throw UnknownTokenError("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(words_.size()));
    return words_[static_cast<std::size_t>(id)];
  }

  // Tokens a question decoder may produce: "?" and every non-reserved word.
  bool emittable(int id) const {
    return id == kEnd || (id >= kReservedCount && static_cast<std::size_t>(id) < words_.size());
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    std::istringstream is{std::string(text)};
    std::string w;
    while (is >> w) out.push_back(id(w));
    return out;
  }

  std::string decode(const std::vector<int>& tokens) const {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) s += ' ';
      s += word(tokens[i]);
    }
    return s;
  }

  const std::vector<std::string>& words() const { return words_; }

 private:
  void add(std::string w) {
    if (ids_.count(w)) throw std::invalid_argument("duplicate vocabulary word '" + w + "'");
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(std::move(w));
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace vdst
