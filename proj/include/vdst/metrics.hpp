#pragma once

// Dialogue-quality measures over token sequences.

#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "vdst/env.hpp"
#include "vdst/vocab.hpp"

namespace vdst {

using TokenDialogue = std::vector<std::vector<int>>;

inline bool has_repeated_question(const TokenDialogue& questions) {
  std::set<std::vector<int>> seen;
  for (const auto& q : questions)
    if (!seen.insert(q).second) return true;
  return false;
}

// Fraction of games containing at least one exact repeat; 0 for no games.
inline double repeated_question_rate(const std::vector<TokenDialogue>& games) {
  if (games.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& g : games) hits += has_repeated_question(g);
  return static_cast<double>(hits) / static_cast<double>(games.size());
}

// Unique word tokens over all word tokens, counting "?" as a word.
inline double lexical_diversity(const std::vector<TokenDialogue>& games) {
  std::set<int> unique;
  std::size_t total = 0;
  for (const auto& g : games)
    for (const auto& q : g)
      for (int t : q) {
        unique.insert(t);
        ++total;
      }
  if (total == 0) throw std::invalid_argument("lexical_diversity: no words");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

enum class QuestionLabel { entity, attribute, other };

inline QuestionLabel label_question(const std::vector<int>& tokens, const Vocabulary& vocab) {
  const auto q = parse_question(tokens, vocab);
  if (!q) return QuestionLabel::other;
  return is_entity(q->kind) ? QuestionLabel::entity : QuestionLabel::attribute;
}

// entity+ then attribute*, where the switch happens right after the first
// "yes" to an entity question and entity questions stop once one is confirmed.
inline bool adheres_to_strategy(const std::vector<QuestionLabel>& labels, const std::vector<Answer>& answers) {
  if (labels.empty() || labels.size() != answers.size() || labels[0] != QuestionLabel::entity) return false;
  bool confirmed = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == QuestionLabel::other) return false;
    if (!confirmed) {
      if (labels[i] != QuestionLabel::entity) return false;
      if (answers[i] == Answer::yes) confirmed = true;
    } else if (labels[i] != QuestionLabel::attribute) {
      return false;
    }
  }
  return true;
}

// Normal-approximation 95% half-width of a proportion.
inline double proportion_half_width(double rate, std::size_t n) {
  if (n == 0) return 0.0;
  return 1.96 * std::sqrt(rate * (1.0 - rate) / static_cast<double>(n));
}

}  // namespace vdst
