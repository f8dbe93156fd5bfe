#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pica/common.hpp"

namespace pica {

struct NormalizeOptions {
  // Leading/inner articles (a, an, the) are kept unless enabled; see README.
  bool strip_articles = false;
};

// Lowercase, drop ASCII punctuation, collapse whitespace.
inline std::string normalize_answer(const std::string& text, NormalizeOptions opts = {}) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  std::istringstream in(cleaned);
  std::string word, out;
  while (in >> word) {
    if (opts.strip_articles && (word == "a" || word == "an" || word == "the")) continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

inline std::vector<std::string> answer_tokens(const std::string& text, NormalizeOptions opts = {}) {
  std::istringstream in(normalize_answer(text, opts));
  std::vector<std::string> tokens;
  std::string w;
  while (in >> w) tokens.push_back(w);
  return tokens;
}

// Harmonic mean of token precision and recall over multisets.
inline double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return 2.0 * common / static_cast<double>(pred.size() + gold.size());
}

struct AnswerScore {
  int em = 0;
  double f1 = 0.0;
};

// EM and F1 against the best-matching reference.
inline AnswerScore score_answer(const std::string& prediction, const std::vector<std::string>& golds,
                                NormalizeOptions opts = {}) {
  if (golds.empty()) throw FormatError("score_answer: empty gold set");
  AnswerScore best;
  const auto pred_norm = normalize_answer(prediction, opts);
  const auto pred_tokens = answer_tokens(prediction, opts);
  for (const auto& g : golds) {
    if (normalize_answer(g, opts) == pred_norm) best.em = 1;
    best.f1 = std::max(best.f1, token_f1(pred_tokens, answer_tokens(g, opts)));
  }
  return best;
}

}  // namespace pica
