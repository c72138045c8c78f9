#pragma once

// F1 / exact-match scoring. CJK text is compared per character, other scripts
// per word, after lowercasing and dropping punctuation and English articles.

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xlrc/corpus.hpp"

namespace xlrc {

std::vector<std::string> normalize(std::string_view text, std::string_view language = {});

// Bag-of-units F1 in [0, 1]; two empty answers score 1.
double f1_score(std::string_view prediction, std::string_view gold, std::string_view language = {});
bool exact_match(std::string_view prediction, std::string_view gold, std::string_view language = {});

struct GoldEntry {
  std::string id;
  std::vector<std::string> answers;
};

// Unanswerable questions get a single empty gold answer.
std::vector<GoldEntry> golds_from_examples(std::span<const RawExample> examples);
std::vector<GoldEntry> golds_from_examples(std::span<const ParallelExample> examples);

struct QuestionScore {
  std::string id;
  double f1 = 0.0;  // in [0, 1]
  double em = 0.0;
  std::string prediction;
  std::vector<std::string> golds;
  bool missing = false;
};

struct EvalReport {
  double f1 = 0.0;  // percentage rounded to 2 decimals
  double em = 0.0;
  std::vector<QuestionScore> questions;
  std::size_t missing_predictions = 0;

  nlohmann::json to_json() const;
  // "F1 <v>\nEM <v>\n"
  std::string summary() const;
};

// Max over golds per question, then the arithmetic mean ×100. Missing
// predictions score 0 with a warning; duplicate gold ids throw ValidationError.
EvalReport evaluate(const std::map<std::string, std::string>& predictions, std::span<const GoldEntry> golds);

}  // namespace xlrc
