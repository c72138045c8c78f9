#include "xlrc/metrics.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "xlrc/error.hpp"
#include "xlrc/text.hpp"

namespace xlrc {

using nlohmann::json;

std::vector<std::string> normalize(std::string_view input, std::string_view /*language*/) {
  std::vector<std::string> units;
  std::string word;
  auto flush = [&] {
    if (!word.empty() && word != "a" && word != "an" && word != "the") units.push_back(word);
    word.clear();
  };
  for (char32_t cp : text::decode_utf8(input)) {
    if (text::is_whitespace(cp) || text::is_punctuation(cp)) {
      flush();
    } else if (text::is_cjk(cp)) {
      flush();
      std::string unit;
      text::append_utf8(unit, cp);
      units.push_back(std::move(unit));
    } else {
      text::append_utf8(word, text::to_lower(cp));
    }
  }
  flush();
  return units;
}

double f1_score(std::string_view prediction, std::string_view gold, std::string_view language) {
  const auto pred_units = normalize(prediction, language);
  const auto gold_units = normalize(gold, language);
  if (pred_units.empty() || gold_units.empty()) return pred_units.empty() && gold_units.empty() ? 1.0 : 0.0;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& u : gold_units) ++counts[u];
  std::size_t common = 0;
  for (const auto& u : pred_units) {
    auto it = counts.find(u);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred_units.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold_units.size());
  return 2.0 * precision * recall / (precision + recall);
}

bool exact_match(std::string_view prediction, std::string_view gold, std::string_view language) {
  return normalize(prediction, language) == normalize(gold, language);
}

std::vector<GoldEntry> golds_from_examples(std::span<const RawExample> examples) {
  std::vector<GoldEntry> out;
  for (const RawExample& ex : examples) {
    GoldEntry g{ex.id, {}};
    if (ex.is_impossible || ex.answers.empty()) {
      g.answers.emplace_back();
    } else {
      for (const Answer& a : ex.answers) g.answers.push_back(a.text);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<GoldEntry> golds_from_examples(std::span<const ParallelExample> examples) {
  std::vector<RawExample> targets;
  for (const ParallelExample& ex : examples) targets.push_back(ex.target);
  return golds_from_examples(targets);
}

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

EvalReport evaluate(const std::map<std::string, std::string>& predictions, std::span<const GoldEntry> golds) {
  EvalReport report;
  std::set<std::string> seen;
  double f1_total = 0.0, em_total = 0.0;
  for (const GoldEntry& gold : golds) {
    if (!seen.insert(gold.id).second) throw ValidationError(fmt::format("duplicate gold id '{}'", gold.id));
    QuestionScore q;
    q.id = gold.id;
    q.golds = gold.answers;
    auto it = predictions.find(gold.id);
    if (it == predictions.end()) {
      q.missing = true;
      ++report.missing_predictions;
    } else {
      q.prediction = it->second;
      for (const std::string& answer : gold.answers) {
        q.f1 = std::max(q.f1, f1_score(q.prediction, answer));
        q.em = std::max(q.em, exact_match(q.prediction, answer) ? 1.0 : 0.0);
      }
    }
    f1_total += q.f1;
    em_total += q.em;
    report.questions.push_back(std::move(q));
  }
  if (report.missing_predictions > 0) {
    spdlog::warn("{} of {} questions have no prediction; scored as 0", report.missing_predictions, golds.size());
  }
  if (!golds.empty()) {
    report.f1 = round2(100.0 * f1_total / static_cast<double>(golds.size()));
    report.em = round2(100.0 * em_total / static_cast<double>(golds.size()));
  }
  return report;
}

json EvalReport::to_json() const {
  json questions_json = json::array();
  for (const QuestionScore& q : questions) {
    questions_json.push_back({{"id", q.id},
                              {"f1", q.f1},
                              {"em", q.em},
                              {"prediction", q.prediction},
                              {"golds", q.golds},
                              {"missing", q.missing}});
  }
  return {{"f1", f1}, {"em", em}, {"missing_predictions", missing_predictions}, {"questions", questions_json}};
}

std::string EvalReport::summary() const { return fmt::format("F1 {:.2f}\nEM {:.2f}\n", f1, em); }

}  // namespace xlrc
