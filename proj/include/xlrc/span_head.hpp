#pragma once

// Start/end distributions over token positions, the cross-entropy objective,
// and answer decoding.

#include <cstddef>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xlrc/corpus.hpp"
#include "xlrc/tensor.hpp"

namespace xlrc {

inline constexpr double kLogClamp = 1e-12;
inline constexpr std::size_t kDefaultMaxAnswerLen = 30;

struct SpanHeadParams {
  Tensor w_start;  // 2h × 1
  Tensor b_start;  // [1]
  Tensor w_end;    // 2h × 1
  Tensor b_end;    // [1]

  static SpanHeadParams init(std::size_t input_dim, std::mt19937_64& rng);
  std::vector<std::pair<std::string, Tensor>> named() const;
};

struct SpanDistributions {
  Tensor start;  // [L]
  Tensor end;    // [L]
};

// [CLS] and passage positions are predictable; question, [SEP] and padding are not.
std::vector<bool> answer_mask(const TokenSequence& seq);

// Throws ContractError when the mask allows no position.
SpanDistributions predict_distributions(const Tensor& enhanced, const SpanHeadParams& params,
                                        const std::vector<bool>& mask);

// Gold token positions for one example (the one-hot labels in index form).
struct SpanLabel {
  std::size_t start = 0;
  std::size_t end = 0;
};

// -(1/K) Σ_k [log P_s(y_s) + log P_e(y_e)], probabilities floored at kLogClamp.
Tensor span_loss(std::span<const SpanDistributions> predictions, std::span<const SpanLabel> labels);

struct DecodedSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;
};

// argmax of start[i]·end[j] over start ≤ j ≤ i + max_answer_len - 1 within the
// range; ties prefer smaller i, then smaller j.
DecodedSpan decode_span(std::span<const double> start_probs, std::span<const double> end_probs,
                        TokenRange passage_range, std::size_t max_answer_len = kDefaultMaxAnswerLen);

// CJK tokens join without spaces, other tokens with one space.
std::string detokenize(std::span<const std::string> tokens);
// Empty when the span touches [CLS] or [SEP].
std::string extract_text(std::span<const std::string> tokens, TokenSpan span);
std::string extract_text(const TokenSequence& seq, TokenSpan span);

struct SpanPrediction {
  std::vector<double> start_probs;
  std::vector<double> end_probs;
  TokenSpan best_span;
  double best_score = 0.0;
  std::string answer_text;
};

// Decodes the best passage span; answers "" when the [CLS] pair scores higher.
SpanPrediction predict_answer(const TokenSequence& seq, const SpanDistributions& dists,
                              std::size_t max_answer_len = kDefaultMaxAnswerLen);

// Prediction file: JSON object mapping question id → answer string.
void write_predictions(const std::filesystem::path& path, const std::map<std::string, std::string>& predictions);
std::string write_predictions_text(const std::map<std::string, std::string>& predictions);
// Throws ValidationError on duplicate ids.
std::map<std::string, std::string> parse_predictions_text(std::string_view json_text);
std::map<std::string, std::string> read_predictions(const std::filesystem::path& path);

}  // namespace xlrc
