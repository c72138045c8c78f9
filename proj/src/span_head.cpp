#include "xlrc/span_head.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "init.hpp"
#include "xlrc/error.hpp"
#include "xlrc/text.hpp"

namespace xlrc {

using nlohmann::json;

SpanHeadParams SpanHeadParams::init(std::size_t input_dim, std::mt19937_64& rng) {
  SpanHeadParams p;
  p.w_start = detail::dense_weight(input_dim, 1, rng);
  p.b_start = detail::zeros_param(1);
  p.w_end = detail::dense_weight(input_dim, 1, rng);
  p.b_end = detail::zeros_param(1);
  return p;
}

std::vector<std::pair<std::string, Tensor>> SpanHeadParams::named() const {
  return {{"span.w_start", w_start}, {"span.b_start", b_start}, {"span.w_end", w_end}, {"span.b_end", b_end}};
}

std::vector<bool> answer_mask(const TokenSequence& seq) {
  std::vector<bool> mask(seq.size(), false);
  if (!mask.empty()) mask[0] = true;
  for (std::size_t i = seq.passage_range.begin; i < seq.passage_range.end && i < mask.size(); ++i) mask[i] = true;
  return mask;
}

SpanDistributions predict_distributions(const Tensor& enhanced, const SpanHeadParams& params,
                                        const std::vector<bool>& mask) {
  const std::size_t len = enhanced.rows();
  if (mask.size() != len) {
    throw ShapeError(fmt::format("predict_distributions: mask length {} for {} positions", mask.size(), len));
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw ContractError("predict_distributions: every position is masked");
  }
  auto distribution = [&](const Tensor& w, const Tensor& b) {
    const Tensor logits = transpose(affine(enhanced, w, b));  // 1 × L
    return reshape(softmax_rows(logits, mask), {len});
  };
  return {distribution(params.w_start, params.b_start), distribution(params.w_end, params.b_end)};
}

Tensor span_loss(std::span<const SpanDistributions> predictions, std::span<const SpanLabel> labels) {
  if (predictions.empty()) throw ContractError("span_loss: empty batch");
  if (predictions.size() != labels.size()) {
    throw ContractError(fmt::format("span_loss: {} predictions for {} labels", predictions.size(), labels.size()));
  }
  Tensor total;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const SpanDistributions& p = predictions[k];
    if (labels[k].start >= p.start.numel() || labels[k].end >= p.end.numel()) {
      throw ContractError(fmt::format("span_loss: label ({}, {}) outside sequence of length {}", labels[k].start,
                                      labels[k].end, p.start.numel()));
    }
    const Tensor term = add(log_clamped(pick(p.start, labels[k].start), kLogClamp),
                            log_clamped(pick(p.end, labels[k].end), kLogClamp));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, -1.0 / static_cast<double>(predictions.size()));
}

DecodedSpan decode_span(std::span<const double> start_probs, std::span<const double> end_probs,
                        TokenRange range, std::size_t max_answer_len) {
  if (range.empty()) throw ContractError("decode_span: empty passage range");
  if (max_answer_len == 0) throw ContractError("decode_span: max_answer_len must be positive");
  if (range.end > start_probs.size() || range.end > end_probs.size()) {
    throw ShapeError("decode_span: passage range exceeds the distributions");
  }
  DecodedSpan best{range.begin, range.begin, -1.0};
  for (std::size_t i = range.begin; i < range.end; ++i) {
    const std::size_t last = std::min(range.end, i + max_answer_len);
    for (std::size_t j = i; j < last; ++j) {
      const double score = start_probs[i] * end_probs[j];
      if (score > best.score) best = {i, j, score};
    }
  }
  return best;
}

std::string detokenize(std::span<const std::string> tokens) {
  auto is_cjk_token = [](const std::string& t) {
    const std::u32string cps = text::decode_utf8(t);
    return cps.size() == 1 && (text::is_cjk(cps[0]) || (text::is_punctuation(cps[0]) && cps[0] >= 0x3000));
  };
  std::string out;
  bool prev_cjk = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool cjk = is_cjk_token(tokens[i]);
    if (i > 0 && !cjk && !prev_cjk) out += ' ';
    out += tokens[i];
    prev_cjk = cjk;
  }
  return out;
}

std::string extract_text(std::span<const std::string> tokens, TokenSpan span) {
  if (span.start > span.end || span.end >= tokens.size()) {
    throw ContractError(fmt::format("extract_text: span ({}, {}) outside {} tokens", span.start, span.end,
                                    tokens.size()));
  }
  const auto slice = tokens.subspan(span.start, span.end - span.start + 1);
  for (const std::string& t : slice) {
    if (t == Vocabulary::kClsToken || t == Vocabulary::kSepToken) return {};
  }
  return detokenize(slice);
}

std::string extract_text(const TokenSequence& seq, TokenSpan span) { return extract_text(seq.tokens, span); }

SpanPrediction predict_answer(const TokenSequence& seq, const SpanDistributions& dists, std::size_t max_answer_len) {
  SpanPrediction pred;
  pred.start_probs.assign(dists.start.values().begin(), dists.start.values().end());
  pred.end_probs.assign(dists.end.values().begin(), dists.end.values().end());
  const double null_score = pred.start_probs[0] * pred.end_probs[0];
  if (seq.passage_range.empty()) {
    pred.best_score = null_score;
    return pred;
  }
  const DecodedSpan span = decode_span(pred.start_probs, pred.end_probs, seq.passage_range, max_answer_len);
  if (null_score > span.score) {
    pred.best_score = null_score;
    return pred;
  }
  pred.best_span = {span.start, span.end};
  pred.best_score = span.score;
  pred.answer_text = extract_text(seq, pred.best_span);
  return pred;
}

std::string write_predictions_text(const std::map<std::string, std::string>& predictions) {
  return json(predictions).dump(2) + "\n";
}

void write_predictions(const std::filesystem::path& path, const std::map<std::string, std::string>& predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << write_predictions_text(predictions);
}

std::map<std::string, std::string> parse_predictions_text(std::string_view json_text) {
  std::set<std::string> seen;
  json::parser_callback_t on_event = [&](int depth, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::key && depth == 1) {
      const std::string key = parsed.get<std::string>();
      if (!seen.insert(key).second) throw ValidationError(fmt::format("duplicate prediction id '{}'", key));
    }
    return true;
  };
  json doc;
  try {
    doc = json::parse(json_text, on_event);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("malformed prediction JSON at byte {}", e.byte), e.byte);
  }
  if (!doc.is_object()) throw SchemaError("prediction file must be a JSON object");
  std::map<std::string, std::string> out;
  for (const auto& [id, answer] : doc.items()) {
    if (!answer.is_string()) throw SchemaError(fmt::format("prediction for '{}' must be a string", id));
    out.emplace(id, answer.get<std::string>());
  }
  return out;
}

std::map<std::string, std::string> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_predictions_text(ss.str());
}

}  // namespace xlrc
