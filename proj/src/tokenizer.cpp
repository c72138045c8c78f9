#include <fmt/format.h>

#include <algorithm>
#include <set>

#include "xlrc/corpus.hpp"
#include "xlrc/error.hpp"
#include "xlrc/text.hpp"

namespace xlrc {

std::vector<TokenPiece> tokenize_with_offsets(std::string_view input) {
  const std::u32string cps = text::decode_utf8(input);
  std::vector<TokenPiece> out;
  std::string word;
  std::size_t word_begin = 0;
  auto flush = [&](std::size_t pos) {
    if (!word.empty()) out.push_back({std::move(word), word_begin, pos});
    word.clear();
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t cp = cps[i];
    if (text::is_whitespace(cp)) {
      flush(i);
    } else if (text::is_cjk(cp) || text::is_punctuation(cp)) {
      flush(i);
      std::string single;
      text::append_utf8(single, cp);
      out.push_back({std::move(single), i, i + 1});
    } else {
      if (word.empty()) word_begin = i;
      text::append_utf8(word, text::to_lower(cp));
    }
  }
  flush(cps.size());
  return out;
}

std::vector<std::string> tokenize(std::string_view input, std::string_view /*language*/) {
  std::vector<std::string> out;
  for (TokenPiece& piece : tokenize_with_offsets(input)) out.push_back(std::move(piece.text));
  return out;
}

// ---- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (std::string_view reserved : {kPadToken, kUnkToken, kClsToken, kSepToken}) {
    ids_.emplace(std::string(reserved), tokens_.size());
    tokens_.emplace_back(reserved);
  }
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> token_lists) {
  std::set<std::string> distinct;
  for (const auto& list : token_lists) distinct.insert(list.begin(), list.end());
  Vocabulary vocab;
  for (const std::string& token : distinct) {
    if (vocab.ids_.contains(token)) continue;
    vocab.ids_.emplace(token, vocab.tokens_.size());
    vocab.tokens_.push_back(token);
  }
  return vocab;
}

Vocabulary Vocabulary::build(std::span<const ParallelExample> examples) {
  std::vector<std::vector<std::string>> lists;
  for (const ParallelExample& ex : examples) {
    lists.push_back(tokenize(ex.target.passage));
    lists.push_back(tokenize(ex.target.question));
    for (const auto& [lang, src] : ex.sources) {
      lists.push_back(tokenize(src.passage));
      lists.push_back(tokenize(src.question));
    }
  }
  return build(lists);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary base;
  if (tokens.size() < base.tokens_.size() ||
      !std::equal(base.tokens_.begin(), base.tokens_.end(), tokens.begin())) {
    throw ValidationError("vocabulary must start with [PAD], [UNK], [CLS], [SEP]");
  }
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.ids_.clear();
  for (std::string& token : tokens) {
    if (!vocab.ids_.emplace(token, vocab.tokens_.size()).second) {
      throw ValidationError(fmt::format("duplicate vocabulary entry '{}'", token));
    }
    vocab.tokens_.push_back(std::move(token));
  }
  return vocab;
}

std::size_t Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(std::size_t id) const {
  if (id >= tokens_.size()) throw LookupError(fmt::format("token id {} out of range", id));
  return tokens_[id];
}

// ---- model input ---------------------------------------------------------------

TokenSequence encode_input(const ParallelExample& example, const std::string& language,
                           const Vocabulary& vocab, std::size_t max_len) {
  const bool is_target = language == example.target.language;
  const SourceText* source = nullptr;
  if (!is_target) {
    auto it = example.sources.find(language);
    if (it == example.sources.end()) {
      throw ContractError(fmt::format("example {} has no '{}' text", example.target.id, language));
    }
    source = &it->second;
  }
  const std::string& question = is_target ? example.target.question : source->question;
  const std::string& passage = is_target ? example.target.passage : source->passage;

  const std::vector<std::string> q_tokens = tokenize(question, language);
  if (max_len < 3 || q_tokens.size() > max_len - 3) {
    throw ContractError(fmt::format("question of {} ({} tokens, {}) does not fit max_len {}",
                                    example.target.id, q_tokens.size(), language, max_len));
  }
  const std::vector<TokenPiece> p_pieces = tokenize_with_offsets(passage);
  const std::size_t kept = std::min(p_pieces.size(), max_len - 3 - q_tokens.size());

  TokenSequence seq;
  seq.language = language;
  auto push = [&](const std::string& token, int segment) {
    seq.tokens.push_back(token);
    seq.token_ids.push_back(vocab.id_of(token));
    if (seq.token_ids.back() == Vocabulary::kUnk && token != Vocabulary::kUnkToken) ++seq.unknown_tokens;
    seq.segment_ids.push_back(segment);
  };
  push(std::string(Vocabulary::kClsToken), 0);
  for (const std::string& t : q_tokens) push(t, 0);
  push(std::string(Vocabulary::kSepToken), 0);
  const std::size_t passage_begin = seq.tokens.size();
  for (std::size_t i = 0; i < kept; ++i) push(p_pieces[i].text, 1);
  seq.passage_range = {passage_begin, passage_begin + kept};
  push(std::string(Vocabulary::kSepToken), 1);

  if (!is_target) return seq;
  if (example.target.is_impossible) {
    seq.answer_span = TokenSpan{0, 0};
    return seq;
  }
  if (example.target.answers.empty()) return seq;

  const Answer& answer = example.target.answers.front();
  const std::size_t char_begin = answer.answer_start;
  const std::size_t char_end = char_begin + text::decode_utf8(answer.text).size();
  std::optional<std::size_t> first, last;
  for (std::size_t i = 0; i < p_pieces.size(); ++i) {
    if (p_pieces[i].end > char_begin && p_pieces[i].begin < char_end) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) {
    throw ValidationError(fmt::format("answer of {} covers no passage token", example.target.id));
  }
  if (*last >= kept) {
    seq.answer_lost = true;
    return seq;
  }
  seq.answer_span = TokenSpan{passage_begin + *first, passage_begin + *last};
  return seq;
}

TokenizedExample tokenize_example(const ParallelExample& example, const Vocabulary& vocab,
                                  std::size_t max_len) {
  TokenizedExample out;
  out.id = example.target.id;
  out.target = encode_input(example, example.target.language, vocab, max_len);
  for (const auto& [lang, src] : example.sources) {
    out.sources.emplace(lang, encode_input(example, lang, vocab, max_len));
  }
  return out;
}

}  // namespace xlrc
