#pragma once

// SQuAD-format ingestion, multilingual parallel corpus construction,
// tokenization and model input assembly ([CLS] question [SEP] passage [SEP]).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace xlrc {

struct Answer {
  std::string text;
  std::size_t answer_start = 0;  // offset in Unicode codepoints into the passage

  bool operator==(const Answer&) const = default;
};

struct RawExample {
  std::string id;
  std::string passage;
  std::string question;
  std::vector<Answer> answers;
  std::string language;
  bool is_impossible = false;  // SQuAD 2.0 unanswerable question

  bool operator==(const RawExample&) const = default;
};

struct SourceText {
  std::string passage;
  std::string question;

  bool operator==(const SourceText&) const = default;
};

// A target-language example plus its translations. Only the target carries answers.
struct ParallelExample {
  RawExample target;
  std::map<std::string, SourceText> sources;  // keyed by language code

  bool operator==(const ParallelExample&) const = default;
};

struct Translation {
  std::string id;
  std::string language;
  std::string passage;
  std::string question;
};

struct MissingTranslation {
  std::string id;
  std::string language;

  bool operator==(const MissingTranslation&) const = default;
};

struct ParallelCorpus {
  std::vector<ParallelExample> examples;
  // (id, language) pairs where some other example has that language but this one does not.
  std::vector<MissingTranslation> missing;
};

// ---- SQuAD I/O --------------------------------------------------------------

// Throws ParseError (with byte offset) on malformed JSON, SchemaError on a
// missing field, ValidationError when an answer offset does not match its text.
// An empty `language` is detected from the script of each passage.
std::vector<RawExample> parse_squad(const std::filesystem::path& path,
                                    const std::string& language = {});
std::vector<RawExample> parse_squad_text(std::string_view json, const std::string& language = {});
std::string write_squad_text(std::span<const RawExample> examples);
void write_squad(const std::filesystem::path& path, std::span<const RawExample> examples);

// Checks every answer against the passage; throws ValidationError naming the id.
void validate_example(const RawExample& example);
std::string detect_language(std::string_view text);

// ---- parallel corpora ----------------------------------------------------------

ParallelCorpus build_parallel_corpus(std::span<const RawExample> targets,
                                     std::span<const Translation> translations);

// JSON Lines, one ParallelExample per line.
std::string write_parallel_corpus_text(std::span<const ParallelExample> examples);
void write_parallel_corpus(const std::filesystem::path& path,
                           std::span<const ParallelExample> examples);
std::vector<ParallelExample> parse_parallel_corpus_text(std::string_view jsonl);
std::vector<ParallelExample> read_parallel_corpus(const std::filesystem::path& path);

// Translation records, JSON Lines {"id","passage","question"}; one file per language.
std::vector<Translation> read_translations(const std::filesystem::path& path,
                                           const std::string& language);

// ---- pseudo-translation ---------------------------------------------------------

using Lexicon = std::map<std::string, std::string>;

// Two-column tab-separated file: source token, translated token.
Lexicon parse_lexicon_text(std::string_view tsv);
Lexicon read_lexicon(const std::filesystem::path& path);

// Token-by-token lexicon substitution joined by single spaces. Unmapped tokens
// pass through as "<lang>_<token>".
SourceText pseudo_translate(const RawExample& example, const std::string& language,
                            const Lexicon& lexicon);

// ---- tokenization -------------------------------------------------------------

struct TokenPiece {
  std::string text;
  std::size_t begin = 0;  // codepoint offsets into the source text, half-open
  std::size_t end = 0;
};

std::vector<TokenPiece> tokenize_with_offsets(std::string_view text);
std::vector<std::string> tokenize(std::string_view text, std::string_view language = {});

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kSep = 3;
  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";
  static constexpr std::string_view kClsToken = "[CLS]";
  static constexpr std::string_view kSepToken = "[SEP]";

  Vocabulary();
  // Reserved ids first, then every distinct token in lexicographic byte order.
  static Vocabulary build(std::span<const std::vector<std::string>> token_lists);
  // Every token of every text (target and sources) in the examples.
  static Vocabulary build(std::span<const ParallelExample> examples);
  // Inverse of tokens(); validates reserved entries and uniqueness.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.contains(token); }
  std::size_t id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(std::size_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct TokenSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive

  bool operator==(const TokenSpan&) const = default;
};

struct TokenRange {
  std::size_t begin = 0;  // half-open
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const TokenRange&) const = default;
};

struct TokenSequence {
  std::string language;
  std::vector<std::string> tokens;
  std::vector<std::size_t> token_ids;
  std::vector<int> segment_ids;
  TokenRange passage_range;
  std::optional<TokenSpan> answer_span;  // target language only
  bool answer_lost = false;              // answer truncated away; excluded from training
  std::size_t unknown_tokens = 0;

  std::size_t size() const { return tokens.size(); }
};

// [CLS] question [SEP] passage [SEP], passage right-truncated to max_len.
// Throws ContractError when the question alone does not fit in max_len - 3.
TokenSequence encode_input(const ParallelExample& example, const std::string& language,
                           const Vocabulary& vocab, std::size_t max_len);

// An example encoded in its target and every source language.
struct TokenizedExample {
  std::string id;
  TokenSequence target;
  std::map<std::string, TokenSequence> sources;
};

TokenizedExample tokenize_example(const ParallelExample& example, const Vocabulary& vocab,
                                  std::size_t max_len);

// ---- synthetic desk corpus ---------------------------------------------------------

// Template-generated Chinese fact passages ("王住在京。李喜欢茶。") with
// questions whose answer is a single character, pseudo-translated into each
// requested source language with a built-in lexicon.
struct SyntheticOptions {
  std::size_t count = 32;
  std::uint64_t seed = 0;
  std::string id_prefix = "syn";
  std::vector<std::string> source_languages = {"en", "ja"};
  std::size_t facts_per_passage = 3;
  // passage + "\n" + question keys that must not be generated (held-out splits).
  std::vector<std::string> exclude;
};

std::vector<RawExample> generate_synthetic_targets(const SyntheticOptions& options);
std::vector<ParallelExample> generate_synthetic_corpus(const SyntheticOptions& options);
Lexicon synthetic_lexicon(const std::string& language);
std::string example_key(const RawExample& example);

}  // namespace xlrc
