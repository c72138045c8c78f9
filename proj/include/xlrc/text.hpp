#pragma once

// UTF-8 and character-class helpers shared by tokenization and scoring.

#include <string>
#include <string_view>

namespace xlrc::text {

// Throws ValidationError on malformed UTF-8.
std::u32string decode_utf8(std::string_view bytes);
std::string encode_utf8(std::u32string_view codepoints);
void append_utf8(std::string& out, char32_t cp);

// Han ideographs, kana, and Hangul syllables: each character is one token.
bool is_cjk(char32_t cp);
// ASCII punctuation plus general, CJK and full-width punctuation blocks.
bool is_punctuation(char32_t cp);
bool is_whitespace(char32_t cp);
// Lowercases ASCII, Latin-1 and Latin Extended-A letters; others unchanged.
char32_t to_lower(char32_t cp);

}  // namespace xlrc::text
