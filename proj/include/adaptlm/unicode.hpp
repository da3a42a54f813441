#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace adaptlm::unicode {

// Decodes UTF-8; invalid sequences become U+FFFD one byte at a time.
std::u32string decode(std::string_view utf8);
std::string encode(std::u32string_view codepoints);
void append_utf8(std::string& out, char32_t cp);

// Byte length of the code point starting at utf8[pos] (1 for invalid bytes).
std::size_t sequence_length(std::string_view utf8, std::size_t pos);

std::size_t codepoint_count(std::string_view utf8);

bool is_whitespace(char32_t cp);

// Lowercases and removes combining accents (Latin, Greek, Cyrillic ranges;
// other scripts pass through unchanged).
std::string fold_case_and_accents(std::string_view utf8);

// Splits on whitespace runs; no empty pieces.
std::vector<std::string> split_whitespace(std::string_view utf8);

// Collapses whitespace runs to one ASCII space and trims both ends.
std::string collapse_whitespace(std::string_view utf8);

}  // namespace adaptlm::unicode
