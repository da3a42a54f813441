#include "adaptlm/unicode.hpp"

#include <algorithm>
#include <iterator>

namespace adaptlm::unicode {

namespace {

struct FoldEntry {
  char32_t cp;
  const char* replacement;
};

constexpr FoldEntry kFoldTable[] = {
#include "unicode_fold_table.inc"
};

}  // namespace

std::size_t sequence_length(std::string_view s, std::size_t pos) {
  const auto lead = static_cast<unsigned char>(s[pos]);
  std::size_t len = 1;
  if (lead >= 0xF0 && lead <= 0xF4) len = 4;
  else if (lead >= 0xE0) len = lead <= 0xEF ? 3 : 1;
  else if (lead >= 0xC2 && lead <= 0xDF) len = 2;
  if (len == 1 || pos + len > s.size()) return 1;
  for (std::size_t i = 1; i < len; ++i) {
    if ((static_cast<unsigned char>(s[pos + i]) & 0xC0) != 0x80) return 1;
  }
  return len;
}

std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto lead = static_cast<unsigned char>(s[pos]);
    const std::size_t len = sequence_length(s, pos);
    char32_t cp;
    if (len == 1) {
      cp = lead < 0x80 ? lead : 0xFFFD;
    } else {
      cp = lead & (len == 2 ? 0x1F : len == 3 ? 0x0F : 0x07);
      for (std::size_t i = 1; i < len; ++i) cp = (cp << 6) | (static_cast<unsigned char>(s[pos + i]) & 0x3F);
    }
    out.push_back(cp);
    pos += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size());
  for (auto cp : cps) append_utf8(out, cp);
  return out;
}

std::size_t codepoint_count(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t pos = 0; pos < s.size(); pos += sequence_length(s, pos)) ++n;
  return n;
}

bool is_whitespace(char32_t cp) {
  switch (cp) {
    case U' ':
    case U'\t':
    case U'\n':
    case U'\r':
    case U'\v':
    case U'\f':
    case 0x00A0:
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202F:
    case 0x205F:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::string fold_case_and_accents(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : decode(s)) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp >= U'A' && cp <= U'Z' ? cp + 32 : cp));
      continue;
    }
    const auto* it = std::lower_bound(std::begin(kFoldTable), std::end(kFoldTable), cp,
                                      [](const FoldEntry& e, char32_t key) { return e.cp < key; });
    if (it != std::end(kFoldTable) && it->cp == cp) {
      out += it->replacement;
    } else {
      append_utf8(out, cp);
    }
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> pieces;
  std::string current;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t len = sequence_length(s, pos);
    const auto cps = decode(s.substr(pos, len));
    if (is_whitespace(cps[0])) {
      if (!current.empty()) pieces.push_back(std::move(current));
      current.clear();
    } else {
      current.append(s.substr(pos, len));
    }
    pos += len;
  }
  if (!current.empty()) pieces.push_back(std::move(current));
  return pieces;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  for (const auto& piece : split_whitespace(s)) {
    if (!out.empty()) out.push_back(' ');
    out += piece;
  }
  return out;
}

}  // namespace adaptlm::unicode
