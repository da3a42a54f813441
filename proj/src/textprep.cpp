#include "adaptlm/textprep.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>

#include "adaptlm/errors.hpp"
#include "adaptlm/unicode.hpp"

namespace adaptlm {

namespace {

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_';
}

bool is_ascii_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool starts_with_ci(std::string_view text, std::size_t pos, std::string_view prefix) {
  if (pos + prefix.size() > text.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[pos + i])) != prefix[i]) return false;
  }
  return true;
}

std::optional<std::size_t> url_start(std::string_view token) {
  for (std::size_t pos = 0; pos < token.size(); ++pos) {
    if (pos > 0 && is_ascii_alnum(token[pos - 1])) continue;
    if (starts_with_ci(token, pos, "http://") || starts_with_ci(token, pos, "https://") ||
        starts_with_ci(token, pos, "www.")) {
      return pos;
    }
  }
  return std::nullopt;
}

std::string replace_mentions(std::string_view text, const std::string& placeholder) {
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const bool boundary = pos == 0 || !is_word_char(text[pos - 1]);
    if (text[pos] == '@' && boundary && pos + 1 < text.size() && is_word_char(text[pos + 1])) {
      std::size_t end = pos + 1;
      while (end < text.size() && is_word_char(text[end])) ++end;
      const std::string_view mention = text.substr(pos, end - pos);
      out += mention == placeholder ? std::string(mention) : placeholder;
      pos = end;
    } else {
      out.push_back(text[pos++]);
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::string>> read_tab_lines(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(std::string("cannot open ") + what + " " + path.string());
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.emplace_back(number, std::move(line));
  }
  return lines;
}

}  // namespace

void validate(const PrepConfig& cfg) {
  if (cfg.url_placeholder.empty()) throw ConfigError("preprocess.url_placeholder must be non-empty");
  if (cfg.user_placeholder.empty()) throw ConfigError("preprocess.user_placeholder must be non-empty");
  if (cfg.min_words < 1) throw ConfigError("preprocess.min_words must be at least 1");
  if (!(cfg.unknown_word_base > 1.0)) throw ConfigError("preprocess.unknown_word_base must be greater than 1");
}

Lexicon::Lexicon(std::map<std::string, std::uint64_t> counts) {
  for (auto& [word, count] : counts) {
    if (count == 0) throw DataError("lexicon count for '" + word + "' must be positive");
    total_ += count;
    counts_.emplace(word, count);
  }
}

std::uint64_t Lexicon::count(std::string_view word) const {
  auto it = counts_.find(word);
  return it == counts_.end() ? 0 : it->second;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& [number, line] : read_tab_lines(path, "lexicon")) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(located(path.string(), number, "expected word<TAB>count"));
    }
    std::string word = unicode::fold_case_and_accents(line.substr(0, tab));
    const std::string_view count_text = std::string_view(line).substr(tab + 1);
    std::uint64_t count = 0;
    const auto [ptr, ec] = std::from_chars(count_text.data(), count_text.data() + count_text.size(), count);
    if (ec != std::errc{} || ptr != count_text.data() + count_text.size() || count == 0) {
      throw FormatError(located(path.string(), number, "count must be a positive integer"));
    }
    if (!counts.emplace(std::move(word), count).second) {
      throw FormatError(located(path.string(), number, "duplicate word"));
    }
  }
  return Lexicon(std::move(counts));
}

EmojiMap::EmojiMap(std::map<std::string, std::string> entries) {
  for (auto& [key, name] : entries) {
    if (key.empty()) throw FormatError("emoji map: empty emoji sequence");
    max_key_bytes_ = std::max(max_key_bytes_, key.size());
    first_bytes_[static_cast<unsigned char>(key[0])] = true;
    entries_.emplace(key, name);
  }
}

std::optional<std::pair<std::size_t, std::string_view>> EmojiMap::match(std::string_view text, std::size_t pos) const {
  if (pos >= text.size() || !first_bytes_[static_cast<unsigned char>(text[pos])]) return std::nullopt;
  std::vector<std::size_t> ends;
  for (std::size_t p = pos; p < text.size() && p - pos < max_key_bytes_;) {
    p += unicode::sequence_length(text, p);
    if (p - pos <= max_key_bytes_) ends.push_back(p);
  }
  for (auto it = ends.rbegin(); it != ends.rend(); ++it) {
    auto found = entries_.find(text.substr(pos, *it - pos));
    if (found != entries_.end()) return std::make_pair(*it - pos, std::string_view(found->second));
  }
  return std::nullopt;
}

EmojiMap load_emoji_map(const std::filesystem::path& path) {
  std::map<std::string, std::string> entries;
  for (const auto& [number, line] : read_tab_lines(path, "emoji map")) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(located(path.string(), number, "expected emoji<TAB>:name:"));
    }
    std::string key = line.substr(0, tab);
    std::string name = line.substr(tab + 1);
    const bool well_formed = name.size() > 2 && name.front() == ':' && name.back() == ':' &&
                             std::none_of(name.begin(), name.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
    if (!well_formed) throw FormatError(located(path.string(), number, "name must look like :name:"));
    if (!entries.emplace(std::move(key), std::move(name)).second) {
      throw FormatError(located(path.string(), number, "duplicate emoji"));
    }
  }
  return EmojiMap(std::move(entries));
}

std::string normalize(std::string_view text, const PrepConfig& cfg) {
  std::string out;
  for (const auto& token : unicode::split_whitespace(text)) {
    if (!out.empty()) out.push_back(' ');
    if (auto start = url_start(token)) {
      out += replace_mentions(std::string_view(token).substr(0, *start), cfg.user_placeholder);
      out += cfg.url_placeholder;
    } else {
      out += replace_mentions(token, cfg.user_placeholder);
    }
  }
  return out;
}

std::string demojize(std::string_view text, const EmojiMap& mapping) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (auto hit = mapping.match(text, pos)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
      out += hit->second;
      pending_space = true;
      pos += hit->first;
      continue;
    }
    const std::size_t len = unicode::sequence_length(text, pos);
    if (pending_space) {
      if (text[pos] != ' ') out.push_back(' ');
      pending_space = false;
    }
    out.append(text.substr(pos, len));
    pos += len;
  }
  return out;
}

double piece_score(std::string_view piece, const Lexicon& lexicon, const SegmentOptions& options) {
  const double total = static_cast<double>(std::max<std::uint64_t>(lexicon.total(), 1));
  if (const auto count = lexicon.count(piece); count > 0) return std::log(static_cast<double>(count) / total);
  const double length = static_cast<double>(unicode::codepoint_count(piece));
  return -std::log(total) - length * std::log(options.unknown_word_base);
}

std::vector<std::string> segment_hashtag(std::string_view tag, const Lexicon& lexicon, const SegmentOptions& options) {
  if (!tag.empty() && tag.front() == '#') tag.remove_prefix(1);
  const std::string body = unicode::fold_case_and_accents(tag);
  std::vector<std::size_t> bounds;
  for (std::size_t pos = 0; pos < body.size(); pos += unicode::sequence_length(body, pos)) bounds.push_back(pos);
  bounds.push_back(body.size());
  const std::size_t n = bounds.size() - 1;
  if (n == 0) return {};

  struct Cell {
    double score = 0.0;
    std::size_t pieces = 0;
    std::size_t prev = 0;
    bool reached = false;
  };
  std::vector<Cell> best(n + 1);
  best[0].reached = true;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double cand = best[j].score + piece_score(std::string_view(body).substr(bounds[j], bounds[i] - bounds[j]), lexicon, options);
      const std::size_t pieces = best[j].pieces + 1;
      Cell& cell = best[i];
      bool take = !cell.reached;
      if (!take) {
        const double tol = 1e-9 * std::max({1.0, std::abs(cand), std::abs(cell.score)});
        take = cand > cell.score + tol || (std::abs(cand - cell.score) <= tol && pieces < cell.pieces);
      }
      if (take) cell = Cell{cand, pieces, j, true};
    }
  }
  std::vector<std::string> words;
  for (std::size_t i = n; i > 0; i = best[i].prev) {
    words.push_back(body.substr(bounds[best[i].prev], bounds[i] - bounds[best[i].prev]));
  }
  std::reverse(words.begin(), words.end());
  return words;
}

bool keep_instance(std::string_view text, const PrepConfig& cfg) {
  const std::string normalized = normalize(text, cfg);
  const auto words = unicode::split_whitespace(normalized).size();
  return words >= cfg.min_words && unicode::codepoint_count(normalized) >= cfg.min_chars;
}

std::string prepare(std::string_view text, const PrepConfig& cfg, const Lexicon* lexicon, const EmojiMap* mapping) {
  std::string current = normalize(text, cfg);
  if (mapping) current = demojize(current, *mapping);
  if (lexicon) {
    SegmentOptions options{cfg.unknown_word_base};
    std::string out;
    for (const auto& token : unicode::split_whitespace(current)) {
      if (!out.empty()) out.push_back(' ');
      if (token.size() < 2 || token[0] != '#' || !is_ascii_alnum(token[1])) {
        out += token;
        continue;
      }
      std::size_t end = 1;
      while (end < token.size() && is_ascii_alnum(token[end])) ++end;
      const auto words = segment_hashtag(std::string_view(token).substr(0, end), *lexicon, options);
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
      }
      out.append(token, end);
    }
    current = std::move(out);
  }
  return unicode::collapse_whitespace(current);
}

}  // namespace adaptlm
