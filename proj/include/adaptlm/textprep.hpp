#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace adaptlm {

struct PrepConfig {
  std::string url_placeholder = "URL";
  std::string user_placeholder = "USER";
  std::optional<std::filesystem::path> emoji_map_path;
  std::optional<std::filesystem::path> lexicon_path;
  std::size_t min_words = 2;
  std::size_t min_chars = 18;   // keep iff >= min_chars code points
  bool demojize = true;
  bool segment_hashtags = true;
  double unknown_word_base = 10.0;  // out-of-lexicon piece: 1 / (total * base^len)
};

// Throws ConfigError naming the first invalid field.
void validate(const PrepConfig& cfg);

// Unigram counts for hashtag segmentation.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::map<std::string, std::uint64_t> counts);

  std::uint64_t count(std::string_view word) const;
  std::uint64_t total() const { return total_; }
  std::size_t size() const { return counts_.size(); }

 private:
  std::map<std::string, std::uint64_t, std::less<>> counts_;
  std::uint64_t total_ = 0;
};

// "word<TAB>count" per line; words are lowercased on load.
Lexicon load_lexicon(const std::filesystem::path& path);

// Code-point sequence -> ":name:" with longest-match lookup.
class EmojiMap {
 public:
  EmojiMap() = default;
  explicit EmojiMap(std::map<std::string, std::string> entries);

  // Byte length of the longest entry matching text at pos, with its name.
  std::optional<std::pair<std::size_t, std::string_view>> match(std::string_view text, std::size_t pos) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  std::size_t max_key_bytes_ = 0;
  bool first_bytes_[256] = {};
};

// "emoji<TAB>:name:" per line; blank lines ignored.
EmojiMap load_emoji_map(const std::filesystem::path& path);

// URL tokens -> url_placeholder, @mentions -> user_placeholder, whitespace
// collapsed and trimmed.
std::string normalize(std::string_view text, const PrepConfig& cfg);

// Mapped emoji become their name token separated from neighbours by one
// space. Everything else is left byte-for-byte intact.
std::string demojize(std::string_view text, const EmojiMap& mapping);

struct SegmentOptions {
  double unknown_word_base = 10.0;
};

// Log-probability of one piece under the lexicon.
double piece_score(std::string_view piece, const Lexicon& lexicon, const SegmentOptions& options = {});

// Maximum-score unigram segmentation of a hashtag body (leading '#' is
// stripped, text lowercased). Near-equal scores (relative 1e-9) prefer fewer
// pieces.
std::vector<std::string> segment_hashtag(std::string_view tag, const Lexicon& lexicon,
                                         const SegmentOptions& options = {});

bool keep_instance(std::string_view text, const PrepConfig& cfg);

// normalize -> demojize -> hashtag segmentation -> whitespace collapse.
// Null mapping or lexicon skips that stage.
std::string prepare(std::string_view text, const PrepConfig& cfg, const Lexicon* lexicon, const EmojiMap* mapping);

}  // namespace adaptlm
