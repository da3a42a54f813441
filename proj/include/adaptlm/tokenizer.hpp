#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adaptlm {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kContinuationPrefix = "##";

// WordPiece symbol table. Token ids are positions in the token list, which
// is exactly the line order of vocab.txt. [PAD] must be id 0.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenId pad_id() const { return pad_; }
  TokenId unk_id() const { return unk_; }
  TokenId cls_id() const { return cls_; }
  TokenId sep_id() const { return sep_; }
  TokenId mask_id() const { return mask_; }
  bool is_special(TokenId id) const;

  // Ids that are not one of the five special tokens, ascending.
  const std::vector<TokenId>& regular_ids() const { return regular_; }

  // One token per line, '\n' terminated.
  std::string serialize() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<TokenId> regular_;
  TokenId pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0, mask_ = 0;
};

Vocabulary load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);

struct TokenizedSequence {
  std::vector<TokenId> ids;              // [CLS] ... [SEP] [PAD]...
  std::vector<std::uint8_t> attention_mask;  // 1 on real tokens
  std::size_t original_length = 0;       // wordpieces before truncation and framing

  std::size_t real_length() const;
};

struct TokenizerOptions {
  std::size_t max_word_chars = 100;  // longer words become [UNK]
};

// Lowercasing and accent removal applied before matching.
std::string normalize_for_wordpiece(std::string_view text);

// Greedy longest-match-first pieces for one already-normalized word; returns
// {[UNK]} when some position has no matching piece.
std::vector<TokenId> wordpiece(std::string_view word, const Vocabulary& vocab, const TokenizerOptions& options = {});

// Whitespace split, WordPiece per word, head kept on truncation to
// max_len - 2, framed with [CLS]/[SEP] and padded to exactly max_len.
TokenizedSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len,
                           const TokenizerOptions& options = {});

// Drops special tokens and glues "##" pieces onto the previous piece.
std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

struct VocabTrainerOptions {
  std::size_t target_size = 30000;
  std::size_t min_frequency = 2;
};

// Frequency-driven WordPiece trainer: specials, then every observed character
// in both word-initial and "##" forms, then repeated best-pair merges.
// Highest count wins; ties go to the lexicographically smallest
// (left, right) piece pair. Stops at target_size or when no pair reaches
// min_frequency.
Vocabulary build_vocab(std::span<const std::string> corpus, const VocabTrainerOptions& options);

}  // namespace adaptlm
