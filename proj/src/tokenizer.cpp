#include "adaptlm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "adaptlm/errors.hpp"
#include "adaptlm/unicode.hpp"

namespace adaptlm {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw FormatError("vocabulary entry " + std::to_string(i) + " is empty");
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw FormatError("duplicate vocabulary token '" + tokens_[i] + "' at ids " + std::to_string(it->second) + " and " +
                        std::to_string(i));
    }
  }
  auto require = [&](std::string_view name) {
    auto id = find(name);
    if (!id) throw FormatError("vocabulary is missing special token " + std::string(name));
    return *id;
  };
  pad_ = require(kPadToken);
  unk_ = require(kUnkToken);
  cls_ = require(kClsToken);
  sep_ = require(kSepToken);
  mask_ = require(kMaskToken);
  if (pad_ != 0) throw FormatError("[PAD] must be token 0, found at " + std::to_string(pad_));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!is_special(static_cast<TokenId>(i))) regular_.push_back(static_cast<TokenId>(i));
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Vocabulary::is_special(TokenId id) const {
  return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out.push_back('\n');
  }
  return out;
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  try {
    return Vocabulary(std::move(tokens));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  out << vocab.serialize();
  if (!out) throw DataError("failed writing vocabulary file " + path.string());
}

std::size_t TokenizedSequence::real_length() const {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), std::uint8_t{1}));
}

std::string normalize_for_wordpiece(std::string_view text) { return unicode::fold_case_and_accents(text); }

std::vector<TokenId> wordpiece(std::string_view word, const Vocabulary& vocab, const TokenizerOptions& options) {
  std::vector<std::size_t> bounds;  // byte offset of every code point, plus the end
  for (std::size_t pos = 0; pos < word.size(); pos += unicode::sequence_length(word, pos)) bounds.push_back(pos);
  bounds.push_back(word.size());
  const std::size_t chars = bounds.size() - 1;
  if (chars == 0) return {};
  if (chars > options.max_word_chars) return {vocab.unk_id()};

  std::vector<TokenId> pieces;
  std::string candidate;
  std::size_t start = 0;
  while (start < chars) {
    std::optional<TokenId> match;
    std::size_t end = chars;
    for (; end > start; --end) {
      candidate.clear();
      if (start > 0) candidate += kContinuationPrefix;
      candidate.append(word.substr(bounds[start], bounds[end] - bounds[start]));
      if ((match = vocab.find(candidate))) break;
    }
    if (!match) return {vocab.unk_id()};
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

TokenizedSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len,
                           const TokenizerOptions& options) {
  if (max_len < 3) throw ContractError("tokenize: max_len must be at least 3, got " + std::to_string(max_len));
  std::vector<TokenId> stream;
  for (const auto& word : unicode::split_whitespace(normalize_for_wordpiece(text))) {
    auto pieces = wordpiece(word, vocab, options);
    stream.insert(stream.end(), pieces.begin(), pieces.end());
  }
  TokenizedSequence seq;
  seq.original_length = stream.size();
  const std::size_t keep = std::min(stream.size(), max_len - 2);
  seq.ids.reserve(max_len);
  seq.ids.push_back(vocab.cls_id());
  seq.ids.insert(seq.ids.end(), stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(keep));
  seq.ids.push_back(vocab.sep_id());
  seq.attention_mask.assign(seq.ids.size(), 1);
  seq.ids.resize(max_len, vocab.pad_id());
  seq.attention_mask.resize(max_len, 0);
  return seq;
}

std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (const TokenId id : ids) {
    const std::string& piece = vocab.token(id);
    if (vocab.is_special(id)) continue;
    const bool continuation = piece.starts_with(kContinuationPrefix) && piece.size() > kContinuationPrefix.size();
    if (continuation) {
      out.append(piece, kContinuationPrefix.size());
    } else {
      if (!out.empty()) out.push_back(' ');
      out += piece;
    }
  }
  return out;
}

}  // namespace adaptlm
