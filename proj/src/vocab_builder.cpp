#include <map>
#include <set>

#include "adaptlm/errors.hpp"
#include "adaptlm/tokenizer.hpp"
#include "adaptlm/unicode.hpp"

namespace adaptlm {

namespace {

struct WordState {
  std::vector<std::string> pieces;
  std::size_t count = 0;
};

std::string merged_piece(const std::string& left, const std::string& right) {
  return left + right.substr(kContinuationPrefix.size());
}

}  // namespace

Vocabulary build_vocab(std::span<const std::string> corpus, const VocabTrainerOptions& options) {
  const TokenizerOptions limits;
  std::map<std::string, std::size_t> word_counts;
  for (const auto& text : corpus) {
    for (auto& word : unicode::split_whitespace(normalize_for_wordpiece(text))) {
      if (unicode::codepoint_count(word) <= limits.max_word_chars) ++word_counts[std::move(word)];
    }
  }
  if (word_counts.empty()) throw DataError("build_vocab: corpus contains no words");

  std::set<std::string> alphabet;
  std::vector<WordState> words;
  words.reserve(word_counts.size());
  for (const auto& [word, count] : word_counts) {
    WordState state;
    state.count = count;
    for (std::size_t pos = 0; pos < word.size();) {
      const std::size_t len = unicode::sequence_length(word, pos);
      std::string ch = word.substr(pos, len);
      alphabet.insert(ch);
      state.pieces.push_back(pos == 0 ? ch : std::string(kContinuationPrefix) + ch);
      pos += len;
    }
    words.push_back(std::move(state));
  }

  std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                                  std::string(kSepToken), std::string(kMaskToken)};
  const std::size_t seed_size = tokens.size() + 2 * alphabet.size();
  if (options.target_size <= seed_size) {
    throw ContractError("build_vocab: target size " + std::to_string(options.target_size) +
                        " must exceed specials plus alphabet (" + std::to_string(seed_size) + ")");
  }
  for (const auto& ch : alphabet) tokens.push_back(ch);
  for (const auto& ch : alphabet) tokens.push_back(std::string(kContinuationPrefix) + ch);
  std::set<std::string> known(tokens.begin(), tokens.end());

  while (tokens.size() < options.target_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.pieces.size(); ++i) pair_counts[{w.pieces[i], w.pieces[i + 1]}] += w.count;
    }
    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (!best || best_count < std::max<std::size_t>(options.min_frequency, 1)) break;

    const std::string left = best->first, right = best->second;
    const std::string merged = merged_piece(left, right);
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.pieces.size());
      for (std::size_t i = 0; i < w.pieces.size(); ++i) {
        if (i + 1 < w.pieces.size() && w.pieces[i] == left && w.pieces[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(std::move(w.pieces[i]));
        }
      }
      w.pieces = std::move(next);
    }
    // Two different pairs can spell the same piece; only the first adds it.
    if (known.insert(merged).second) tokens.push_back(merged);
  }
  return Vocabulary(std::move(tokens));
}

}  // namespace adaptlm
