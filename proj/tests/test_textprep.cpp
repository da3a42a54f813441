#include <gtest/gtest.h>

#include <cmath>

#include "adaptlm/corpus.hpp"
#include "adaptlm/errors.hpp"
#include "adaptlm/rng.hpp"
#include "adaptlm/textprep.hpp"
#include "adaptlm/unicode.hpp"
#include "test_support.hpp"

using namespace adaptlm;
using namespace adaptlm::testing;

namespace {

const EmojiMap& grin_map() {
  static const EmojiMap m(std::map<std::string, std::string>{{"😀", ":grinning_face:"}});
  return m;
}

}  // namespace

TEST(Normalize, Examples) {
  PrepConfig cfg;
  EXPECT_EQ(normalize("@bob see https://x.io/y now", cfg), "USER see URL now");
  EXPECT_EQ(normalize("plain  text ", cfg), "plain text");
  EXPECT_EQ(normalize("", cfg), "");
  EXPECT_EQ(normalize("go to www.site.org\tor http://a.b", cfg), "go to URL or URL");
  cfg.user_placeholder = "@USER";
  EXPECT_EQ(normalize("hi @a_1 and @b", cfg), "hi @USER and @USER");
}

TEST(Normalize, SubstitutionIsOneForOne) {
  Rng rng = make_rng(1, "norm");
  const std::vector<std::string> parts{"word", "@user1", "http://x.y/z", "www.a.b", "#tag", "@", "email@host", "ok!"};
  PrepConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    std::size_t tokens = 0;
    for (std::size_t n = uniform_index(rng, 8); n > 0; --n, ++tokens) {
      text += parts[uniform_index(rng, parts.size())] + std::string(1 + uniform_index(rng, 3), ' ');
    }
    EXPECT_EQ(unicode::split_whitespace(normalize(text, cfg)).size(), tokens) << text;
  }
}

TEST(Demojize, Examples) {
  EXPECT_EQ(demojize("good 😀", grin_map()), "good :grinning_face:");
  EXPECT_EQ(demojize("no emoji here", grin_map()), "no emoji here");
  EXPECT_EQ(demojize("odd 🦀 one", grin_map()), "odd 🦀 one");
  EXPECT_EQ(demojize("a😀😀b", grin_map()), "a :grinning_face: :grinning_face: b");
}

TEST(Demojize, LongestMatchWins) {
  const EmojiMap m(std::map<std::string, std::string>{{"❤", ":heart:"}, {"❤️", ":red_heart:"}});
  EXPECT_EQ(demojize("x❤️y❤", m), "x :red_heart: y :heart:");
}

TEST(EmojiMapFile, MalformedLineIsFormatError) {
  TempDir dir("emoji");
  {
    std::ofstream out(dir / "bad.tsv");
    out << "😀\t:grinning_face:\n" << "no tab here\n";
  }
  EXPECT_THROW(load_emoji_map(dir / "bad.tsv"), FormatError);
  EXPECT_EQ(load_emoji_map(fixture("emoji_map.tsv")).size(), 6u);
}

TEST(SegmentHashtag, Examples) {
  const Lexicon two(std::map<std::string, std::uint64_t>{{"hello", 5}, {"world", 5}});
  EXPECT_EQ(segment_hashtag("#helloworld", two), (std::vector<std::string>{"hello", "world"}));
  const Lexicon one(std::map<std::string, std::uint64_t>{{"hello", 1}});
  EXPECT_EQ(segment_hashtag("#hello", one), (std::vector<std::string>{"hello"}));
  EXPECT_EQ(segment_hashtag("#zqxj", Lexicon{}), (std::vector<std::string>{"zqxj"}));
  EXPECT_EQ(segment_hashtag("#HelloWorld", two), (std::vector<std::string>{"hello", "world"}));
}

TEST(SegmentHashtag, PieceScore) {
  const Lexicon lex(std::map<std::string, std::uint64_t>{{"a", 3}, {"b", 1}});
  EXPECT_NEAR(piece_score("a", lex), std::log(3.0 / 4.0), 1e-12);
  EXPECT_NEAR(piece_score("zz", lex), std::log(1.0 / (4.0 * 100.0)), 1e-12);
}

// Exhaustive enumeration of all 2^(n-1) splits under piece_score, best
// score first, then fewer pieces on ties.
TEST(SegmentHashtag, MatchesExhaustiveOracle) {
  Rng rng = make_rng(2, "seg");
  const std::string alphabet = "abcd";
  for (int trial = 0; trial < 150; ++trial) {
    std::map<std::string, std::uint64_t> counts;
    for (int k = 0; k < 10; ++k) {
      std::string w;
      for (std::size_t n = 1 + uniform_index(rng, 4); n > 0; --n) w += alphabet[uniform_index(rng, 4)];
      counts[w] = 1 + uniform_index(rng, 50);
    }
    const Lexicon lex(counts);
    std::string tag;
    for (std::size_t n = 1 + uniform_index(rng, 12); n > 0; --n) tag += alphabet[uniform_index(rng, 4)];

    double best = -INFINITY;
    std::vector<std::string> best_split;
    const std::size_t n = tag.size();
    for (std::uint32_t cuts = 0; cuts < (1u << (n - 1)); ++cuts) {
      std::vector<std::string> split;
      std::size_t start = 0;
      for (std::size_t i = 1; i <= n; ++i) {
        if (i == n || (cuts >> (i - 1)) & 1u) {
          split.push_back(tag.substr(start, i - start));
          start = i;
        }
      }
      double score = 0;
      for (const auto& p : split) score += piece_score(p, lex);
      const double tol = 1e-9 * std::max(std::abs(score), std::abs(best));
      if (best_split.empty() || score > best + tol || (std::abs(score - best) <= tol && split.size() < best_split.size())) {
        best = score;
        best_split = split;
      }
    }
    const auto got = segment_hashtag("#" + tag, lex);
    double got_score = 0;
    std::string joined;
    for (const auto& p : got) {
      got_score += piece_score(p, lex);
      joined += p;
    }
    EXPECT_EQ(joined, tag);
    EXPECT_NEAR(got_score, best, 1e-9 * std::abs(best)) << tag;
    EXPECT_EQ(got.size(), best_split.size()) << tag;
  }
}

TEST(KeepInstance, Examples) {
  PrepConfig cfg;
  EXPECT_FALSE(keep_instance("hi there", cfg));
  EXPECT_TRUE(keep_instance("seventeenchars ok!", cfg));
  EXPECT_EQ(unicode::codepoint_count("seventeenchars ok!"), 18u);
  EXPECT_FALSE(keep_instance("seventeenchars ok", cfg));
  EXPECT_FALSE(keep_instance("supercalifragilistic", cfg));
}

TEST(PrepConfig, Validation) {
  PrepConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  cfg.url_placeholder = "";
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = PrepConfig{};
  cfg.min_words = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = PrepConfig{};
  cfg.unknown_word_base = 1.0;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(Prepare, ComposedExample) {
  const Lexicon lex(std::map<std::string, std::uint64_t>{{"hello", 5}, {"world", 5}});
  PrepConfig cfg;
  EXPECT_EQ(prepare("@a 😀 #helloworld http://x", cfg, &lex, &grin_map()), "USER :grinning_face: hello world URL");
  EXPECT_EQ(prepare("", cfg, &lex, &grin_map()), "");
  EXPECT_EQ(prepare("@a 😀 #helloworld", cfg, nullptr, nullptr), "USER 😀 #helloworld");
}

TEST(Prepare, IdempotentOnFixtureTexts) {
  const Lexicon lex = load_lexicon(fixture("lexicon.tsv"));
  const EmojiMap map = load_emoji_map(fixture("emoji_map.tsv"));
  PrepConfig cfg;
  std::vector<std::string> texts = read_column(fixture("tweets_raw.tsv"), "text");
  for (const auto& t : read_column(fixture("scored.tsv"), "text")) texts.push_back(t);
  for (const auto& t : texts) {
    const std::string once = prepare(t, cfg, &lex, &map);
    EXPECT_EQ(prepare(once, cfg, &lex, &map), once) << t;
  }
}

TEST(Prepare, GoldenFile) {
  const Lexicon lex = load_lexicon(fixture("lexicon.tsv"));
  const EmojiMap map = load_emoji_map(fixture("emoji_map.tsv"));
  PrepConfig cfg;
  const auto ids = read_column(fixture("tweets_raw.tsv"), "id");
  const auto raw = read_column(fixture("tweets_raw.tsv"), "text");
  const auto gold_ids = read_column(fixture("tweets_clean.tsv"), "id");
  const auto gold = read_column(fixture("tweets_clean.tsv"), "text");
  std::vector<std::string> out_ids, out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!keep_instance(raw[i], cfg)) continue;
    out_ids.push_back(ids[i]);
    out.push_back(prepare(raw[i], cfg, &lex, &map));
  }
  EXPECT_EQ(out_ids, gold_ids);
  EXPECT_EQ(out, gold);
}

TEST(Lexicon, LoadAndTotals) {
  const Lexicon lex = load_lexicon(fixture("lexicon.tsv"));
  EXPECT_EQ(lex.count("the"), 2000u);
  EXPECT_EQ(lex.count("absent"), 0u);
  std::uint64_t total = 0;
  std::ifstream in(fixture("lexicon.tsv"));
  std::string word;
  std::uint64_t c;
  while (in >> word >> c) total += c;
  EXPECT_EQ(lex.total(), total);
  TempDir dir("lex");
  {
    std::ofstream bad(dir / "bad.tsv");
    bad << "word\t0\n";
  }
  EXPECT_THROW(load_lexicon(dir / "bad.tsv"), FormatError);
}

TEST(Unicode, DecodeEncodeAndFolding) {
  EXPECT_EQ(unicode::encode(unicode::decode("héllo 😀")), "héllo 😀");
  EXPECT_EQ(unicode::codepoint_count("😀a"), 2u);
  EXPECT_EQ(unicode::decode("\xff").front(), U'�');
  EXPECT_EQ(unicode::fold_case_and_accents("ÀÉÎõü Straße"), "aeiou straße");
  EXPECT_EQ(unicode::collapse_whitespace("  a \t\n b  "), "a b");
  EXPECT_EQ(unicode::split_whitespace(" a  b "), (std::vector<std::string>{"a", "b"}));
}
