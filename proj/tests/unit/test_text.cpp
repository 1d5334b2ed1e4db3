#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "polyscore/error.hpp"
#include "polyscore/text.hpp"
#include "support/generators.hpp"

using namespace polyscore;

namespace {

const TokenId S = Vocabulary::kSep;

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "polyscore_text_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Drops one token at a time: oldest input token while more than one is left,
// then the label tail.
std::pair<std::vector<TokenId>, std::vector<TokenId>> slow_truncate(std::vector<TokenId> in, std::vector<TokenId> lb,
                                                                    std::size_t max_len) {
  while (in.size() + lb.size() + 2 > max_len) {
    if (in.size() > 1) {
      in.erase(in.begin());
    } else {
      lb.pop_back();
    }
  }
  return {in, lb};
}

void expect_well_formed(const TokenizedPair& tp) {
  ASSERT_EQ(tp.position_ids.size(), tp.size());
  ASSERT_EQ(tp.segment_ids.size(), tp.size());
  ASSERT_EQ(tp.pad_mask.size(), tp.size());
  EXPECT_EQ(tp.token_ids.front(), S);
  for (std::size_t i = 0; i < tp.size(); ++i) {
    EXPECT_EQ(tp.position_ids[i], static_cast<TokenId>(i));
    EXPECT_TRUE(tp.segment_ids[i] == 0 || tp.segment_ids[i] == 1);
    if (!tp.pad_mask[i]) EXPECT_EQ(tp.token_ids[i], Vocabulary::kPad);
  }
}

}  // namespace

TEST(Vocab, FrequencyOrderAfterReservedIds) {
  const auto v = Vocabulary::build({"a b a"}, 100);
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("a"), 4);
  EXPECT_EQ(v.id("b"), 5);
}

TEST(Vocab, MaxSizeCapsWords) {
  const auto v = Vocabulary::build({"a b a c"}, 5);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.id("a"), 4);
  EXPECT_EQ(v.id("b"), Vocabulary::kUnk);
}

TEST(Vocab, TiesBrokenLexicographically) {
  const auto v = Vocabulary::build({"zeta alpha mid", "mid"}, 100);
  EXPECT_EQ(v.id("mid"), 4);
  EXPECT_EQ(v.id("alpha"), 5);
  EXPECT_EQ(v.id("zeta"), 6);
}

TEST(Vocab, LowercasesAndUnknownMapsToUnk) {
  const auto v = Vocabulary::build({"Hello WORLD"}, 100);
  EXPECT_EQ(v.encode_words("hello world NOPE"), (std::vector<TokenId>{v.id("hello"), v.id("world"), Vocabulary::kUnk}));
}

TEST(Vocab, StableAcrossRebuilds) {
  gen::Rng rng(1);
  std::vector<std::string> corpus;
  for (int i = 0; i < 2000; ++i) corpus.push_back(gen::messy_text(rng, 40));
  corpus.push_back("anchor");
  const auto a = Vocabulary::build(corpus, 500), b = Vocabulary::build(corpus, 500);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b.id(a.token(static_cast<TokenId>(i))), static_cast<TokenId>(i));
}

TEST(Vocab, RoundTripThroughFile) {
  const auto v = Vocabulary::build({"one two two three three three"}, 100);
  const auto path = temp_file("vocab.txt");
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
}

TEST(Vocab, TokenIdTokenIsIdentity) {
  gen::Rng rng(2);
  const auto v = gen::vocab(50);
  for (std::size_t i = Vocabulary::kReserved; i < v.size(); ++i) {
    const auto& t = v.token(static_cast<TokenId>(i));
    EXPECT_EQ(v.token(v.id(t)), t);
  }
}

TEST(Vocab, EmptyCorpusFails) { EXPECT_THROW(Vocabulary::build({"   "}, 10), ParseError); }

TEST(EncodePair, Layout) {
  const auto v = Vocabulary::from_tokens({"hi", "yo"});
  const auto tp = encode_pair("hi", "yo", v, 16);
  EXPECT_EQ(tp.token_ids, (std::vector<TokenId>{S, v.id("hi"), S, v.id("yo")}));
  EXPECT_EQ(tp.segment_ids, (std::vector<TokenId>{0, 0, 1, 1}));
  EXPECT_EQ(tp.position_ids, (std::vector<TokenId>{0, 1, 2, 3}));
  EXPECT_EQ(tp.real_length(), 4u);
}

TEST(EncodePair, EmptyLabel) {
  const auto v = Vocabulary::from_tokens({"a", "b"});
  const auto tp = encode_pair("a b", "", v, 16);
  EXPECT_EQ(tp.token_ids, (std::vector<TokenId>{S, v.id("a"), v.id("b"), S}));
}

TEST(EncodePair, TooShortMaxLenRejected) {
  EXPECT_THROW(encode_pair("a", "b", gen::vocab(3), 3), ContractError);
}

TEST(EncodePair, TruncationMatchesSlowPath) {
  gen::Rng rng(3);
  const auto v = gen::vocab(30);
  for (int t = 0; t < 300; ++t) {
    const std::size_t max_len = gen::uniform(rng, 4, 20);
    const auto in_text = gen::sentence(rng, v, gen::uniform(rng, 0, 25));
    const auto lb_text = gen::sentence(rng, v, gen::uniform(rng, 0, 25));
    const auto tp = encode_pair(in_text, lb_text, v, max_len);
    const auto [in, lb] = slow_truncate(v.encode_words(in_text), v.encode_words(lb_text), max_len);
    std::vector<TokenId> want{S};
    want.insert(want.end(), in.begin(), in.end());
    want.push_back(S);
    want.insert(want.end(), lb.begin(), lb.end());
    EXPECT_EQ(tp.token_ids, want);
    EXPECT_LE(tp.size(), max_len);
    expect_well_formed(tp);
  }
}

TEST(EncodePair, OverlongInputKeepsLabel) {
  const auto v = gen::vocab(10);
  const auto tp = encode_pair("w0 w1 w2 w3 w4 w5 w6 w7 w8", "w9 w9", v, 8);
  EXPECT_EQ(tp.size(), 8u);
  EXPECT_EQ(tp.token_ids, (std::vector<TokenId>{S, v.id("w5"), v.id("w6"), v.id("w7"), v.id("w8"), S, v.id("w9"),
                                                v.id("w9")}));
}

TEST(EncodeSingle, Examples) {
  const auto v = Vocabulary::from_tokens({"hi"});
  const auto tp = encode_single("hi", v, 16, 0);
  EXPECT_EQ(tp.token_ids, (std::vector<TokenId>{S, v.id("hi")}));
  EXPECT_EQ(tp.segment_ids, (std::vector<TokenId>{0, 0}));
  EXPECT_EQ(encode_single("", v, 16, 1).token_ids, std::vector<TokenId>{S});
  EXPECT_EQ(encode_single("", v, 16, 1).segment_ids, std::vector<TokenId>{1});
}

TEST(EncodeSingle, KeepSide) {
  const auto v = gen::vocab(5);
  EXPECT_EQ(encode_single("w0 w1 w2 w3", v, 3, 0).token_ids, (std::vector<TokenId>{S, v.id("w2"), v.id("w3")}));
  EXPECT_EQ(encode_single("w0 w1 w2 w3", v, 3, 0, KeepSide::Head).token_ids,
            (std::vector<TokenId>{S, v.id("w0"), v.id("w1")}));
}

TEST(EncodeSingle, AnyTextStartsWithS) {
  gen::Rng rng(4);
  const auto v = Vocabulary::build({"abc xyz 019"}, 50);
  for (int t = 0; t < 500; ++t) {
    const auto tp = encode_single(gen::messy_text(rng, 60), v, gen::uniform(rng, 2, 30), static_cast<TokenId>(t % 2));
    expect_well_formed(tp);
  }
}

TEST(Encode, PairIsConcatenationOfSingles) {
  gen::Rng rng(5);
  const auto v = gen::vocab(20);
  for (int t = 0; t < 200; ++t) {
    const auto a = gen::sentence(rng, v, gen::uniform(rng, 0, 6));
    const auto b = gen::sentence(rng, v, gen::uniform(rng, 0, 6));
    const auto pair = encode_pair(a, b, v, 64);
    const auto sa = encode_single(a, v, 64, 0), sb = encode_single(b, v, 64, 1);
    auto ids = sa.token_ids;
    ids.insert(ids.end(), sb.token_ids.begin(), sb.token_ids.end());
    auto segs = sa.segment_ids;
    segs.insert(segs.end(), sb.segment_ids.begin(), sb.segment_ids.end());
    EXPECT_EQ(pair.token_ids, ids);
    EXPECT_EQ(pair.segment_ids, segs);
  }
}

TEST(Encode, PaddingAppendsMaskedPads) {
  const auto v = gen::vocab(3);
  const auto tp = encode_single("w0 w1", v, 8, 0).padded(6);
  EXPECT_EQ(tp.size(), 6u);
  EXPECT_EQ(tp.real_length(), 3u);
  EXPECT_EQ(tp.pad_mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0}));
  expect_well_formed(tp);
}

TEST(Jsonl, ParsesOneExample) {
  const auto ex = parse_example(R"({"context":["a"],"candidates":["x","y"],"label":1})", 1);
  EXPECT_EQ(ex.context, std::vector<std::string>{"a"});
  EXPECT_EQ(ex.label_index, 1u);
  EXPECT_EQ(ex.gold(), "y");
}

TEST(Jsonl, LabelOutOfRangeNamesLine) {
  const auto path = temp_file("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"context":["a"],"candidates":["x","y"],"label":0})" << "\n";
    out << R"({"context":["a"],"candidates":["x","y"],"label":5})" << "\n";
  }
  try {
    load_jsonl(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, MalformedLinesRejected) {
  for (const char* bad : {"{", "[]", R"({"context":["a"],"candidates":["x"]})", R"({"context":"a","candidates":["x"],"label":0})",
                          R"({"context":["a"],"candidates":[],"label":0})", R"({"context":["a"],"candidates":["x"],"label":"0"})"}) {
    EXPECT_THROW(parse_example(bad, 1), ParseError) << bad;
  }
}

TEST(Jsonl, ThousandLinesRoundTripInOrder) {
  gen::Rng rng(6);
  const auto v = gen::vocab(40);
  std::vector<Example> exs;
  for (int i = 0; i < 1000; ++i) {
    Example e;
    e.context = {gen::sentence(rng, v, 3), "turn " + std::to_string(i)};
    const std::size_t n = gen::uniform(rng, 1, 5);
    for (std::size_t c = 0; c < n; ++c) e.candidates.push_back(gen::sentence(rng, v, 4));
    e.label_index = gen::uniform(rng, 0, n - 1);
    exs.push_back(e);
  }
  const auto path = temp_file("many.jsonl");
  save_jsonl(path, exs);
  const auto back = load_jsonl(path);
  ASSERT_EQ(back.size(), 1000u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].context, exs[i].context);
    EXPECT_EQ(back[i].candidates, exs[i].candidates);
    EXPECT_EQ(back[i].label_index, exs[i].label_index);
  }
}

TEST(Jsonl, MissingFile) { EXPECT_THROW(load_jsonl(temp_file("does_not_exist.jsonl")), ParseError); }

TEST(Context, FlattenJoinsTurns) {
  EXPECT_EQ(flatten_context({"hi there", "yo"}), "hi there __turn__ yo");
  EXPECT_EQ(flatten_context({"solo"}), "solo");
}

TEST(Context, AugmentAddsOneExamplePerEarlierTurn) {
  Example e;
  e.context = {"a", "b", "c"};
  e.candidates = {"x", "gold", "y"};
  e.label_index = 1;
  const auto out = augment_history({e});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[1].context, std::vector<std::string>{"a"});
  EXPECT_EQ(out[1].gold(), "b");
  EXPECT_EQ(out[2].context, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(out[2].gold(), "c");
  EXPECT_EQ(out[2].candidates, (std::vector<std::string>{"c", "x", "y"}));
}
