#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cmcl/corpus.hpp"
#include "cmcl/pipeline.hpp"
#include "cmcl/synth.hpp"
#include "cmcl/vocab.hpp"

using namespace cmcl;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("cmcl_test_" + name); }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Vocab, SpecialsOccupyTheFirstIds) {
  const Vocab v;
  ASSERT_EQ(v.size(), special::kCount);
  EXPECT_EQ(v.subword(special::kPad), "<pad>");
  EXPECT_EQ(v.subword(special::kBos), "<bos>");
  EXPECT_EQ(v.id("never-seen"), special::kUnk);
}

TEST(Vocab, OrderedByFrequencyThenLexicographically) {
  const std::vector<std::vector<std::string>> streams{{"b", "a", "c", "a"}, {"c", "d", "b"}, {"e"}};
  const auto v = build_vocab(streams, 1);
  std::vector<std::string> order;
  for (std::size_t i = special::kCount; i < v.size(); ++i) order.push_back(v.subword(static_cast<TokenId>(i)));
  EXPECT_EQ(order, (std::vector<std::string>{"a", "b", "c", "d", "e"}));
  EXPECT_EQ(v.freq(v.id("a")), 2u);
}

TEST(Vocab, MinFreqDropsRareSubwords) {
  const std::vector<std::vector<std::string>> streams{{"x", "x", "y", "z", "z", "z"}};
  const auto v2 = build_vocab(streams, 2);
  const auto v1 = build_vocab(streams, 1);
  EXPECT_FALSE(v2.contains("y"));
  EXPECT_EQ(v2.id("y"), special::kUnk);
  for (const auto& e : v2.entries()) EXPECT_TRUE(v1.contains(e.subword));
  EXPECT_GT(v1.size(), v2.size());
}

TEST(Vocab, FileRoundTripAndHash) {
  const auto v = build_vocab(std::vector<std::vector<std::string>>{{"gir", "l*#", "gir"}}, 1);
  const auto path = temp_file("vocab.tsv");
  v.save(path.string());
  const auto back = Vocab::load(path.string());
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.hash(), v.hash());
  EXPECT_EQ(v.hash().size(), 16u);
  EXPECT_NE(v.hash(), Vocab().hash());
  fs::remove(path);
}

TEST(Vocab, LoadRejectsMalformedFiles) {
  const auto path = temp_file("bad_vocab.tsv");
  write_file(path, "<pad>\t0\t0\n<unk>\t2\t0\n");
  EXPECT_THROW(Vocab::load(path.string()), ParseError);
  write_file(path, "oops\t0\t0\n");
  EXPECT_THROW(Vocab::load(path.string()), ParseError);
  write_file(path, "<pad>\t0\t0\n");
  EXPECT_THROW(Vocab::load(path.string()), IoError);
  fs::remove(path);
  EXPECT_THROW(Vocab::load(path.string()), IoError);
}

TEST(Corpus, TokenCorpusRoundTrip) {
  const auto path = temp_file("tokens.tsv");
  write_file(path, "Main\thi\tPRON\nhappy\ten\tADJ\n\n@user\trest\tX\nok\ten\t-\n");
  const auto docs = load_token_corpus(path.string());
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].text, "Main happy");
  EXPECT_EQ(docs[0].token_labels[1], (TokenLabel{"en", "ADJ"}));
  EXPECT_EQ(docs[1].token_labels[1].pos, "-");
  write_token_corpus(path.string(), docs);
  EXPECT_EQ(load_token_corpus(path.string()), docs);
  fs::remove(path);
}

TEST(Corpus, ParseErrorsCarryLineNumbers) {
  const auto path = temp_file("bad_tokens.tsv");
  write_file(path, "a\ten\tX\nb\ten\n");
  try {
    load_token_corpus(path.string());
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  write_file(path, "happy\tsome text\n");
  EXPECT_THROW(load_sentence_corpus(path.string()), ParseError);
  write_file(path, "no tab here\n");
  EXPECT_THROW(load_sentence_corpus(path.string()), ParseError);
  fs::remove(path);
}

TEST(Corpus, SentenceCorpusRoundTrip) {
  const auto path = temp_file("sentences.tsv");
  write_file(path, "positive\tbahut accha movie\r\nnegative\tbad\n\nneutral\tok ok\n");
  const auto docs = load_sentence_corpus(path.string());
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0].text, "bahut accha movie");
  EXPECT_EQ(docs[1].sentiment, Sentiment::negative);
  write_sentence_corpus(path.string(), docs);
  EXPECT_EQ(load_sentence_corpus(path.string()), docs);
  fs::remove(path);
}

TEST(Corpus, TextCorpusDropsSentimentLabels) {
  const auto path = temp_file("lm.txt");
  write_file(path, "positive\tgood day\nplain text line\n\n   \n");
  const auto docs = load_text_corpus(path.string());
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].text, "good day");
  EXPECT_FALSE(docs[0].sentiment);
  EXPECT_EQ(docs[1].text, "plain text line");
  fs::remove(path);
}

TEST(Corpus, NormalizeDocumentKeepsLabelsAligned) {
  const RawDocument doc{"Hi ## @bob http://x.y", {{"en", "X"}, {"rest", "X"}, {"rest", "X"}, {"rest", "X"}}, {}};
  const auto n = normalize_document(doc);
  EXPECT_EQ(n.text, "hi <usr> <url>");
  ASSERT_EQ(n.token_labels.size(), 3u);
  EXPECT_EQ(n.token_labels[0].lang, "en");
}

TEST(Corpus, EncodeProjectsTokenLabelsOntoSubwords) {
  const SubwordEncoder enc(EncoderKind::trigram);
  const auto vocab = build_vocab(std::vector<std::vector<std::string>>{{"gir", "l*#", "ok*"}}, 1);
  const TagSet lang({"en", "hi"}), pos({"NOUN", "X"});
  const RawDocument doc{"girl <usr> ok", {{"en", "NOUN"}, {"hi", "X"}, {"en", "X"}}, Sentiment::positive};
  const auto s = encode_sample(doc, vocab, enc, {&lang, &pos});
  EXPECT_EQ(s.subword_ids, (std::vector<TokenId>{vocab.id("gir"), vocab.id("l*#"), special::kUsr, vocab.id("ok*")}));
  EXPECT_EQ(s.token_index, (std::vector<std::uint32_t>{0, 0, 1, 2}));
  EXPECT_EQ(*s.lang_labels, (std::vector<std::uint32_t>{0, 0, 1, 0}));
  EXPECT_EQ(*s.pos_labels, (std::vector<std::uint32_t>{0, 0, 1, 1}));
  EXPECT_EQ(s.sentiment, 2u);
}

TEST(Corpus, MissingTagDisablesThatLabelSequence) {
  const SubwordEncoder enc(EncoderKind::unigram);
  const auto vocab = build_vocab(std::vector<std::vector<std::string>>{{"a", "*"}}, 1);
  const TagSet lang({"en"}), pos({"X"});
  const auto s = encode_sample({"a", {{"en", "-"}}, {}}, vocab, enc, {&lang, &pos});
  EXPECT_TRUE(s.lang_labels.has_value());
  EXPECT_FALSE(s.pos_labels.has_value());
  EXPECT_EQ(collect_tags(std::vector<RawDocument>{{"a b", {{"hi", "-"}, {"en", "X"}}, {}}}, TagKind::pos).names(),
            std::vector<std::string>{"X"});
}

TEST(Split, SizesAreDisjointAndCoverTheInput) {
  std::vector<int> items(100);
  for (int i = 0; i < 100; ++i) items[static_cast<std::size_t>(i)] = i;
  const auto sp = split<int>(items, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(sp.train.size(), 80u);
  EXPECT_EQ(sp.dev.size(), 10u);
  EXPECT_EQ(sp.test.size(), 10u);
  std::set<int> all(sp.train.begin(), sp.train.end());
  all.insert(sp.dev.begin(), sp.dev.end());
  all.insert(sp.test.begin(), sp.test.end());
  EXPECT_EQ(all.size(), 100u);
  const auto again = split<int>(items, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(again.train, sp.train);
  EXPECT_NE(split<int>(items, {0.8, 0.1, 0.1}, 4).train, sp.train);
}

TEST(Split, StratifiedKeepsClassProportions) {
  std::vector<RawDocument> docs;
  for (int i = 0; i < 200; ++i) {
    docs.push_back({"t" + std::to_string(i), {}, i < 20 ? Sentiment::negative : i < 120 ? Sentiment::neutral : Sentiment::positive});
  }
  const auto sp = split<RawDocument>(docs, {0.8, 0.1, 0.1}, 1, true);
  auto count = [](const std::vector<RawDocument>& v, Sentiment s) {
    return std::count_if(v.begin(), v.end(), [&](const RawDocument& d) { return d.sentiment == s; });
  };
  EXPECT_EQ(count(sp.train, Sentiment::negative), 16);
  EXPECT_EQ(count(sp.dev, Sentiment::negative), 2);
  EXPECT_EQ(count(sp.test, Sentiment::positive), 8);
}

TEST(Split, EveryRequestedPartGetsASample) {
  const std::vector<int> items{1, 2, 3};
  const auto sp = split<int>(items, {0.9, 0.05, 0.05}, 0);
  EXPECT_EQ(sp.train.size(), 1u);
  EXPECT_EQ(sp.dev.size(), 1u);
  EXPECT_EQ(sp.test.size(), 1u);
  EXPECT_THROW(split<int>(items, {0.5, 0.2, 0.2}, 0), Error);
}

TEST(Rebalance, EqualizesClassesAndKeepsMinorityOriginals) {
  std::vector<RawDocument> docs;
  for (int i = 0; i < 90; ++i) {
    docs.push_back({"d" + std::to_string(i), {}, i < 10 ? Sentiment::negative : i < 60 ? Sentiment::neutral : Sentiment::positive});
  }
  const auto out = rebalance<RawDocument>(docs, 7);
  ASSERT_EQ(out.size(), 90u);
  for (auto s : {Sentiment::negative, Sentiment::neutral, Sentiment::positive}) {
    EXPECT_EQ(std::count_if(out.begin(), out.end(), [&](const RawDocument& d) { return d.sentiment == s; }), 30);
  }
  for (int i = 0; i < 10; ++i) {
    const auto text = "d" + std::to_string(i);
    EXPECT_TRUE(std::any_of(out.begin(), out.end(), [&](const RawDocument& d) { return d.text == text; }));
  }
  EXPECT_EQ(rebalance<RawDocument>(docs, 7), out);
}

TEST(Rebalance, RejectsMissingClasses) {
  const std::vector<RawDocument> docs{{"a", {}, Sentiment::positive}, {"b", {}, Sentiment::negative}};
  EXPECT_THROW(rebalance<RawDocument>(docs, 0), Error);
}

TEST(Synth, SameSeedSameCorpus) {
  const auto a = synth_corpus(3, 50, SynthProfile::sentiment);
  EXPECT_EQ(a, synth_corpus(3, 50, SynthProfile::sentiment));
  EXPECT_NE(a, synth_corpus(4, 50, SynthProfile::sentiment));
  for (const auto& d : a) {
    EXPECT_TRUE(d.sentiment.has_value());
    EXPECT_EQ(d.token_labels.size(), tokenize(d.text).size());
  }
}

TEST(Synth, LanguageIsRecoverableFromSpelling) {
  for (const auto& d : synth_corpus(1, 200, SynthProfile::tagging)) {
    const auto toks = tokenize(d.text);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      std::string lower = toks[i];
      for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (d.token_labels[i].lang == "hi") {
        EXPECT_NE(lower.find('h'), std::string::npos) << lower;
      } else if (d.token_labels[i].lang == "en") {
        EXPECT_EQ(lower.find('h'), std::string::npos) << lower;
      }
    }
  }
}

TEST(Synth, PolarWordsMarkTheLabel) {
  const auto& lex = SynthLexicon::instance();
  auto in_pool = [&](const std::string& w, SynthLexicon::Pool p) {
    for (auto lang : {SynthLexicon::kEn, SynthLexicon::kHi}) {
      const auto& words = lex.words(lang, p);
      if (std::find(words.begin(), words.end(), w) != words.end()) return true;
    }
    return false;
  };
  for (const auto& d : synth_corpus(2, 300, SynthProfile::sentiment)) {
    bool pos = false, neg = false;
    for (auto tok : tokenize(d.text)) {
      tok[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(tok[0])));
      pos = pos || in_pool(tok, SynthLexicon::kAdjPositive);
      neg = neg || in_pool(tok, SynthLexicon::kAdjNegative);
    }
    EXPECT_EQ(pos, d.sentiment == Sentiment::positive) << d.text;
    EXPECT_EQ(neg, d.sentiment == Sentiment::negative) << d.text;
  }
}

TEST(Synth, FilesAreByteIdenticalForTheSameSeed) {
  const auto a = temp_file("synth_a.tsv"), b = temp_file("synth_b.tsv");
  write_sentence_corpus(a.string(), synth_corpus(8, 40, SynthProfile::sentiment));
  write_sentence_corpus(b.string(), synth_corpus(8, 40, SynthProfile::sentiment));
  EXPECT_EQ(read_file(a), read_file(b));
  fs::remove(a);
  fs::remove(b);
}

TEST(Prepare, SharedVocabularyAndLmFallback) {
  std::map<std::string, std::vector<RawDocument>> raw;
  raw["sentiment"] = synth_corpus(1, 120, SynthProfile::sentiment);
  raw["lang"] = synth_corpus(2, 60, SynthProfile::tagging);
  raw["pos"] = raw["lang"];
  PrepareOptions o;
  o.min_freq = 1;
  const auto data = prepare_data(raw, o);
  ASSERT_TRUE(data.stages.contains("lm"));
  for (const auto& s : data.stages.at("lm").train) EXPECT_FALSE(s.sentiment.has_value());
  for (const auto& s : data.stages.at("sentiment").train) EXPECT_TRUE(s.sentiment.has_value());
  for (const auto& s : data.stages.at("pos").train) EXPECT_TRUE(s.pos_labels.has_value());
  EXPECT_EQ(data.ctx.lang_tags.names(), (std::vector<std::string>{"en", "hi", "rest"}));

  const auto again = prepare_data(raw, o);
  EXPECT_EQ(again.ctx.vocab, data.ctx.vocab);
  EXPECT_EQ(again.stages.at("sentiment").train, data.stages.at("sentiment").train);
}

TEST(Prepare, ContextSavesAndLoads) {
  std::map<std::string, std::vector<RawDocument>> raw;
  raw["sentiment"] = synth_corpus(1, 80, SynthProfile::sentiment);
  PrepareOptions o;
  o.encoder = EncoderKind::bpe;
  o.bpe_merges = 30;
  const auto data = prepare_data(raw, o);
  const auto dir = fs::temp_directory_path() / "cmcl_ctx_test";
  fs::create_directories(dir);
  data.ctx.save(dir);
  const auto back = EncodingContext::load(dir, EncoderKind::bpe);
  EXPECT_EQ(back.vocab, data.ctx.vocab);
  EXPECT_EQ(back.encoder.merges(), data.ctx.encoder.merges());
  EXPECT_EQ(back.encode(raw["sentiment"][0]), data.ctx.encode(raw["sentiment"][0]));
  fs::remove_all(dir);
}
