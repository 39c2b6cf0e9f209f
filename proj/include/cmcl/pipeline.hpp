#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cmcl/corpus.hpp"
#include "cmcl/curriculum.hpp"
#include "cmcl/subword.hpp"
#include "cmcl/vocab.hpp"

namespace cmcl {

// Everything needed to turn raw text into model input.
struct EncodingContext {
  SubwordEncoder encoder;
  Vocab vocab;
  TagSet lang_tags;
  TagSet pos_tags;

  EncodedSample encode(const RawDocument& raw) const {
    return encode_sample(normalize_document(raw), vocab, encoder, {&lang_tags, &pos_tags});
  }

  // vocab.tsv, tags_lang.txt, tags_pos.txt, and merges.txt for BPE.
  void save(const std::filesystem::path& dir) const {
    vocab.save((dir / "vocab.tsv").string());
    lang_tags.save((dir / "tags_lang.txt").string());
    pos_tags.save((dir / "tags_pos.txt").string());
    if (encoder.kind() == EncoderKind::bpe) save_merges((dir / "merges.txt").string(), encoder.merges());
  }

  static EncodingContext load(const std::filesystem::path& dir, EncoderKind kind) {
    EncodingContext ctx;
    ctx.vocab = Vocab::load((dir / "vocab.tsv").string());
    ctx.lang_tags = TagSet::load((dir / "tags_lang.txt").string());
    ctx.pos_tags = TagSet::load((dir / "tags_pos.txt").string());
    std::vector<Merge> merges;
    if (kind == EncoderKind::bpe) merges = load_merges((dir / "merges.txt").string());
    ctx.encoder = SubwordEncoder(kind, std::move(merges));
    return ctx;
  }
};

struct PrepareOptions {
  EncoderKind encoder = EncoderKind::trigram;
  std::size_t bpe_merges = 500;
  std::uint64_t min_freq = 2;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  bool rebalance_sentiment = true;
};

struct PreparedData {
  EncodingContext ctx;
  std::map<std::string, StageData> stages;
  std::map<std::string, std::vector<EncodedSample>> test;
};

// Raw corpora keyed by stage corpus id ("lang", "pos", "lm", "sentiment").
// Each corpus is normalized and split (sentiment stratified); without an
// explicit "lm" corpus the LM stage reads the sentiment texts. One vocabulary
// is built over the union of all training splits so every stage shares the
// embedding table. Only the sentiment training split is rebalanced.
inline PreparedData prepare_data(const std::map<std::string, std::vector<RawDocument>>& raw,
                                 const PrepareOptions& opt) {
  std::map<std::string, Split<RawDocument>> splits;
  std::uint64_t salt = 1;
  for (const auto& [name, docs] : raw) {
    std::vector<RawDocument> norm;
    norm.reserve(docs.size());
    for (const auto& d : docs) {
      auto n = normalize_document(d);
      if (!n.text.empty()) norm.push_back(std::move(n));
    }
    const bool stratify = name == "sentiment";
    splits[name] = split<RawDocument>(norm, opt.ratios, opt.seed ^ (fnv1a64(name) + salt), stratify);
  }
  if (!splits.contains("lm") && splits.contains("sentiment")) {
    auto lm = splits.at("sentiment");
    for (auto* part : {&lm.train, &lm.dev, &lm.test}) {
      for (auto& d : *part) d.sentiment.reset();
    }
    splits["lm"] = std::move(lm);
  }

  PreparedData out;
  std::vector<RawDocument> tagged;
  for (const auto& [name, sp] : splits) {
    for (const auto* part : {&sp.train, &sp.dev, &sp.test}) {
      tagged.insert(tagged.end(), part->begin(), part->end());
    }
  }
  out.ctx.lang_tags = collect_tags(tagged, TagKind::lang);
  out.ctx.pos_tags = collect_tags(tagged, TagKind::pos);
  if (out.ctx.lang_tags.empty()) out.ctx.lang_tags = TagSet({"en", "hi", "rest"});
  if (out.ctx.pos_tags.empty()) out.ctx.pos_tags = TagSet({"X"});

  std::vector<Merge> merges;
  if (opt.encoder == EncoderKind::bpe) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& [name, sp] : splits) {
      for (const auto& d : sp.train) {
        for (const auto& tok : tokenize(d.text)) {
          if (tok != kUserMask && tok != kUrlMask) ++counts[tok + kTerminal];
        }
      }
    }
    merges = bpe_learn(counts, opt.bpe_merges);
  }
  out.ctx.encoder = SubwordEncoder(opt.encoder, std::move(merges));

  std::vector<std::vector<std::string>> streams;
  for (const auto& [name, sp] : splits) {
    if (name == "lm" && !raw.contains("lm")) continue;  // same texts as the sentiment split
    for (const auto& d : sp.train) streams.push_back(subword_stream(d.text, out.ctx.encoder));
  }
  out.ctx.vocab = build_vocab(streams, opt.min_freq);

  const Tagsets tags{&out.ctx.lang_tags, &out.ctx.pos_tags};
  auto encode_all = [&](const std::vector<RawDocument>& docs) {
    std::vector<EncodedSample> enc;
    enc.reserve(docs.size());
    for (const auto& d : docs) enc.push_back(encode_sample(d, out.ctx.vocab, out.ctx.encoder, tags));
    return enc;
  };
  for (const auto& [name, sp] : splits) {
    StageData sd{encode_all(sp.train), encode_all(sp.dev)};
    if (name == "sentiment" && opt.rebalance_sentiment) {
      sd.train = rebalance<EncodedSample>(sd.train, opt.seed ^ 0x5eedULL);
    }
    out.stages[name] = std::move(sd);
    out.test[name] = encode_all(sp.test);
  }
  return out;
}

}  // namespace cmcl
