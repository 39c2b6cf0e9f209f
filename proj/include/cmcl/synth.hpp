#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cmcl/corpus.hpp"
#include "cmcl/error.hpp"
#include "cmcl/rng.hpp"

namespace cmcl {

enum class SynthProfile { tagging, sentiment };

inline SynthProfile parse_synth_profile(std::string_view name) {
  if (name == "tagging" || name == "token") return SynthProfile::tagging;
  if (name == "sentiment" || name == "sentence") return SynthProfile::sentiment;
  throw ConfigError("unknown synth profile '" + std::string(name) + "' (expected tagging|sentiment)");
}

struct SynthOptions {
  // negative / neutral / positive
  std::array<double, 3> class_ratios{0.15, 0.50, 0.35};
  double switch_prob = 0.3;
  double mention_prob = 0.1;
  double url_prob = 0.05;
  double exclaim_prob = 0.2;
  double capitalize_prob = 0.1;
  // chance that a content slot of a non-neutral sentence uses the class pool
  double tint_prob = 0.35;
};

// Two disjoint pseudo-languages. "en" words never contain 'h'; every "hi"
// word starts with an aspirated onset, so language is recoverable from
// character trigrams. The lexicon is fixed (independent of the corpus seed)
// so corpora generated with different seeds share a vocabulary.
class SynthLexicon {
 public:
  enum Lang { kEn = 0, kHi = 1 };
  enum Pool {
    kDet, kPron, kNoun, kNounPositive, kNounNegative, kVerb, kVerbPositive, kVerbNegative,
    kAdj, kAdjPositive, kAdjNegative, kAdv, kAdvPositive, kAdvNegative, kAdp, kPart, kPoolCount
  };

  // Class-tinted variant of a content pool, or the pool itself.
  static Pool tinted(Pool pool, Sentiment label) {
    if (label == Sentiment::neutral) return pool;
    const bool pos = label == Sentiment::positive;
    switch (pool) {
      case kNoun: return pos ? kNounPositive : kNounNegative;
      case kVerb: return pos ? kVerbPositive : kVerbNegative;
      case kAdj: return pos ? kAdjPositive : kAdjNegative;
      case kAdv: return pos ? kAdvPositive : kAdvNegative;
      default: return pool;
    }
  }

  static const SynthLexicon& instance() {
    static const SynthLexicon lex;
    return lex;
  }

  const std::vector<std::string>& words(Lang lang, Pool pool) const { return pools_[lang][pool]; }

  static std::string_view pos_tag(Pool pool) {
    switch (pool) {
      case kDet: return "DET";
      case kPron: return "PRON";
      case kNoun:
      case kNounPositive:
      case kNounNegative: return "NOUN";
      case kVerb:
      case kVerbPositive:
      case kVerbNegative: return "VERB";
      case kAdj:
      case kAdjPositive:
      case kAdjNegative: return "ADJ";
      case kAdv:
      case kAdvPositive:
      case kAdvNegative: return "ADV";
      case kAdp: return "ADP";
      case kPart: return "PART";
      default: return "X";
    }
  }

 private:
  SynthLexicon() {
    static constexpr std::array<std::size_t, kPoolCount> sizes{4, 6, 30, 6, 6, 20, 5, 5, 16, 6, 6, 8, 4, 4, 5, 4};
    Rng rng(0x6c6578696b6f6eULL);
    std::set<std::string> used;
    for (int lang = 0; lang < 2; ++lang) {
      for (int pool = 0; pool < kPoolCount; ++pool) {
        auto& out = pools_[lang][pool];
        while (out.size() < sizes[pool]) {
          auto w = lang == kEn ? en_word(rng) : hi_word(rng);
          if (used.insert(w).second) out.push_back(std::move(w));
        }
      }
    }
  }

  static std::string pick(Rng& rng, std::span<const std::string_view> items) {
    return std::string(items[rng.below(items.size())]);
  }

  static std::string en_word(Rng& rng) {
    static constexpr std::array<std::string_view, 16> cons{"b", "c", "d", "f", "g", "k", "l", "m",
                                                           "n", "p", "r", "s", "t", "v", "w", "z"};
    static constexpr std::array<std::string_view, 5> vow{"a", "e", "i", "o", "u"};
    std::string w;
    const auto syllables = 1 + rng.below(2);
    for (std::uint64_t s = 0; s < syllables; ++s) {
      w += pick(rng, cons);
      w += pick(rng, vow);
      if (rng.bernoulli(0.5)) w += pick(rng, cons);
    }
    return w;
  }

  static std::string hi_word(Rng& rng) {
    static constexpr std::array<std::string_view, 9> onset{"bh", "kh", "gh", "ch", "jh", "th", "dh", "ph", "sh"};
    static constexpr std::array<std::string_view, 8> cons{"k", "r", "m", "n", "l", "t", "j", "y"};
    static constexpr std::array<std::string_view, 9> vow{"a", "aa", "i", "ee", "u", "oo", "e", "ai", "o"};
    std::string w = pick(rng, onset) + pick(rng, vow);
    if (rng.bernoulli(0.6)) w += pick(rng, cons) + pick(rng, vow);
    return w;
  }

  std::array<std::array<std::vector<std::string>, kPoolCount>, 2> pools_;
};

// Seeded pseudo code-mixed corpus. Sentences follow a small POS grammar.
// A non-neutral sentence always fills one ADJ slot from its class's adjective
// pool, and every other content slot switches to the class-tinted pool with
// probability tint_prob; neutral sentences use only neutral pools.
inline std::vector<RawDocument> synth_corpus(std::uint64_t seed, std::size_t n_sentences, SynthProfile profile,
                                             const SynthOptions& opt = {}) {
  using L = SynthLexicon;
  static const std::vector<std::vector<L::Pool>> templates{
      {L::kPron, L::kVerb, L::kDet, L::kAdj, L::kNoun},
      {L::kDet, L::kAdj, L::kNoun, L::kVerb, L::kAdv},
      {L::kPron, L::kAdv, L::kVerb, L::kDet, L::kNoun, L::kAdp, L::kDet, L::kAdj, L::kNoun},
      {L::kDet, L::kNoun, L::kVerb, L::kAdv, L::kAdj, L::kPart},
      {L::kPron, L::kVerb, L::kAdj, L::kNoun, L::kAdp, L::kNoun},
      {L::kDet, L::kAdj, L::kAdj, L::kNoun, L::kVerb, L::kPart},
      {L::kNoun, L::kAdp, L::kDet, L::kNoun, L::kVerb, L::kAdj},
  };
  const auto& lex = L::instance();
  Rng rng(seed, profile == SynthProfile::tagging ? 0x746167ULL : 0x73656eULL);
  std::vector<RawDocument> docs;
  docs.reserve(n_sentences);

  for (std::size_t n = 0; n < n_sentences; ++n) {
    Rng r = rng.split(n);
    RawDocument doc;
    std::vector<std::string> tokens;
    auto emit = [&](std::string tok, std::string_view lang, std::string_view pos) {
      if (!tok.empty() && tok[0] >= 'a' && tok[0] <= 'z' && r.bernoulli(opt.capitalize_prob)) {
        tok[0] = static_cast<char>(tok[0] - 'a' + 'A');
      }
      tokens.push_back(std::move(tok));
      doc.token_labels.push_back({std::string(lang), std::string(pos)});
    };

    Sentiment label = Sentiment::neutral;
    if (profile == SynthProfile::sentiment) {
      const double u = r.uniform();
      label = u < opt.class_ratios[0]                           ? Sentiment::negative
              : u < opt.class_ratios[0] + opt.class_ratios[1] ? Sentiment::neutral
                                                              : Sentiment::positive;
    } else {
      const double u = r.uniform();
      label = u < 0.33 ? Sentiment::negative : u < 0.66 ? Sentiment::neutral : Sentiment::positive;
    }

    const auto& tmpl = templates[r.below(templates.size())];
    std::vector<std::size_t> adj_slots;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
      if (tmpl[i] == L::kAdj) adj_slots.push_back(i);
    }
    const std::size_t polar_slot = adj_slots[r.below(adj_slots.size())];

    if (r.bernoulli(opt.mention_prob)) {
      emit("@" + lex.words(L::kEn, L::kNoun)[r.below(10)], "rest", "X");
    }
    auto lang = r.bernoulli(0.5) ? L::kEn : L::kHi;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
      const auto token_lang = r.bernoulli(opt.switch_prob) ? (lang == L::kEn ? L::kHi : L::kEn) : lang;
      L::Pool pool = tmpl[i];
      if (i == polar_slot || r.bernoulli(opt.tint_prob)) pool = L::tinted(pool, label);
      const auto& words = lex.words(token_lang, pool);
      emit(words[r.below(words.size())], token_lang == L::kEn ? "en" : "hi", L::pos_tag(pool));
    }
    if (r.bernoulli(opt.exclaim_prob)) emit("!", "rest", "X");
    if (r.bernoulli(opt.url_prob)) {
      std::string url = "http://t.co/";
      for (int k = 0; k < 5; ++k) url.push_back(static_cast<char>('a' + r.below(26)));
      emit(std::move(url), "rest", "X");
    }

    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) doc.text.push_back(' ');
      doc.text += tokens[i];
    }
    if (profile == SynthProfile::sentiment) doc.sentiment = label;
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace cmcl
