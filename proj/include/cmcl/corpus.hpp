#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmcl/error.hpp"
#include "cmcl/rng.hpp"
#include "cmcl/subword.hpp"
#include "cmcl/text.hpp"
#include "cmcl/vocab.hpp"

namespace cmcl {

enum class Sentiment : std::uint8_t { negative = 0, neutral = 1, positive = 2 };
inline constexpr std::size_t kSentimentClasses = 3;
inline constexpr std::array<std::string_view, kSentimentClasses> kSentimentNames{"negative", "neutral", "positive"};

inline std::optional<Sentiment> parse_sentiment(std::string_view name) {
  for (std::size_t i = 0; i < kSentimentNames.size(); ++i) {
    if (kSentimentNames[i] == name) return static_cast<Sentiment>(i);
  }
  return std::nullopt;
}

inline std::string_view to_string(Sentiment s) { return kSentimentNames.at(static_cast<std::size_t>(s)); }

// Marks a missing tag in token corpora.
inline constexpr std::string_view kNoTag = "-";

struct TokenLabel {
  std::string lang;
  std::string pos;
  friend bool operator==(const TokenLabel&, const TokenLabel&) = default;
};

struct RawDocument {
  std::string text;
  std::vector<TokenLabel> token_labels;  // empty, or one per whitespace token
  std::optional<Sentiment> sentiment;
  friend bool operator==(const RawDocument&, const RawDocument&) = default;
};

class TagSet {
 public:
  TagSet() = default;
  explicit TagSet(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i].empty()) throw Error("empty tag name");
      for (std::size_t j = 0; j < i; ++j) {
        if (names_[j] == names_[i]) throw Error("duplicate tag '" + names_[i] + "'");
      }
    }
  }

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t id) const { return names_.at(id); }

  std::uint32_t index(std::string_view tag) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == tag) return static_cast<std::uint32_t>(i);
    }
    throw Error("unseen tag '" + std::string(tag) + "'");
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write tag file " + path);
    for (const auto& n : names_) out << n << '\n';
  }

  static TagSet load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read tag file " + path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) names.push_back(line);
    }
    return TagSet(std::move(names));
  }

 private:
  std::vector<std::string> names_;
};

enum class TagKind { lang, pos };

// Data-driven tagset: sorted distinct tags, ignoring the missing-tag marker.
inline TagSet collect_tags(std::span<const RawDocument> docs, TagKind kind) {
  std::vector<std::string> names;
  for (const auto& d : docs) {
    for (const auto& l : d.token_labels) {
      const auto& tag = kind == TagKind::lang ? l.lang : l.pos;
      if (tag != kNoTag) names.push_back(tag);
    }
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return TagSet(std::move(names));
}

struct EncodedSample {
  std::vector<TokenId> subword_ids;
  std::vector<std::uint32_t> token_index;
  std::optional<std::vector<std::uint32_t>> lang_labels;
  std::optional<std::vector<std::uint32_t>> pos_labels;
  std::optional<std::uint32_t> sentiment;
  friend bool operator==(const EncodedSample&, const EncodedSample&) = default;
};

inline std::optional<std::uint32_t> class_of(const RawDocument& d) {
  if (!d.sentiment) return std::nullopt;
  return static_cast<std::uint32_t>(*d.sentiment);
}
inline std::optional<std::uint32_t> class_of(const EncodedSample& s) { return s.sentiment; }

// Applies normalize() token by token so labels stay aligned; tokens that
// normalize to nothing are dropped together with their labels.
inline RawDocument normalize_document(const RawDocument& doc) {
  RawDocument out;
  out.sentiment = doc.sentiment;
  const auto tokens = tokenize(doc.text);
  const bool labeled = !doc.token_labels.empty();
  if (labeled && doc.token_labels.size() != tokens.size()) {
    throw Error("document has " + std::to_string(tokens.size()) + " tokens but " +
                std::to_string(doc.token_labels.size()) + " token labels");
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto norm = normalize_token(tokens[i]);
    if (norm.empty()) continue;
    if (!out.text.empty()) out.text.push_back(' ');
    out.text += norm;
    if (labeled) out.token_labels.push_back(doc.token_labels[i]);
  }
  return out;
}

// Subword strings of a normalized text, skipping masked tokens (they map to
// reserved ids). Feeds build_vocab.
inline std::vector<std::string> subword_stream(std::string_view normalized_text, const SubwordEncoder& encoder) {
  std::vector<std::string> out;
  for (const auto& tok : tokenize(normalized_text)) {
    if (tok == kUserMask || tok == kUrlMask) continue;
    for (auto& sw : encoder.encode(tok)) out.push_back(std::move(sw));
  }
  return out;
}

struct Tagsets {
  const TagSet* lang = nullptr;
  const TagSet* pos = nullptr;
};

// doc must already be normalized. Token labels are projected onto every
// subword of their token.
inline EncodedSample encode_sample(const RawDocument& doc, const Vocab& vocab, const SubwordEncoder& encoder,
                                   Tagsets tagsets = {}) {
  const auto tokens = tokenize(doc.text);
  const bool labeled = !doc.token_labels.empty();
  if (labeled && doc.token_labels.size() != tokens.size()) {
    throw Error("token label count does not match token count");
  }
  auto all_tagged = [&](TagKind kind) {
    if (!labeled) return false;
    return std::all_of(doc.token_labels.begin(), doc.token_labels.end(), [&](const TokenLabel& l) {
      return (kind == TagKind::lang ? l.lang : l.pos) != kNoTag;
    });
  };
  const bool with_lang = tagsets.lang != nullptr && all_tagged(TagKind::lang);
  const bool with_pos = tagsets.pos != nullptr && all_tagged(TagKind::pos);

  EncodedSample s;
  std::vector<std::uint32_t> lang, pos;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    std::vector<TokenId> ids;
    if (tokens[t] == kUserMask) {
      ids.push_back(special::kUsr);
    } else if (tokens[t] == kUrlMask) {
      ids.push_back(special::kUrl);
    } else {
      for (const auto& sw : encoder.encode(tokens[t])) ids.push_back(vocab.id(sw));
    }
    const std::uint32_t lang_id = with_lang ? tagsets.lang->index(doc.token_labels[t].lang) : 0;
    const std::uint32_t pos_id = with_pos ? tagsets.pos->index(doc.token_labels[t].pos) : 0;
    for (TokenId id : ids) {
      s.subword_ids.push_back(id);
      s.token_index.push_back(static_cast<std::uint32_t>(t));
      if (with_lang) lang.push_back(lang_id);
      if (with_pos) pos.push_back(pos_id);
    }
  }
  if (s.subword_ids.empty()) throw Error("document encodes to an empty subword sequence");
  if (with_lang) s.lang_labels = std::move(lang);
  if (with_pos) s.pos_labels = std::move(pos);
  if (doc.sentiment) s.sentiment = static_cast<std::uint32_t>(*doc.sentiment);
  return s;
}

// Resamples every class to floor(mean class count): growing classes keep all
// originals plus draws with replacement, shrinking classes keep a uniform
// subset. Output is shuffled.
template <typename Sample>
std::vector<Sample> rebalance(std::span<const Sample> samples, std::uint64_t seed,
                              std::size_t n_classes = kSentimentClasses) {
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto c = class_of(samples[i]);
    if (!c) throw Error("rebalance: sample " + std::to_string(i) + " has no sentiment label");
    if (*c >= n_classes) throw Error("rebalance: class id out of range");
    by_class[*c].push_back(i);
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (by_class[c].empty()) throw Error("rebalance: class " + std::to_string(c) + " is empty");
  }
  const std::size_t target = samples.size() / n_classes;
  Rng rng(seed, 0x7265626cULL);
  std::vector<Sample> out;
  out.reserve(target * n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    Rng crng = rng.split(c);
    const auto& members = by_class[c];
    if (members.size() >= target) {
      for (std::size_t j : crng.sample_without_replacement(members.size(), target)) out.push_back(samples[members[j]]);
    } else {
      for (std::size_t i : members) out.push_back(samples[i]);
      for (std::size_t k = members.size(); k < target; ++k) out.push_back(samples[members[crng.below(members.size())]]);
    }
  }
  rng.split(n_classes).shuffle(out);
  return out;
}

template <typename Sample>
struct Split {
  std::vector<Sample> train;
  std::vector<Sample> dev;
  std::vector<Sample> test;
};

namespace detail {

// Largest-remainder apportionment of n items over ratios; earlier parts win ties.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = ratios[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[k] = exact - static_cast<double>(sizes[k]);
    used += sizes[k];
  }
  while (used < n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (frac[k] > frac[best] + 1e-12) best = k;
    }
    ++sizes[best];
    frac[best] = -1.0;
    ++used;
  }
  return sizes;
}

}  // namespace detail

// Seeded train/dev/test partition. Every part with a positive ratio gets at
// least one sample. Stratification apportions each sentiment class separately.
template <typename Sample>
Split<Sample> split(std::span<const Sample> samples, std::array<double, 3> ratios, std::uint64_t seed,
                    bool stratified_on_sentiment = false) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) throw Error("split ratios must sum to 1");
  for (double r : ratios) {
    if (r < 0) throw Error("split ratios must be non-negative");
  }
  const auto parts = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0; }));
  if (samples.size() < parts) throw Error("split: fewer samples than partitions");

  Rng rng(seed, 0x73706c74ULL);
  std::array<std::vector<std::size_t>, 3> assigned;
  std::vector<std::vector<std::size_t>> groups;
  if (stratified_on_sentiment) {
    if constexpr (requires(const Sample& s) { class_of(s); }) {
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto c = class_of(samples[i]);
        if (!c) throw Error("stratified split: sample " + std::to_string(i) + " has no sentiment label");
        if (groups.size() <= *c) groups.resize(*c + 1);
        groups[*c].push_back(i);
      }
    } else {
      throw Error("stratified split: samples carry no sentiment label");
    }
  } else {
    groups.emplace_back(samples.size());
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& members = groups[g];
    rng.split(g).shuffle(members);
    const auto sizes = detail::apportion(members.size(), ratios);
    std::size_t at = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t j = 0; j < sizes[k]; ++j) assigned[k].push_back(members[at++]);
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (ratios[k] > 0 && assigned[k].empty()) {
      auto donor = std::max_element(assigned.begin(), assigned.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
      assigned[k].push_back(donor->back());
      donor->pop_back();
    }
  }
  Split<Sample> out;
  std::array<std::vector<Sample>*, 3> dst{&out.train, &out.dev, &out.test};
  for (std::size_t k = 0; k < 3; ++k) {
    rng.split(100 + k).shuffle(assigned[k]);
    for (std::size_t i : assigned[k]) dst[k]->push_back(samples[i]);
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return in;
}

}  // namespace detail

// token<TAB>lang<TAB>pos per line, blank line between sentences.
inline std::vector<RawDocument> load_token_corpus(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<RawDocument> docs;
  RawDocument cur;
  auto flush = [&] {
    if (!cur.token_labels.empty()) docs.push_back(std::move(cur));
    cur = RawDocument{};
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3) throw ParseError(path, lineno, "expected token<TAB>lang<TAB>pos");
    if (fields[0].empty() || fields[1].empty() || fields[2].empty()) throw ParseError(path, lineno, "empty field");
    if (tokenize(fields[0]).size() != 1) throw ParseError(path, lineno, "token contains whitespace");
    if (!cur.text.empty()) cur.text.push_back(' ');
    cur.text += fields[0];
    cur.token_labels.push_back({fields[1], fields[2]});
  }
  flush();
  return docs;
}

// label<TAB>text per line.
inline std::vector<RawDocument> load_sentence_corpus(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<RawDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path, lineno, "expected label<TAB>text");
    const auto label = parse_sentiment(std::string_view(line).substr(0, tab));
    if (!label) throw ParseError(path, lineno, "unknown sentiment label '" + line.substr(0, tab) + "'");
    docs.push_back({line.substr(tab + 1), {}, label});
  }
  return docs;
}

// One text per line for the LM stage; a leading "label<TAB>" is dropped.
inline std::vector<RawDocument> load_text_corpus(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<RawDocument> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab != std::string::npos && parse_sentiment(std::string_view(line).substr(0, tab))) line.erase(0, tab + 1);
    if (tokenize(line).empty()) continue;
    docs.push_back({line, {}, std::nullopt});
  }
  return docs;
}

inline void write_token_corpus(const std::string& path, std::span<const RawDocument> docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& d : docs) {
    const auto tokens = tokenize(d.text);
    if (tokens.size() != d.token_labels.size()) throw Error("write_token_corpus: document lacks token labels");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      out << tokens[i] << '\t' << d.token_labels[i].lang << '\t' << d.token_labels[i].pos << '\n';
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

inline void write_sentence_corpus(const std::string& path, std::span<const RawDocument> docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& d : docs) {
    if (!d.sentiment) throw Error("write_sentence_corpus: document lacks a sentiment label");
    out << to_string(*d.sentiment) << '\t' << d.text << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace cmcl
