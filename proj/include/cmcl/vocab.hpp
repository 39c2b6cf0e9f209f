#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmcl/error.hpp"

namespace cmcl {

using TokenId = std::uint32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kUsr = 2;
inline constexpr TokenId kUrl = 3;
inline constexpr TokenId kBos = 4;
inline constexpr std::size_t kCount = 5;
inline constexpr std::array<std::string_view, kCount> kNames{"<pad>", "<unk>", "<usr>", "<url>", "<bos>"};
}  // namespace special

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Dense subword <-> id table. Ids 0..4 are the reserved specials.
class Vocab {
 public:
  struct Entry {
    std::string subword;
    std::uint64_t freq = 0;
  };

  Vocab() {
    for (auto name : special::kNames) add(std::string(name), 0);
  }

  // Appends non-reserved entries in the given order.
  static Vocab from_entries(std::span<const Entry> entries) {
    Vocab v;
    for (const auto& e : entries) {
      if (v.index_.contains(e.subword)) throw Error("duplicate subword '" + e.subword + "' in vocabulary");
      v.add(e.subword, e.freq);
    }
    return v;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  const std::string& subword(TokenId id) const { return entries_.at(id).subword; }
  std::uint64_t freq(TokenId id) const { return entries_.at(id).freq; }
  bool contains(std::string_view subword) const { return index_.contains(std::string(subword)); }

  // Unknown subwords map to UNK.
  TokenId id(std::string_view subword) const {
    auto it = index_.find(std::string(subword));
    return it == index_.end() ? special::kUnk : it->second;
  }

  std::string serialize() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      out << entries_[i].subword << '\t' << i << '\t' << entries_[i].freq << '\n';
    }
    return out.str();
  }

  // Content hash used to pair checkpoints with their vocabulary.
  std::string hash() const { return hex64(fnv1a64(serialize())); }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocab file " + path);
    out << serialize();
    if (!out) throw IoError("write failed for " + path);
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read vocab file " + path);
    Vocab v;
    v.entries_.clear();
    v.index_.clear();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
      if (t2 == std::string::npos) throw ParseError(path, lineno, "expected 'subword<TAB>id<TAB>freq'");
      std::string subword = line.substr(0, t1);
      std::size_t id = 0;
      std::uint64_t freq = 0;
      try {
        id = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
        freq = std::stoull(line.substr(t2 + 1));
      } catch (const std::exception&) {
        throw ParseError(path, lineno, "non-numeric id or frequency");
      }
      if (id != v.entries_.size()) throw ParseError(path, lineno, "ids must be dense and ascending");
      if (id < special::kCount && subword != special::kNames[id]) {
        throw ParseError(path, lineno, "reserved id " + std::to_string(id) + " must be " + std::string(special::kNames[id]));
      }
      if (v.index_.contains(subword)) throw ParseError(path, lineno, "duplicate subword '" + subword + "'");
      v.add(std::move(subword), freq);
    }
    if (v.entries_.size() < special::kCount) throw IoError(path + ": missing reserved entries");
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.serialize() == b.serialize(); }

 private:
  void add(std::string subword, std::uint64_t freq) {
    index_.emplace(subword, static_cast<TokenId>(entries_.size()));
    entries_.push_back({std::move(subword), freq});
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, TokenId> index_;
};

// Union of all streams; subwords below min_freq are dropped (they encode as
// UNK). Order: frequency descending, then lexicographic.
inline Vocab build_vocab(std::span<const std::vector<std::string>> streams, std::uint64_t min_freq) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& stream : streams) {
    for (const auto& sw : stream) ++counts[sw];
  }
  std::vector<Vocab::Entry> entries;
  for (const auto& [sw, n] : counts) {
    const bool reserved = std::find(special::kNames.begin(), special::kNames.end(), sw) != special::kNames.end();
    if (!reserved && n >= min_freq) entries.push_back({sw, n});
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Vocab::Entry& a, const Vocab::Entry& b) { return a.freq > b.freq; });
  return Vocab::from_entries(entries);
}

}  // namespace cmcl
