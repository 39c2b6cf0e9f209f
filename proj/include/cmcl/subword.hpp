#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmcl/error.hpp"
#include "cmcl/text.hpp"

namespace cmcl {

enum class EncoderKind { unigram, trigram, bpe };

inline std::string_view to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::unigram: return "unigram";
    case EncoderKind::trigram: return "trigram";
    case EncoderKind::bpe: return "bpe";
  }
  return "?";
}

inline EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "unigram") return EncoderKind::unigram;
  if (name == "trigram") return EncoderKind::trigram;
  if (name == "bpe") return EncoderKind::bpe;
  throw ConfigError("unknown encoder '" + std::string(name) + "' (expected unigram|trigram|bpe)");
}

// "girl" -> {"gir", "l*#"}: append the terminal, cut into non-overlapping
// 3-character chunks, pad the last chunk with '#'. Characters are UTF-8 code
// points.
inline std::vector<std::string> trigram_encode(std::string_view token) {
  if (token.empty()) throw Error("trigram_encode: empty token");
  if (token.find(kTerminal) != std::string_view::npos || token.find(kPad) != std::string_view::npos) {
    throw Error("trigram_encode: token '" + std::string(token) + "' contains a reserved character");
  }
  auto chars = utf8_chars(token);
  chars.emplace_back(1, kTerminal);
  while (chars.size() % 3 != 0) chars.emplace_back(1, kPad);
  std::vector<std::string> out;
  out.reserve(chars.size() / 3);
  for (std::size_t i = 0; i < chars.size(); i += 3) {
    out.push_back(chars[i] + chars[i + 1] + chars[i + 2]);
  }
  return out;
}

inline std::vector<std::string> unigram_encode(std::string_view token) {
  auto chars = utf8_chars(token);
  chars.emplace_back(1, kTerminal);
  return chars;
}

using Merge = std::pair<std::string, std::string>;

namespace detail {

inline std::size_t apply_merge(std::vector<std::string>& symbols, const Merge& merge) {
  std::size_t applied = 0;
  std::size_t out = 0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == merge.first && symbols[i + 1] == merge.second) {
      symbols[out++] = symbols[i] + symbols[i + 1];
      ++i;
      ++applied;
    } else {
      if (out != i) symbols[out] = std::move(symbols[i]);
      ++out;
    }
  }
  symbols.resize(out);
  return applied;
}

}  // namespace detail

// Greedy BPE over end-marked tokens ("low*"). Each round merges the most
// frequent adjacent pair (overlapping occurrences counted); ties go to the
// lexicographically smallest pair. Stops early when no pair remains.
inline std::vector<Merge> bpe_learn(const std::map<std::string, std::uint64_t>& tokens_with_counts,
                                    std::size_t n_merges) {
  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  words.reserve(tokens_with_counts.size());
  for (const auto& [tok, count] : tokens_with_counts) {
    if (!tok.empty() && count > 0) words.emplace_back(utf8_chars(tok), count);
  }
  std::vector<Merge> merges;
  while (merges.size() < n_merges) {
    std::map<Merge, std::uint64_t> pair_counts;
    for (const auto& [symbols, count] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        pair_counts[{symbols[i], symbols[i + 1]}] += count;
      }
    }
    if (pair_counts.empty()) break;
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const Merge merge = best->first;
    for (auto& entry : words) detail::apply_merge(entry.first, merge);
    merges.push_back(merge);
  }
  return merges;
}

// Applies merges, in learned order, to the characters of token + '*'.
inline std::vector<std::string> bpe_encode(std::string_view token, const std::vector<Merge>& merges) {
  auto symbols = unigram_encode(token);
  for (const auto& merge : merges) {
    if (symbols.size() < 2) break;
    detail::apply_merge(symbols, merge);
  }
  return symbols;
}

// One configured subword scheme. BPE results are memoized per token.
class SubwordEncoder {
 public:
  SubwordEncoder() = default;
  explicit SubwordEncoder(EncoderKind kind, std::vector<Merge> merges = {})
      : kind_(kind), merges_(std::move(merges)) {}

  EncoderKind kind() const { return kind_; }
  const std::vector<Merge>& merges() const { return merges_; }

  std::vector<std::string> encode(std::string_view token) const {
    switch (kind_) {
      case EncoderKind::unigram: return unigram_encode(token);
      case EncoderKind::trigram: return trigram_encode(token);
      case EncoderKind::bpe: {
        auto key = std::string(token);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        auto pieces = bpe_encode(token, merges_);
        cache_.emplace(std::move(key), pieces);
        return pieces;
      }
    }
    return {};
  }

 private:
  EncoderKind kind_ = EncoderKind::trigram;
  std::vector<Merge> merges_;
  mutable std::unordered_map<std::string, std::vector<std::string>> cache_;
};

inline void save_merges(const std::string& path, const std::vector<Merge>& merges) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write merge file " + path);
  for (const auto& [left, right] : merges) out << left << ' ' << right << '\n';
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<Merge> load_merges(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read merge file " + path);
  std::vector<Merge> merges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() || line.find(' ', sp + 1) != std::string::npos) {
      throw ParseError(path, lineno, "expected 'left right'");
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return merges;
}

}  // namespace cmcl
