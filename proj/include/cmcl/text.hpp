#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cmcl {

inline constexpr std::string_view kUserMask = "<usr>";
inline constexpr std::string_view kUrlMask = "<url>";

// Reserved by the trigram encoder: token terminal and chunk padding.
inline constexpr char kTerminal = '*';
inline constexpr char kPad = '#';

namespace detail {

inline bool is_space(char ch) {
  return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\v' || ch == '\f';
}

inline bool is_url(std::string_view tok) {
  if (tok.starts_with("www.")) return true;
  const auto pos = tok.find("://");
  if (pos == std::string_view::npos || pos == 0) return false;
  for (char ch : tok.substr(0, pos)) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9') || ch == '+' || ch == '-' || ch == '.';
    if (!ok) return false;
  }
  return true;
}

inline std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;  // stray continuation byte: treat as its own unit
}

}  // namespace detail

// Splits a UTF-8 string into code points (each returned as its byte string).
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t len = detail::utf8_length(static_cast<unsigned char>(s[i]));
    if (i + len > s.size()) len = s.size() - i;
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !detail::is_space(text[i])) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

// Normalizes a single whitespace-free token. Returns an empty string when
// nothing survives reserved-character deletion.
inline std::string normalize_token(std::string_view raw) {
  std::string tok(raw);
  for (char& ch : tok) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  if (tok.starts_with('@')) return std::string(kUserMask);
  if (detail::is_url(tok)) return std::string(kUrlMask);
  std::erase_if(tok, [](char ch) { return ch == kTerminal || ch == kPad; });
  return tok;
}

// Lowercases (ASCII), masks mentions and URLs, deletes '*' and '#', and
// collapses whitespace to single spaces.
inline std::string normalize(std::string_view text) {
  std::string out;
  for (const auto& tok : tokenize(text)) {
    auto norm = normalize_token(tok);
    if (norm.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += norm;
  }
  return out;
}

}  // namespace cmcl
