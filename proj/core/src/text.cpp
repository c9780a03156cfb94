#include "csmn/text.hpp"

#include <algorithm>
#include <cctype>

namespace csmn::corpus {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t length;  // bytes consumed; 0 marks an invalid sequence
};

CodePoint decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {0, 0};
  }
  if (i + len > s.size()) return {0, 0};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {0, 0};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len};
}

bool is_emoji_modifier(char32_t cp) {
  return cp == 0xFE0F || cp == 0xFE0E || cp == 0x200D || (cp >= 0x1F3FB && cp <= 0x1F3FF);
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

bool is_punct_token(char c) { return c == '!' || c == '?' || c == '.' || c == ','; }

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
  }
  return true;
}

/// Offset of the first URL inside a whitespace-free chunk, or npos.
std::size_t url_start(std::string_view chunk) {
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    auto rest = chunk.substr(i);
    if (starts_with_ci(rest, "http://") || starts_with_ci(rest, "https://") || starts_with_ci(rest, "www.")) {
      return i;
    }
  }
  return std::string_view::npos;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

class Tokenizer {
 public:
  explicit Tokenizer(const NormalizeConfig& config) : config_(config) {}

  void chunk(std::string_view c) {
    std::size_t i = 0;
    while (i < c.size()) {
      const char ch = c[i];
      const auto uch = static_cast<unsigned char>(ch);
      if (uch < 0x80) {
        if (is_word_char(ch)) {
          word_ += static_cast<char>(std::tolower(uch));
          ++i;
        } else if (ch == '\'') {
          ++i;  // "don't" -> "dont"
        } else if ((ch == '@' || ch == '#') && word_.empty() && i + 1 < c.size() &&
                   (is_word_char(c[i + 1]) || c[i + 1] == '_')) {
          std::size_t j = i + 1;
          while (j < c.size() && (is_word_char(c[j]) || c[j] == '_')) ++j;
          if (ch == '@') {
            tokens_.emplace_back(kUsernameToken);
          } else {
            std::string tag = "#";
            for (std::size_t k = i + 1; k < j; ++k) tag += static_cast<char>(std::tolower(static_cast<unsigned char>(c[k])));
            tokens_.push_back(std::move(tag));
          }
          i = j;
        } else if (is_punct_token(ch)) {
          flush();
          std::size_t j = i;
          while (j < c.size() && c[j] == ch) ++j;
          tokens_.emplace_back(1, ch);
          i = j;
        } else {
          flush();
          ++i;
        }
        continue;
      }
      const CodePoint cp = decode(c, i);
      if (cp.length == 0) {
        ++i;
        continue;
      }
      if (is_emoji(cp.value)) {
        flush();
        tokens_.emplace_back(c.substr(i, cp.length));
      } else if (!is_emoji_modifier(cp.value) && !config_.strip_non_emoji) {
        word_.append(c.substr(i, cp.length));
      }
      i += cp.length;
    }
    flush();
  }

  std::vector<std::string> take() { return std::move(tokens_); }

 private:
  void flush() {
    if (!word_.empty()) tokens_.push_back(std::move(word_));
    word_.clear();
  }

  const NormalizeConfig& config_;
  std::string word_;
  std::vector<std::string> tokens_;
};

}  // namespace

bool is_emoji(char32_t cp) {
  return (cp >= 0x1F300 && cp <= 0x1F5FF) || (cp >= 0x1F600 && cp <= 0x1F64F) || (cp >= 0x1F680 && cp <= 0x1F6FF) ||
         (cp >= 0x1F900 && cp <= 0x1F9FF) || (cp >= 0x1FA70 && cp <= 0x1FAFF) || (cp >= 0x1F1E6 && cp <= 0x1F1FF) ||
         (cp >= 0x2600 && cp <= 0x27BF) || cp == 0x2B50 || cp == 0x2B55 || cp == 0x231A || cp == 0x231B ||
         (cp >= 0x23E9 && cp <= 0x23FA);
}

std::vector<std::string> normalize(std::string_view body, const NormalizeConfig& config) {
  Tokenizer tok(config);
  for (auto c : split_whitespace(body)) {
    const std::size_t url = url_start(c);
    if (url != std::string_view::npos) c = c.substr(0, url);
    tok.chunk(c);
  }
  return tok.take();
}

std::string normalize_hashtag(std::string_view raw) {
  std::string out;
  for (char c : raw) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && (std::isalnum(u) || c == '_')) out += static_cast<char>(std::tolower(u));
  }
  if (out.empty()) return out;
  return "#" + out;
}

bool contains_hyperlink(std::string_view body) {
  for (auto c : split_whitespace(body)) {
    if (url_start(c) != std::string_view::npos) return true;
  }
  return false;
}

bool default_token_validity(std::string_view token) {
  if (token.empty()) return false;
  if (token == kUsernameToken) return true;
  if (token.size() == 1 && is_punct_token(token[0])) return true;
  const CodePoint first = decode(token, 0);
  if (first.length == token.size() && is_emoji(first.value)) return true;
  std::string_view body = token.front() == '#' ? token.substr(1) : token;
  if (body.empty()) return false;
  return std::all_of(body.begin(), body.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

}  // namespace csmn::corpus
