#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace csmn::corpus {

inline constexpr std::string_view kUsernameToken = "@username";

struct NormalizeConfig {
  /// Drop non-ASCII, non-emoji code points. The language filter turns this
  /// off so that foreign words survive tokenization and can be judged.
  bool strip_non_emoji = true;
};

/// Caption text to tokens:
///  - URLs (http://, https://, www.) are removed up to the next whitespace;
///  - ASCII is lowercased; apostrophes are deleted inside words;
///  - @mentions become the @username token;
///  - #tags stay whole ("#beach");
///  - each emoji code point is its own token (variation selectors, joiners
///    and skin-tone modifiers are dropped);
///  - runs of ! ? . , become a single standalone token;
///  - any other character separates words.
std::vector<std::string> normalize(std::string_view body, const NormalizeConfig& config = {});

/// "#Beach!" -> "#beach"; empty string when nothing usable remains.
std::string normalize_hashtag(std::string_view raw);

bool contains_hyperlink(std::string_view body);
bool is_emoji(char32_t cp);

/// Default stand-in for a dictionary check: lowercase ASCII words and digits,
/// #tags, @username, a single emoji, or punctuation.
bool default_token_validity(std::string_view token);

}  // namespace csmn::corpus
