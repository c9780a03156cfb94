#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "csmn/text.hpp"

namespace csmn::corpus {

using TokenId = std::size_t;

enum class Task { caption, hashtag };
std::string_view to_string(Task task);
Task parse_task(std::string_view text);

struct RawPost {
  std::string post_id;
  std::string user_id;
  std::string body;
  std::vector<std::string> hashtags;
  std::string image_feature_key;
};

/// A post after filtering, encoded against one task's vocabulary.
struct Post {
  std::string post_id;
  std::string user_id;
  std::vector<TokenId> tokens;
  std::string image_feature_key;
};

/// Token strings a raw post contributes to a task: normalized body tokens for
/// captions, normalized hashtags for hashtag prediction.
std::vector<std::string> task_tokens(const RawPost& post, Task task);

// ---------------------------------------------------------------------------
// Filtering

using TokenPredicate = std::function<bool(std::string_view)>;
using TextPredicate = std::function<bool(std::string_view)>;

struct FilterConfig {
  Task task = Task::caption;
  std::size_t min_length = 3;
  std::size_t max_length = 15;
  /// A post is rejected when more than this fraction of its body tokens fail
  /// `token_valid`.
  double max_invalid_fraction = 0.20;
  TokenPredicate token_valid = default_token_validity;
  TextPredicate has_hyperlink = contains_hyperlink;
  std::size_t min_posts = 50;
  std::size_t max_posts = 1000;
  /// A user is dropped when language/hyperlink rejections exceed
  /// max(spam_floor, spam_fraction * raw post count).
  std::size_t spam_floor = 15;
  double spam_fraction = 0.15;
};

enum class RejectReason { hyperlink, language, min_length, max_length };
std::string_view to_string(RejectReason reason);

struct Rejection {
  std::string post_id;
  std::string user_id;
  RejectReason reason;
};

struct PostFilterResult {
  std::vector<RawPost> kept;
  std::vector<Rejection> rejections;
};

PostFilterResult filter_posts(std::span<const RawPost> posts, const FilterConfig& config);

struct UserRemoval {
  std::string user_id;
  std::string reason;  // "min_posts", "max_posts" or "spam"
};

struct UserFilterResult {
  std::vector<RawPost> kept;
  std::vector<UserRemoval> removed;
};

/// `kept` and `rejections` come from filter_posts over the same raw corpus.
UserFilterResult filter_users(std::span<const RawPost> kept, std::span<const Rejection> rejections,
                              const FilterConfig& config);

struct FilterOutcome {
  std::vector<RawPost> kept;
  std::vector<Rejection> rejections;
  std::vector<UserRemoval> removed_users;
};

/// filter_posts followed by filter_users.
FilterOutcome apply_filters(std::span<const RawPost> posts, const FilterConfig& config);

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kUsername = 4;
  static constexpr std::size_t kSpecialCount = 5;

  Vocabulary() = default;

  /// Most frequent tokens fill the ids after the specials; ties go to the
  /// lexicographically smaller token. The result holds at most `max_size`
  /// ids, fewer when the corpus has fewer distinct tokens.
  static Vocabulary build(std::span<const std::vector<std::string>> token_lists, Task task, std::size_t max_size);

  Task task() const { return task_; }
  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::uint64_t count(TokenId id) const { return counts_.at(id); }
  static bool is_special(TokenId id) { return id < kSpecialCount; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  /// Fraction of token occurrences in `token_lists` that map to a non-UNK id.
  double coverage(std::span<const std::vector<std::string>> token_lists) const;

  /// FNV-1a over the task and the ordered token list.
  std::uint64_t hash() const;

  /// Text format: a "#csmn-vocab 1 <task> <size>" header, then one
  /// "<id>\t<token>\t<count>" line per id in increasing id order.
  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in);

 private:
  Task task_ = Task::caption;
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
};

// ---------------------------------------------------------------------------
// User profiles

struct ActiveWord {
  TokenId token;
  double score;
  bool operator==(const ActiveWord&) const = default;
};

struct UserProfile {
  std::string user_id;
  /// Descending score; ties by ascending token id.
  std::vector<ActiveWord> active_words;

  std::vector<TokenId> token_ids() const;
};

/// TF-IDF over users: tf(w, u) counts occurrences of w in u's posts,
/// idf(w) = ln(U / df(w)) with df the number of users that used w. Special
/// ids never enter a profile. Zero-score words are only used when a user has
/// no positive-score word at all.
///
/// Counts are precomputed once; a profile that leaves one post out is then
/// cheap to derive.
class ProfileBuilder {
 public:
  explicit ProfileBuilder(std::span<const Post> posts);

  std::size_t user_count() const { return users_.size(); }
  bool has_user(const std::string& user_id) const { return users_.count(user_id) != 0; }
  std::size_t post_count(const std::string& user_id) const;

  /// Top-`depth` profile for `user_id`, optionally excluding one of the
  /// user's posts. Throws if the user has no remaining posts.
  UserProfile profile(const std::string& user_id, std::size_t depth,
                      const std::optional<std::string>& exclude_post = std::nullopt) const;

 private:
  struct UserCounts {
    std::size_t posts = 0;
    std::map<TokenId, std::uint64_t> tf;
  };
  std::map<std::string, UserCounts> users_;
  std::unordered_map<TokenId, std::size_t> df_;
  std::unordered_map<std::string, const Post*> by_post_;
};

std::map<std::string, UserProfile> compute_profiles(std::span<const Post> posts, std::size_t depth,
                                                    const std::optional<std::string>& exclude_post = std::nullopt);

// ---------------------------------------------------------------------------
// Splits

enum class SplitMode { by_users, by_posts };
std::string_view to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view text);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitManifest {
  SplitMode mode = SplitMode::by_users;
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  bool operator==(const SplitManifest&) const = default;

  /// Text format: "#csmn-split 1 <mode> <seed>" header, then
  /// "<part>\t<post_id>" lines (part in train/val/test), each part sorted.
  void write(std::ostream& out) const;
  static SplitManifest read(std::istream& in);
};

/// by_users assigns whole users to one part; by_posts splits every user's
/// posts so each user appears in train, val and test. Deterministic in seed.
SplitManifest make_split(std::span<const Post> posts, SplitMode mode, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace csmn::corpus
