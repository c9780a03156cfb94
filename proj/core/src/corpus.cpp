#include "csmn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "csmn/hash.hpp"
#include "csmn/rng.hpp"

namespace csmn::corpus {

std::string_view to_string(Task task) { return task == Task::caption ? "caption" : "hashtag"; }

Task parse_task(std::string_view text) {
  if (text == "caption") return Task::caption;
  if (text == "hashtag") return Task::hashtag;
  throw std::invalid_argument("unknown task: " + std::string(text));
}

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::hyperlink: return "hyperlink";
    case RejectReason::language: return "language";
    case RejectReason::min_length: return "min_length";
    case RejectReason::max_length: return "max_length";
  }
  return "unknown";
}

std::vector<std::string> task_tokens(const RawPost& post, Task task) {
  if (task == Task::caption) return normalize(post.body);
  std::vector<std::string> tags;
  for (const auto& raw : post.hashtags) {
    auto tag = normalize_hashtag(raw);
    if (!tag.empty()) tags.push_back(std::move(tag));
  }
  return tags;
}

// ---------------------------------------------------------------------------

PostFilterResult filter_posts(std::span<const RawPost> posts, const FilterConfig& config) {
  PostFilterResult result;
  const NormalizeConfig keep_foreign{.strip_non_emoji = false};
  for (const auto& post : posts) {
    auto reject = [&](RejectReason r) { result.rejections.push_back({post.post_id, post.user_id, r}); };
    if (config.has_hyperlink && config.has_hyperlink(post.body)) {
      reject(RejectReason::hyperlink);
      continue;
    }
    const auto words = normalize(post.body, keep_foreign);
    if (!words.empty() && config.token_valid) {
      const auto invalid = std::count_if(words.begin(), words.end(), [&](const std::string& w) { return !config.token_valid(w); });
      if (static_cast<double>(invalid) > config.max_invalid_fraction * static_cast<double>(words.size())) {
        reject(RejectReason::language);
        continue;
      }
    }
    const std::size_t length = task_tokens(post, config.task).size();
    if (length < config.min_length) {
      reject(RejectReason::min_length);
      continue;
    }
    if (length > config.max_length) {
      reject(RejectReason::max_length);
      continue;
    }
    result.kept.push_back(post);
  }
  return result;
}

UserFilterResult filter_users(std::span<const RawPost> kept, std::span<const Rejection> rejections,
                              const FilterConfig& config) {
  std::map<std::string, std::size_t> kept_count;
  std::map<std::string, std::size_t> spam_count;
  std::map<std::string, std::size_t> raw_count;
  for (const auto& p : kept) {
    ++kept_count[p.user_id];
    ++raw_count[p.user_id];
  }
  for (const auto& r : rejections) {
    ++raw_count[r.user_id];
    if (r.reason == RejectReason::language || r.reason == RejectReason::hyperlink) ++spam_count[r.user_id];
  }

  UserFilterResult result;
  std::set<std::string> dropped;
  for (const auto& [user, raw] : raw_count) {
    const double threshold = std::max(static_cast<double>(config.spam_floor), config.spam_fraction * static_cast<double>(raw));
    const std::size_t spam = spam_count.count(user) ? spam_count.at(user) : 0;
    const std::size_t n = kept_count.count(user) ? kept_count.at(user) : 0;
    std::string reason;
    if (static_cast<double>(spam) > threshold) {
      reason = "spam";
    } else if (n < config.min_posts) {
      reason = "min_posts";
    } else if (n > config.max_posts) {
      reason = "max_posts";
    }
    if (!reason.empty()) {
      dropped.insert(user);
      result.removed.push_back({user, reason});
    }
  }
  for (const auto& p : kept) {
    if (!dropped.count(p.user_id)) result.kept.push_back(p);
  }
  return result;
}

FilterOutcome apply_filters(std::span<const RawPost> posts, const FilterConfig& config) {
  auto by_post = filter_posts(posts, config);
  auto by_user = filter_users(by_post.kept, by_post.rejections, config);
  return {std::move(by_user.kept), std::move(by_post.rejections), std::move(by_user.removed)};
}

// ---------------------------------------------------------------------------

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> token_lists, Task task, std::size_t max_size) {
  if (max_size <= kSpecialCount) {
    throw std::invalid_argument("vocabulary size " + std::to_string(max_size) + " leaves no room after " +
                                std::to_string(kSpecialCount) + " special tokens");
  }
  Vocabulary v;
  v.task_ = task;
  v.tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>", std::string(kUsernameToken)};
  v.counts_.assign(kSpecialCount, 0);

  std::map<std::string, std::uint64_t> counts;
  for (const auto& list : token_lists) {
    for (const auto& t : list) {
      if (t == kUsernameToken) {
        ++v.counts_[kUsername];
      } else {
        ++counts[t];
      }
    }
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t slots = std::min(max_size - kSpecialCount, ranked.size());
  for (std::size_t i = 0; i < slots; ++i) {
    v.tokens_.push_back(ranked[i].first);
    v.counts_.push_back(ranked[i].second);
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_.emplace(v.tokens_[i], i);
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

double Vocabulary::coverage(std::span<const std::vector<std::string>> token_lists) const {
  std::uint64_t total = 0, covered = 0;
  for (const auto& list : token_lists) {
    for (const auto& t : list) {
      ++total;
      if (id(t) != kUnk) ++covered;
    }
  }
  return total ? static_cast<double>(covered) / static_cast<double>(total) : 1.0;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a(to_string(task_));
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\n", 1), h);
  }
  return h;
}

void Vocabulary::write(std::ostream& out) const {
  out << "#csmn-vocab 1 " << to_string(task_) << ' ' << tokens_.size() << '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\t' << counts_[i] << '\n';
}

Vocabulary Vocabulary::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("vocabulary: empty input");
  std::istringstream header(line);
  std::string magic, task;
  int version = 0;
  std::size_t size = 0;
  header >> magic >> version >> task >> size;
  if (magic != "#csmn-vocab" || version != 1) throw std::runtime_error("vocabulary: bad header '" + line + "'");
  Vocabulary v;
  v.task_ = parse_task(task);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) throw std::runtime_error("vocabulary: bad line '" + line + "'");
    const auto id = std::stoull(line.substr(0, t1));
    if (id != v.tokens_.size()) throw std::runtime_error("vocabulary: ids must be dense and ordered");
    v.tokens_.push_back(line.substr(t1 + 1, t2 - t1 - 1));
    v.counts_.push_back(std::stoull(line.substr(t2 + 1)));
  }
  if (v.tokens_.size() != size || size <= kSpecialCount) throw std::runtime_error("vocabulary: size mismatch");
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_.emplace(v.tokens_[i], i);
  return v;
}

// ---------------------------------------------------------------------------

std::vector<TokenId> UserProfile::token_ids() const {
  std::vector<TokenId> ids;
  ids.reserve(active_words.size());
  for (const auto& w : active_words) ids.push_back(w.token);
  return ids;
}

ProfileBuilder::ProfileBuilder(std::span<const Post> posts) {
  for (const auto& p : posts) {
    auto& u = users_[p.user_id];
    ++u.posts;
    for (auto t : p.tokens) {
      if (!Vocabulary::is_special(t)) ++u.tf[t];
    }
    if (!by_post_.emplace(p.post_id, &p).second) throw std::invalid_argument("duplicate post id " + p.post_id);
  }
  for (const auto& [user, counts] : users_) {
    for (const auto& [token, n] : counts.tf) ++df_[token];
  }
}

std::size_t ProfileBuilder::post_count(const std::string& user_id) const {
  auto it = users_.find(user_id);
  return it == users_.end() ? 0 : it->second.posts;
}

UserProfile ProfileBuilder::profile(const std::string& user_id, std::size_t depth,
                                    const std::optional<std::string>& exclude_post) const {
  auto it = users_.find(user_id);
  if (it == users_.end()) throw std::out_of_range("no posts for user " + user_id);
  std::map<TokenId, std::uint64_t> tf = it->second.tf;
  std::size_t remaining = it->second.posts;
  const auto users = static_cast<double>(users_.size());

  if (exclude_post) {
    auto p = by_post_.find(*exclude_post);
    if (p == by_post_.end() || p->second->user_id != user_id) {
      throw std::invalid_argument("post " + *exclude_post + " does not belong to user " + user_id);
    }
    --remaining;
    for (auto t : p->second->tokens) {
      if (Vocabulary::is_special(t)) continue;
      // Leaving a post out only shrinks this user's counts: a token whose
      // count reaches zero leaves the profile, every other df is unchanged.
      if (--tf[t] == 0) tf.erase(t);
    }
  }
  if (remaining == 0) throw std::invalid_argument("user " + user_id + " has no remaining posts for a profile");

  std::vector<ActiveWord> scored;
  scored.reserve(tf.size());
  for (const auto& [token, count] : tf) {
    const double idf = std::log(users / static_cast<double>(df_.at(token)));
    scored.push_back({token, static_cast<double>(count) * idf});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const ActiveWord& a, const ActiveWord& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.token < b.token;
  });
  const bool any_positive = !scored.empty() && scored.front().score > 0.0;
  if (any_positive) {
    scored.erase(std::remove_if(scored.begin(), scored.end(), [](const ActiveWord& w) { return w.score <= 0.0; }),
                 scored.end());
  }
  if (scored.size() > depth) scored.resize(depth);
  return {user_id, std::move(scored)};
}

std::map<std::string, UserProfile> compute_profiles(std::span<const Post> posts, std::size_t depth,
                                                    const std::optional<std::string>& exclude_post) {
  ProfileBuilder builder(posts);
  std::string excluded_user;
  if (exclude_post) {
    for (const auto& p : posts)
      if (p.post_id == *exclude_post) excluded_user = p.user_id;
  }
  std::set<std::string> users;
  for (const auto& p : posts) users.insert(p.user_id);
  std::map<std::string, UserProfile> out;
  for (const auto& u : users) {
    out.emplace(u, builder.profile(u, depth, u == excluded_user ? exclude_post : std::nullopt));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(SplitMode mode) { return mode == SplitMode::by_users ? "by_users" : "by_posts"; }

SplitMode parse_split_mode(std::string_view text) {
  if (text == "by_users") return SplitMode::by_users;
  if (text == "by_posts") return SplitMode::by_posts;
  throw std::invalid_argument("unknown split mode: " + std::string(text));
}

namespace {

struct PartSizes {
  std::size_t train, val, test;
};

PartSizes part_sizes(std::size_t n, const SplitRatios& r, const char* what) {
  if (r.train <= 0 || r.val < 0 || r.test <= 0) throw std::invalid_argument("split ratios must be positive");
  const double total = r.train + r.val + r.test;
  const auto test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.test / total)));
  const auto val = r.val > 0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.val / total))) : 0;
  if (test + val >= n) {
    throw std::invalid_argument(std::string("split: ") + std::to_string(n) + " " + what +
                                " are not enough for the requested ratios");
  }
  return {n - test - val, val, test};
}

}  // namespace

SplitManifest make_split(std::span<const Post> posts, SplitMode mode, const SplitRatios& ratios, std::uint64_t seed) {
  std::map<std::string, std::vector<std::string>> by_user;
  for (const auto& p : posts) by_user[p.user_id].push_back(p.post_id);
  for (auto& [u, ids] : by_user) std::sort(ids.begin(), ids.end());

  SplitManifest m;
  m.mode = mode;
  m.seed = seed;
  num::Rng rng(num::mix_seed(seed, 0x5EED5));
  if (mode == SplitMode::by_users) {
    if (by_user.size() < 3) throw std::invalid_argument("split by users needs at least 3 users");
    std::vector<std::string> users;
    for (const auto& [u, ids] : by_user) users.push_back(u);
    rng.shuffle(users);
    const auto sizes = part_sizes(users.size(), ratios, "users");
    for (std::size_t i = 0; i < users.size(); ++i) {
      auto& part = i < sizes.test ? m.test : i < sizes.test + sizes.val ? m.val : m.train;
      const auto& ids = by_user.at(users[i]);
      part.insert(part.end(), ids.begin(), ids.end());
    }
  } else {
    for (auto& [u, ids] : by_user) {
      if (ids.size() < 3) throw std::invalid_argument("split by posts needs at least 3 posts for user " + u);
      auto shuffled = ids;
      rng.shuffle(shuffled);
      const auto sizes = part_sizes(shuffled.size(), ratios, "posts");
      for (std::size_t i = 0; i < shuffled.size(); ++i) {
        auto& part = i < sizes.test ? m.test : i < sizes.test + sizes.val ? m.val : m.train;
        part.push_back(shuffled[i]);
      }
    }
  }
  for (auto* part : {&m.train, &m.val, &m.test}) std::sort(part->begin(), part->end());
  return m;
}

void SplitManifest::write(std::ostream& out) const {
  out << "#csmn-split 1 " << to_string(mode) << ' ' << seed << '\n';
  for (const auto& id : train) out << "train\t" << id << '\n';
  for (const auto& id : val) out << "val\t" << id << '\n';
  for (const auto& id : test) out << "test\t" << id << '\n';
}

SplitManifest SplitManifest::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("split manifest: empty input");
  std::istringstream header(line);
  std::string magic, mode;
  int version = 0;
  SplitManifest m;
  header >> magic >> version >> mode >> m.seed;
  if (magic != "#csmn-split" || version != 1) throw std::runtime_error("split manifest: bad header '" + line + "'");
  m.mode = parse_split_mode(mode);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("split manifest: bad line '" + line + "'");
    const auto part = line.substr(0, tab);
    auto id = line.substr(tab + 1);
    if (part == "train") m.train.push_back(std::move(id));
    else if (part == "val") m.val.push_back(std::move(id));
    else if (part == "test") m.test.push_back(std::move(id));
    else throw std::runtime_error("split manifest: unknown part '" + part + "'");
  }
  return m;
}

}  // namespace csmn::corpus
