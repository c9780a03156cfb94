#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "csmn/corpus.hpp"

namespace csmn::corpus {

class CorpusFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Line-delimited JSON, one flat object per post with fields post_id,
/// user_id, body, hashtags (array of strings) and image_feature_key.
std::vector<RawPost> read_corpus(std::istream& in);
std::vector<RawPost> read_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const std::vector<RawPost>& posts);

/// Encoded posts: "#csmn-posts 1 <task>" header, then
/// "<post_id>\t<user_id>\t<image_feature_key>\t<space-joined ids>" lines.
void write_posts(std::ostream& out, Task task, const std::vector<Post>& posts);
std::vector<Post> read_posts(std::istream& in, Task* task = nullptr);

}  // namespace csmn::corpus
