#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csmn/eval.hpp"
#include "csmn/synth.hpp"

namespace csmn::fixtures {

/// Model dimensions of the desk profile for a given vocabulary size.
model::ModelConfig desk_model(std::size_t vocab_size, corpus::ImageMode mode = corpus::ImageMode::pool5);

/// Synthetic corpus taken through filtering, vocabulary and encoding, the way
/// preprocess does it, kept in memory.
struct EncodedCorpus {
  corpus::SynthCorpus synth;
  corpus::Vocabulary vocab;
  std::vector<corpus::Post> posts;  // post_id order
};

EncodedCorpus encode_synth(const corpus::SynthConfig& config, corpus::Task task, std::size_t vocab_size,
                           std::size_t max_length = 5, std::size_t min_posts = 10);

std::vector<corpus::Post> select_posts(const std::vector<corpus::Post>& posts, const std::vector<std::string>& ids);

/// Fresh empty directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

/// Runs the command-line entry point in-process with the given arguments.
int run_cli(std::vector<std::string> args);

}  // namespace csmn::fixtures
