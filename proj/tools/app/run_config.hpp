#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csmn/eval.hpp"

namespace csmn::app {

/// Failures mapped to process exit codes by run().
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigConflict : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum ExitCode : int {
  kOk = 0,
  kGeneric = 1,
  kUsage = 2,
  kMissingFile = 3,
  kConfigConflict = 4,
  kDataError = 5,
  kNumericFailure = 6,
};

/// Every setting a subcommand may read. Resolved from a named profile, then
/// a JSON config file, then command-line flags, and written next to every
/// output as run_config.json.
struct RunConfig {
  std::string profile = "desk";
  corpus::Task task = corpus::Task::caption;
  corpus::SplitMode split = corpus::SplitMode::by_users;
  corpus::ImageMode image_mode = corpus::ImageMode::pool5;
  model::AblationFlags ablate;
  std::uint64_t seed = 1;

  // Data
  std::size_t vocab_size = 30;
  std::size_t min_length = 3;
  std::size_t max_length = 5;
  double max_invalid_fraction = 0.2;
  std::size_t min_posts = 10;
  std::size_t max_posts = 1000;
  std::size_t spam_floor = 15;
  double spam_fraction = 0.15;
  double split_train = 0.8;
  double split_val = 0.1;
  double split_test = 0.1;

  // Model
  std::size_t d_context = 4;
  std::size_t output_slots = 6;
  std::size_t feature_dim = 32;
  std::size_t mem_dim = 32;
  std::size_t embed_dim = 16;
  std::size_t conv_depth = 8;

  // Training
  double lr0 = 0.003;
  double lr_decay = 1.2;
  std::size_t decay_every = 5;
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  double grad_clip = 0.0;
  std::size_t max_steps = 0;
  num::Precision precision = num::Precision::f32;

  // Gradient check
  double gradcheck_eps = 1e-6;
  double gradcheck_tol64 = 1e-5;
  double gradcheck_tol32 = 1e-3;
  std::size_t gradcheck_max_elements = 0;

  /// Worker threads; from CSMN_THREADS, never serialized.
  std::size_t threads = 1;

  static RunConfig paper();
  static RunConfig desk();
  static RunConfig named(const std::string& profile);

  void validate() const;

  corpus::FilterConfig filter_config() const;
  corpus::SplitRatios split_ratios() const;
  model::ModelConfig model_config(std::size_t actual_vocab_size) const;
  training::TrainConfig train_config() const;

  std::string to_json() const;
  /// Applies the keys present in `json_text` on top of this config. Unknown
  /// keys and a profile different from this one are conflicts.
  void merge_json(const std::string& json_text);
};

/// Flags shared by all subcommands; unset optionals leave the config alone.
struct CommonFlags {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> profile;
  std::optional<std::string> task;
  std::optional<std::string> split;
  std::optional<std::string> image_mode;
  std::vector<std::string> ablate;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> d_context;
};

/// Profile defaults, then the config file, then flags; validated.
RunConfig resolve_config(const CommonFlags& flags);

/// min(hardware threads, CSMN_THREADS) with 1 as the floor.
std::size_t thread_budget();

model::AblationFlags parse_ablations(const std::vector<std::string>& names);

}  // namespace csmn::app
