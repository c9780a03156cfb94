#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "csmn/corpus_io.hpp"
#include "csmn/gradcheck.hpp"
#include "csmn/synth.hpp"
#include "run_config.hpp"

namespace csmn::app {

namespace fs = std::filesystem;

// File names inside output directories.
inline constexpr const char* kRunConfigFile = "run_config.json";
inline constexpr const char* kVocabFile = "vocab.tsv";
inline constexpr const char* kPostsFile = "posts.tsv";
inline constexpr const char* kSplitFile = "split.tsv";
inline constexpr const char* kProfilesFile = "profiles.tsv";
inline constexpr const char* kFilterReportFile = "filter_report.tsv";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kLastCheckpointFile = "last.bin";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kReportFile = "report.csv";
inline constexpr const char* kCorpusFile = "corpus.jsonl";
inline constexpr const char* kFeaturesFile = "features.bin";

/// Writes corpus.jsonl and features.bin.
void run_synth(const corpus::SynthConfig& config, const fs::path& out_dir);

struct PreprocessSummary {
  std::size_t raw_posts = 0;
  std::size_t kept_posts = 0;
  std::size_t users = 0;
  std::size_t vocab_size = 0;
};

/// Filters the corpus, builds the task vocabulary, encodes posts, splits them
/// and writes user profiles.
PreprocessSummary run_preprocess(const RunConfig& config, const fs::path& corpus_path, const fs::path& out_dir);

/// Output of preprocess, loaded back.
struct Dataset {
  corpus::Task task = corpus::Task::caption;
  corpus::Vocabulary vocab;
  std::vector<corpus::Post> posts;
  corpus::SplitManifest split;

  std::vector<corpus::Post> part(const std::string& name) const;
};

Dataset load_dataset(const fs::path& data_dir);
corpus::FeatureStore load_feature_file(const RunConfig& config, const fs::path& path);

/// Teacher-forcing samples for one split part, profiles leave-one-out over
/// the whole dataset.
std::vector<training::TrainSample> dataset_samples(const RunConfig& config, const Dataset& data,
                                                   const corpus::FeatureStore& features, const std::string& part);

training::TrainResult run_train(const RunConfig& config, const fs::path& data_dir, const fs::path& features_path,
                                const fs::path& out_dir, const std::optional<fs::path>& resume = std::nullopt);

/// Methods: "csmn" (needs a checkpoint) or one of the 1nn variants.
std::vector<eval::MetricReport> run_evaluate(const RunConfig& config, const fs::path& data_dir,
                                             const fs::path& features_path, const std::vector<std::string>& methods,
                                             const std::optional<fs::path>& checkpoint, const fs::path& out_dir,
                                             const std::string& part = "test");

struct GenerateRequest {
  std::optional<std::string> post_id;
  std::optional<std::string> feature_key;
  std::optional<std::string> user_id;
};

/// Decoded tokens (as strings) for one query.
std::vector<std::string> run_generate(const RunConfig& config, const fs::path& data_dir, const fs::path& features_path,
                                      const fs::path& checkpoint, const GenerateRequest& request);

struct GradCheckRun {
  num::GradCheckReport report;
  double tolerance = 0.0;
  num::Precision precision = num::Precision::f64;
  double seconds = 0.0;
};

/// Teacher-forced batch of random samples on the configured dimensions at a
/// generic parameter point (small random biases keep ReLU inputs off zero).
struct GradCheckProblem {
  model::ModelConfig model;
  model::ModelParams params;
  std::vector<training::TrainSample> samples;
};
GradCheckProblem make_gradcheck_problem(const RunConfig& config, std::size_t batch = 3);

GradCheckRun run_gradcheck(const RunConfig& config, num::Precision precision);
void print_gradcheck(std::ostream& out, const GradCheckRun& run);

void write_text_file(const fs::path& path, const std::string& text);
std::string read_text_file(const fs::path& path);

/// Parses argv and dispatches; returns the process exit status.
int run(int argc, char** argv);

}  // namespace csmn::app
