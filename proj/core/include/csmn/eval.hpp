#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "csmn/training.hpp"

namespace csmn::eval {

using corpus::Post;
using corpus::Task;
using corpus::TokenId;

/// F1 of two tag sets (duplicates ignored). Empty prediction scores 0;
/// empty ground truth is an error.
double f1_hashtags(std::span<const TokenId> pred, std::span<const TokenId> gt);

/// Corpus-level BLEU-n with one reference per candidate: clipped n-gram
/// precisions for orders 1..n, geometric mean, brevity penalty
/// exp(1 - r/c) when c <= r. Any zero precision gives 0. `smooth` adds one to
/// numerator and denominator of orders above 1 and is meant for debugging.
double bleu(std::span<const std::vector<TokenId>> preds, std::span<const std::vector<TokenId>> refs, int n,
            bool smooth = false);

inline constexpr double kRougeBeta = 1.2;

/// LCS-based F-measure of one pair: ((1 + b^2) P R) / (R + b^2 P).
double rouge_l_pair(std::span<const TokenId> pred, std::span<const TokenId> ref, double beta = kRougeBeta);
/// Mean of rouge_l_pair over the pairs.
double rouge_l(std::span<const std::vector<TokenId>> preds, std::span<const std::vector<TokenId>> refs,
               double beta = kRougeBeta);

// ---------------------------------------------------------------------------
// Nearest-neighbour baselines

enum class NNVariant { im, usr, usrim };
std::string_view to_string(NNVariant v);

struct NNResult {
  std::string post_id;
  std::string user_id;
  std::vector<TokenId> tokens;
};

/// Retrieval over the training posts. Image distance is squared l2 between
/// pooled features; user similarity is the size of the active-word overlap.
/// Ties go to the smaller post_id / user_id.
class NearestNeighbours {
 public:
  /// `user_profiles` holds the active words of every training user.
  NearestNeighbours(std::span<const Post> train, const corpus::FeatureStore& features,
                    std::map<std::string, std::vector<TokenId>> user_profiles, std::uint64_t seed);

  NNResult nearest_image(const std::string& query_key, const std::vector<std::string>* restrict_to = nullptr) const;
  /// Training user whose active words overlap most with `query_profile`.
  std::string nearest_user(std::span<const TokenId> query_profile) const;
  /// A post of the nearest user chosen by an rng seeded from the query id.
  NNResult random_post_of_nearest_user(const std::string& query_post_id, std::span<const TokenId> query_profile) const;
  /// Nearest image among the nearest user's posts.
  NNResult nearest_image_of_nearest_user(const std::string& query_key, std::span<const TokenId> query_profile) const;

  NNResult query(NNVariant variant, const std::string& query_post_id, const std::string& query_key,
                 std::span<const TokenId> query_profile) const;

 private:
  std::vector<const Post*> train_;  // post_id order
  const corpus::FeatureStore* features_;
  std::map<std::string, std::vector<TokenId>> profiles_;
  std::map<std::string, std::vector<std::string>> posts_by_user_;  // post_ids, sorted
  std::map<std::string, const Post*> by_id_;
  std::map<std::string, num::Tensor> pooled_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Reports

struct PredictionRecord {
  std::string post_id;
  std::vector<TokenId> predicted;
  std::vector<TokenId> reference;
};

struct MetricReport {
  std::string method;
  Task task = Task::caption;
  corpus::SplitMode split = corpus::SplitMode::by_users;
  /// Ordered metric name -> value.
  std::vector<std::pair<std::string, double>> metrics;
  std::size_t n = 0;

  double metric(const std::string& name) const;
};

/// F1 (mean over samples) for hashtags; BLEU-1..4 and ROUGE-L for captions.
MetricReport score(const std::string& method, Task task, corpus::SplitMode split,
                   std::span<const PredictionRecord> records);

inline constexpr const char* kReportHeader = "method,task,split,metric,value,n";
void write_report(std::ostream& out, std::span<const MetricReport> reports, bool header = true);
/// "post_id\tspace-joined tokens" per record.
void write_predictions(std::ostream& out, std::span<const PredictionRecord> records,
                       const corpus::Vocabulary& vocab);

/// Greedy decoding for every sample (deduplicated for hashtags); samples are
/// independent, so `threads` does not change the result.
std::vector<PredictionRecord> predict_csmn(const training::ModelParams& params, const model::ModelConfig& config,
                                           std::span<const training::TrainSample> samples, Task task,
                                           std::size_t max_len, std::size_t threads = 1);

std::vector<PredictionRecord> predict_nn(const NearestNeighbours& nn, NNVariant variant,
                                         std::span<const training::TrainSample> samples);

/// Target tokens without EOS and padding.
std::vector<TokenId> reference_tokens(const training::TrainSample& sample);

}  // namespace csmn::eval
