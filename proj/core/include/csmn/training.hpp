#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csmn/model.hpp"

namespace csmn::training {

using corpus::TokenId;
using model::ModelConfig;
using model::ModelParams;
using model::Network;
using num::Tape;
using num::Tensor;
using num::Var;

struct TrainConfig {
  double lr0 = 0.001;
  double lr_decay = 1.2;
  std::size_t decay_every = 5;
  std::size_t epochs = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  /// Global-norm bound; 0 disables clipping.
  double grad_clip = 0.0;
  /// Stop after this many optimizer steps; 0 means no limit.
  std::size_t max_steps = 0;
  num::Precision precision = num::Precision::f32;
  /// Worker threads for per-sample gradients; results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
};

double lr_at(const TrainConfig& config, std::size_t epoch);

/// One teacher-forced example. `target` is the ground-truth sequence ending in
/// EOS, optionally followed by PAD, which is ignored.
struct TrainSample {
  std::string post_id;
  std::string user_id;
  std::string feature_key;
  Tensor feature;
  std::vector<TokenId> profile;
  std::vector<TokenId> target;
};

/// Samples for `posts` with features from `features` and active words from
/// `profiles` (leave-one-out: each post's own tokens are not in its profile).
std::vector<TrainSample> make_samples(std::span<const corpus::Post> posts, const corpus::FeatureStore& features,
                                      const corpus::ProfileBuilder& profiles, std::size_t depth,
                                      std::size_t max_target_len);

/// Number of steps that enter the loss: tokens up to and including EOS.
std::size_t loss_steps(std::span<const TokenId> target);

using Batch = std::vector<std::size_t>;

/// Buckets sample indices by length, fills batches inside each bucket, pools
/// the underfull remainders (in length order) into mixed batches and then
/// shuffles the batch order.
std::vector<Batch> make_batches(std::span<const std::size_t> lengths, std::size_t batch_size, num::Rng& rng);

/// Replaces a step's logits before its loss is taken; used to probe that a
/// step's loss does not depend on earlier predictions.
using LogitHook = std::function<Var(std::size_t step, Var logits)>;

struct SampleTrace {
  std::vector<Var> logits;      // per loss step
  std::vector<Var> step_losses; // cross-entropy per loss step
  Var loss;                     // mean of step_losses
};

/// Teacher forcing: at step t the memory holds y_1..y_{t-1} of the target, the
/// query is fed y_{t-1} (BOS at t = 1).
SampleTrace teacher_forced_trace(const Network& net, const TrainSample& sample, const LogitHook& hook = {});
Var teacher_forced_loss(const Network& net, const TrainSample& sample);
/// Mean of per-sample losses; throws on an empty batch.
Var batch_loss(const Network& net, std::span<const TrainSample> samples, std::span<const std::size_t> batch);

struct LossAndGrad {
  double loss = 0.0;
  ModelParams grads;
};

/// Loss and parameter gradients of batch_loss, each sample on its own tape.
/// The reduction runs in batch order, so the result does not depend on
/// `threads`.
LossAndGrad compute_gradients(const ModelParams& params, const ModelConfig& config,
                              std::span<const TrainSample> samples, std::span<const std::size_t> batch,
                              num::Precision precision, std::size_t threads = 1);

/// Mean loss over `samples` without recording gradients.
double mean_loss(const ModelParams& params, const ModelConfig& config, std::span<const TrainSample> samples,
                 num::Precision precision, std::size_t threads = 1);

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ModelParams& params);
};

/// Bias-corrected Adam, after optional global-norm clipping. Under f32 the
/// moments and parameters are rounded to binary32 after each update.
/// Throws num::NumericError naming the first parameter with a non-finite
/// gradient; nothing is updated in that case.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr, const TrainConfig& config);

double global_norm(const ModelParams& grads);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  /// Epochs completed.
  std::uint32_t epoch = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t vocab_hash = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training loop

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LogRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string split;  // "train" (per batch) or "val" (per epoch)
  double loss = 0.0;
  double lr = 0.0;
};

std::string format_log_line(const LogRecord& r);
inline constexpr const char* kLogHeader = "epoch,step,split,loss,lr";

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  double best_val_loss = 0.0;
  std::vector<LogRecord> log;
  std::size_t steps = 0;
};

struct TrainOptions {
  /// Called for every log record as it is produced.
  std::function<void(const LogRecord&)> on_log;
  /// Called after every epoch with the latest state.
  std::function<void(const Checkpoint&)> on_epoch;
};

/// Runs epochs [start.epoch, config.epochs). Epoch e draws its batch order from
/// mix_seed(seed, e), so resuming from an epoch-boundary checkpoint reproduces
/// an uninterrupted run. Selection uses val loss, or the mean train loss of the
/// epoch when `val` is empty.
TrainResult train(const ModelConfig& model_config, const TrainConfig& config, std::span<const TrainSample> train_set,
                  std::span<const TrainSample> val_set, Checkpoint start, const TrainOptions& options = {});

/// Fresh checkpoint at epoch 0 with parameters initialised from the seed.
Checkpoint initial_checkpoint(const ModelConfig& model_config, const TrainConfig& config, std::uint64_t vocab_hash);

}  // namespace csmn::training
