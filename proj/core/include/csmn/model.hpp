#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csmn/memory.hpp"
#include "csmn/parameters.hpp"
#include "csmn/rng.hpp"

namespace csmn::model {

using corpus::TokenId;
using memory::MemoryState;
using num::Tape;
using num::Tensor;
using num::Var;

/// Component ablations. Each flag only removes computation; the shape of
/// the output distribution is unchanged.
struct AblationFlags {
  bool no_cnn = false;
  bool no_user_context = false;
  bool no_word_output = false;

  bool operator==(const AblationFlags&) const = default;
  std::string label() const;
};

inline constexpr std::array<std::size_t, 3> kWindows = {3, 4, 5};

struct ModelConfig {
  memory::MemoryConfig memory;
  std::size_t vocab_size = 40000;
  std::size_t conv_depth = 300;
  AblationFlags flags;

  /// Width of one segment's memory-CNN output: |windows| x conv_depth.
  std::size_t segment_dim() const { return kWindows.size() * conv_depth; }
  /// |c_t|: 9 x depth with res5c, 6 x depth with pool5.
  std::size_t fused_dim() const;
  void validate() const;
  /// FNV-1a over every field that affects parameter shapes or the forward pass.
  std::uint64_t hash() const;
};

using ModelParams = num::ParameterSet;

/// All weights drawn from U(-sqrt(3 / fan_in), +sqrt(3 / fan_in)); biases 0.
/// fan_in is the column count of a matrix (the vocabulary size for the
/// one-hot-indexed embeddings) and h x d for an [h x d x f] filter bank.
ModelParams init_params(const ModelConfig& config, num::Rng& rng);
double init_bound(const num::Shape& shape);

struct Attention {
  Var p;   // [m]
  Var mo;  // [m x mem_dim]
};

struct StepVars {
  Var query;
  Attention attention;
  Var fused;   // c_t
  Var hidden;  // h_t
  Var logits;  // W_f h_t
  Var probs;   // s_t
};

/// Plain-value snapshot of one decode step.
struct StepOutput {
  Tensor attention;
  Tensor fused;
  Tensor hidden;
  Tensor probs;
  TokenId token = 0;
};

/// Model parameters bound to one tape. Construction is cheap (parameter
/// storage is shared, not copied).
class Network {
 public:
  Network(Tape& tape, const ModelConfig& config, const ModelParams& params);
  /// Uses leaves already bound in `params` order (for gradient checks).
  Network(Tape& tape, const ModelConfig& config, const ModelParams& params, std::vector<Var> bound);

  Tape& tape() const { return *tape_; }
  const ModelConfig& config() const { return config_; }
  const std::vector<Var>& bound() const { return bound_; }
  Var param(const std::string& name) const;
  memory::MemoryWeights memory_weights() const;

  /// Image and user segments for a query; the user segment stays empty under
  /// the no_user_context ablation.
  MemoryState initial_memory(const Tensor& feature, std::span<const TokenId> active_words) const;

  Var make_query(TokenId y_prev) const;
  Attention attend(Var query, const MemoryState& state) const;
  Var memory_cnn(const Attention& attention, const MemoryState& state) const;
  /// (h_t, logits); s_t = softmax(logits).
  std::pair<Var, Var> output_distribution(Var fused) const;

  StepVars step(TokenId y_prev, const MemoryState& state) const;
  /// State after emitting `y`: y is written to the output memory unless the
  /// no_word_output ablation is active.
  MemoryState advance(const MemoryState& state, TokenId y) const;

 private:
  Var segment_features(Var segment, const num::Mask& mask, const std::string& tag) const;

  Tape* tape_;
  ModelConfig config_;
  const ModelParams* params_;
  std::vector<Var> bound_;
};

/// One greedy step: y_t = argmax s_t (lowest id on ties); the state grows by
/// y_t unless y_t is EOS.
std::pair<StepOutput, MemoryState> decode_step(const Network& net, TokenId y_prev, const MemoryState& state);

/// Greedy generation from BOS until EOS or `max_len` tokens; BOS/EOS are not
/// returned. `max_len` must not exceed T_max.
std::vector<TokenId> greedy_decode(const ModelParams& params, const ModelConfig& config, const Tensor& feature,
                                   std::span<const TokenId> active_words, std::size_t max_len,
                                   num::Precision precision = num::Precision::f32);

/// First occurrence kept, order preserved.
std::vector<TokenId> dedup_hashtags(std::span<const TokenId> tags);

}  // namespace csmn::model
