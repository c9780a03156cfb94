#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "csmn/corpus.hpp"
#include "csmn/features.hpp"
#include "csmn/ops.hpp"

namespace csmn::memory {

using corpus::ImageMode;
using corpus::TokenId;
using num::Mask;
using num::Tape;
using num::Tensor;
using num::Var;

/// Largest memory-CNN window; the output segment must be at least this long.
inline constexpr std::size_t kMaxWindow = 5;

struct MemoryConfig {
  ImageMode image_mode = ImageMode::pool5;
  std::size_t context_slots = 60;  // D
  std::size_t output_slots = 16;   // T_max
  std::size_t feature_dim = 2048;
  std::size_t mem_dim = 1024;
  std::size_t embed_dim = 512;

  std::size_t image_slots() const { return image_mode == ImageMode::pool5 ? 1 : corpus::kGridCells; }
  std::size_t total_slots() const { return image_slots() + context_slots + output_slots; }
  void validate() const;
};

/// Parameters the memory is built from. W_h and b_h are shared by the user
/// context and word output segments and by both representations; the
/// embeddings are separate for the input (a) and output (c) memory.
struct MemoryWeights {
  Var image_a, image_a_bias;
  Var image_c, image_c_bias;
  Var embed_a, embed_c;
  Var hidden, hidden_bias;
};

/// Input (a) and output (c) representations of a run of memory slots.
struct SlotRows {
  Var a;
  Var c;
};

/// ReLU(W_im x + b_im) for each grid cell (res5c, 49 rows) or for the single
/// pool5 vector (1 row).
SlotRows build_image_memory(Tape& tape, const Tensor& feature, const MemoryWeights& w, const MemoryConfig& config);

/// ReLU(W_h (W_e u_j) + b_h) for the active words in profile order, followed
/// by zero rows up to D slots.
SlotRows build_user_memory(Tape& tape, std::span<const TokenId> active_words, const MemoryWeights& w,
                           const MemoryConfig& config);

/// One word-output slot for token `y`; the same map as a user-context slot.
SlotRows embed_word(Tape& tape, TokenId y, const MemoryWeights& w);

/// Word output segment: T_max slots, the first `count()` of them filled.
class OutputSegment {
 public:
  std::size_t count() const { return rows_a_.size(); }

 private:
  friend class MemoryState;
  friend OutputSegment init_output_memory(const MemoryConfig& config);
  std::vector<Var> rows_a_;
  std::vector<Var> rows_c_;
};

OutputSegment init_output_memory(const MemoryConfig& config);

/// Concatenated image + user context + word output memory with its mask.
/// Unfilled slots are zero rows with mask false. A MemoryState is a value:
/// appending returns a new state and leaves this one untouched.
class MemoryState {
 public:
  MemoryState(const MemoryConfig& config, SlotRows image, SlotRows user, std::size_t user_count);

  const MemoryConfig& config() const { return config_; }
  std::size_t t() const { return output_.count(); }
  std::size_t user_count() const { return user_count_; }
  const Mask& mask() const { return mask_; }

  std::size_t image_offset() const { return 0; }
  std::size_t user_offset() const { return config_.image_slots(); }
  std::size_t output_offset() const { return config_.image_slots() + config_.context_slots; }

  const SlotRows& image() const { return image_; }
  const SlotRows& user() const { return user_; }

  /// Writes token `y` into slot t. Throws std::length_error when the output
  /// segment is full.
  MemoryState append(Tape& tape, TokenId y, const MemoryWeights& w) const;

  /// M_a and M_c as [m x mem_dim] matrices.
  Var input_memory(Tape& tape) const { return assemble(tape, image_.a, user_.a, output_.rows_a_); }
  Var output_memory(Tape& tape) const { return assemble(tape, image_.c, user_.c, output_.rows_c_); }

 private:
  Var assemble(Tape& tape, Var image, Var user, const std::vector<Var>& out) const;

  MemoryConfig config_;
  SlotRows image_;
  SlotRows user_;
  std::size_t user_count_;
  OutputSegment output_;
  Mask mask_;
};

}  // namespace csmn::memory
