#include "csmn/memory.hpp"

#include <stdexcept>
#include <string>

namespace csmn::memory {

void MemoryConfig::validate() const {
  if (output_slots < kMaxWindow) {
    throw std::invalid_argument("output memory needs at least " + std::to_string(kMaxWindow) + " slots, got " +
                                std::to_string(output_slots));
  }
  if (context_slots == 0) throw std::invalid_argument("user context memory needs at least one slot");
  if (feature_dim == 0 || mem_dim == 0 || embed_dim == 0) throw std::invalid_argument("memory dimensions must be positive");
}

SlotRows build_image_memory(Tape& tape, const Tensor& feature, const MemoryWeights& w, const MemoryConfig& config) {
  const num::Shape expected = config.image_mode == ImageMode::pool5 ? num::Shape{config.feature_dim}
                                                                     : num::Shape{corpus::kGridCells, config.feature_dim};
  if (feature.shape() != expected) {
    throw num::ShapeError("image feature " + num::shape_string(feature.shape()) + " does not match " +
                          std::string(corpus::to_string(config.image_mode)) + " " + num::shape_string(expected));
  }
  const Var x = tape.constant(feature.rank() == 1 ? feature.reshaped({1, config.feature_dim}) : feature);
  return {num::relu(num::linear(x, w.image_a, w.image_a_bias)), num::relu(num::linear(x, w.image_c, w.image_c_bias))};
}

namespace {

SlotRows embed_tokens(std::span<const TokenId> ids, const MemoryWeights& w) {
  const std::vector<std::size_t> idx(ids.begin(), ids.end());
  return {num::relu(num::linear(num::embed(w.embed_a, idx), w.hidden, w.hidden_bias)),
          num::relu(num::linear(num::embed(w.embed_c, idx), w.hidden, w.hidden_bias))};
}

}  // namespace

SlotRows build_user_memory(Tape& tape, std::span<const TokenId> active_words, const MemoryWeights& w,
                           const MemoryConfig& config) {
  if (active_words.size() > config.context_slots) {
    throw std::invalid_argument("profile has " + std::to_string(active_words.size()) + " words for " +
                                std::to_string(config.context_slots) + " context slots");
  }
  if (active_words.empty()) {
    const Var zeros = tape.constant(Tensor::zeros({config.context_slots, config.mem_dim}));
    return {zeros, zeros};
  }
  const SlotRows rows = embed_tokens(active_words, w);
  return {num::pad_rows(rows.a, config.context_slots), num::pad_rows(rows.c, config.context_slots)};
}

SlotRows embed_word(Tape&, TokenId y, const MemoryWeights& w) {
  const TokenId ids[] = {y};
  return embed_tokens(ids, w);
}

OutputSegment init_output_memory(const MemoryConfig& config) {
  config.validate();
  return OutputSegment{};
}

MemoryState::MemoryState(const MemoryConfig& config, SlotRows image, SlotRows user, std::size_t user_count)
    : config_(config), image_(image), user_(user), user_count_(user_count), output_(init_output_memory(config)) {
  if (user_count > config.context_slots) throw std::invalid_argument("user_count exceeds context slots");
  mask_.assign(config.total_slots(), false);
  for (std::size_t i = 0; i < config.image_slots(); ++i) mask_[i] = true;
  for (std::size_t i = 0; i < user_count; ++i) mask_[user_offset() + i] = true;
}

MemoryState MemoryState::append(Tape& tape, TokenId y, const MemoryWeights& w) const {
  if (t() >= config_.output_slots) {
    throw std::length_error("word output memory is full (" + std::to_string(config_.output_slots) + " slots)");
  }
  const SlotRows row = embed_word(tape, y, w);
  MemoryState next = *this;
  next.mask_[output_offset() + t()] = true;
  next.output_.rows_a_.push_back(row.a);
  next.output_.rows_c_.push_back(row.c);
  return next;
}

Var MemoryState::assemble(Tape& tape, Var image, Var user, const std::vector<Var>& out) const {
  std::vector<Var> parts{image, user};
  parts.insert(parts.end(), out.begin(), out.end());
  const std::size_t empty = config_.output_slots - out.size();
  if (empty > 0) parts.push_back(tape.constant(Tensor::zeros({empty, config_.mem_dim})));
  return num::concat_rows(parts);
}

}  // namespace csmn::memory
