#include "csmn/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "csmn/hash.hpp"

namespace csmn::model {

using corpus::ImageMode;
using corpus::Vocabulary;

std::string AblationFlags::label() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  add(no_cnn, "no_cnn");
  add(no_user_context, "no_uc");
  add(no_word_output, "no_wo");
  return out.empty() ? "full" : out;
}

std::size_t ModelConfig::fused_dim() const {
  return memory.image_mode == ImageMode::res5c ? 3 * segment_dim() : 2 * segment_dim();
}

void ModelConfig::validate() const {
  memory.validate();
  if (vocab_size <= Vocabulary::kSpecialCount) throw std::invalid_argument("vocabulary too small for the model");
  if (conv_depth == 0) throw std::invalid_argument("conv_depth must be positive");
}

std::uint64_t ModelConfig::hash() const {
  std::ostringstream s;
  s << "image_mode=" << corpus::to_string(memory.image_mode) << ";D=" << memory.context_slots
    << ";T=" << memory.output_slots << ";feature=" << memory.feature_dim << ";mem=" << memory.mem_dim
    << ";embed=" << memory.embed_dim << ";V=" << vocab_size << ";depth=" << conv_depth << ";flags=" << flags.label();
  return fnv1a(s.str());
}

double init_bound(const num::Shape& shape) {
  std::size_t fan_in = 1;
  if (shape.size() == 2) fan_in = shape[1];
  if (shape.size() == 3) fan_in = shape[0] * shape[1];
  return std::sqrt(3.0 / static_cast<double>(fan_in));
}

namespace {

const char* kSegments[] = {"im", "us", "ot"};

bool image_uses_cnn(const ModelConfig& c) { return c.memory.image_mode == ImageMode::res5c; }

}  // namespace

ModelParams init_params(const ModelConfig& config, num::Rng& rng) {
  config.validate();
  const auto& m = config.memory;
  ModelParams params;
  auto weight = [&](const std::string& name, num::Shape shape) {
    Tensor t(shape);
    const double bound = init_bound(shape);
    for (auto& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
    params.add(name, std::move(t));
  };
  auto bias = [&](const std::string& name, std::size_t n) { params.add(name, Tensor::zeros({n})); };

  weight("W_im_a", {m.mem_dim, m.feature_dim});
  bias("b_im_a", m.mem_dim);
  weight("W_im_c", {m.mem_dim, m.feature_dim});
  bias("b_im_c", m.mem_dim);
  weight("W_e_a", {m.embed_dim, config.vocab_size});
  weight("W_e_c", {m.embed_dim, config.vocab_size});
  weight("W_e_b", {m.embed_dim, config.vocab_size});
  weight("W_h", {m.mem_dim, m.embed_dim});
  bias("b_h", m.mem_dim);
  weight("W_q", {m.mem_dim, m.embed_dim});
  bias("b_q", m.mem_dim);
  for (const char* seg : kSegments) {
    const std::string s = seg;
    if (s == "im" && !image_uses_cnn(config)) continue;
    if (config.flags.no_cnn) {
      weight("nocnn_" + s + "_w", {config.segment_dim(), m.mem_dim});
      bias("nocnn_" + s + "_b", config.segment_dim());
    } else {
      for (auto h : kWindows) {
        weight("conv_" + s + "_w" + std::to_string(h), {h, m.mem_dim, config.conv_depth});
        bias("conv_" + s + "_b" + std::to_string(h), config.conv_depth);
      }
    }
  }
  if (!image_uses_cnn(config)) {
    weight("W_im_p5", {config.fused_dim(), m.mem_dim});
    bias("b_im_p5", config.fused_dim());
  }
  weight("W_o", {config.fused_dim(), config.fused_dim()});
  bias("b_o", config.fused_dim());
  weight("W_f", {config.vocab_size, config.fused_dim()});
  return params;
}

// ---------------------------------------------------------------------------

Network::Network(Tape& tape, const ModelConfig& config, const ModelParams& params)
    : Network(tape, config, params, params.bind(tape)) {}

Network::Network(Tape& tape, const ModelConfig& config, const ModelParams& params, std::vector<Var> bound)
    : tape_(&tape), config_(config), params_(&params), bound_(std::move(bound)) {
  config_.validate();
  if (bound_.size() != params.size()) throw std::invalid_argument("bound parameter count mismatch");
  const auto& m = config_.memory;
  auto expect = [&](const std::string& name, const num::Shape& shape) {
    if (params.at(name).shape() != shape) {
      throw num::ShapeError("parameter " + name + " has shape " + num::shape_string(params.at(name).shape()) +
                            ", config expects " + num::shape_string(shape));
    }
  };
  expect("W_im_a", {m.mem_dim, m.feature_dim});
  expect("W_e_a", {m.embed_dim, config_.vocab_size});
  expect("W_h", {m.mem_dim, m.embed_dim});
  expect("W_o", {config_.fused_dim(), config_.fused_dim()});
  expect("W_f", {config_.vocab_size, config_.fused_dim()});
}

Var Network::param(const std::string& name) const { return bound_[params_->index_of(name)]; }

memory::MemoryWeights Network::memory_weights() const {
  return {param("W_im_a"), param("b_im_a"), param("W_im_c"), param("b_im_c"),
          param("W_e_a"),  param("W_e_c"),  param("W_h"),    param("b_h")};
}

MemoryState Network::initial_memory(const Tensor& feature, std::span<const TokenId> active_words) const {
  const auto w = memory_weights();
  const auto image = memory::build_image_memory(*tape_, feature, w, config_.memory);
  std::span<const TokenId> words = config_.flags.no_user_context ? std::span<const TokenId>{} : active_words;
  for (auto id : words) {
    if (id >= config_.vocab_size) throw std::out_of_range("active word id " + std::to_string(id) + " outside vocabulary");
  }
  const auto user = memory::build_user_memory(*tape_, words, w, config_.memory);
  return MemoryState(config_.memory, image, user, words.size());
}

Var Network::make_query(TokenId y_prev) const {
  if (y_prev >= config_.vocab_size) throw std::out_of_range("previous token " + std::to_string(y_prev) + " outside vocabulary");
  const Var x = num::embed(param("W_e_b"), {y_prev});
  const Var q = num::relu(num::linear(x, param("W_q"), param("b_q")));
  return num::concat({q});
}

Attention Network::attend(Var query, const MemoryState& state) const {
  if (query.value().size() != config_.memory.mem_dim) throw num::ShapeError("query width does not match mem_dim");
  const Var p = num::masked_softmax(num::matvec(state.input_memory(*tape_), query), state.mask());
  return {p, num::scale_rows(p, state.output_memory(*tape_))};
}

Var Network::segment_features(Var segment, const num::Mask& mask, const std::string& tag) const {
  if (config_.flags.no_cnn) {
    return num::linear(num::masked_mean_rows(segment, mask), param("nocnn_" + tag + "_w"), param("nocnn_" + tag + "_b"));
  }
  std::vector<Var> pooled;
  const std::size_t rows = segment.value().rows();
  for (auto h : kWindows) {
    // A segment shorter than the window is zero-extended to one full window.
    const Var input = rows < h ? num::pad_rows(segment, h) : segment;
    const Var conv = num::conv1d_valid(input, param("conv_" + tag + "_w" + std::to_string(h)),
                                       param("conv_" + tag + "_b" + std::to_string(h)));
    pooled.push_back(num::maxpool_time(num::relu(conv)));
  }
  return num::concat(pooled);
}

Var Network::memory_cnn(const Attention& attention, const MemoryState& state) const {
  const auto& m = config_.memory;
  const num::Mask& mask = state.mask();
  auto sub_mask = [&](std::size_t offset, std::size_t n) {
    return num::Mask(mask.begin() + static_cast<std::ptrdiff_t>(offset), mask.begin() + static_cast<std::ptrdiff_t>(offset + n));
  };
  const Var image = num::slice_rows(attention.mo, state.image_offset(), m.image_slots());
  const Var user = num::slice_rows(attention.mo, state.user_offset(), m.context_slots);
  const Var output = num::slice_rows(attention.mo, state.output_offset(), m.output_slots);

  const Var c_us = segment_features(user, sub_mask(state.user_offset(), m.context_slots), "us");
  const Var c_ot = segment_features(output, sub_mask(state.output_offset(), m.output_slots), "ot");
  if (image_uses_cnn(config_)) {
    const Var c_im = segment_features(image, sub_mask(0, m.image_slots()), "im");
    return num::concat({c_im, c_us, c_ot});
  }
  const Var image_row = num::concat({image});
  const Var c_im = num::relu(num::linear(image_row, param("W_im_p5"), param("b_im_p5")));
  return num::add(c_im, num::concat({c_us, c_ot}));
}

std::pair<Var, Var> Network::output_distribution(Var fused) const {
  if (fused.value().size() != config_.fused_dim()) throw num::ShapeError("fused vector width does not match W_o");
  const Var h = num::relu(num::linear(fused, param("W_o"), param("b_o")));
  return {h, num::linear(h, param("W_f"))};
}

StepVars Network::step(TokenId y_prev, const MemoryState& state) const {
  StepVars out;
  out.query = make_query(y_prev);
  out.attention = attend(out.query, state);
  out.fused = memory_cnn(out.attention, state);
  std::tie(out.hidden, out.logits) = output_distribution(out.fused);
  out.probs = num::softmax(out.logits);
  return out;
}

MemoryState Network::advance(const MemoryState& state, TokenId y) const {
  if (config_.flags.no_word_output) return state;
  return state.append(*tape_, y, memory_weights());
}

// ---------------------------------------------------------------------------

std::pair<StepOutput, MemoryState> decode_step(const Network& net, TokenId y_prev, const MemoryState& state) {
  if (state.t() >= state.config().output_slots) throw std::length_error("decode_step: output memory is full");
  const StepVars v = net.step(y_prev, state);
  StepOutput out{v.attention.p.value(), v.fused.value(), v.hidden.value(), v.probs.value(), 0};
  out.token = num::argmax(v.logits.value());
  if (out.token == Vocabulary::kEos) return {out, state};
  return {out, net.advance(state, out.token)};
}

std::vector<TokenId> greedy_decode(const ModelParams& params, const ModelConfig& config, const Tensor& feature,
                                   std::span<const TokenId> active_words, std::size_t max_len, num::Precision precision) {
  if (max_len > config.memory.output_slots) {
    throw std::invalid_argument("max_len " + std::to_string(max_len) + " exceeds output memory of " +
                                std::to_string(config.memory.output_slots));
  }
  Tape tape(precision, false);
  const Network net(tape, config, params);
  MemoryState state = net.initial_memory(feature, active_words);
  std::vector<TokenId> out;
  TokenId prev = Vocabulary::kBos;
  while (out.size() < max_len) {
    // Under no_word_output the state never grows, so the step guard is on
    // the emitted length instead.
    auto [step, next] = decode_step(net, prev, state);
    if (step.token == Vocabulary::kEos) break;
    out.push_back(step.token);
    prev = step.token;
    state = std::move(next);
  }
  return out;
}

std::vector<TokenId> dedup_hashtags(std::span<const TokenId> tags) {
  std::vector<TokenId> out;
  std::set<TokenId> seen;
  for (auto t : tags) {
    if (seen.insert(t).second) out.push_back(t);
  }
  return out;
}

}  // namespace csmn::model
