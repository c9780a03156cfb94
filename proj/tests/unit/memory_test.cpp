#include <algorithm>

#include <gtest/gtest.h>

#include "csmn/model.hpp"
#include "test_support.hpp"

namespace {

using namespace csmn;
using memory::MemoryState;
using num::Tensor;

Tensor row(const Tensor& m, std::size_t r) {
  const std::size_t c = m.cols();
  return Tensor({c}, std::vector<double>(m.data().begin() + r * c, m.data().begin() + (r + 1) * c));
}

Tensor random_feature(const model::ModelConfig& mc, num::Rng& rng) {
  const std::size_t d = mc.memory.feature_dim;
  std::vector<double> v(mc.memory.image_slots() * d);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return mc.memory.image_mode == corpus::ImageMode::pool5 ? Tensor({d}, v) : Tensor({corpus::kGridCells, d}, v);
}

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

std::size_t count_true(const num::Mask& m, std::size_t from, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = from; i < from + n; ++i) c += m[i];
  return c;
}

struct Fixture {
  explicit Fixture(corpus::ImageMode mode, std::size_t d = 4)
      : config(fixtures::desk_model(30, mode)), rng(5), tape(num::Precision::f64) {
    config.memory.context_slots = d;
    num::Rng init(1);
    params = model::init_params(config, init);
    // Nonzero biases so ReLU outputs are generic.
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.value(i).rank() == 1) {
        for (auto& x : params.value(i).mutable_data()) x = rng.uniform(-0.1, 0.1);
      }
    }
  }
  model::ModelConfig config;
  num::Rng rng;
  num::Tape tape;
  model::ModelParams params;
};

TEST(ImageMemory, SlotCounts) {
  for (auto mode : {corpus::ImageMode::res5c, corpus::ImageMode::pool5}) {
    Fixture f(mode);
    const model::Network net(f.tape, f.config, f.params);
    const auto rows = memory::build_image_memory(f.tape, random_feature(f.config, f.rng), net.memory_weights(), f.config.memory);
    const std::size_t n = mode == corpus::ImageMode::res5c ? 49 : 1;
    EXPECT_EQ(rows.a.value().shape(), (num::Shape{n, 32}));
    EXPECT_EQ(rows.c.value().shape(), (num::Shape{n, 32}));
    const auto state = net.initial_memory(random_feature(f.config, f.rng), {});
    EXPECT_EQ(count_true(state.mask(), 0, n), n);
    EXPECT_EQ(state.mask().size(), n + 4 + 6);
  }
}

TEST(ImageMemory, ZeroFeatureZeroBiasGivesZeroRows) {
  auto mc = fixtures::desk_model(30, corpus::ImageMode::res5c);
  num::Rng init(1);
  const auto params = model::init_params(mc, init);
  num::Tape tape(num::Precision::f64);
  const model::Network net(tape, mc, params);
  const auto rows = memory::build_image_memory(tape, Tensor::zeros({49, 32}), net.memory_weights(), mc.memory);
  for (double v : rows.a.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : rows.c.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(memory::build_image_memory(tape, Tensor::zeros({32}), net.memory_weights(), mc.memory), std::exception);
}

TEST(UserMemory, MaskCounts) {
  Fixture f(corpus::ImageMode::pool5, 60);
  const model::Network net(f.tape, f.config, f.params);
  const auto w = net.memory_weights();
  const auto empty = memory::build_user_memory(f.tape, {}, w, f.config.memory);
  EXPECT_EQ(empty.a.value().dim(0), 60u);
  for (double v : empty.a.value().data()) EXPECT_EQ(v, 0.0);

  const std::vector<corpus::TokenId> words = {7, 9, 12};
  const auto state = net.initial_memory(random_feature(f.config, f.rng), words);
  EXPECT_EQ(count_true(state.mask(), state.user_offset(), 60), 3u);
  EXPECT_EQ(state.user_count(), 3u);
  EXPECT_FALSE(state.mask()[state.user_offset() + 3]);

  const std::vector<corpus::TokenId> bad = {30};
  EXPECT_THROW(memory::build_user_memory(f.tape, bad, w, f.config.memory), std::exception);
  const std::vector<corpus::TokenId> too_many(61, 7);
  EXPECT_THROW(memory::build_user_memory(f.tape, too_many, w, f.config.memory), std::exception);
}

TEST(OutputMemory, StartsEmpty) {
  Fixture f(corpus::ImageMode::pool5);
  EXPECT_EQ(memory::init_output_memory(f.config.memory).count(), 0u);
  const model::Network net(f.tape, f.config, f.params);
  const auto state = net.initial_memory(random_feature(f.config, f.rng), std::vector<corpus::TokenId>{8});
  EXPECT_EQ(state.t(), 0u);
  EXPECT_EQ(count_true(state.mask(), state.output_offset(), 6), 0u);
  const Tensor ma = state.input_memory(f.tape).value();
  for (std::size_t r = state.output_offset(); r < ma.rows(); ++r) {
    EXPECT_TRUE(all_zero(row(ma, r)));
  }
  const auto att = net.attend(net.make_query(corpus::Vocabulary::kBos), state);
  for (std::size_t r = state.output_offset(); r < ma.rows(); ++r) EXPECT_EQ(att.p.value()[r], 0.0);
}

TEST(OutputMemory, AppendSharesWordMapWithUserMemory) {
  Fixture f(corpus::ImageMode::pool5);
  const model::Network net(f.tape, f.config, f.params);
  const std::vector<corpus::TokenId> words = {11, 13};
  const auto s0 = net.initial_memory(random_feature(f.config, f.rng), words);
  const auto s1 = s0.append(f.tape, 13, net.memory_weights());
  const auto s2 = s1.append(f.tape, 20, net.memory_weights());
  EXPECT_EQ(s0.t(), 0u);
  EXPECT_EQ(s2.t(), 2u);
  EXPECT_EQ(count_true(s2.mask(), s2.output_offset(), 6), 2u);

  for (bool input : {true, false}) {
    const Tensor m = input ? s2.input_memory(f.tape).value() : s2.output_memory(f.tape).value();
    EXPECT_TRUE(row(m, s2.output_offset()).same_values(row(m, s2.user_offset() + 1)));
  }
}

TEST(OutputMemory, OverflowIsAnError) {
  Fixture f(corpus::ImageMode::pool5);
  const model::Network net(f.tape, f.config, f.params);
  auto s = net.initial_memory(random_feature(f.config, f.rng), {});
  for (int i = 0; i < 6; ++i) s = s.append(f.tape, 5 + i, net.memory_weights());
  EXPECT_THROW(s.append(f.tape, 5, net.memory_weights()), std::length_error);
}

TEST(MemoryState, InvariantsUnderAppends) {
  for (auto mode : {corpus::ImageMode::pool5, corpus::ImageMode::res5c}) {
    Fixture f(mode);
    const model::Network net(f.tape, f.config, f.params);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<corpus::TokenId> words;
      const std::size_t n = f.rng.below(5);
      for (std::size_t i = 0; i < n; ++i) words.push_back(5 + f.rng.below(25));
      auto s = net.initial_memory(random_feature(f.config, f.rng), words);
      const Tensor a0 = s.input_memory(f.tape).value();
      const Tensor c0 = s.output_memory(f.tape).value();
      const std::size_t fixed_rows = s.output_offset();
      const std::size_t steps = f.rng.below(7);
      for (std::size_t t = 0; t < steps; ++t) {
        s = s.append(f.tape, 5 + f.rng.below(25), net.memory_weights());
        EXPECT_EQ(count_true(s.mask(), 0, s.mask().size()), f.config.memory.image_slots() + words.size() + s.t());
      }
      const Tensor a1 = s.input_memory(f.tape).value();
      const Tensor c1 = s.output_memory(f.tape).value();
      for (std::size_t r = 0; r < fixed_rows; ++r) {
        EXPECT_TRUE(row(a0, r).same_values(row(a1, r)));
        EXPECT_TRUE(row(c0, r).same_values(row(c1, r)));
      }
      for (std::size_t r = 0; r < a1.rows(); ++r) {
        if (!s.mask()[r]) {
          EXPECT_TRUE(all_zero(row(a1, r)));
          EXPECT_TRUE(all_zero(row(c1, r)));
        }
      }
    }
  }
}

TEST(MemoryState, Deterministic) {
  Fixture f(corpus::ImageMode::res5c);
  const Tensor feat = random_feature(f.config, f.rng);
  const std::vector<corpus::TokenId> words = {6, 8, 10};
  num::Tape t1(num::Precision::f32), t2(num::Precision::f32);
  const model::Network n1(t1, f.config, f.params), n2(t2, f.config, f.params);
  const auto s1 = n1.initial_memory(feat, words).append(t1, 9, n1.memory_weights());
  const auto s2 = n2.initial_memory(feat, words).append(t2, 9, n2.memory_weights());
  EXPECT_TRUE(s1.input_memory(t1).value().same_values(s2.input_memory(t2).value()));
  EXPECT_TRUE(s1.output_memory(t1).value().same_values(s2.output_memory(t2).value()));
}

TEST(MemoryConfig, Validation) {
  memory::MemoryConfig c;
  EXPECT_EQ(c.total_slots(), 1u + 60u + 16u);
  c.image_mode = corpus::ImageMode::res5c;
  EXPECT_EQ(c.total_slots(), 49u + 60u + 16u);
  c.output_slots = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
