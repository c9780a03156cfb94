#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "csmn/gradcheck.hpp"
#include "csmn/training.hpp"
#include "test_support.hpp"

namespace {

using namespace csmn;
using corpus::TokenId;
using corpus::Vocabulary;
using training::TrainSample;

struct Data {
  fixtures::EncodedCorpus corpus;
  std::vector<TrainSample> samples;
  model::ModelConfig model;
};

const Data& data() {
  static const Data d = [] {
    corpus::SynthConfig sc;
    sc.seed = 3;
    Data d{fixtures::encode_synth(sc, corpus::Task::caption, 30), {}, {}};
    const corpus::ProfileBuilder profiles(d.corpus.posts);
    d.samples = training::make_samples(d.corpus.posts, d.corpus.synth.features, profiles, 4, 5);
    d.model = fixtures::desk_model(d.corpus.vocab.size());
    return d;
  }();
  return d;
}

training::TrainConfig small_train(num::Precision precision = num::Precision::f32) {
  training::TrainConfig t;
  t.lr0 = 0.003;
  t.batch_size = 4;
  t.epochs = 3;
  t.seed = 5;
  t.precision = precision;
  return t;
}

model::ModelParams params_for(const model::ModelConfig& mc, std::uint64_t seed = 1) {
  num::Rng rng(seed);
  return model::init_params(mc, rng);
}

TEST(LearningRate, Schedule) {
  training::TrainConfig c;
  for (std::size_t e = 0; e < 5; ++e) EXPECT_DOUBLE_EQ(training::lr_at(c, e), 0.001);
  EXPECT_NEAR(training::lr_at(c, 5), 8.3333e-4, 1e-8);
  EXPECT_NEAR(training::lr_at(c, 9), 0.001 / 1.2, 1e-15);
  EXPECT_NEAR(training::lr_at(c, 10), 6.9444e-4, 1e-8);
  c.lr_decay = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

model::ModelParams single(const std::string& name, num::Tensor t) {
  model::ModelParams p;
  p.add(name, std::move(t));
  return p;
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = single("w", num::Tensor::vector({0.5, -2.0}));
  const auto g = single("w", num::Tensor::vector({1.0, 1.0}));
  auto state = training::AdamState::zeros_like(p);
  training::TrainConfig c;
  c.precision = num::Precision::f64;
  training::adam_step(p, g, state, 0.001, c);
  EXPECT_NEAR(p.at("w")[0] - 0.5, -0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.at("w")[1] + 2.0, -0.001, 1e-10);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParamsAndDecaysMoments) {
  auto p = single("w", num::Tensor::vector({0.25}));
  auto state = training::AdamState::zeros_like(p);
  state.m.at("w").mutable_data()[0] = 0.0;
  state.v.at("w").mutable_data()[0] = 0.0;
  training::TrainConfig c;
  c.precision = num::Precision::f64;
  training::adam_step(p, single("w", num::Tensor::vector({0.0})), state, 0.001, c);
  EXPECT_EQ(p.at("w")[0], 0.25);

  state.m.at("w").mutable_data()[0] = 0.4;
  state.v.at("w").mutable_data()[0] = 0.2;
  auto q = p;
  training::adam_step(q, single("w", num::Tensor::vector({0.0})), state, 0.0, c);
  EXPECT_DOUBLE_EQ(state.m.at("w")[0], 0.36);
  EXPECT_DOUBLE_EQ(state.v.at("w")[0], 0.2 * 0.999);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  model::ModelParams p;
  p.add("a", num::Tensor::vector({1.0}));
  p.add("b", num::Tensor::vector({1.0}));
  model::ModelParams g;
  g.add("a", num::Tensor::vector({0.5}));
  g.add("b", num::Tensor::vector({std::nan("")}));
  auto state = training::AdamState::zeros_like(p);
  try {
    training::adam_step(p, g, state, 0.1, training::TrainConfig{});
    FAIL() << "expected an error";
  } catch (const num::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("parameter b"), std::string::npos);
  }
  EXPECT_EQ(p.at("a")[0], 1.0);
  EXPECT_EQ(state.step, 0u);
}

TEST(Adam, ClippingBoundsGlobalNorm) {
  auto p = single("w", num::Tensor::vector({0.0, 0.0}));
  const auto g = single("w", num::Tensor::vector({3.0, 4.0}));
  EXPECT_DOUBLE_EQ(training::global_norm(g), 5.0);
  auto state = training::AdamState::zeros_like(p);
  training::TrainConfig c;
  c.precision = num::Precision::f64;
  c.grad_clip = 1.0;
  training::adam_step(p, g, state, 0.001, c);
  EXPECT_NEAR(state.m.at("w")[0], 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(state.m.at("w")[1], 0.1 * 0.8, 1e-15);
}

TEST(Batches, PureBucketsWhenSizesDivide) {
  std::vector<std::size_t> lengths(16, 3);
  std::fill(lengths.begin() + 8, lengths.end(), 5);
  num::Rng rng(1);
  const auto batches = training::make_batches(lengths, 8, rng);
  ASSERT_EQ(batches.size(), 2u);
  for (const auto& b : batches) {
    ASSERT_EQ(b.size(), 8u);
    for (auto i : b) EXPECT_EQ(lengths[i], lengths[b.front()]);
  }
}

TEST(Batches, CoverEverySampleOnceAndAreSeeded) {
  num::Rng len_rng(2);
  std::vector<std::size_t> lengths(53);
  for (auto& l : lengths) l = 2 + len_rng.below(5);
  num::Rng a(7), b(7), c(8);
  const auto ba = training::make_batches(lengths, 6, a);
  EXPECT_EQ(ba, training::make_batches(lengths, 6, b));
  EXPECT_NE(ba, training::make_batches(lengths, 6, c));
  std::multiset<std::size_t> seen;
  std::size_t mixed = 0;
  for (const auto& batch : ba) {
    EXPECT_LE(batch.size(), 6u);
    seen.insert(batch.begin(), batch.end());
    std::set<std::size_t> lens;
    for (auto i : batch) lens.insert(lengths[i]);
    mixed += lens.size() > 1;
  }
  EXPECT_EQ(seen.size(), lengths.size());
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), lengths.size());
  EXPECT_GE(mixed, 1u);
}

TEST(Samples, LeaveOneOutProfilesAndEosTargets) {
  const auto& d = data();
  const corpus::ProfileBuilder profiles(d.corpus.posts);
  ASSERT_EQ(d.samples.size(), d.corpus.posts.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    EXPECT_EQ(s.target.back(), Vocabulary::kEos);
    EXPECT_EQ(s.target.size(), d.corpus.posts[i].tokens.size() + 1);
    EXPECT_EQ(s.profile, profiles.profile(s.user_id, 4, s.post_id).token_ids());
  }
}

TEST(Loss, UniformModelGivesLogV) {
  const auto& d = data();
  auto params = params_for(d.model);
  for (auto& x : params.at("W_f").mutable_data()) x = 0.0;
  num::Tape tape(num::Precision::f64);
  const model::Network net(tape, d.model, params);
  const std::vector<std::size_t> batch = {0, 1, 2, 3};
  EXPECT_NEAR(training::batch_loss(net, d.samples, batch).value()[0], std::log(double(d.model.vocab_size)), 1e-12);
  EXPECT_THROW(training::batch_loss(net, d.samples, std::vector<std::size_t>{}), std::invalid_argument);
}

TEST(Loss, EqualsHandChainedSteps) {
  const auto& d = data();
  const auto params = params_for(d.model, 2);
  const TrainSample& s = d.samples[7];
  num::Tape tape(num::Precision::f64, false);
  const model::Network net(tape, d.model, params);
  auto state = net.initial_memory(s.feature, s.profile);
  TokenId prev = Vocabulary::kBos;
  double total = 0.0;
  for (TokenId y : s.target) {
    const auto v = net.step(prev, state);
    double z = 0.0;
    const auto& logits = v.logits.value();
    double mx = logits[0];
    for (double x : logits.data()) mx = std::max(mx, x);
    for (double x : logits.data()) z += std::exp(x - mx);
    total += -(logits[y] - mx - std::log(z));
    if (y != Vocabulary::kEos) state = net.advance(state, y);
    prev = y;
  }
  EXPECT_NEAR(training::teacher_forced_loss(net, s).value()[0], total / double(s.target.size()), 1e-12);
}

TEST(Loss, PaddingNeverChangesIt) {
  const auto& d = data();
  const auto params = params_for(d.model, 3);
  for (std::size_t i = 0; i < 10; ++i) {
    TrainSample padded = d.samples[i];
    padded.target.insert(padded.target.end(), 3, Vocabulary::kPad);
    num::Tape tape(num::Precision::f32, false);
    const model::Network net(tape, d.model, params);
    EXPECT_EQ(training::teacher_forced_loss(net, d.samples[i]).value()[0],
              training::teacher_forced_loss(net, padded).value()[0]);
  }
  std::vector<TrainSample> batch_a(d.samples.begin(), d.samples.begin() + 4);
  auto batch_b = batch_a;
  for (auto& s : batch_b) s.target.resize(8, Vocabulary::kPad);
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const auto ga = training::compute_gradients(params, d.model, batch_a, idx, num::Precision::f32);
  const auto gb = training::compute_gradients(params, d.model, batch_b, idx, num::Precision::f32);
  EXPECT_EQ(ga.loss, gb.loss);
  EXPECT_TRUE(ga.grads.identical(gb.grads));
}

TEST(Loss, RejectsMalformedTargets) {
  const auto& d = data();
  const auto params = params_for(d.model);
  num::Tape tape(num::Precision::f32, false);
  const model::Network net(tape, d.model, params);
  TrainSample s = d.samples[0];
  s.target.pop_back();
  EXPECT_THROW(training::teacher_forced_loss(net, s), std::invalid_argument);
  s = d.samples[0];
  s.target = {7, 7, 7, 7, 7, 7, Vocabulary::kEos};  // 6 words need 6 slots plus the EOS step
  EXPECT_THROW(training::teacher_forced_loss(net, s), std::invalid_argument);
}

TEST(TeacherForcing, StepLossIgnoresEarlierLogits) {
  const auto& d = data();
  const auto params = params_for(d.model, 4);
  num::Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const TrainSample& s = d.samples[rng.below(d.samples.size())];
    const std::size_t steps = training::loss_steps(s.target);
    const std::size_t t = 1 + rng.below(steps - 1);
    num::Tape base_tape(num::Precision::f32);
    const auto base = training::teacher_forced_trace(model::Network(base_tape, d.model, params), s);

    num::Tape tape(num::Precision::f32);
    const model::Network net(tape, d.model, params);
    std::vector<double> noise(d.model.vocab_size);
    for (auto& x : noise) x = rng.uniform(-50, 50);
    const auto probe = tape.parameter(num::Tensor({d.model.vocab_size}, noise));
    const auto trace = training::teacher_forced_trace(net, s, [&](std::size_t step, num::Var logits) {
      return step == t - 1 ? num::add(logits, probe) : logits;
    });
    EXPECT_NE(trace.step_losses[t - 1].value()[0], base.step_losses[t - 1].value()[0]);
    EXPECT_EQ(trace.step_losses[t].value()[0], base.step_losses[t].value()[0]);
    tape.backward(trace.step_losses[t]);
    const num::Tensor g = tape.grad(probe);
    for (double x : g.data()) EXPECT_EQ(x, 0.0);
  }
}

TEST(Gradients, IndependentOfThreadCount) {
  const auto& d = data();
  const auto params = params_for(d.model, 5);
  const std::vector<std::size_t> batch = {3, 9, 14, 20, 21};
  const auto one = training::compute_gradients(params, d.model, d.samples, batch, num::Precision::f32, 1);
  const auto many = training::compute_gradients(params, d.model, d.samples, batch, num::Precision::f32, 4);
  EXPECT_EQ(one.loss, many.loss);
  EXPECT_TRUE(one.grads.identical(many.grads));
}

TEST(Gradients, MatchFiniteDifferencesOnSampledElements) {
  const auto& d = data();
  num::Rng rng(6);
  auto params = model::init_params(d.model, rng);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.value(i).rank() == 1) {
      for (auto& x : params.value(i).mutable_data()) x = rng.uniform(-0.1, 0.1);
    }
  }
  const std::vector<std::size_t> batch = {1, 30};
  num::GradCheckOptions opt;
  opt.max_elements = 6;
  const auto report = num::finite_diff_check(
      [&](num::Tape& t, const std::vector<num::Var>& bound) {
        return training::batch_loss(model::Network(t, d.model, params, bound), d.samples, batch);
      },
      params, opt);
  EXPECT_EQ(report.entries.size(), params.size());
  EXPECT_LE(report.max_rel_error(), 1e-5);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto& d = data();
  auto ckpt = training::initial_checkpoint(d.model, small_train(), d.corpus.vocab.hash());
  const auto lg = training::compute_gradients(ckpt.params, d.model, d.samples, std::vector<std::size_t>{0, 1},
                                              num::Precision::f32);
  training::adam_step(ckpt.params, lg.grads, ckpt.adam, 0.01, small_train());
  ckpt.epoch = 3;
  std::stringstream ss;
  training::write_checkpoint(ss, ckpt);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 8), "CSMNCKPT");
  const auto back = training::read_checkpoint(ss);
  EXPECT_TRUE(back.params.identical(ckpt.params));
  EXPECT_TRUE(back.adam.m.identical(ckpt.adam.m));
  EXPECT_TRUE(back.adam.v.identical(ckpt.adam.v));
  EXPECT_EQ(back.adam.step, 1u);
  EXPECT_EQ(back.epoch, 3u);
  EXPECT_EQ(back.config_hash, d.model.hash());
  EXPECT_EQ(back.vocab_hash, d.corpus.vocab.hash());

  std::stringstream again;
  training::write_checkpoint(again, back);
  EXPECT_EQ(again.str(), bytes);

  std::stringstream trailing(bytes + "x");
  EXPECT_THROW(training::read_checkpoint(trailing), training::CheckpointError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(training::read_checkpoint(truncated), training::CheckpointError);
  std::stringstream wrong("CSMNFEAT" + bytes.substr(8));
  EXPECT_THROW(training::read_checkpoint(wrong), training::CheckpointError);
}

std::span<const TrainSample> head(std::size_t n) { return std::span<const TrainSample>(data().samples).first(n); }
std::span<const TrainSample> tail(std::size_t from) { return std::span<const TrainSample>(data().samples).subspan(from); }

TEST(Train, SeededRunsAreIdenticalAndSelectBestVal) {
  const auto& d = data();
  const auto cfg = small_train();
  const auto start = training::initial_checkpoint(d.model, cfg, d.corpus.vocab.hash());
  const auto a = training::train(d.model, cfg, head(80), tail(80), start);
  const auto b = training::train(d.model, cfg, head(80), tail(80), start);
  EXPECT_TRUE(a.last.params.identical(b.last.params));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  EXPECT_EQ(a.steps, 3u * 20u);
  EXPECT_EQ(a.last.epoch, 3u);

  double last_val = 0.0;
  for (const auto& r : a.log) {
    if (r.split == "val") {
      EXPECT_GE(r.loss, a.best_val_loss);
      last_val = r.loss;
    }
  }
  EXPECT_LE(a.best_val_loss, last_val);
  EXPECT_EQ(training::mean_loss(a.best.params, d.model, tail(80), cfg.precision), a.best_val_loss);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto& d = data();
  auto cfg = small_train();
  cfg.epochs = 4;
  const auto start = training::initial_checkpoint(d.model, cfg, d.corpus.vocab.hash());
  const auto full = training::train(d.model, cfg, head(80), tail(80), start);

  auto first_cfg = cfg;
  first_cfg.epochs = 2;
  const auto first = training::train(d.model, first_cfg, head(80), tail(80), start);
  std::stringstream ss;
  training::write_checkpoint(ss, first.last);
  const auto resumed = training::train(d.model, cfg, head(80), tail(80), training::read_checkpoint(ss));

  EXPECT_TRUE(resumed.last.params.identical(full.last.params));
  EXPECT_TRUE(resumed.last.adam.m.identical(full.last.adam.m));
  EXPECT_EQ(resumed.last.adam.step, full.last.adam.step);
  std::vector<double> joined;
  for (const auto& r : first.log) joined.push_back(r.loss);
  for (const auto& r : resumed.log) joined.push_back(r.loss);
  ASSERT_EQ(joined.size(), full.log.size());
  for (std::size_t i = 0; i < joined.size(); ++i) EXPECT_EQ(joined[i], full.log[i].loss);
}

TEST(Train, StepLimitAndEmptyValidation) {
  const auto& d = data();
  auto cfg = small_train();
  cfg.max_steps = 25;
  const auto r = training::train(d.model, cfg, head(80), {}, training::initial_checkpoint(d.model, cfg, 0));
  EXPECT_EQ(r.steps, 25u);
  EXPECT_EQ(r.last.epoch, 1u);  // the second epoch was cut short
  for (const auto& rec : r.log) EXPECT_EQ(rec.split, "train");
}

TEST(Train, TrainingLossFallsOverFirstSteps) {
  const auto& d = data();
  auto cfg = small_train();
  auto params = params_for(d.model, 7);
  auto adam = training::AdamState::zeros_like(params);
  std::vector<std::size_t> lengths;
  for (const auto& s : d.samples) lengths.push_back(training::loss_steps(s.target));
  num::Rng rng(8);
  auto batches = training::make_batches(lengths, cfg.batch_size, rng);
  double prev = training::mean_loss(params, d.model, d.samples, cfg.precision);
  const double initial = prev;
  std::size_t rises = 0;
  for (std::size_t step = 0; step < 50; ++step) {
    const auto lg = training::compute_gradients(params, d.model, d.samples, batches[step % batches.size()], cfg.precision);
    training::adam_step(params, lg.grads, adam, cfg.lr0, cfg);
    const double now = training::mean_loss(params, d.model, d.samples, cfg.precision);
    rises += now > prev;
    prev = now;
  }
  EXPECT_LE(rises, 5u);
  EXPECT_LT(prev, 0.75 * initial);
}

TEST(Train, LogFormat) {
  EXPECT_EQ(training::format_log_line({2, 17, "val", 0.5, 0.001}), "2,17,val,0.5,0.001");
  EXPECT_STREQ(training::kLogHeader, "epoch,step,split,loss,lr");
}

}  // namespace
