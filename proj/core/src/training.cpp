#include "csmn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <thread>

namespace csmn::training {

using corpus::Vocabulary;

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw std::invalid_argument("lr0 must be positive");
  if (!(lr_decay > 1)) throw std::invalid_argument("lr_decay must exceed 1");
  if (decay_every == 0) throw std::invalid_argument("decay_every must be positive");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw std::invalid_argument("Adam betas must lie in (0, 1)");
  if (!(eps > 0)) throw std::invalid_argument("Adam epsilon must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (grad_clip < 0) throw std::invalid_argument("grad_clip must not be negative");
  if (threads == 0) throw std::invalid_argument("threads must be positive");
}

double lr_at(const TrainConfig& config, std::size_t epoch) {
  return config.lr0 / std::pow(config.lr_decay, static_cast<double>(epoch / config.decay_every));
}

std::vector<TrainSample> make_samples(std::span<const corpus::Post> posts, const corpus::FeatureStore& features,
                                      const corpus::ProfileBuilder& profiles, std::size_t depth,
                                      std::size_t max_target_len) {
  std::vector<TrainSample> out;
  out.reserve(posts.size());
  for (const auto& p : posts) {
    if (p.tokens.empty()) throw std::invalid_argument("post " + p.post_id + " has no tokens");
    if (p.tokens.size() > max_target_len) {
      throw std::invalid_argument("post " + p.post_id + " has " + std::to_string(p.tokens.size()) +
                                  " tokens, output memory allows " + std::to_string(max_target_len));
    }
    TrainSample s;
    s.post_id = p.post_id;
    s.user_id = p.user_id;
    s.feature_key = p.image_feature_key;
    s.feature = features.at(p.image_feature_key);
    if (profiles.post_count(p.user_id) > 1) s.profile = profiles.profile(p.user_id, depth, p.post_id).token_ids();
    s.target = p.tokens;
    s.target.push_back(Vocabulary::kEos);
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t loss_steps(std::span<const TokenId> target) {
  std::size_t n = target.size();
  while (n > 0 && target[n - 1] == Vocabulary::kPad) --n;
  return n;
}

std::vector<Batch> make_batches(std::span<const std::size_t> lengths, std::size_t batch_size, num::Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < lengths.size(); ++i) buckets[lengths[i]].push_back(i);

  std::vector<Batch> batches;
  std::vector<std::size_t> leftovers;
  for (auto& [len, members] : buckets) {
    rng.shuffle(members);
    std::size_t i = 0;
    for (; i + batch_size <= members.size(); i += batch_size) {
      batches.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(i),
                           members.begin() + static_cast<std::ptrdiff_t>(i + batch_size));
    }
    leftovers.insert(leftovers.end(), members.begin() + static_cast<std::ptrdiff_t>(i), members.end());
  }
  for (std::size_t i = 0; i < leftovers.size(); i += batch_size) {
    const std::size_t end = std::min(leftovers.size(), i + batch_size);
    batches.emplace_back(leftovers.begin() + static_cast<std::ptrdiff_t>(i),
                         leftovers.begin() + static_cast<std::ptrdiff_t>(end));
  }
  rng.shuffle(batches);
  return batches;
}

// ---------------------------------------------------------------------------

SampleTrace teacher_forced_trace(const Network& net, const TrainSample& sample, const LogitHook& hook) {
  const std::size_t steps = loss_steps(sample.target);
  if (steps == 0 || sample.target[steps - 1] != Vocabulary::kEos) {
    throw std::invalid_argument("target of " + sample.post_id + " does not end with EOS");
  }
  for (std::size_t i = 0; i + 1 < steps; ++i) {
    const TokenId y = sample.target[i];
    if (y == Vocabulary::kEos || y == Vocabulary::kPad || y == Vocabulary::kBos) {
      throw std::invalid_argument("target of " + sample.post_id + " has a reserved token inside the sequence");
    }
  }
  const auto& mem = net.config().memory;
  if (steps - 1 >= mem.output_slots) {
    throw std::invalid_argument("target of " + sample.post_id + " needs " + std::to_string(steps - 1) +
                                " output slots, memory has " + std::to_string(mem.output_slots));
  }

  SampleTrace trace;
  auto state = net.initial_memory(sample.feature, sample.profile);
  TokenId prev = Vocabulary::kBos;
  for (std::size_t t = 0; t < steps; ++t) {
    const Var q = net.make_query(prev);
    const auto attention = net.attend(q, state);
    const Var fused = net.memory_cnn(attention, state);
    Var logits = net.output_distribution(fused).second;
    if (hook) logits = hook(t, logits);
    const TokenId y = sample.target[t];
    trace.logits.push_back(logits);
    trace.step_losses.push_back(num::cross_entropy(logits, y));
    if (y != Vocabulary::kEos) state = net.advance(state, y);
    prev = y;
  }
  trace.loss = num::scale(num::sum(trace.step_losses), 1.0 / static_cast<double>(steps));
  return trace;
}

Var teacher_forced_loss(const Network& net, const TrainSample& sample) { return teacher_forced_trace(net, sample).loss; }

Var batch_loss(const Network& net, std::span<const TrainSample> samples, std::span<const std::size_t> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (auto i : batch) losses.push_back(teacher_forced_loss(net, samples[i]));
  return num::scale(num::sum(losses), 1.0 / static_cast<double>(batch.size()));
}

namespace {

std::size_t capped_threads(std::size_t threads, std::size_t work) {
  return std::max<std::size_t>(1, std::min(threads, work));
}

// Runs fn(k) for k in [0, n) on up to `threads` threads; rethrows the first
// failure by index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = capped_threads(threads, n);
  if (threads == 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t k = w; k < n; k += threads) {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

LossAndGrad compute_gradients(const ModelParams& params, const ModelConfig& config,
                              std::span<const TrainSample> samples, std::span<const std::size_t> batch,
                              num::Precision precision, std::size_t threads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const std::size_t n = batch.size();
  const std::size_t chunk = capped_threads(threads, n);

  std::vector<std::vector<double>> acc(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) acc[i].assign(params.value(i).size(), 0.0);
  double loss_sum = 0.0;

  // Samples are processed `chunk` at a time and folded into the running sums
  // in batch order, so memory stays bounded and the sum order is fixed.
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    std::vector<double> losses(count);
    std::vector<ModelParams> grads(count);
    parallel_for(count, threads, [&](std::size_t k) {
      Tape tape(precision);
      const Network net(tape, config, params);
      const Var loss = teacher_forced_loss(net, samples[batch[start + k]]);
      tape.backward(loss);
      losses[k] = loss.value()[0];
      grads[k] = params.gradients(tape, net.bound());
    });
    for (std::size_t k = 0; k < count; ++k) {
      loss_sum += losses[k];
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto g = grads[k].value(i).data();
        auto& a = acc[i];
        for (std::size_t j = 0; j < a.size(); ++j) a[j] += g[j];
      }
    }
  }

  const double inv = 1.0 / static_cast<double>(n);
  auto round = [&](double x) { return precision == num::Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x; };
  LossAndGrad out;
  out.loss = round(loss_sum * inv);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto& x : acc[i]) x = round(x * inv);
    out.grads.add(params.name(i), Tensor(params.value(i).shape(), std::move(acc[i])));
  }
  return out;
}

double mean_loss(const ModelParams& params, const ModelConfig& config, std::span<const TrainSample> samples,
                 num::Precision precision, std::size_t threads) {
  if (samples.empty()) throw std::invalid_argument("mean_loss: no samples");
  std::vector<double> losses(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t k) {
    Tape tape(precision, false);
    const Network net(tape, config, params);
    losses[k] = teacher_forced_loss(net, samples[k]).value()[0];
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.add(params.name(i), Tensor::zeros(params.value(i).shape()));
    s.v.add(params.name(i), Tensor::zeros(params.value(i).shape()));
  }
  return s;
}

double global_norm(const ModelParams& grads) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (double g : grads.value(i).data()) sq += g * g;
  }
  return std::sqrt(sq);
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr, const TrainConfig& config) {
  if (grads.names() != params.names() || state.m.names() != params.names() || state.v.names() != params.names()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment names differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads.value(i).shape() != params.value(i).shape()) {
      throw num::ShapeError("adam_step: gradient shape mismatch for " + grads.name(i));
    }
    for (double g : grads.value(i).data()) {
      if (!std::isfinite(g)) throw num::NumericError("non-finite gradient for parameter " + grads.name(i));
    }
  }
  double factor = 1.0;
  if (config.grad_clip > 0) {
    const double norm = global_norm(grads);
    if (norm > config.grad_clip) factor = config.grad_clip / norm;
  }
  const bool f32 = config.precision == num::Precision::f32;
  auto round = [f32](double x) { return f32 ? static_cast<double>(static_cast<float>(x)) : x; };

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = grads.value(i).data();
    auto m = state.m.value(i).mutable_data();
    auto v = state.v.value(i).mutable_data();
    auto p = params.value(i).mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] * factor;
      m[j] = round(config.beta1 * m[j] + (1.0 - config.beta1) * gj);
      v[j] = round(config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = round(p[j] - lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'S', 'M', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw CheckpointError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  if (name.size() > 0xFFFF) throw CheckpointError("checkpoint: tensor name too long");
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double x : t.data()) {
    std::uint32_t bits;
    const float f = static_cast<float>(x);
    std::memcpy(&bits, &f, sizeof bits);
    put<std::uint32_t>(out, bits);
  }
}

std::pair<std::string, Tensor> get_tensor(std::istream& in) {
  const auto len = get<std::uint16_t>(in);
  std::string name(len, '\0');
  if (!in.read(name.data(), len)) throw CheckpointError("checkpoint: truncated tensor name");
  const auto rank = get<std::uint32_t>(in);
  if (rank == 0 || rank > 4) throw CheckpointError("checkpoint: bad rank for " + name);
  num::Shape shape(rank);
  for (auto& d : shape) {
    d = get<std::uint32_t>(in);
    if (d == 0) throw CheckpointError("checkpoint: zero dimension for " + name);
  }
  std::vector<double> values(num::element_count(shape));
  for (auto& x : values) {
    const auto bits = get<std::uint32_t>(in);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    x = static_cast<double>(f);
  }
  return {name, Tensor(shape, std::move(values))};
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.config_hash);
  put<std::uint64_t>(out, ckpt.vocab_hash);
  put<std::uint32_t>(out, ckpt.epoch);
  put<std::uint64_t>(out, ckpt.adam.step);
  const bool has_adam = ckpt.adam.m.size() == ckpt.params.size();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size() * (has_adam ? 3 : 1)));
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) put_tensor(out, ckpt.params.name(i), ckpt.params.value(i));
  if (has_adam) {
    for (std::size_t i = 0; i < ckpt.adam.m.size(); ++i) put_tensor(out, "adam.m/" + ckpt.adam.m.name(i), ckpt.adam.m.value(i));
    for (std::size_t i = 0; i < ckpt.adam.v.size(); ++i) put_tensor(out, "adam.v/" + ckpt.adam.v.name(i), ckpt.adam.v.value(i));
  }
  if (!out) throw CheckpointError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = get<std::uint64_t>(in);
  c.vocab_hash = get<std::uint64_t>(in);
  c.epoch = get<std::uint32_t>(in);
  c.adam.step = get<std::uint64_t>(in);
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    auto [name, t] = get_tensor(in);
    if (name.rfind("adam.m/", 0) == 0) {
      c.adam.m.add(name.substr(7), std::move(t));
    } else if (name.rfind("adam.v/", 0) == 0) {
      c.adam.v.add(name.substr(7), std::move(t));
    } else {
      c.params.add(name, std::move(t));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes");
  if (c.adam.m.size() == 0 && c.adam.v.size() == 0) {
    c.adam = AdamState::zeros_like(c.params);
  } else if (c.adam.m.names() != c.params.names() || c.adam.v.names() != c.params.names()) {
    throw CheckpointError("checkpoint: optimizer state does not match parameters");
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

// ---------------------------------------------------------------------------

std::string format_log_line(const LogRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.9g,%.9g", r.epoch, r.step, r.split.c_str(), r.loss, r.lr);
  return buf;
}

Checkpoint initial_checkpoint(const ModelConfig& model_config, const TrainConfig& config, std::uint64_t vocab_hash) {
  num::Rng rng(num::mix_seed(config.seed, 0x1417));
  Checkpoint c;
  c.params = model::init_params(model_config, rng);
  c.adam = AdamState::zeros_like(c.params);
  c.config_hash = model_config.hash();
  c.vocab_hash = vocab_hash;
  return c;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& config, std::span<const TrainSample> train_set,
                  std::span<const TrainSample> val_set, Checkpoint start, const TrainOptions& options) {
  config.validate();
  model_config.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  if (start.config_hash != model_config.hash()) throw CheckpointError("checkpoint was made for a different model config");

  std::vector<std::size_t> lengths;
  lengths.reserve(train_set.size());
  for (const auto& s : train_set) lengths.push_back(loss_steps(s.target));

  TrainResult result;
  result.last = std::move(start);
  Checkpoint& state = result.last;
  bool have_best = false;
  auto emit = [&](LogRecord r) {
    if (options.on_log) options.on_log(r);
    result.log.push_back(std::move(r));
  };
  auto limit_reached = [&] { return config.max_steps > 0 && state.adam.step >= config.max_steps; };

  for (std::size_t epoch = state.epoch; epoch < config.epochs && !limit_reached(); ++epoch) {
    num::Rng rng(num::mix_seed(config.seed, epoch));
    const auto batches = make_batches(lengths, config.batch_size, rng);
    const double lr = lr_at(config, epoch);
    double epoch_loss = 0.0;
    std::size_t done = 0;
    for (const auto& batch : batches) {
      if (limit_reached()) break;
      LossAndGrad lg;
      try {
        lg = compute_gradients(state.params, model_config, train_set, batch, config.precision, config.threads);
        if (!std::isfinite(lg.loss)) throw num::NumericError("loss is not finite");
        adam_step(state.params, lg.grads, state.adam, lr, config);
      } catch (const num::NumericError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(state.adam.step + 1) + " (batch starting with " +
                               train_set[batch.front()].post_id + ", lr " + std::to_string(lr) + "): " + e.what());
      }
      epoch_loss += lg.loss;
      ++done;
      ++result.steps;
      emit({epoch, static_cast<std::size_t>(state.adam.step), "train", lg.loss, lr});
    }
    if (done == batches.size()) state.epoch = static_cast<std::uint32_t>(epoch + 1);

    double selection;
    if (!val_set.empty()) {
      selection = mean_loss(state.params, model_config, val_set, config.precision, config.threads);
      if (!std::isfinite(selection)) throw TrainingDiverged("validation loss is not finite after epoch " + std::to_string(epoch));
      emit({epoch, static_cast<std::size_t>(state.adam.step), "val", selection, lr});
    } else {
      selection = done > 0 ? epoch_loss / static_cast<double>(done) : 0.0;
    }
    if (done > 0 && (!have_best || selection < result.best_val_loss)) {
      have_best = true;
      result.best_val_loss = selection;
      result.best = state;
    }
    if (options.on_epoch) options.on_epoch(state);
  }
  if (!have_best) {
    result.best = state;
    result.best_val_loss = val_set.empty() ? 0.0 : mean_loss(state.params, model_config, val_set, config.precision, config.threads);
  }
  return result;
}

}  // namespace csmn::training
