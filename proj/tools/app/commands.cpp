#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace csmn::app {

using corpus::Task;
using corpus::Vocabulary;
using num::Tape;
using num::Tensor;
using num::Var;

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw MissingFile(std::string(what) + " not found: " + path.string());
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

template <typename Fn>
void write_with(const fs::path& path, Fn fn) {
  std::ostringstream ss;
  fn(ss);
  write_text_file(path, ss.str());
}

}  // namespace

// ---------------------------------------------------------------------------

void run_synth(const corpus::SynthConfig& config, const fs::path& out_dir) {
  prepare_out_dir(out_dir);
  const auto synth = corpus::synthesize(config);
  write_with(out_dir / kCorpusFile, [&](std::ostream& o) { corpus::write_corpus(o, synth.posts); });
  synth.features.save(out_dir / kFeaturesFile);
}

PreprocessSummary run_preprocess(const RunConfig& config, const fs::path& corpus_path, const fs::path& out_dir) {
  require_file(corpus_path, "corpus");
  std::vector<corpus::RawPost> raw;
  try {
    raw = corpus::read_corpus(corpus_path);
  } catch (const corpus::CorpusFormatError& e) {
    throw DataError(e.what());
  }
  const auto outcome = corpus::apply_filters(raw, config.filter_config());
  if (outcome.kept.empty()) throw DataError("no posts survive filtering");

  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(outcome.kept.size());
  for (const auto& p : outcome.kept) tokens.push_back(corpus::task_tokens(p, config.task));
  const auto vocab = Vocabulary::build(tokens, config.task, config.vocab_size);

  std::vector<corpus::Post> posts;
  posts.reserve(outcome.kept.size());
  for (std::size_t i = 0; i < outcome.kept.size(); ++i) {
    const auto& p = outcome.kept[i];
    posts.push_back({p.post_id, p.user_id, vocab.encode(tokens[i]), p.image_feature_key});
  }
  std::sort(posts.begin(), posts.end(), [](const auto& a, const auto& b) { return a.post_id < b.post_id; });

  corpus::SplitManifest split;
  try {
    split = corpus::make_split(posts, config.split, config.split_ratios(), config.seed);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  const auto profiles = corpus::compute_profiles(posts, config.d_context);

  prepare_out_dir(out_dir);
  write_text_file(out_dir / kRunConfigFile, config.to_json());
  write_with(out_dir / kVocabFile, [&](std::ostream& o) { vocab.write(o); });
  write_with(out_dir / kPostsFile, [&](std::ostream& o) { corpus::write_posts(o, config.task, posts); });
  write_with(out_dir / kSplitFile, [&](std::ostream& o) { split.write(o); });
  write_with(out_dir / kProfilesFile, [&](std::ostream& o) {
    char buf[64];
    for (const auto& [user, profile] : profiles) {
      o << user;
      for (const auto& w : profile.active_words) {
        std::snprintf(buf, sizeof buf, "%u:%.9g", static_cast<unsigned>(w.token), w.score);
        o << '\t' << buf;
      }
      o << '\n';
    }
  });
  write_with(out_dir / kFilterReportFile, [&](std::ostream& o) {
    o << "kind\tid\tuser_id\treason\n";
    for (const auto& r : outcome.rejections) o << "post\t" << r.post_id << '\t' << r.user_id << '\t' << corpus::to_string(r.reason) << '\n';
    for (const auto& u : outcome.removed_users) o << "user\t" << u.user_id << '\t' << u.user_id << '\t' << u.reason << '\n';
  });

  std::set<std::string> users;
  for (const auto& p : posts) users.insert(p.user_id);
  return {raw.size(), posts.size(), users.size(), vocab.size()};
}

// ---------------------------------------------------------------------------

std::vector<corpus::Post> Dataset::part(const std::string& name) const {
  const std::vector<std::string>* ids = nullptr;
  if (name == "train") ids = &split.train;
  else if (name == "val") ids = &split.val;
  else if (name == "test") ids = &split.test;
  else throw UsageError("unknown split part '" + name + "'");
  const std::set<std::string> wanted(ids->begin(), ids->end());
  std::vector<corpus::Post> out;
  for (const auto& p : posts) {
    if (wanted.count(p.post_id)) out.push_back(p);
  }
  if (out.size() != wanted.size()) throw DataError("split manifest names posts missing from " + std::string(kPostsFile));
  return out;
}

Dataset load_dataset(const fs::path& data_dir) {
  for (const char* f : {kVocabFile, kPostsFile, kSplitFile}) require_file(data_dir / f, "preprocessed file");
  Dataset d;
  try {
    std::istringstream vin(read_text_file(data_dir / kVocabFile));
    d.vocab = Vocabulary::read(vin);
    std::istringstream pin(read_text_file(data_dir / kPostsFile));
    d.posts = corpus::read_posts(pin, &d.task);
    std::istringstream sin(read_text_file(data_dir / kSplitFile));
    d.split = corpus::SplitManifest::read(sin);
  } catch (const MissingFile&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  if (d.task != d.vocab.task()) throw DataError("posts and vocabulary were built for different tasks");
  for (const auto& p : d.posts) {
    for (auto t : p.tokens) {
      if (t >= d.vocab.size()) throw DataError("post " + p.post_id + " has a token id outside the vocabulary");
    }
  }
  return d;
}

corpus::FeatureStore load_feature_file(const RunConfig& config, const fs::path& path) {
  require_file(path, "feature file");
  try {
    return corpus::load_features(path, config.image_mode, config.feature_dim);
  } catch (const corpus::FeatureFormatError& e) {
    throw DataError(e.what());
  }
}

std::vector<training::TrainSample> dataset_samples(const RunConfig& config, const Dataset& data,
                                                   const corpus::FeatureStore& features, const std::string& part) {
  const corpus::ProfileBuilder profiles(data.posts);
  const auto posts = data.part(part);
  try {
    return training::make_samples(posts, features, profiles, config.d_context, config.output_slots - 1);
  } catch (const corpus::FeatureFormatError& e) {
    throw DataError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

namespace {

void check_task(const RunConfig& config, const Dataset& data) {
  if (config.task != data.task) {
    throw ConfigConflict("run is configured for task " + std::string(corpus::to_string(config.task)) +
                         " but the data was preprocessed for " + std::string(corpus::to_string(data.task)));
  }
}

training::Checkpoint load_checkpoint_for(const RunConfig& config, const Dataset& data, const fs::path& path) {
  require_file(path, "checkpoint");
  training::Checkpoint c;
  try {
    c = training::load_checkpoint(path);
  } catch (const training::CheckpointError& e) {
    throw DataError(e.what());
  }
  if (c.vocab_hash != data.vocab.hash()) throw DataError("checkpoint vocabulary does not match the dataset vocabulary");
  if (c.config_hash != config.model_config(data.vocab.size()).hash()) {
    throw ConfigConflict("checkpoint was trained with a different model configuration (dimensions or ablations)");
  }
  return c;
}

}  // namespace

training::TrainResult run_train(const RunConfig& config, const fs::path& data_dir, const fs::path& features_path,
                                const fs::path& out_dir, const std::optional<fs::path>& resume) {
  const Dataset data = load_dataset(data_dir);
  check_task(config, data);
  const auto features = load_feature_file(config, features_path);
  const auto train_set = dataset_samples(config, data, features, "train");
  const auto val_set = dataset_samples(config, data, features, "val");
  const auto model_config = config.model_config(data.vocab.size());
  const auto train_config = config.train_config();

  training::Checkpoint start = resume ? load_checkpoint_for(config, data, *resume)
                                      : training::initial_checkpoint(model_config, train_config, data.vocab.hash());

  prepare_out_dir(out_dir);
  write_text_file(out_dir / kRunConfigFile, config.to_json());
  std::ofstream log(out_dir / kMetricsFile, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (out_dir / kMetricsFile).string());
  if (!resume) log << training::kLogHeader << '\n';

  training::TrainOptions options;
  options.on_log = [&](const training::LogRecord& r) { log << training::format_log_line(r) << '\n' << std::flush; };
  options.on_epoch = [&](const training::Checkpoint& c) { training::save_checkpoint(out_dir / kLastCheckpointFile, c); };
  auto result = training::train(model_config, train_config, train_set, val_set, std::move(start), options);
  training::save_checkpoint(out_dir / kCheckpointFile, result.best);
  training::save_checkpoint(out_dir / kLastCheckpointFile, result.last);
  return result;
}

// ---------------------------------------------------------------------------

std::vector<eval::MetricReport> run_evaluate(const RunConfig& config, const fs::path& data_dir,
                                             const fs::path& features_path, const std::vector<std::string>& methods,
                                             const std::optional<fs::path>& checkpoint, const fs::path& out_dir,
                                             const std::string& part) {
  if (methods.empty()) throw UsageError("evaluate needs at least one --method");
  const Dataset data = load_dataset(data_dir);
  check_task(config, data);
  const auto features = load_feature_file(config, features_path);
  const auto queries = dataset_samples(config, data, features, part);
  if (queries.empty()) throw DataError("split part '" + part + "' is empty");
  const auto train_posts = data.part("train");

  std::vector<eval::MetricReport> reports;
  std::vector<std::pair<std::string, std::vector<eval::PredictionRecord>>> dumps;
  for (const auto& method : methods) {
    std::vector<eval::PredictionRecord> preds;
    std::string label = method;
    if (method == "csmn") {
      if (!checkpoint) throw UsageError("method csmn needs --model");
      const auto ckpt = load_checkpoint_for(config, data, *checkpoint);
      const auto model_config = config.model_config(data.vocab.size());
      preds = eval::predict_csmn(ckpt.params, model_config, queries, data.task, config.output_slots - 1, config.threads);
      if (!(config.ablate == model::AblationFlags{})) label += "-" + config.ablate.label();
    } else {
      eval::NNVariant variant;
      if (method == "1nn-im") variant = eval::NNVariant::im;
      else if (method == "1nn-usr") variant = eval::NNVariant::usr;
      else if (method == "1nn-usrim") variant = eval::NNVariant::usrim;
      else throw UsageError("unknown method '" + method + "' (expected csmn, 1nn-im, 1nn-usr or 1nn-usrim)");
      const corpus::ProfileBuilder train_profiles(train_posts);
      std::map<std::string, std::vector<corpus::TokenId>> user_words;
      for (const auto& p : train_posts) {
        if (!user_words.count(p.user_id)) user_words[p.user_id] = train_profiles.profile(p.user_id, config.d_context).token_ids();
      }
      try {
        const eval::NearestNeighbours nn(train_posts, features, std::move(user_words), config.seed);
        preds = eval::predict_nn(nn, variant, queries);
      } catch (const corpus::FeatureFormatError& e) {
        throw DataError(e.what());
      }
    }
    reports.push_back(eval::score(label, data.task, data.split.mode, preds));
    dumps.emplace_back(label, std::move(preds));
  }

  prepare_out_dir(out_dir);
  write_text_file(out_dir / kRunConfigFile, config.to_json());
  write_with(out_dir / kReportFile, [&](std::ostream& o) { eval::write_report(o, reports); });
  for (const auto& [label, preds] : dumps) {
    write_with(out_dir / ("predictions_" + label + ".tsv"), [&](std::ostream& o) { eval::write_predictions(o, preds, data.vocab); });
  }
  return reports;
}

std::vector<std::string> run_generate(const RunConfig& config, const fs::path& data_dir, const fs::path& features_path,
                                      const fs::path& checkpoint, const GenerateRequest& request) {
  const Dataset data = load_dataset(data_dir);
  check_task(config, data);
  const auto features = load_feature_file(config, features_path);
  const auto ckpt = load_checkpoint_for(config, data, checkpoint);
  const corpus::ProfileBuilder profiles(data.posts);

  std::string key;
  std::vector<corpus::TokenId> words;
  if (request.post_id) {
    if (request.feature_key || request.user_id) throw UsageError("give either --post-id or --feature-key with --user");
    auto it = std::find_if(data.posts.begin(), data.posts.end(), [&](const auto& p) { return p.post_id == *request.post_id; });
    if (it == data.posts.end()) throw DataError("unknown post id " + *request.post_id);
    key = it->image_feature_key;
    if (profiles.post_count(it->user_id) > 1) words = profiles.profile(it->user_id, config.d_context, it->post_id).token_ids();
  } else {
    if (!request.feature_key || !request.user_id) throw UsageError("give either --post-id or --feature-key with --user");
    key = *request.feature_key;
    if (profiles.has_user(*request.user_id)) words = profiles.profile(*request.user_id, config.d_context).token_ids();
  }
  if (!features.contains(key)) throw DataError("missing image feature for key '" + key + "'");
  auto tokens = model::greedy_decode(ckpt.params, config.model_config(data.vocab.size()), features.at(key), words,
                                     config.output_slots - 1);
  if (data.task == Task::hashtag) tokens = model::dedup_hashtags(tokens);
  return data.vocab.decode(tokens);
}

// ---------------------------------------------------------------------------

GradCheckProblem make_gradcheck_problem(const RunConfig& config, std::size_t batch) {
  GradCheckProblem prob;
  prob.model = config.model_config(config.vocab_size);
  num::Rng rng(num::mix_seed(config.seed, 0x6CEC));
  prob.params = model::init_params(prob.model, rng);
  for (std::size_t i = 0; i < prob.params.size(); ++i) {
    if (prob.params.value(i).rank() != 1) continue;
    for (auto& b : prob.params.value(i).mutable_data()) b = static_cast<double>(static_cast<float>(rng.uniform(-0.1, 0.1)));
  }
  const std::size_t V = prob.model.vocab_size;
  const std::size_t first_word = Vocabulary::kSpecialCount;
  const auto& mem = prob.model.memory;
  for (std::size_t s = 0; s < batch; ++s) {
    training::TrainSample sample;
    sample.post_id = "gc" + std::to_string(s);
    const std::size_t rows = mem.image_mode == corpus::ImageMode::pool5 ? 1 : corpus::kGridCells;
    std::vector<double> f(rows * mem.feature_dim);
    for (auto& x : f) x = static_cast<double>(static_cast<float>(rng.normal()));
    sample.feature = rows == 1 ? Tensor({mem.feature_dim}, std::move(f)) : Tensor({rows, mem.feature_dim}, std::move(f));
    std::vector<corpus::TokenId> pool;
    for (std::size_t t = first_word; t < V; ++t) pool.push_back(static_cast<corpus::TokenId>(t));
    rng.shuffle(pool);
    // Samples differ in profile fill and target length so padding paths are exercised.
    const std::size_t depth = std::min(mem.context_slots, pool.size()) - (s % 2);
    sample.profile.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(depth));
    const std::size_t len = 1 + (s + mem.output_slots - 2) % (mem.output_slots - 1);
    for (std::size_t t = 0; t < len; ++t) sample.target.push_back(static_cast<corpus::TokenId>(first_word + rng.below(V - first_word)));
    sample.target.push_back(Vocabulary::kEos);
    prob.samples.push_back(std::move(sample));
  }
  return prob;
}

GradCheckRun run_gradcheck(const RunConfig& config, num::Precision precision) {
  const auto prob = make_gradcheck_problem(config);
  std::vector<std::size_t> batch(prob.samples.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  const num::Objective objective = [&](Tape& tape, const std::vector<Var>& bound) {
    const model::Network net(tape, prob.model, prob.params, bound);
    return training::batch_loss(net, prob.samples, batch);
  };
  num::GradCheckOptions options;
  options.eps = config.gradcheck_eps;
  options.precision = precision;
  options.max_elements = config.gradcheck_max_elements;
  GradCheckRun run;
  run.precision = precision;
  run.tolerance = precision == num::Precision::f64 ? config.gradcheck_tol64 : config.gradcheck_tol32;
  const auto t0 = std::chrono::steady_clock::now();
  run.report = num::finite_diff_check(objective, prob.params, options);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

void print_gradcheck(std::ostream& out, const GradCheckRun& run) {
  char buf[256];
  out << "parameter\tchecked\tmax_abs_grad\trel_error\tstatus\n";
  for (const auto& e : run.report.entries) {
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%.3e\t%.3e\t%s\n", e.name.c_str(), e.checked, e.max_abs_grad, e.rel_error,
                  e.rel_error <= run.tolerance ? "ok" : "FAIL");
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "# precision %s, max rel error %.3e, tolerance %.1e, %.2f s\n",
                run.precision == num::Precision::f64 ? "f64" : "f32", run.report.max_rel_error(), run.tolerance, run.seconds);
  out << buf;
}

}  // namespace csmn::app
