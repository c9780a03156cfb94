#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace csmn::app {

using nlohmann::json;

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::paper() {
  RunConfig c;
  c.profile = "paper";
  c.vocab_size = 40000;
  c.max_length = 15;
  c.min_posts = 50;
  c.d_context = 60;
  c.output_slots = 16;
  c.feature_dim = 2048;
  c.mem_dim = 1024;
  c.embed_dim = 512;
  c.conv_depth = 300;
  c.lr0 = 0.001;
  c.batch_size = 200;
  return c;
}

RunConfig RunConfig::named(const std::string& profile) {
  if (profile == "desk") return desk();
  if (profile == "paper") return paper();
  throw UsageError("unknown profile '" + profile + "' (expected paper or desk)");
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigConflict(what); };
  if (min_length == 0 || min_length > max_length) fail("min_length must be positive and at most max_length");
  if (max_length >= output_slots) {
    fail("max_length " + std::to_string(max_length) + " needs output_slots > max_length, got " + std::to_string(output_slots));
  }
  if (min_posts > max_posts) fail("min_posts exceeds max_posts");
  if (vocab_size <= corpus::Vocabulary::kSpecialCount) fail("vocab_size too small");
  try {
    model_config(vocab_size).validate();
    train_config().validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (!(split_train > 0 && split_val >= 0 && split_test > 0)) fail("split ratios must be positive");
  if (!(gradcheck_eps > 0)) fail("gradcheck_eps must be positive");
}

corpus::FilterConfig RunConfig::filter_config() const {
  corpus::FilterConfig f;
  f.task = task;
  f.min_length = min_length;
  f.max_length = max_length;
  f.max_invalid_fraction = max_invalid_fraction;
  f.min_posts = min_posts;
  f.max_posts = max_posts;
  f.spam_floor = spam_floor;
  f.spam_fraction = spam_fraction;
  return f;
}

corpus::SplitRatios RunConfig::split_ratios() const { return {split_train, split_val, split_test}; }

model::ModelConfig RunConfig::model_config(std::size_t actual_vocab_size) const {
  model::ModelConfig m;
  m.memory.image_mode = image_mode;
  m.memory.context_slots = d_context;
  m.memory.output_slots = output_slots;
  m.memory.feature_dim = feature_dim;
  m.memory.mem_dim = mem_dim;
  m.memory.embed_dim = embed_dim;
  m.vocab_size = actual_vocab_size;
  m.conv_depth = conv_depth;
  m.flags = ablate;
  return m;
}

training::TrainConfig RunConfig::train_config() const {
  training::TrainConfig t;
  t.lr0 = lr0;
  t.lr_decay = lr_decay;
  t.decay_every = decay_every;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.seed = seed;
  t.grad_clip = grad_clip;
  t.max_steps = max_steps;
  t.precision = precision;
  t.threads = threads;
  return t;
}

namespace {

std::vector<std::string> ablation_names(const model::AblationFlags& f) {
  std::vector<std::string> out;
  if (f.no_cnn) out.push_back("no_cnn");
  if (f.no_user_context) out.push_back("no_uc");
  if (f.no_word_output) out.push_back("no_wo");
  return out;
}

// Field table shared by serialization and merging.
template <typename Visitor>
void visit_fields(RunConfig& c, Visitor&& v) {
  v("vocab_size", c.vocab_size);
  v("min_length", c.min_length);
  v("max_length", c.max_length);
  v("max_invalid_fraction", c.max_invalid_fraction);
  v("min_posts", c.min_posts);
  v("max_posts", c.max_posts);
  v("spam_floor", c.spam_floor);
  v("spam_fraction", c.spam_fraction);
  v("split_train", c.split_train);
  v("split_val", c.split_val);
  v("split_test", c.split_test);
  v("d_context", c.d_context);
  v("output_slots", c.output_slots);
  v("feature_dim", c.feature_dim);
  v("mem_dim", c.mem_dim);
  v("embed_dim", c.embed_dim);
  v("conv_depth", c.conv_depth);
  v("lr0", c.lr0);
  v("lr_decay", c.lr_decay);
  v("decay_every", c.decay_every);
  v("epochs", c.epochs);
  v("batch_size", c.batch_size);
  v("grad_clip", c.grad_clip);
  v("max_steps", c.max_steps);
  v("gradcheck_eps", c.gradcheck_eps);
  v("gradcheck_tol64", c.gradcheck_tol64);
  v("gradcheck_tol32", c.gradcheck_tol32);
  v("gradcheck_max_elements", c.gradcheck_max_elements);
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["profile"] = profile;
  j["task"] = std::string(corpus::to_string(task));
  j["split"] = std::string(corpus::to_string(split));
  j["image_mode"] = std::string(corpus::to_string(image_mode));
  j["ablate"] = ablation_names(ablate);
  j["seed"] = seed;
  j["precision"] = precision == num::Precision::f32 ? "f32" : "f64";
  RunConfig copy = *this;
  visit_fields(copy, [&](const char* name, auto& field) { j[name] = field; });
  return j.dump(2) + "\n";
}

void RunConfig::merge_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("config file must hold a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const json& value = it.value();
      if (key == "profile") {
        if (value.get<std::string>() != profile) {
          throw ConfigConflict("config file is for profile '" + value.get<std::string>() + "', run uses '" + profile + "'");
        }
      } else if (key == "task") {
        task = corpus::parse_task(value.get<std::string>());
      } else if (key == "split") {
        split = corpus::parse_split_mode(value.get<std::string>());
      } else if (key == "image_mode") {
        image_mode = corpus::parse_image_mode(value.get<std::string>());
      } else if (key == "ablate") {
        ablate = parse_ablations(value.get<std::vector<std::string>>());
      } else if (key == "seed") {
        seed = value.get<std::uint64_t>();
      } else if (key == "precision") {
        const auto p = value.get<std::string>();
        if (p != "f32" && p != "f64") throw ConfigConflict("precision must be f32 or f64");
        precision = p == "f32" ? num::Precision::f32 : num::Precision::f64;
      } else {
        bool found = false;
        visit_fields(*this, [&](const char* name, auto& field) {
          if (key == name) {
            field = value.get<std::remove_reference_t<decltype(field)>>();
            found = true;
          }
        });
        if (!found) throw ConfigConflict("unknown config key '" + key + "'");
      }
    }
  } catch (const json::type_error& e) {
    throw ConfigConflict(std::string("config value has the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigConflict(e.what());
  }
}

model::AblationFlags parse_ablations(const std::vector<std::string>& names) {
  model::AblationFlags f;
  for (const auto& n : names) {
    if (n == "no_cnn") f.no_cnn = true;
    else if (n == "no_uc") f.no_user_context = true;
    else if (n == "no_wo") f.no_word_output = true;
    else throw UsageError("unknown ablation '" + n + "' (expected no_cnn, no_uc or no_wo)");
  }
  return f;
}

std::size_t thread_budget() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CSMN_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) throw UsageError("CSMN_THREADS must be a positive integer");
    n = std::min(n, static_cast<std::size_t>(cap));
  }
  return n;
}

RunConfig resolve_config(const CommonFlags& flags) {
  std::string profile = flags.profile.value_or("desk");
  std::optional<std::string> file_text;
  if (flags.config) {
    std::ifstream in(*flags.config);
    if (!in) throw MissingFile("config file not found: " + flags.config->string());
    std::stringstream ss;
    ss << in.rdbuf();
    file_text = ss.str();
    // Without --profile the file may choose the profile.
    if (!flags.profile) {
      try {
        const auto j = json::parse(*file_text);
        if (j.is_object() && j.contains("profile") && j["profile"].is_string()) profile = j["profile"].get<std::string>();
      } catch (const json::parse_error&) {
        // reported by merge_json below
      }
    }
  }
  RunConfig c = RunConfig::named(profile);
  bool vocab_from_file = false;
  if (file_text) {
    c.merge_json(*file_text);
    vocab_from_file = json::parse(*file_text).contains("vocab_size");
  }
  try {
    if (flags.task) c.task = corpus::parse_task(*flags.task);
    if (flags.split) c.split = corpus::parse_split_mode(*flags.split);
    if (flags.image_mode) c.image_mode = corpus::parse_image_mode(*flags.image_mode);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  // The paper profile keeps a larger dictionary for hashtags.
  if (c.profile == "paper" && !vocab_from_file) c.vocab_size = c.task == corpus::Task::hashtag ? 60000 : 40000;
  if (!flags.ablate.empty()) c.ablate = parse_ablations(flags.ablate);
  if (flags.seed) c.seed = *flags.seed;
  if (flags.d_context) c.d_context = *flags.d_context;
  c.threads = thread_budget();
  c.validate();
  return c;
}

}  // namespace csmn::app
