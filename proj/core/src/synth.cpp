#include "csmn/synth.hpp"

#include <cstdio>
#include <stdexcept>

#include "csmn/rng.hpp"

namespace csmn::corpus {

namespace {

const char* kClassWords[] = {"beach", "sunset", "coffee", "latte", "puppy", "fluffy", "pizza", "cheese",
                             "snow",  "winter", "city",   "night", "garden", "flower", "gym",   "workout",
                             "book",  "reading", "cake",  "party"};
const char* kStyleWords[] = {"lovely", "awesome", "chill", "vibes", "blessed", "amazing", "cozy", "happy"};

std::string class_word(std::size_t k, std::size_t j) {
  constexpr std::size_t n = sizeof kClassWords / sizeof kClassWords[0];
  const std::size_t idx = 2 * k + j;
  if (idx < n) return kClassWords[idx];
  return "topic" + std::to_string(k) + (j == 0 ? "a" : "b");
}

std::string style_word(std::size_t u) {
  constexpr std::size_t n = sizeof kStyleWords / sizeof kStyleWords[0];
  return u < n ? kStyleWords[u] : "style" + std::to_string(u);
}

std::string padded(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (users == 0 || posts_per_user == 0) throw std::invalid_argument("synth: users and posts must be positive");
  if (classes == 0) throw std::invalid_argument("synth: classes must be positive");
  if (feature_dim == 0) throw std::invalid_argument("synth: feature_dim must be positive");
  if (noise < 0) throw std::invalid_argument("synth: noise must not be negative");
}

std::string signature_word(std::size_t u) { return "sig" + padded(u, 3); }
std::string signature_tag(std::size_t u) { return "#me" + padded(u, 3); }
std::string synth_user_id(std::size_t u) { return "user" + padded(u, 3); }

SynthCorpus synthesize(const SynthConfig& config) {
  config.validate();
  num::Rng rng(num::mix_seed(config.seed, 0x5717));
  std::vector<std::vector<double>> prototypes(config.classes, std::vector<double>(config.feature_dim));
  for (auto& p : prototypes) {
    for (auto& x : p) x = rng.normal();
  }

  SynthCorpus out{{}, FeatureStore(config.image_mode, config.feature_dim)};
  const std::size_t rows = config.image_mode == ImageMode::pool5 ? 1 : kGridCells;
  for (std::size_t u = 0; u < config.users; ++u) {
    for (std::size_t i = 0; i < config.posts_per_user; ++i) {
      const std::size_t k = rng.below(config.classes);
      RawPost post;
      post.post_id = "p" + padded(u, 3) + "_" + padded(i, 4);
      post.user_id = synth_user_id(u);
      post.image_feature_key = "img" + padded(u, 3) + "_" + padded(i, 4);
      post.body = class_word(k, 0) + " " + class_word(k, 1) + " " + style_word(u) + " " + signature_word(u);
      post.hashtags = {"#" + class_word(k, 0), "#" + class_word(k, 1), signature_tag(u)};

      std::vector<double> values(rows * config.feature_dim);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t d = 0; d < config.feature_dim; ++d) {
          values[r * config.feature_dim + d] = prototypes[k][d] + config.noise * rng.normal();
        }
      }
      const num::Shape shape = rows == 1 ? num::Shape{config.feature_dim} : num::Shape{rows, config.feature_dim};
      out.features.insert(post.image_feature_key, Tensor(shape, std::move(values)));
      out.posts.push_back(std::move(post));
    }
  }
  return out;
}

}  // namespace csmn::corpus
