#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "csmn/corpus.hpp"
#include "csmn/features.hpp"

namespace csmn::corpus {

/// Parameters of the synthetic corpus generator. Every image belongs to one
/// of `classes` classes; its feature is the class prototype plus Gaussian
/// noise. A caption is the two words of the image class, the author's style
/// word and the author's signature word. The hashtags are the two class tags
/// and the author's signature tag.
struct SynthConfig {
  std::size_t users = 5;
  std::size_t posts_per_user = 20;
  std::size_t classes = 5;
  std::size_t feature_dim = 32;
  ImageMode image_mode = ImageMode::pool5;
  double noise = 0.25;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthCorpus {
  std::vector<RawPost> posts;
  FeatureStore features;
};

SynthCorpus synthesize(const SynthConfig& config);

/// Caption word and hashtag planted in every post of user `u`.
std::string signature_word(std::size_t u);
std::string signature_tag(std::size_t u);
std::string synth_user_id(std::size_t u);

}  // namespace csmn::corpus
