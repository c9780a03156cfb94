#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "csmn/tensor.hpp"

namespace csmn::corpus {

using num::Tensor;

enum class ImageMode : std::uint32_t { pool5 = 0, res5c = 1 };
std::string_view to_string(ImageMode mode);
ImageMode parse_image_mode(std::string_view text);

/// Grid cells of a res5c feature map (7 x 7).
inline constexpr std::size_t kGridCells = 49;

class FeatureFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precomputed image descriptors keyed by image_feature_key: a [dim] vector
/// per key in pool5 mode, a [49 x dim] grid in res5c mode.
///
/// Binary file layout, little-endian:
///   "CSMNFEAT" | u32 version=1 | u32 mode | u32 dim | u32 count
///   then per record: u16 key length | key bytes | dim or 49*dim f32
/// Records are written in key order.
class FeatureStore {
 public:
  FeatureStore(ImageMode mode, std::size_t dim);

  ImageMode mode() const { return mode_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return features_.size(); }
  bool contains(const std::string& key) const { return features_.count(key) != 0; }

  void insert(const std::string& key, Tensor feature);
  const Tensor& at(const std::string& key) const;
  /// pool5-style vector for a key: the stored vector, or the mean over grid
  /// cells in res5c mode.
  Tensor pooled(const std::string& key) const;
  std::vector<std::string> keys() const;

  void write(std::ostream& out) const;
  static FeatureStore read(std::istream& in);
  void save(const std::filesystem::path& path) const;

 private:
  ImageMode mode_;
  std::size_t dim_;
  std::map<std::string, Tensor> features_;
};

/// Loads a feature file, rejecting a mode (and, when given, a dimension)
/// other than the expected one.
FeatureStore load_features(const std::filesystem::path& path, ImageMode expected_mode,
                           std::optional<std::size_t> expected_dim = std::nullopt);

}  // namespace csmn::corpus
