#include "csmn/features.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace csmn::corpus {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'S', 'M', 'N', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) throw FeatureFormatError("feature file truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

void put_f32(std::ostream& out, double value) {
  put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

double get_f32(std::istream& in) { return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in))); }

}  // namespace

std::string_view to_string(ImageMode mode) { return mode == ImageMode::pool5 ? "pool5" : "res5c"; }

ImageMode parse_image_mode(std::string_view text) {
  if (text == "pool5") return ImageMode::pool5;
  if (text == "res5c") return ImageMode::res5c;
  throw std::invalid_argument("unknown image mode: " + std::string(text));
}

FeatureStore::FeatureStore(ImageMode mode, std::size_t dim) : mode_(mode), dim_(dim) {
  if (dim == 0) throw std::invalid_argument("feature dimension must be positive");
}

void FeatureStore::insert(const std::string& key, Tensor feature) {
  const num::Shape expected = mode_ == ImageMode::pool5 ? num::Shape{dim_} : num::Shape{kGridCells, dim_};
  if (feature.shape() != expected) {
    throw FeatureFormatError("feature '" + key + "' has shape " + num::shape_string(feature.shape()) + ", expected " +
                             num::shape_string(expected));
  }
  if (key.empty() || key.size() > 0xFFFF) throw FeatureFormatError("feature key length out of range");
  // Stored as binary32 on disk; rounding here keeps in-memory and reloaded
  // stores identical.
  for (auto& x : feature.mutable_data()) {
    x = static_cast<double>(static_cast<float>(x));
    if (!std::isfinite(x)) throw FeatureFormatError("feature '" + key + "' has a non-finite value");
  }
  features_.insert_or_assign(key, std::move(feature));
}

const Tensor& FeatureStore::at(const std::string& key) const {
  auto it = features_.find(key);
  if (it == features_.end()) throw FeatureFormatError("missing image feature for key '" + key + "'");
  return it->second;
}

Tensor FeatureStore::pooled(const std::string& key) const {
  const Tensor& f = at(key);
  if (mode_ == ImageMode::pool5) return f;
  std::vector<double> mean(dim_, 0.0);
  for (std::size_t r = 0; r < kGridCells; ++r)
    for (std::size_t c = 0; c < dim_; ++c) mean[c] += f.at(r, c);
  for (auto& v : mean) v /= static_cast<double>(kGridCells);
  return Tensor({dim_}, std::move(mean));
}

std::vector<std::string> FeatureStore::keys() const {
  std::vector<std::string> out;
  out.reserve(features_.size());
  for (const auto& [k, v] : features_) out.push_back(k);
  return out;
}

void FeatureStore::write(std::ostream& out) const {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(mode_));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(features_.size()));
  for (const auto& [key, value] : features_) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    for (double v : value.data()) put_f32(out, v);
  }
}

FeatureStore FeatureStore::read(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FeatureFormatError("feature file: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw FeatureFormatError("feature file: unsupported version " + std::to_string(version));
  const auto mode = get_le<std::uint32_t>(in);
  if (mode > 1) throw FeatureFormatError("feature file: unknown mode " + std::to_string(mode));
  const auto dim = get_le<std::uint32_t>(in);
  const auto count = get_le<std::uint32_t>(in);
  if (dim == 0) throw FeatureFormatError("feature file: zero dimension");
  FeatureStore store(static_cast<ImageMode>(mode), dim);
  const std::size_t rows = store.mode_ == ImageMode::pool5 ? 1 : kGridCells;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = get_le<std::uint16_t>(in);
    std::string key(len, '\0');
    if (!in.read(key.data(), len)) throw FeatureFormatError("feature file truncated in key");
    std::vector<double> values(rows * dim);
    for (auto& v : values) v = get_f32(in);
    num::Shape shape = rows == 1 ? num::Shape{dim} : num::Shape{rows, dim};
    if (store.contains(key)) throw FeatureFormatError("feature file: duplicate key '" + key + "'");
    store.insert(key, Tensor(std::move(shape), std::move(values)));
  }
  return store;
}

void FeatureStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write(out);
}

FeatureStore load_features(const std::filesystem::path& path, ImageMode expected_mode,
                           std::optional<std::size_t> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file " + path.string());
  auto store = FeatureStore::read(in);
  if (store.mode() != expected_mode) {
    throw FeatureFormatError("feature file " + path.string() + " holds " + std::string(to_string(store.mode())) +
                             " features, expected " + std::string(to_string(expected_mode)));
  }
  if (expected_dim && store.dim() != *expected_dim) {
    throw FeatureFormatError("feature file " + path.string() + " has dimension " + std::to_string(store.dim()) +
                             ", expected " + std::to_string(*expected_dim));
  }
  return store;
}

}  // namespace csmn::corpus
