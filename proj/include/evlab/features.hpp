#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "evlab/sbf.hpp"

namespace evlab {

inline constexpr std::size_t kFeatureDim = 256;

/// Static feature layout:
///   [0, 64)    byte histogram over the serialized body (4-value buckets, L1-normalized)
///   [64, 96)   hashed visible-string presence
///   [96, 128)  hashed import presence
///   [128, 160) section statistics
///   [160, 192) header fields scaled to [0, 1]
///   [192, 256) overlay statistics and a coarse byte-bigram summary
/// The serialized body excludes the fixed header, whose fields already have
/// their own block.
struct FeatureVector {
  std::array<double, kFeatureDim> values{};

  std::span<const double> span() const { return values; }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const FeatureVector&) const = default;
};

namespace feature_block {
inline constexpr std::size_t kHistogram = 0;
inline constexpr std::size_t kStrings = 64;
inline constexpr std::size_t kImports = 96;
inline constexpr std::size_t kSections = 128;
inline constexpr std::size_t kHeader = 160;
inline constexpr std::size_t kOverlay = 192;
inline constexpr std::size_t kEnd = 256;

// Named slots inside the blocks.
inline constexpr std::size_t kOverlayLength = kOverlay + 0;
inline constexpr std::size_t kBigram = kOverlay + 6;  // 16 cells
}  // namespace feature_block

FeatureVector extract_features(const SbfBinary& binary);

/// Same as extract_features on an already-serialized binary.
FeatureVector extract_features(const SbfBinary& binary, std::span<const std::uint8_t> serialized);

std::uint32_t fnv1a(std::string_view s);

}  // namespace evlab
