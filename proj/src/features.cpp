#include "evlab/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "evlab/corpus.hpp"

namespace evlab {

namespace {

namespace fb = feature_block;

double log_scale(double v, double max_log) { return std::min(1.0, std::log1p(v) / max_log); }

double printable_fraction(std::span<const std::uint8_t> data) {
  if (data.empty()) return 0.0;
  std::size_t n = 0;
  for (auto b : data) n += (b >= 0x20 && b < 0x7F) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(data.size());
}

}  // namespace

std::uint32_t fnv1a(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

FeatureVector extract_features(const SbfBinary& b) { return extract_features(b, serialize(b)); }

FeatureVector extract_features(const SbfBinary& b, std::span<const std::uint8_t> serialized) {
  FeatureVector fv;
  auto& v = fv.values;
  const auto body = serialized.subspan(std::min(kFixedHeaderSize, serialized.size()));

  // Byte histogram.
  if (!body.empty()) {
    for (auto byte : body) v[fb::kHistogram + (byte >> 2)] += 1.0;
    const double n = static_cast<double>(body.size());
    for (std::size_t i = fb::kHistogram; i < fb::kStrings; ++i) v[i] /= n;
  }

  for (const auto& s : visible_strings(b)) v[fb::kStrings + fnv1a(s) % 32] = 1.0;
  std::set<std::string_view> libraries;
  for (const auto& imp : b.imports) {
    v[fb::kImports + fnv1a(imp.library + "!" + imp.function) % 32] = 1.0;
    libraries.insert(imp.library);
  }

  // Sections.
  {
    double entropy_sum = 0.0, max_h = 0.0, min_h = 8.0, cave = 0.0, content = 0.0;
    int strings_sections = 0, data_sections = 0, dotted = 0;
    for (const auto& s : b.sections) {
      const double h = shannon_entropy(s.content());
      entropy_sum += h;
      max_h = std::max(max_h, h);
      min_h = std::min(min_h, h);
      cave += s.cave_size();
      content += s.content_length;
      strings_sections += s.has(kStrings) ? 1 : 0;
      data_sections += s.has(kData) ? 1 : 0;
      dotted += (!s.name.empty() && s.name[0] == '.') ? 1 : 0;
    }
    const double n = static_cast<double>(b.sections.size());
    const auto& payload = b.payload();
    auto* out = &v[fb::kSections];
    out[0] = std::min(1.0, n / 16.0);
    out[1] = entropy_sum / n / 8.0;
    out[2] = log_scale(cave, 16.0);
    out[3] = std::min(1.0, strings_sections / 8.0);
    out[4] = std::min(1.0, data_sections / 8.0);
    out[5] = shannon_entropy(payload.content()) / 8.0;
    out[6] = log_scale(payload.content_length, 20.0);
    out[7] = max_h / 8.0;
    out[8] = min_h / 8.0;
    out[9] = dotted / n;
    out[10] = log_scale(content, 20.0);
  }

  // Header.
  {
    auto* out = &v[fb::kHeader];
    switch (b.machine_type) {
      case 0x014c: out[0] = 1.0; break;
      case 0x8664: out[1] = 1.0; break;
      case 0x01c0: out[2] = 1.0; break;
      case 0xaa64: out[3] = 1.0; break;
      default: out[4] = 1.0; break;
    }
    const double u32max = 4294967295.0;
    out[5] = b.machine_type / 65535.0;
    out[6] = b.timestamp / u32max;
    for (std::size_t i = 0; i < 4; ++i) out[7 + i] = log_scale(b.optional_fields[i], std::log1p(u32max));
    out[11] = b.checksum != 0 ? 1.0 : 0.0;
    out[12] = log_scale(b.checksum, std::log1p(u32max));
    out[13] = b.packed ? 1.0 : 0.0;
    out[14] = b.debug_blob.empty() ? 0.0 : 1.0;
    out[15] = log_scale(static_cast<double>(b.debug_blob.size()), 16.0);
    out[16] = std::min(1.0, static_cast<double>(b.imports.size()) / 32.0);
    out[17] = std::min(1.0, static_cast<double>(libraries.size()) / 16.0);
    out[18] = (b.timestamp >= 1'000'000'000u && b.timestamp <= 1'700'000'000u) ? 1.0 : 0.0;
  }

  // Overlay and bigram summary.
  {
    auto* out = &v[fb::kOverlay];
    const double total = static_cast<double>(serialized.size());
    out[0] = log_scale(static_cast<double>(b.overlay.size()), 20.0);
    out[1] = total > 0 ? static_cast<double>(b.overlay.size()) / total : 0.0;
    out[2] = shannon_entropy(b.overlay) / 8.0;
    out[3] = printable_fraction(b.overlay);
    out[4] = log_scale(total, 20.0);
    out[5] = shannon_entropy(body) / 8.0;
    if (body.size() >= 2) {
      double* cells = &v[fb::kBigram];
      for (std::size_t i = 0; i + 1 < body.size(); ++i) cells[(body[i] >> 6) * 4 + (body[i + 1] >> 6)] += 1.0;
      const double pairs = static_cast<double>(body.size() - 1);
      for (std::size_t i = 0; i < 16; ++i) cells[i] /= pairs;
    }
  }
  return fv;
}

}  // namespace evlab
