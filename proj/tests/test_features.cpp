#include <gtest/gtest.h>

#include <cmath>

#include "evlab/actions.hpp"
#include "evlab/features.hpp"
#include "support.hpp"

using namespace evlab;
namespace fb = evlab::feature_block;

namespace {

// Independent histogram over the serialization minus the fixed header.
std::array<double, 64> body_histogram(const SbfBinary& b) {
  const auto bytes = serialize(b);
  std::array<double, 64> h{};
  const std::size_t n = bytes.size() - kFixedHeaderSize;
  for (std::size_t i = kFixedHeaderSize; i < bytes.size(); ++i) h[bytes[i] / 4] += 1.0 / static_cast<double>(n);
  return h;
}

}  // namespace

TEST(Features, AllValuesInUnitIntervalOnCorpusAndArbitraryBinaries) {
  for (const auto& s : generate_corpus(100, 100, 61)) {
    const auto fv = extract_features(s.binary);
    for (double x : fv.values) {
      ASSERT_TRUE(std::isfinite(x));
      ASSERT_GE(x, 0.0);
      ASSERT_LE(x, 1.0);
    }
  }
  Rng rng(62);
  for (int i = 0; i < 200; ++i) {
    const auto fv = extract_features(testkit::random_binary(rng));
    for (double x : fv.values) {
      ASSERT_GE(x, 0.0);
      ASSERT_LE(x, 1.0);
    }
  }
}

TEST(Features, HistogramBlockMatchesDirectCountAndSumsToOne) {
  for (const auto& s : generate_corpus(20, 20, 63)) {
    const auto fv = extract_features(s.binary);
    const auto h = body_histogram(s.binary);
    double total = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      EXPECT_NEAR(fv[fb::kHistogram + i], h[i], 1e-12);
      total += fv[fb::kHistogram + i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Features, EmptyOverlayHasZeroLength) {
  auto b = generate_sample(Label::kBenign, 5).binary;
  b.overlay.clear();
  EXPECT_EQ(extract_features(b)[fb::kOverlayLength], 0.0);
  b.overlay.assign(100, 1);
  EXPECT_GT(extract_features(b)[fb::kOverlayLength], 0.0);
}

TEST(Features, ChecksumBreakChangesOnlyHeaderBlock) {
  const auto donors = testkit::small_donors();
  for (const auto& s : generate_corpus(50, 0, 64)) {
    auto b = s.binary;
    b.checksum = 0x1234567;
    Rng rng(1);
    const auto after = std::get<Applied>(apply_action(b, ActionId::kBreakOptionalHeaderChecksum, *donors, rng).result);
    const auto f0 = extract_features(b);
    const auto f1 = extract_features(after.binary);
    bool header_changed = false;
    for (std::size_t i = 0; i < kFeatureDim; ++i) {
      const bool in_header = i >= fb::kHeader && i < fb::kOverlay;
      if (!in_header) {
        EXPECT_EQ(f0[i], f1[i]) << "feature " << i;
      }
      if (in_header && f0[i] != f1[i]) header_changed = true;
    }
    EXPECT_TRUE(header_changed);
  }
}

// Appending k bytes to a body of n bytes moves at most 2k / (n + k) of L1 mass.
TEST(Features, OverlayAppendBoundsHistogramShift) {
  Rng rng(65);
  for (const auto& s : generate_corpus(30, 30, 66)) {
    auto b = s.binary;
    const auto before = extract_features(b);
    const double n = static_cast<double>(serialize(b).size() - kFixedHeaderSize);
    const double k = 1024;
    const auto extra = testkit::random_bytes(rng, 1024);
    b.overlay.insert(b.overlay.end(), extra.begin(), extra.end());
    const auto after = extract_features(b);
    const auto direct = body_histogram(b);
    double l1 = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      l1 += std::abs(after[fb::kHistogram + i] - before[fb::kHistogram + i]);
      EXPECT_NEAR(after[fb::kHistogram + i], direct[i], 1e-12);
    }
    EXPECT_LE(l1, 2 * k / (n + k) + 1e-12);
    EXPECT_GT(l1, 0.0);
  }
}

TEST(Features, SerializedOverloadAgrees) {
  for (const auto& s : generate_corpus(10, 10, 67)) {
    const auto bytes = serialize(s.binary);
    EXPECT_EQ(extract_features(s.binary), extract_features(s.binary, bytes));
  }
}

TEST(Features, StringsAndImportsAreHashedIntoTheirBlocks) {
  SbfBinary b;
  Section p;
  p.flags = kPayload;
  b.sections.push_back(p);
  b.imports = {{"kernel32.dll", "CreateFileW"}};
  const std::string text = "unique_marker_text";
  b.overlay.assign(text.begin(), text.end());
  const auto fv = extract_features(b);
  EXPECT_EQ(fv[fb::kImports + fnv1a("kernel32.dll!CreateFileW") % 32], 1.0);
  EXPECT_EQ(fv[fb::kStrings + fnv1a(text) % 32], 1.0);
  double imports = 0, strings = 0;
  for (std::size_t i = 0; i < 32; ++i) {
    imports += fv[fb::kImports + i];
    strings += fv[fb::kStrings + i];
  }
  EXPECT_EQ(imports, 1.0);
  EXPECT_EQ(strings, 1.0);
  EXPECT_EQ(fnv1a(""), 2166136261u);
  EXPECT_EQ(fnv1a("a"), 0xe40c292cu);
}

TEST(Features, Deterministic) {
  const auto b = generate_sample(Label::kMalicious, 99).binary;
  EXPECT_EQ(extract_features(b), extract_features(b));
}
