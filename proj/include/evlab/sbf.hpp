#pragma once

// Synthetic binary format (SBF): a small PE-like container with a header,
// an import table, a section table and an overlay. Everything that the
// evasion actions touch lives here.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evlab {

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

enum SectionFlag : std::uint8_t {
  kPayload = 0x01,
  kData = 0x02,
  kStrings = 0x04,
};
inline constexpr std::uint8_t kKnownSectionFlags = kPayload | kData | kStrings;

struct Section {
  std::string name;  // at most 8 bytes, no NUL
  std::uint8_t flags = 0;
  std::uint32_t content_length = 0;
  Bytes bytes;  // size() is the allocated length

  std::uint32_t allocated_length() const { return static_cast<std::uint32_t>(bytes.size()); }
  std::uint32_t cave_size() const { return allocated_length() - content_length; }
  std::span<const std::uint8_t> content() const { return {bytes.data(), content_length}; }
  bool has(SectionFlag f) const { return (flags & f) != 0; }

  bool operator==(const Section&) const = default;
};

struct ImportEntry {
  std::string library;
  std::string function;

  bool operator==(const ImportEntry&) const = default;
  auto operator<=>(const ImportEntry&) const = default;
};

struct SbfBinary {
  std::uint16_t machine_type = 0;
  std::uint32_t timestamp = 0;
  std::array<std::uint32_t, 4> optional_fields{};
  std::uint32_t checksum = 0;
  Bytes debug_blob;
  std::vector<ImportEntry> imports;
  std::vector<Section> sections;
  Bytes overlay;
  std::uint16_t payload_index = 0;
  bool packed = false;

  const Section& payload() const { return sections.at(payload_index); }
  Section& payload() { return sections.at(payload_index); }

  bool operator==(const SbfBinary&) const = default;
};

inline constexpr std::array<std::uint8_t, 4> kSbfMagic = {'S', 'B', 'F', '1'};
inline constexpr std::array<std::uint8_t, 4> kPackStub = {'P', 'C', 'K', '0'};
inline constexpr std::uint8_t kPackShift = 0x5A;

// magic, machine u16, timestamp u32, 4 x u32 optional, checksum u32, packed u8,
// payload_index u16, counts u16 x 3, debug length u32
inline constexpr std::size_t kFixedHeaderSize = 4 + 2 + 4 + 16 + 4 + 1 + 2 + 6 + 4;
// name[8], flags u8, content_length u32, allocated_length u32
inline constexpr std::size_t kSectionRecordHeaderSize = 8 + 1 + 4 + 4;

/// Throws MalformedBinary describing the first violated invariant.
void validate(const SbfBinary& binary);

Bytes serialize(const SbfBinary& binary);

/// Inverse of serialize. Rejects every byte string outside its image.
SbfBinary parse(std::span<const std::uint8_t> data);

/// SHA-256 of the logically unpacked payload content. Throws CorruptPayload
/// when the packed flag is set and the stub is missing.
Digest behavioral_digest(const SbfBinary& binary);

/// Logical payload content after undoing the pack transform.
Bytes unpacked_payload(const SbfBinary& binary);

/// Apply / undo the reversible pack transform. pack_payload requires an
/// unpacked binary; unpack_payload requires a packed one carrying the stub.
/// Both throw CorruptPayload on misuse.
SbfBinary pack_payload(const SbfBinary& binary);
SbfBinary unpack_payload(const SbfBinary& binary);

Digest sha256(std::span<const std::uint8_t> data);
std::string to_hex(std::span<const std::uint8_t> data);
Bytes from_hex(std::string_view hex);

/// Shannon entropy in bits per byte (0 for empty input).
double shannon_entropy(std::span<const std::uint8_t> data);

}  // namespace evlab
