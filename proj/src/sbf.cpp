#include "evlab/sbf.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "evlab/byte_io.hpp"
#include "evlab/error.hpp"

namespace evlab {

namespace {

constexpr std::size_t kNameWidth = 8;

void check(bool ok, const std::string& what) {
  if (!ok) throw MalformedBinary(what);
}

std::string decode_name(std::span<const std::uint8_t> raw) {
  std::size_t len = 0;
  while (len < raw.size() && raw[len] != 0) ++len;
  for (std::size_t i = len; i < raw.size(); ++i) check(raw[i] == 0, "section name has bytes after NUL padding");
  return {raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(len)};
}

}  // namespace

void validate(const SbfBinary& b) {
  check(!b.sections.empty(), "no sections");
  check(b.sections.size() <= UINT16_MAX, "too many sections");
  check(b.imports.size() <= UINT16_MAX, "too many imports");
  check(b.debug_blob.size() <= UINT32_MAX, "debug blob too large");
  check(b.payload_index < b.sections.size(), "payload_index out of range");

  std::set<std::pair<std::string_view, std::string_view>> seen;
  for (const auto& imp : b.imports) {
    check(!imp.library.empty() && !imp.function.empty(), "empty import name");
    check(imp.library.size() <= UINT16_MAX && imp.function.size() <= UINT16_MAX, "import name too long");
    check(seen.emplace(imp.library, imp.function).second, "duplicate import " + imp.library + "!" + imp.function);
  }

  for (std::size_t i = 0; i < b.sections.size(); ++i) {
    const auto& s = b.sections[i];
    check(s.name.size() <= kNameWidth, "section name longer than 8 bytes");
    check(s.name.find('\0') == std::string::npos, "section name contains NUL");
    check((s.flags & ~kKnownSectionFlags) == 0, "unknown section flag bits");
    check(s.has(kPayload) == (i == b.payload_index), "PAYLOAD flag must mark exactly the payload section");
    check(s.bytes.size() <= UINT32_MAX, "section too large");
    check(s.content_length <= s.allocated_length(), "content_length > allocated_length");
  }
}

Bytes serialize(const SbfBinary& b) {
  validate(b);
  ByteWriter w;
  w.bytes(kSbfMagic);
  w.u16(b.machine_type);
  w.u32(b.timestamp);
  for (auto f : b.optional_fields) w.u32(f);
  w.u32(b.checksum);
  w.u8(b.packed ? 1 : 0);
  w.u16(b.payload_index);
  w.u16(static_cast<std::uint16_t>(b.imports.size()));
  w.u16(static_cast<std::uint16_t>(b.sections.size()));
  w.u16(0);  // reserved
  w.u32(static_cast<std::uint32_t>(b.debug_blob.size()));
  w.bytes(b.debug_blob);
  for (const auto& imp : b.imports) {
    w.u16(static_cast<std::uint16_t>(imp.library.size()));
    w.raw(imp.library);
    w.u16(static_cast<std::uint16_t>(imp.function.size()));
    w.raw(imp.function);
  }
  for (const auto& s : b.sections) {
    std::array<std::uint8_t, kNameWidth> name{};
    std::copy(s.name.begin(), s.name.end(), name.begin());
    w.bytes(name);
    w.u8(s.flags);
    w.u32(s.content_length);
    w.u32(s.allocated_length());
    w.bytes(s.bytes);
  }
  w.bytes(b.overlay);
  return w.take();
}

SbfBinary parse(std::span<const std::uint8_t> data) {
  SbfBinary b;
  try {
    ByteReader r(data);
    auto magic = r.bytes(4);
    check(std::equal(magic.begin(), magic.end(), kSbfMagic.begin()), "bad magic");
    b.machine_type = r.u16();
    b.timestamp = r.u32();
    for (auto& f : b.optional_fields) f = r.u32();
    b.checksum = r.u32();
    const auto packed = r.u8();
    check(packed <= 1, "packed flag not 0/1");
    b.packed = packed == 1;
    b.payload_index = r.u16();
    const auto n_imports = r.u16();
    const auto n_sections = r.u16();
    check(r.u16() == 0, "reserved count field is nonzero");
    const auto debug_len = r.u32();
    auto debug = r.bytes(debug_len);
    b.debug_blob.assign(debug.begin(), debug.end());

    b.imports.reserve(n_imports);
    for (std::size_t i = 0; i < n_imports; ++i) {
      ImportEntry imp;
      imp.library = r.str(r.u16());
      imp.function = r.str(r.u16());
      b.imports.push_back(std::move(imp));
    }
    b.sections.reserve(n_sections);
    for (std::size_t i = 0; i < n_sections; ++i) {
      Section s;
      s.name = decode_name(r.bytes(kNameWidth));
      s.flags = r.u8();
      s.content_length = r.u32();
      const auto allocated = r.u32();
      check(s.content_length <= allocated, "content_length > allocated_length");
      auto body = r.bytes(allocated);
      s.bytes.assign(body.begin(), body.end());
      b.sections.push_back(std::move(s));
    }
    auto overlay = r.rest();
    b.overlay.assign(overlay.begin(), overlay.end());
  } catch (const FormatError&) {
    throw MalformedBinary("truncated record");
  }
  validate(b);
  return b;
}

Bytes unpacked_payload(const SbfBinary& b) {
  auto content = b.payload().content();
  if (!b.packed) return {content.begin(), content.end()};
  if (content.size() < kPackStub.size() || !std::equal(kPackStub.begin(), kPackStub.end(), content.begin()))
    throw CorruptPayload("packed flag set but payload lacks the PCK0 stub");
  Bytes out(content.begin() + kPackStub.size(), content.end());
  for (auto& byte : out) byte = static_cast<std::uint8_t>(byte - kPackShift);
  return out;
}

Digest behavioral_digest(const SbfBinary& b) { return sha256(unpacked_payload(b)); }

SbfBinary pack_payload(const SbfBinary& b) {
  if (b.packed) throw CorruptPayload("payload already packed");
  SbfBinary out = b;
  auto& p = out.payload();
  const auto& old = b.payload();
  Bytes bytes(kPackStub.begin(), kPackStub.end());
  bytes.reserve(old.bytes.size() + kPackStub.size());
  for (auto byte : old.content()) bytes.push_back(static_cast<std::uint8_t>(byte + kPackShift));
  bytes.insert(bytes.end(), old.bytes.begin() + old.content_length, old.bytes.end());
  p.bytes = std::move(bytes);
  p.content_length = old.content_length + static_cast<std::uint32_t>(kPackStub.size());
  out.packed = true;
  return out;
}

SbfBinary unpack_payload(const SbfBinary& b) {
  if (!b.packed) throw CorruptPayload("payload is not packed");
  Bytes logical = unpacked_payload(b);
  SbfBinary out = b;
  auto& p = out.payload();
  const auto& old = b.payload();
  Bytes bytes = logical;
  bytes.insert(bytes.end(), old.bytes.begin() + old.content_length, old.bytes.end());
  p.bytes = std::move(bytes);
  p.content_length = static_cast<std::uint32_t>(logical.size());
  out.packed = false;
  return out;
}

Digest sha256(std::span<const std::uint8_t> data) {
  Digest d{};
  SHA256(data.data(), data.size(), d.data());
  return d;
}

std::string to_hex(std::span<const std::uint8_t> data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (auto b : data) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw FormatError("odd-length hex string");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw FormatError("invalid hex digit");
  };
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return out;
}

double shannon_entropy(std::span<const std::uint8_t> data) {
  if (data.empty()) return 0.0;
  std::array<std::size_t, 256> counts{};
  for (auto b : data) ++counts[b];
  double h = 0.0;
  const double n = static_cast<double>(data.size());
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace evlab
