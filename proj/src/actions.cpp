#include "evlab/actions.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "evlab/error.hpp"
#include "json.hpp"

namespace evlab {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "modify machine type",       "pad overlay",
    "append benign data overlay", "append benign binary overlay",
    "add bytes to section cave", "add section strings",
    "add section benign data",   "add strings to overlay",
    "add imports",               "rename section",
    "remove debug",              "modify optional header",
    "modify timestamp",          "break optional header checksum",
    "upx unpack",                "upx pack",
};

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%x", v);
  return buf;
}

template <typename T>
void subsample(std::vector<T>& items, std::size_t cap, Rng& rng) {
  if (items.size() <= cap) return;
  for (std::size_t i = 0; i < cap; ++i) std::swap(items[i], items[i + rng.below(items.size() - i)]);
  items.resize(cap);
}

template <typename T>
void dedupe_sorted(std::vector<T>& items) {
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
}

// Picks k donor strings, preferring a single randomly chosen source.
std::pair<std::string, std::vector<std::string>> pick_strings(const DonorDatabase& d, std::size_t k, Rng& rng) {
  const auto& anchor = rng.pick(d.strings);
  std::vector<std::string> out;
  for (const auto& s : d.strings)
    if (s.source == anchor.source && out.size() < k) out.push_back(s.text);
  while (out.size() < k) out.push_back(rng.pick(d.strings).text);
  return {anchor.source, out};
}

Section new_section(std::string name, std::uint8_t flags, Bytes content) {
  Section s;
  s.name = std::move(name);
  s.flags = flags;
  s.content_length = static_cast<std::uint32_t>(content.size());
  s.bytes = std::move(content);
  // Round the allocation up to 64 bytes; the remainder is a zeroed cave.
  s.bytes.resize((s.bytes.size() + 63) / 64 * 64, 0);
  return s;
}

}  // namespace

ActionId action_from_index(int index) {
  if (index < 0 || index >= kNumActions) throw std::out_of_range("action index " + std::to_string(index));
  return static_cast<ActionId>(index);
}

std::string_view action_name(ActionId a) { return kActionNames.at(static_cast<std::size_t>(index_of(a))); }

ActionOutcome apply_action(const SbfBinary& binary, ActionId action, const DonorDatabase& d, Rng& rng,
                           const ActionConfig& cfg) {
  ActionOutcome out;
  out.action = action;
  auto& detail = out.detail;
  SbfBinary b = binary;
  auto applied = [&]() -> ActionOutcome& {
    out.result = Applied{std::move(b)};
    return out;
  };
  auto rejected = [&](std::string reason) -> ActionOutcome& {
    detail.emplace_back("rejected", reason);
    out.result = Rejected{std::move(reason)};
    return out;
  };

  switch (action) {
    case ActionId::kModifyMachineType: {
      const auto old = b.machine_type;
      b.machine_type = rng.pick(d.machine_types);
      detail = {{"old_machine_type", hex32(old)}, {"machine_type", hex32(b.machine_type)}};
      return applied();
    }
    case ActionId::kPadOverlay: {
      const auto n = static_cast<std::size_t>(rng.range(cfg.pad_min, cfg.pad_max));
      for (std::size_t i = 0; i < n; ++i) b.overlay.push_back(static_cast<std::uint8_t>(rng.below(256)));
      detail = {{"bytes", std::to_string(n)}};
      return applied();
    }
    case ActionId::kAppendBenignDataOverlay: {
      const auto i = rng.below(d.data_blobs.size());
      const auto& blob = d.data_blobs[i];
      b.overlay.insert(b.overlay.end(), blob.begin(), blob.end());
      detail = {{"blob", std::to_string(i)}, {"bytes", std::to_string(blob.size())}};
      return applied();
    }
    case ActionId::kAppendBenignBinaryOverlay: {
      const auto i = rng.below(d.benign_binaries.size());
      const auto& donor = d.benign_binaries[i];
      b.overlay.insert(b.overlay.end(), donor.begin(), donor.end());
      detail = {{"donor_binary", std::to_string(i)}, {"bytes", std::to_string(donor.size())}};
      return applied();
    }
    case ActionId::kAddBytesToSectionCave: {
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < b.sections.size(); ++i)
        if (b.sections[i].cave_size() > 0) candidates.push_back(i);
      if (candidates.empty()) return rejected("no_cave");
      const auto si = rng.pick(candidates);
      auto& s = b.sections[si];
      const auto bi = rng.below(d.data_blobs.size());
      const auto& blob = d.data_blobs[bi];
      for (std::size_t k = s.content_length, j = 0; k < s.bytes.size(); ++k, ++j) s.bytes[k] = blob[j % blob.size()];
      detail = {{"section", s.name}, {"blob", std::to_string(bi)}, {"bytes", std::to_string(s.cave_size())}};
      return applied();
    }
    case ActionId::kAddSectionStrings: {
      const auto k = static_cast<std::size_t>(rng.range(cfg.strings_min, cfg.strings_max));
      auto [source, strings] = pick_strings(d, k, rng);
      Bytes content;
      for (const auto& s : strings) {
        content.insert(content.end(), s.begin(), s.end());
        content.push_back(0);
      }
      const auto& name = rng.pick(d.section_names);
      detail = {{"section", name}, {"source", source}, {"strings", std::to_string(strings.size())}};
      b.sections.push_back(new_section(name, kStrings, std::move(content)));
      return applied();
    }
    case ActionId::kAddSectionBenignData: {
      const auto bi = rng.below(d.data_blobs.size());
      const auto& name = rng.pick(d.section_names);
      detail = {{"section", name}, {"blob", std::to_string(bi)}, {"bytes", std::to_string(d.data_blobs[bi].size())}};
      b.sections.push_back(new_section(name, kData, d.data_blobs[bi]));
      return applied();
    }
    case ActionId::kAddStringsToOverlay: {
      const auto k = static_cast<std::size_t>(rng.range(cfg.strings_min, cfg.strings_max));
      auto [source, strings] = pick_strings(d, k, rng);
      std::size_t n = 0;
      for (const auto& s : strings) {
        b.overlay.insert(b.overlay.end(), s.begin(), s.end());
        b.overlay.push_back(0);
        n += s.size() + 1;
      }
      detail = {{"source", source}, {"strings", std::to_string(strings.size())}, {"bytes", std::to_string(n)}};
      return applied();
    }
    case ActionId::kAddImports: {
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < d.imports.size(); ++i)
        if (std::find(b.imports.begin(), b.imports.end(), d.imports[i]) == b.imports.end()) candidates.push_back(i);
      if (candidates.empty()) return rejected("exhausted");
      const auto& imp = d.imports[rng.pick(candidates)];
      b.imports.push_back(imp);
      detail = {{"import", imp.library + "!" + imp.function}, {"library", imp.library}};
      return applied();
    }
    case ActionId::kRenameSection: {
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < b.sections.size(); ++i)
        if (i != b.payload_index) candidates.push_back(i);
      if (candidates.empty()) return rejected("no_target");
      auto& s = b.sections[rng.pick(candidates)];
      const auto& name = rng.pick(d.section_names);
      detail = {{"old_name", s.name}, {"new_name", name}};
      s.name = name;
      return applied();
    }
    case ActionId::kRemoveDebug: {
      detail = {{"removed_bytes", std::to_string(b.debug_blob.size())}};
      b.debug_blob.clear();
      return applied();
    }
    case ActionId::kModifyOptionalHeader: {
      b.optional_fields = rng.pick(d.optional_field_sets);
      const auto& f = b.optional_fields;
      detail = {{"optional_fields",
                 std::to_string(f[0]) + "," + std::to_string(f[1]) + "," + std::to_string(f[2]) + "," + hex32(f[3])}};
      return applied();
    }
    case ActionId::kModifyTimestamp: {
      const auto old = b.timestamp;
      b.timestamp = rng.pick(d.timestamps);
      detail = {{"old_timestamp", std::to_string(old)}, {"timestamp", std::to_string(b.timestamp)}};
      return applied();
    }
    case ActionId::kBreakOptionalHeaderChecksum: {
      detail = {{"old_checksum", hex32(b.checksum)}};
      b.checksum = 0;
      return applied();
    }
    case ActionId::kUpxUnpack: {
      if (!b.packed) {
        detail = {{"corrupted", "unpack on unpacked binary"}};
        out.result = Corrupted{"unpack on unpacked binary"};
        return out;
      }
      try {
        b = unpack_payload(b);
      } catch (const CorruptPayload& e) {
        detail = {{"corrupted", "missing pack stub"}};
        out.result = Corrupted{e.what()};
        return out;
      }
      detail = {{"payload_bytes", std::to_string(b.payload().content_length)}};
      return applied();
    }
    case ActionId::kUpxPack: {
      if (b.packed) return rejected("already_packed");
      b = pack_payload(b);
      detail = {{"payload_bytes", std::to_string(b.payload().content_length)}};
      return applied();
    }
  }
  throw std::out_of_range("unknown action");
}

DonorDatabase build_donor_database(const std::vector<CorpusSample>& corpus, std::uint64_t seed,
                                   const DonorConfig& cfg) {
  if (corpus.empty()) throw EmptyCorpus("no benign samples");
  for (const auto& s : corpus)
    if (s.label != Label::kBenign) throw EmptyCorpus("malicious samples present in donor corpus");

  Rng rng(seed);
  DonorDatabase d;
  std::vector<Bytes> fallback_blobs;
  for (const auto& sample : corpus) {
    const auto& b = sample.binary;
    const auto source = sample_id(sample);
    for (std::size_t i = 0; i < b.sections.size(); ++i) {
      const auto& s = b.sections[i];
      if (!s.name.empty()) d.section_names.push_back(s.name);
      if (i == b.payload_index || s.content_length == 0) continue;
      Bytes content(s.content().begin(), s.content().end());
      (s.has(kData) ? d.data_blobs : fallback_blobs).push_back(std::move(content));
    }
    d.imports.insert(d.imports.end(), b.imports.begin(), b.imports.end());
    for (auto& text : visible_strings(b)) d.strings.push_back({source, std::move(text)});
    d.benign_binaries.push_back(serialize(b));
    d.machine_types.push_back(b.machine_type);
    d.timestamps.push_back(b.timestamp);
    d.optional_field_sets.push_back(b.optional_fields);
  }
  if (d.data_blobs.empty()) d.data_blobs = std::move(fallback_blobs);

  dedupe_sorted(d.section_names);
  dedupe_sorted(d.imports);
  dedupe_sorted(d.data_blobs);
  dedupe_sorted(d.benign_binaries);
  dedupe_sorted(d.machine_types);
  dedupe_sorted(d.timestamps);
  dedupe_sorted(d.optional_field_sets);
  std::sort(d.strings.begin(), d.strings.end(),
            [](const auto& a, const auto& b) { return std::tie(a.source, a.text) < std::tie(b.source, b.text); });
  d.strings.erase(std::unique(d.strings.begin(), d.strings.end()), d.strings.end());

  subsample(d.strings, cfg.max_strings, rng);
  subsample(d.data_blobs, cfg.max_blobs, rng);
  subsample(d.benign_binaries, cfg.max_binaries, rng);
  subsample(d.timestamps, cfg.max_timestamps, rng);

  if (d.section_names.empty()) throw EmptyCorpus("no section names");
  if (d.imports.empty()) throw EmptyCorpus("no imports");
  if (d.strings.empty()) throw EmptyCorpus("no strings");
  if (d.data_blobs.empty()) throw EmptyCorpus("no data blobs");
  return d;
}

std::string donors_to_json(const DonorDatabase& d) {
  json j;
  j["section_names"] = d.section_names;
  j["imports"] = json::array();
  for (const auto& imp : d.imports) j["imports"].push_back({imp.library, imp.function});
  j["strings"] = json::array();
  for (const auto& s : d.strings) j["strings"].push_back({s.source, s.text});
  j["data_blobs"] = json::array();
  for (const auto& blob : d.data_blobs) j["data_blobs"].push_back(to_hex(blob));
  j["benign_binaries"] = json::array();
  for (const auto& bin : d.benign_binaries) j["benign_binaries"].push_back(to_hex(bin));
  j["machine_types"] = d.machine_types;
  j["timestamps"] = d.timestamps;
  j["optional_field_sets"] = d.optional_field_sets;
  return j.dump(1);
}

DonorDatabase donors_from_json(const std::string& text) {
  try {
    auto j = json::parse(text);
    DonorDatabase d;
    d.section_names = j.at("section_names").get<std::vector<std::string>>();
    for (const auto& e : j.at("imports")) d.imports.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>()});
    for (const auto& e : j.at("strings")) d.strings.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>()});
    for (const auto& e : j.at("data_blobs")) d.data_blobs.push_back(from_hex(e.get<std::string>()));
    for (const auto& e : j.at("benign_binaries")) d.benign_binaries.push_back(from_hex(e.get<std::string>()));
    d.machine_types = j.at("machine_types").get<std::vector<std::uint16_t>>();
    d.timestamps = j.at("timestamps").get<std::vector<std::uint32_t>>();
    d.optional_field_sets = j.at("optional_field_sets").get<std::vector<std::array<std::uint32_t, 4>>>();
    if (d.section_names.empty() || d.imports.empty() || d.strings.empty() || d.data_blobs.empty() ||
        d.benign_binaries.empty() || d.machine_types.empty() || d.timestamps.empty() || d.optional_field_sets.empty())
      throw FormatError("donor database has an empty list");
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad donor database: ") + e.what());
  }
}

void save_donors(const std::filesystem::path& path, const DonorDatabase& d) {
  const auto text = donors_to_json(d);
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

DonorDatabase load_donors(const std::filesystem::path& path) {
  const auto raw = read_file(path);
  return donors_from_json(std::string(raw.begin(), raw.end()));
}

}  // namespace evlab
