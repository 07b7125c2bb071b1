#include "evlab/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"

#include "evlab/error.hpp"
#include "evlab/rng.hpp"

namespace evlab {

namespace {

using nlohmann::json;

struct MachineWeight {
  std::uint16_t code;
  double benign;
  double malicious;
};

// i386, AMD64, ARM, ARM64
constexpr MachineWeight kMachines[] = {
    {0x014c, 0.50, 0.78},
    {0x8664, 0.45, 0.19},
    {0x01c0, 0.02, 0.02},
    {0xaa64, 0.03, 0.01},
};

const std::vector<std::string> kBenignSectionNames = {".text", ".data", ".rdata", ".rsrc", ".reloc",
                                                      ".idata", ".pdata", ".tls",  ".bss",  ".CRT"};
const std::vector<std::string> kOddSectionNames = {"UPX0", "UPX1", ".xyz", ".crt1", "abc", ".vmp0", ".enigma", "_x"};

const std::vector<std::string> kSourceNames = {"setup_helper", "vsixinstaller", "notepad_plus", "updater",
                                               "imageviewer", "spreadsheet",   "mediaplayer",  "fontcache",
                                               "printspool", "archiver",      "calc_tool",    "readme_view"};

// Short byte idioms used to synthesize low-entropy, code-like payloads.
const std::vector<Bytes> kCodeTokens = {
    {0x55, 0x8B, 0xEC},       {0x89, 0x45, 0xFC}, {0x8B, 0x45, 0x08}, {0xC3},
    {0x00, 0x00, 0x00, 0x00}, {0x6A, 0x00},       {0xE8, 0x10, 0x00, 0x00, 0x00},
    {0x83, 0xC4, 0x04},       {0x5D},             {0x90, 0x90},       {0x33, 0xC0},
    {0x74, 0x05},             {0x85, 0xC0},       {0x50},             {0x51},
    {0xFF, 0x15},             {0x48, 0x89, 0x5C, 0x24}, {0x48, 0x83, 0xEC, 0x28},
    {0xCC, 0xCC, 0xCC, 0xCC}, {0x0F, 0x1F, 0x44, 0x00, 0x00},
};

double pick_weighted(Rng& rng, std::span<const double> weights, std::size_t& index) {
  double total = 0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (index = 0; index + 1 < weights.size(); ++index) {
    if (u < weights[index]) break;
    u -= weights[index];
  }
  return weights[index];
}

Bytes random_bytes(Rng& rng, std::size_t n) {
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng.below(256));
  return out;
}

Bytes structured_bytes(Rng& rng, std::size_t n) {
  Bytes out;
  out.reserve(n + 8);
  std::size_t prev = rng.below(kCodeTokens.size());
  while (out.size() < n) {
    // Sticky token choice keeps the entropy well below random.
    if (!rng.chance(0.35)) prev = rng.below(kCodeTokens.size());
    const auto& tok = kCodeTokens[prev];
    out.insert(out.end(), tok.begin(), tok.end());
  }
  out.resize(n);
  return out;
}

Bytes text_bytes(const std::vector<std::string>& strings) {
  Bytes out;
  for (const auto& s : strings) {
    out.insert(out.end(), s.begin(), s.end());
    out.push_back(0);
  }
  return out;
}

Section make_section(std::string name, std::uint8_t flags, Bytes content, std::uint32_t cave, Rng& rng, bool zero_cave) {
  Section s;
  s.name = std::move(name);
  s.flags = flags;
  s.content_length = static_cast<std::uint32_t>(content.size());
  s.bytes = std::move(content);
  Bytes slack = zero_cave ? Bytes(cave, 0) : random_bytes(rng, cave);
  s.bytes.insert(s.bytes.end(), slack.begin(), slack.end());
  return s;
}

template <typename T>
std::vector<T> sample_distinct(Rng& rng, const std::vector<T>& pool, std::size_t k) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  k = std::min(k, idx.size());
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  std::vector<T> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(pool[idx[i]]);
  return out;
}

std::vector<ImportEntry> common_imports() {
  return {{"kernel32.dll", "GetModuleHandleA"}, {"kernel32.dll", "ExitProcess"}, {"kernel32.dll", "GetLastError"},
          {"kernel32.dll", "CloseHandle"},      {"kernel32.dll", "CreateFileW"}, {"kernel32.dll", "ReadFile"},
          {"kernel32.dll", "GetProcAddress"},   {"kernel32.dll", "LoadLibraryA"}};
}

}  // namespace

std::string to_string(Label label) { return label == Label::kMalicious ? "malicious" : "benign"; }

Label label_from_string(const std::string& s) {
  if (s == "malicious") return Label::kMalicious;
  if (s == "benign") return Label::kBenign;
  throw FormatError("unknown label '" + s + "'");
}

const std::vector<std::string>& malicious_marker_strings() {
  static const std::vector<std::string> kMarkers = {
      "stage2_loader_cfg", "keylog_buffer_v2",  "beacon_interval=",  "ransom_note.txt",  "encrypt_all_volumes",
      "disable_av_hook",   "inject_target=%s",  "persist_runkey",    "exfil_channel_id", "bot_id=%08x",
      "hidden_miner_pool", "wipe_shadow_store", "dropper_unpack_ok", "sandbox_check_fail", "c2_fallback_host",
      "credential_dump",
  };
  return kMarkers;
}

const std::vector<ImportEntry>& malicious_imports() {
  static const std::vector<ImportEntry> kImports = {
      {"kernel32.dll", "VirtualAllocEx"},   {"kernel32.dll", "WriteProcessMemory"},
      {"kernel32.dll", "CreateRemoteThread"}, {"kernel32.dll", "IsDebuggerPresent"},
      {"advapi32.dll", "CryptEncrypt"},     {"advapi32.dll", "RegSetValueExA"},
      {"ws2_32.dll", "connect"},            {"wininet.dll", "InternetOpenUrlA"},
      {"ntdll.dll", "NtUnmapViewOfSection"}, {"user32.dll", "SetWindowsHookExA"},
      {"urlmon.dll", "URLDownloadToFileA"}, {"advapi32.dll", "AdjustTokenPrivileges"},
  };
  return kImports;
}

const std::vector<ImportEntry>& benign_imports() {
  static const std::vector<ImportEntry> kImports = [] {
    const std::vector<std::pair<std::string, std::vector<std::string>>> libs = {
        {"user32.dll", {"MessageBoxW", "CreateWindowExW", "DefWindowProcW", "GetMessageW", "DispatchMessageW",
                        "LoadIconW", "ShowWindow", "UpdateWindow"}},
        {"gdi32.dll", {"BitBlt", "CreateFontW", "SelectObject", "DeleteObject", "TextOutW"}},
        {"msvcr120.dll", {"malloc", "free", "memcpy", "strlen", "printf"}},
        {"comctl32.dll", {"InitCommonControlsEx", "ImageList_Create"}},
        {"shell32.dll", {"ShellExecuteW", "SHGetFolderPathW"}},
        {"ole32.dll", {"CoInitializeEx", "CoCreateInstance", "CoUninitialize"}},
        {"rpcrt4.dll", {"UuidCreate", "RpcStringFreeW"}},
        {"version.dll", {"GetFileVersionInfoW", "VerQueryValueW"}},
        {"comdlg32.dll", {"GetOpenFileNameW", "GetSaveFileNameW"}},
        {"shlwapi.dll", {"PathFileExistsW", "StrCmpIW"}},
        {"winmm.dll", {"PlaySoundW", "timeGetTime"}},
        {"kernel32.dll", {"GetSystemTimeAsFileTime", "QueryPerformanceCounter", "Sleep", "GetCommandLineW",
                          "HeapAlloc", "HeapFree", "MultiByteToWideChar"}},
    };
    std::vector<ImportEntry> out;
    for (const auto& [lib, fns] : libs)
      for (const auto& fn : fns) out.push_back({lib, fn});
    return out;
  }();
  return kImports;
}

const std::vector<std::string>& benign_string_pool() {
  static const std::vector<std::string> kPool = [] {
    const std::vector<std::string> verbs = {"Open", "Save", "Close", "Print", "Export", "Import", "Load", "Update"};
    const std::vector<std::string> nouns = {"Document", "Settings", "Window", "Toolbar", "Profile",
                                            "Picture", "Playlist", "Template", "Archive", "Preferences"};
    std::vector<std::string> out = {
        "This program requires Windows", "Copyright (C) Contoso Ltd.", "Microsoft Visual C++ Runtime Library",
        "Unable to open file %s",        "An unexpected error occurred", "Version %d.%d.%d",
        "FileDescription",               "ProductVersion",              "OriginalFilename",
        "CompanyName",                   "LegalCopyright",              "InternalName",
        "Software\\Contoso\\Settings",   "application/octet-stream",     "Arial Unicode MS",
        "Segoe UI Semibold",             "Are you sure you want to quit?", "Check for updates",
    };
    for (const auto& v : verbs)
      for (const auto& n : nouns) out.push_back(v + " " + n);
    return out;
  }();
  return kPool;
}

std::string sample_id(const CorpusSample& s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample-%016llx", static_cast<unsigned long long>(s.family_seed));
  return buf;
}

CorpusSample generate_sample(Label label, std::uint64_t family_seed, const GeneratorConfig& cfg) {
  Rng rng(family_seed);
  const bool mal = label == Label::kMalicious;
  SbfBinary b;

  std::vector<double> weights;
  for (const auto& m : kMachines) weights.push_back(mal ? m.malicious : m.benign);
  std::size_t mi = 0;
  pick_weighted(rng, weights, mi);
  b.machine_type = kMachines[mi].code;

  if (!mal || rng.chance(0.6)) {
    b.timestamp = static_cast<std::uint32_t>(rng.range(mal ? 1'450'000'000 : 1'100'000'000, 1'700'000'000));
  } else if (rng.chance(0.5)) {
    b.timestamp = static_cast<std::uint32_t>(rng.range(0, 1'000'000));
  } else {
    b.timestamp = static_cast<std::uint32_t>(rng.range(1'700'000'000, UINT32_MAX));
  }

  if (!mal || rng.chance(0.5)) {
    // linker version, os version, subsystem, dll characteristics
    b.optional_fields = {static_cast<std::uint32_t>(rng.range(9, 14)), static_cast<std::uint32_t>(rng.range(5, 10)),
                         static_cast<std::uint32_t>(rng.range(2, 3)), rng.chance(0.8) ? 0x8160u : 0x0140u};
  } else {
    for (auto& f : b.optional_fields) f = static_cast<std::uint32_t>(rng.below(0x10000));
  }

  if (mal) {
    b.checksum = rng.chance(0.75) ? 0 : static_cast<std::uint32_t>(rng.next_u64());
  } else {
    b.checksum = rng.chance(0.35) ? 0 : static_cast<std::uint32_t>(rng.range(0x1000, 0x01000000));
  }

  if (rng.chance(mal ? 0.25 : 0.7)) {
    std::string pdb = "RSDS";
    Bytes guid = random_bytes(rng, 16);
    pdb.append(guid.begin(), guid.end());
    pdb += "C:\\build\\" + rng.pick(kSourceNames) + "\\Release\\" + rng.pick(kSourceNames) + ".pdb";
    b.debug_blob.assign(pdb.begin(), pdb.end());
  }

  // Imports
  auto common = common_imports();
  auto imports = sample_distinct(rng, common, static_cast<std::size_t>(rng.range(1, 4)));
  if (mal) {
    auto bad = sample_distinct(rng, malicious_imports(),
                               static_cast<std::size_t>(rng.range(cfg.min_malicious_imports, cfg.max_malicious_imports)));
    imports.insert(imports.end(), bad.begin(), bad.end());
    auto good = sample_distinct(rng, benign_imports(), static_cast<std::size_t>(rng.range(0, 3)));
    imports.insert(imports.end(), good.begin(), good.end());
  } else {
    auto good = sample_distinct(rng, benign_imports(), static_cast<std::size_t>(rng.range(3, 10)));
    imports.insert(imports.end(), good.begin(), good.end());
  }
  std::sort(imports.begin(), imports.end());
  imports.erase(std::unique(imports.begin(), imports.end()), imports.end());
  // Keep a shuffled order; import order is not a class signal.
  for (std::size_t i = imports.size(); i > 1; --i) std::swap(imports[i - 1], imports[rng.below(i)]);
  b.imports = std::move(imports);

  // Strings
  std::vector<std::string> strings = sample_distinct(rng, benign_string_pool(),
                                                     static_cast<std::size_t>(mal ? rng.range(2, 8) : rng.range(6, 24)));
  if (mal) {
    auto markers = sample_distinct(rng, malicious_marker_strings(),
                                   static_cast<std::size_t>(rng.range(cfg.min_marker_strings, cfg.max_marker_strings)));
    strings.insert(strings.end(), markers.begin(), markers.end());
    for (std::size_t i = strings.size(); i > 1; --i) std::swap(strings[i - 1], strings[rng.below(i)]);
  }

  // Sections: payload first in generation order, then shuffled placement.
  const bool high_entropy = mal ? !rng.chance(cfg.malicious_low_entropy_rate) : rng.chance(cfg.benign_high_entropy_rate);
  const auto payload_len = static_cast<std::size_t>(rng.range(512, 4096));
  Bytes payload = high_entropy ? random_bytes(rng, payload_len) : structured_bytes(rng, payload_len);
  auto cave = [&] { return static_cast<std::uint32_t>(rng.chance(0.3) ? 0 : rng.range(1, 32) * 16); };

  const std::string payload_name = mal && rng.chance(0.35) ? rng.pick(kOddSectionNames) : ".text";
  std::vector<Section> sections;
  sections.push_back(make_section(payload_name, kPayload, std::move(payload), cave(), rng, true));
  sections.push_back(make_section(".rdata", kStrings, text_bytes(strings), cave(), rng, true));

  const int n_sections = static_cast<int>(rng.range(cfg.min_sections, cfg.max_sections));
  for (int i = 2; i < n_sections; ++i) {
    std::string name = mal && rng.chance(0.3) ? rng.pick(kOddSectionNames) : rng.pick(kBenignSectionNames);
    const auto len = static_cast<std::size_t>(rng.range(64, 1024));
    const bool noisy = mal ? rng.chance(0.6) : rng.chance(0.1);
    Bytes content = noisy ? random_bytes(rng, len) : structured_bytes(rng, len);
    sections.push_back(make_section(std::move(name), kData, std::move(content), cave(), rng, !mal));
  }
  // Payload position varies.
  const std::size_t payload_pos = rng.below(sections.size() - 1);
  if (payload_pos > 0) std::rotate(sections.begin(), sections.begin() + 1, sections.begin() + 1 + static_cast<std::ptrdiff_t>(payload_pos));
  b.sections = std::move(sections);
  b.payload_index = static_cast<std::uint16_t>(payload_pos);

  if (rng.chance(mal ? 0.5 : 0.4)) {
    const auto n = static_cast<std::size_t>(rng.range(16, mal ? 2048 : 1024));
    b.overlay = mal ? random_bytes(rng, n) : (rng.chance(0.5) ? Bytes(n, 0) : structured_bytes(rng, n));
  }

  if (rng.chance(mal ? cfg.malicious_packed_rate : cfg.benign_packed_rate)) b = pack_payload(b);

  validate(b);
  return {std::move(b), label, family_seed};
}

std::vector<CorpusSample> generate_corpus(int count_malicious, int count_benign, std::uint64_t seed,
                                          const GeneratorConfig& cfg) {
  std::vector<CorpusSample> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count_malicious) + std::max(0, count_benign)));
  for (int i = 0; i < count_malicious; ++i)
    out.push_back(generate_sample(Label::kMalicious, mix_seed(seed, 2 * static_cast<std::uint64_t>(i)), cfg));
  for (int i = 0; i < count_benign; ++i)
    out.push_back(generate_sample(Label::kBenign, mix_seed(seed, 2 * static_cast<std::uint64_t>(i) + 1), cfg));
  return out;
}

std::vector<std::string> extract_strings(std::span<const std::uint8_t> data, std::size_t min_length) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= min_length) out.push_back(cur);
    cur.clear();
  };
  for (auto byte : data) {
    if (byte >= 0x20 && byte < 0x7F) {
      cur.push_back(static_cast<char>(byte));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::vector<std::string> visible_strings(const SbfBinary& b) {
  std::vector<std::string> out;
  auto add = [&](std::span<const std::uint8_t> d) {
    auto s = extract_strings(d);
    out.insert(out.end(), s.begin(), s.end());
  };
  for (std::size_t i = 0; i < b.sections.size(); ++i)
    if (i != b.payload_index) add(b.sections[i].content());
  add(b.debug_blob);
  add(b.overlay);
  return out;
}

std::string manifest_line(const ManifestEntry& e) {
  json j = {{"path", e.path}, {"label", to_string(e.label)}, {"family_seed", e.family_seed}, {"split", e.split}};
  return j.dump();
}

ManifestEntry parse_manifest_line(const std::string& line) {
  try {
    auto j = json::parse(line);
    return {j.at("path").get<std::string>(), label_from_string(j.at("label").get<std::string>()),
            j.at("family_seed").get<std::uint64_t>(), j.value("split", std::string{})};
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest line: ") + e.what());
  }
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) text += manifest_line(e) + "\n";
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_manifest_line(line));
  }
  return out;
}

std::vector<CorpusSample> load_split(const std::filesystem::path& manifest, const std::string& split) {
  const auto base = manifest.parent_path();
  std::vector<CorpusSample> out;
  for (const auto& e : read_manifest(manifest)) {
    if (!split.empty() && e.split != split) continue;
    out.push_back({parse(read_file(base / e.path)), e.label, e.family_seed});
  }
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace evlab
