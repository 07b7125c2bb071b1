#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evlab/sbf.hpp"

namespace evlab {

enum class Label : std::uint8_t { kBenign = 0, kMalicious = 1 };

std::string to_string(Label label);
Label label_from_string(const std::string& s);

struct CorpusSample {
  SbfBinary binary;
  Label label = Label::kBenign;
  std::uint64_t family_seed = 0;

  bool operator==(const CorpusSample&) const = default;
};

/// Stable display id, "sample-" followed by the 16-digit hex family seed.
std::string sample_id(const CorpusSample& sample);

/// Distribution knobs for the synthetic corpus. The defaults are a free choice
/// tuned so that the surrogate detectors separate the classes well while no
/// single header field does.
struct GeneratorConfig {
  double malicious_low_entropy_rate = 0.06;
  double benign_high_entropy_rate = 0.04;
  double malicious_packed_rate = 0.25;
  double benign_packed_rate = 0.05;
  int min_sections = 2;
  int max_sections = 6;
  int min_marker_strings = 3;
  int max_marker_strings = 8;
  int min_malicious_imports = 2;
  int max_malicious_imports = 5;
};

/// Deterministic in (counts, seed, config). Malicious samples come first.
std::vector<CorpusSample> generate_corpus(int count_malicious, int count_benign, std::uint64_t seed,
                                          const GeneratorConfig& config = {});

/// One sample as a pure function of its family seed and label.
CorpusSample generate_sample(Label label, std::uint64_t family_seed, const GeneratorConfig& config = {});

// Fixed vocabularies shared by the generator and by tests.
const std::vector<std::string>& malicious_marker_strings();
const std::vector<ImportEntry>& malicious_imports();
const std::vector<ImportEntry>& benign_imports();
const std::vector<std::string>& benign_string_pool();

/// Printable ASCII runs of at least min_length bytes.
std::vector<std::string> extract_strings(std::span<const std::uint8_t> data, std::size_t min_length = 6);

/// Strings visible to static analysis: every non-payload section, the debug
/// blob and the overlay.
std::vector<std::string> visible_strings(const SbfBinary& binary);

// Manifest: JSON lines, one object per sample: {"path","label","family_seed","split"}.
struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  Label label = Label::kBenign;
  std::uint64_t family_seed = 0;
  std::string split;

  bool operator==(const ManifestEntry&) const = default;
};

std::string manifest_line(const ManifestEntry& entry);
ManifestEntry parse_manifest_line(const std::string& line);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Loads every sample of a split (all splits when split is empty).
std::vector<CorpusSample> load_split(const std::filesystem::path& manifest, const std::string& split);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace evlab
