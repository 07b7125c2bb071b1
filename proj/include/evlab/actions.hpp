#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "evlab/corpus.hpp"
#include "evlab/rng.hpp"
#include "evlab/sbf.hpp"

namespace evlab {

enum class ActionId : std::uint8_t {
  kModifyMachineType = 0,
  kPadOverlay = 1,
  kAppendBenignDataOverlay = 2,
  kAppendBenignBinaryOverlay = 3,
  kAddBytesToSectionCave = 4,
  kAddSectionStrings = 5,
  kAddSectionBenignData = 6,
  kAddStringsToOverlay = 7,
  kAddImports = 8,
  kRenameSection = 9,
  kRemoveDebug = 10,
  kModifyOptionalHeader = 11,
  kModifyTimestamp = 12,
  kBreakOptionalHeaderChecksum = 13,
  kUpxUnpack = 14,
  kUpxPack = 15,
};

inline constexpr int kNumActions = 16;

constexpr int index_of(ActionId a) { return static_cast<int>(a); }
/// Throws std::out_of_range outside [0, 16).
ActionId action_from_index(int index);
std::string_view action_name(ActionId a);

struct DonorDatabase {
  struct SourcedString {
    std::string source;
    std::string text;
    bool operator==(const SourcedString&) const = default;
  };

  std::vector<std::string> section_names;
  std::vector<ImportEntry> imports;
  std::vector<SourcedString> strings;
  std::vector<Bytes> data_blobs;
  std::vector<Bytes> benign_binaries;  // serialized SbfBinary
  std::vector<std::uint16_t> machine_types;
  std::vector<std::uint32_t> timestamps;
  std::vector<std::array<std::uint32_t, 4>> optional_field_sets;

  bool operator==(const DonorDatabase&) const = default;
};

struct DonorConfig {
  std::size_t max_strings = 2048;
  std::size_t max_blobs = 512;
  std::size_t max_binaries = 64;
  std::size_t max_timestamps = 1024;
};

/// Throws EmptyCorpus for an empty corpus, a corpus containing malicious
/// samples, or one that yields an empty donor list.
DonorDatabase build_donor_database(const std::vector<CorpusSample>& benign_corpus, std::uint64_t seed,
                                   const DonorConfig& config = {});

std::string donors_to_json(const DonorDatabase& donors);
DonorDatabase donors_from_json(const std::string& text);
void save_donors(const std::filesystem::path& path, const DonorDatabase& donors);
DonorDatabase load_donors(const std::filesystem::path& path);

/// Ordered key/value description of the concrete choice an action made.
using ActionDetail = std::vector<std::pair<std::string, std::string>>;

struct Applied {
  SbfBinary binary;
};
struct Rejected {
  std::string reason;
};
struct Corrupted {
  std::string reason;
};

struct ActionOutcome {
  ActionId action{};
  ActionDetail detail;
  std::variant<Applied, Rejected, Corrupted> result;

  bool applied() const { return std::holds_alternative<Applied>(result); }
  bool rejected() const { return std::holds_alternative<Rejected>(result); }
  bool corrupted() const { return std::holds_alternative<Corrupted>(result); }
};

struct ActionConfig {
  int pad_min = 64;
  int pad_max = 1024;
  int strings_min = 8;
  int strings_max = 32;
};

ActionOutcome apply_action(const SbfBinary& binary, ActionId action, const DonorDatabase& donors, Rng& rng,
                           const ActionConfig& config = {});

}  // namespace evlab
