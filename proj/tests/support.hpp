#pragma once

// Shared fixtures: arbitrary valid binaries, small donor pools, rigged
// detectors and environments, scratch directories.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evlab/actions.hpp"
#include "evlab/corpus.hpp"
#include "evlab/detectors.hpp"
#include "evlab/environment.hpp"
#include "evlab/error.hpp"
#include "evlab/rng.hpp"
#include "evlab/sbf.hpp"

namespace evlab::testkit {

inline Bytes random_bytes(Rng& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
  return b;
}

inline std::string random_name(Rng& rng, std::size_t max_len) {
  std::string s(rng.below(max_len) + 1, 'a');
  for (auto& c : s) c = static_cast<char>('a' + rng.below(26));
  return s;
}

/// Any valid binary, including shapes the generator never produces: empty
/// payloads, caves everywhere, empty names, packed payloads.
inline SbfBinary random_binary(Rng& rng) {
  SbfBinary b;
  b.machine_type = static_cast<std::uint16_t>(rng.below(65536));
  b.timestamp = static_cast<std::uint32_t>(rng.next_u64());
  for (auto& f : b.optional_fields) f = static_cast<std::uint32_t>(rng.next_u64());
  b.checksum = static_cast<std::uint32_t>(rng.next_u64());
  b.debug_blob = random_bytes(rng, rng.below(3) == 0 ? 0 : rng.below(64));
  const auto n_imports = rng.below(6);
  for (std::uint64_t i = 0; i < n_imports; ++i) {
    ImportEntry e{random_name(rng, 12) + ".dll", random_name(rng, 16) + std::to_string(i)};
    b.imports.push_back(e);
  }
  const auto n_sections = 1 + rng.below(5);
  b.payload_index = static_cast<std::uint16_t>(rng.below(n_sections));
  for (std::uint64_t i = 0; i < n_sections; ++i) {
    Section s;
    s.name = rng.below(5) == 0 ? std::string() : random_name(rng, 8);
    if (i == b.payload_index) {
      s.flags = kPayload;
    } else {
      s.flags = static_cast<std::uint8_t>(rng.below(2) == 0 ? kData : kStrings);
    }
    const auto content = rng.below(4) == 0 ? 0 : rng.below(200);
    const auto cave = rng.below(2) == 0 ? 0 : rng.below(64);
    s.bytes = random_bytes(rng, content + cave);
    s.content_length = static_cast<std::uint32_t>(content);
    b.sections.push_back(std::move(s));
  }
  b.overlay = random_bytes(rng, rng.below(3) == 0 ? 0 : rng.below(128));
  if (rng.below(4) == 0) b = pack_payload(b);
  return b;
}

inline std::shared_ptr<const DonorDatabase> small_donors(std::uint64_t seed = 77, int benign = 40) {
  return std::make_shared<const DonorDatabase>(build_donor_database(generate_corpus(0, benign, seed), seed + 1));
}

/// Scores 0.9 while the binary has at most one STRINGS section, 0.1 after.
/// Action 5 is the only action that adds one, so it alone evades in one step.
class StringsRig final : public ScoringDetector {
 public:
  double score(const SbfBinary& b) const override {
    int n = 0;
    for (const auto& s : b.sections) n += s.has(kStrings) ? 1 : 0;
    return n <= 1 ? 0.9 : 0.1;
  }
  double threshold() const override { return 0.8336; }
  std::string name() const override { return "strings-rig"; }
};

/// Score that is a fixed function of one header field; handy for exact
/// reward checks.
class TimestampRig final : public ScoringDetector {
 public:
  explicit TimestampRig(double threshold = 0.8336) : threshold_(threshold) {}
  double score(const SbfBinary& b) const override { return b.timestamp == 0 ? 0.5 : 0.95; }
  double threshold() const override { return threshold_; }
  std::string name() const override { return "timestamp-rig"; }

 private:
  double threshold_;
};

/// Hard-label environment whose only reward is the exact pair [x, y] played
/// back to back. Every sample has a constant random state, so observations
/// carry no information about the step reached.
class PairEnv final : public Environment {
 public:
  PairEnv(int samples, std::uint64_t seed, ActionId x, ActionId y, int max_steps = 10, double reward = 10.0)
      : x_(x), y_(y), max_steps_(max_steps), reward_(reward) {
    Rng rng(seed);
    for (int i = 0; i < samples; ++i) {
      std::vector<double> s(256);
      for (auto& v : s) v = rng.uniform();
      states_.push_back(std::move(s));
    }
  }

  std::size_t sample_count() const override { return states_.size(); }
  std::string sample_id(std::size_t i) const override { return "pair-" + std::to_string(i); }
  std::vector<double> reset(std::size_t i) override {
    current_ = i;
    t_ = 0;
    previous_.reset();
    active_ = true;
    return states_.at(i);
  }
  StepResult step(ActionId a) override {
    if (!active_) throw EpisodeFinished();
    StepResult r;
    r.record.t = t_++;
    r.record.action = a;
    const bool hit = previous_ && *previous_ == x_ && a == y_;
    previous_ = a;
    r.reward = hard_label_reward(hit ? 0 : 1, reward_);
    r.record.pre = 1.0;
    r.record.post = hit ? 0.0 : 1.0;
    r.record.reward = r.reward;
    r.record.state_digest = state_digest(states_[current_]);
    r.state = states_[current_];
    if (hit || t_ >= max_steps_) {
      r.terminal = true;
      active_ = false;
      r.status = EpisodeStatus{hit ? Outcome::kEvaded : Outcome::kExhausted, t_, r.record.post, true};
    }
    return r;
  }

 private:
  std::vector<std::vector<double>> states_;
  ActionId x_, y_;
  int max_steps_;
  double reward_;
  std::size_t current_ = 0;
  int t_ = 0;
  std::optional<ActionId> previous_;
  bool active_ = false;
};

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(std::filesystem::file_time_type::clock::now()
                                                                          .time_since_epoch()
                                                                          .count()));
    path_ = std::filesystem::temp_directory_path() / ("evlab-" + tag + "-" + std::to_string(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace evlab::testkit
