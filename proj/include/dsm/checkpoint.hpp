#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dsm/model.hpp"

namespace dsm {

/// Everything besides parameters needed to resume training bit-exactly.
struct TrainingState {
  int epochs_completed = 0;
  std::uint64_t iterations_completed = 0;
  std::map<std::string, std::string> rng_states;             // serialized engines by stream name
  std::map<std::string, std::vector<double>> momentum;       // optimizer buffers by parameter key
  std::string config;                                        // effective config dump
};

struct Checkpoint {
  DualBranchNet net;
  TrainingState state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container:
///   "DSMCKPT\0" | u32 version | u64 header bytes | JSON header |
///   parameter blocks (f64 LE, in header order) | momentum blocks | u64 FNV-1a of all preceding bytes
/// Parameter keys are "<shared|L|S|main>/stage<i>/conv<j>/<weight|bias>" and
/// "<L|S|main>/head/<weight|bias>".
void save_checkpoint(const std::filesystem::path& path, const DualBranchNet& net, const TrainingState& state);

/// Throws CheckpointError on bad magic, unsupported version, truncation,
/// checksum mismatch or a layout that does not match the stored backbone.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsm
