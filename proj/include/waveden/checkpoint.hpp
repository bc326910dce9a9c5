#pragma once

// Named-tensor archive with a fixed binary layout:
//   magic "DNSW1"
//   u32 entry count
//   per entry: u32 name length, UTF-8 name, u32 rank, u32 extents[rank]
//   raw little-endian float32 payloads in manifest order
//   u64 FNV-1a checksum of the payload bytes
// Save -> load -> save round trips are byte identical.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "waveden/tensor.hpp"

namespace waveden {

// Corrupt or truncated archives; the CLI maps this to its own exit code.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

}  // namespace waveden
