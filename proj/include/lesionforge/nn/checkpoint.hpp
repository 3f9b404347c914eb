#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lesionforge/nn/network.hpp"

namespace lf::nn {

// Checkpoint layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "LFCKPT\r\n"
//   offset 8   u32       format version (1)
//   offset 12  u32       record count
//   then per record:
//     u32                name length L
//     L bytes            parameter name (UTF-8, e.g. "conv2d0.weight")
//     u32                rank R (always 4)
//     R x u64            extents (n, c, h, w)
//     prod(extents) x f32  values in NCHW order, IEEE-754 binary32
//
// Records appear in network parameter order.

inline constexpr char kCheckpointMagic[8] = {'L', 'F', 'C', 'K', 'P', 'T', '\r', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointRecord {
  std::string name;
  Shape4 shape;
  std::vector<float> values;
};

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);

void save_network(const std::filesystem::path& path, const Network<float>& network);
/// Loads parameters into a network of identical architecture; names and
/// extents must match record for record.
void load_network(const std::filesystem::path& path, Network<float>& network);

}  // namespace lf::nn
