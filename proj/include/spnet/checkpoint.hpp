#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spnet/architecture.hpp"
#include "spnet/network.hpp"

namespace spnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian binary: "SPNETCKP", u32 version, then tagged sections, each
/// a 4-byte tag, a u64 length and the payload. Sections: SPEC (model JSON),
/// PARM (every parameter, all BN banks), BNST (running statistics), ORDR
/// (channel orders), EMBD (widths and embedded architectures), JOIN (join
/// metadata of every embedded view) and CONF (config digest).
struct Checkpoint {
  Network<float> net;
  /// joins[i][op] for embedded architecture i.
  std::vector<std::vector<JoinMetadata>> joins;
  std::uint64_t config_digest = 0;
};

std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net,
                                               std::uint64_t config_digest = 0);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                  const std::string& name = "<checkpoint>");

void save_checkpoint(const std::string& path, const Network<float>& net,
                     std::uint64_t config_digest = 0);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace spnet
