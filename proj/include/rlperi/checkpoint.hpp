#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rlperi/network.hpp"
#include "rlperi/zest.hpp"

namespace rlperi {

/// Trained policy plus the prior it was trained with.
///
/// File layout (little endian):
///   8 bytes  magic "RLPERICK"
///   u32      format version
///   u32      header length, then a JSON header: network config, prior,
///            free-form metadata
///   u32      parameter array count, then per array:
///            u32 name length, name bytes, u32 rows, u32 cols,
///            rows * cols float32 values (column major)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  NetworkConfig network;
  std::vector<float> parameters;
  std::optional<ZestPrior> prior;
  std::string metadata_json = "{}";

  static Checkpoint from_network(const PolicyNetwork& net, std::optional<ZestPrior> prior = std::nullopt);

  /// Builds a network and loads the stored parameters into it.
  PolicyNetwork make_network() const;

  void write(std::ostream& out) const;
  static Checkpoint read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace rlperi
