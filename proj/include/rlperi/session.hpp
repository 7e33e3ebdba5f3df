#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>

#include "rlperi/checkpoint.hpp"
#include "rlperi/strategy.hpp"

namespace rlperi {

/// Unknown session id.
struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Call that is illegal in the session's current phase, or a turn number
/// that does not match the outstanding stimulus.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or unsatisfiable request (bad strategy, unloadable checkpoint).
struct BadRequestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SessionPhase { awaiting_response, choosing_location, complete };
const char* to_string(SessionPhase p);

struct SessionRequest {
  std::string strategy;  // empty = the manager's default
  std::uint64_t seed = 0;
  double sigma_stop = 2.0;
  std::optional<std::string> checkpoint;  // overrides the server's network for rlperi

  static SessionRequest from_json(const nlohmann::json& j);
};

struct SessionManagerOptions {
  std::shared_ptr<const ZestPrior> prior;          // required
  std::shared_ptr<const PolicyNetwork> network;    // used by rlperi sessions
  ZestConfig zest;                                 // sigma_stop is taken per session
  std::string default_strategy = "random";
  std::optional<std::filesystem::path> transcript_dir;
  /// Milliseconds since epoch; injectable so transcripts can be reproduced.
  std::function<std::int64_t()> clock;
};

/// In-memory registry of live tests. Calls on one session are serialised;
/// calls on different sessions run independently.
class SessionManager {
 public:
  explicit SessionManager(SessionManagerOptions options);

  /// {"id", "phase", "proposal"}.
  nlohmann::json create(const SessionRequest& request);

  /// Records a response to the outstanding stimulus. When `turn` is given
  /// it must name the outstanding turn; repeating the last answered turn
  /// returns the original reply without re-applying it.
  nlohmann::json respond(const std::string& id, bool seen, std::optional<int> turn = std::nullopt);

  /// Phase, progress and current proposal.
  nlohmann::json status(const std::string& id) const;

  /// Reconstruction so far (null for untested locations), per-location
  /// stimulus counts and the transcript.
  nlohmann::json result(const std::string& id) const;

  std::size_t size() const;

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;
  std::shared_ptr<const Strategy> make_strategy(const SessionRequest& r);

  SessionManagerOptions options_;
  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
  std::mutex checkpoint_mutex_;
  std::map<std::string, std::shared_ptr<const PolicyNetwork>> checkpoint_cache_;
};

nlohmann::json to_json(const Proposal& p);

/// Reads a line-delimited transcript file back into entries.
std::vector<TranscriptEntry> read_transcript(const std::filesystem::path& path);
std::vector<TranscriptEntry> transcript_from_json(const nlohmann::json& array);

}  // namespace rlperi
