#include "rlperi/session.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "rlperi/errors.hpp"

namespace rlperi {

const char* to_string(SessionPhase p) {
  switch (p) {
    case SessionPhase::awaiting_response: return "awaiting_response";
    case SessionPhase::choosing_location: return "choosing_location";
    case SessionPhase::complete: return "complete";
  }
  return "?";
}

SessionRequest SessionRequest::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw BadRequestError("request body must be a JSON object");
  SessionRequest r;
  try {
    r.strategy = j.value("strategy", r.strategy);
    r.seed = j.value("seed", r.seed);
    r.sigma_stop = j.value("sigma_stop", r.sigma_stop);
    if (j.contains("checkpoint") && !j["checkpoint"].is_null()) r.checkpoint = j["checkpoint"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BadRequestError(std::string("invalid session request: ") + e.what());
  }
  return r;
}

nlohmann::json to_json(const Proposal& p) {
  return {{"turn", p.turn}, {"location", p.location}, {"row", p.cell.row}, {"col", p.cell.col},
          {"stimulus_db", p.stimulus_db}};
}

namespace {

nlohmann::json entry_json(const TranscriptEntry& e, std::int64_t ts) {
  return {{"turn", e.turn}, {"location", e.location}, {"stimulus_db", e.stimulus_db}, {"seen", e.seen},
          {"timestamp_ms", ts}};
}

std::int64_t wall_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

struct SessionManager::Session {
  std::string id;
  SessionRequest request;
  std::unique_ptr<PerimetryTest> test;
  std::vector<std::int64_t> timestamps;
  nlohmann::json last_reply;
  std::optional<std::ofstream> log;
  mutable std::mutex mutex;

  SessionPhase phase() const {
    // choosing_location is transient: the next location is picked inside
    // the same call that finishes the previous one.
    return test->complete() ? SessionPhase::complete : SessionPhase::awaiting_response;
  }

  void append(const nlohmann::json& event) {
    if (log) {
      *log << event.dump() << '\n';
      log->flush();
    }
  }
};

SessionManager::SessionManager(SessionManagerOptions options) : options_(std::move(options)) {
  if (!options_.prior) throw DomainError("session manager needs a prior");
  if (!options_.clock) options_.clock = wall_clock_ms;
  if (options_.transcript_dir) std::filesystem::create_directories(*options_.transcript_dir);
}

std::shared_ptr<const Strategy> SessionManager::make_strategy(const SessionRequest& request) {
  SessionRequest r = request;
  if (r.strategy.empty()) r.strategy = options_.default_strategy;
  if (r.strategy == "random") return std::make_shared<RandomStrategy>();
  if (r.strategy == "raster") return std::make_shared<RasterStrategy>(*options_.prior);
  if (r.strategy == "neighbor") return std::make_shared<NeighborStrategy>(*options_.prior);
  if (r.strategy == "rlperi") {
    std::shared_ptr<const PolicyNetwork> net = options_.network;
    if (r.checkpoint) {
      std::lock_guard lock(checkpoint_mutex_);
      auto it = checkpoint_cache_.find(*r.checkpoint);
      if (it == checkpoint_cache_.end()) {
        try {
          auto loaded = std::make_shared<const PolicyNetwork>(Checkpoint::load(*r.checkpoint).make_network());
          it = checkpoint_cache_.emplace(*r.checkpoint, std::move(loaded)).first;
        } catch (const std::exception& e) {
          throw BadRequestError(std::string("cannot load checkpoint: ") + e.what());
        }
      }
      net = it->second;
    }
    if (!net) throw BadRequestError("strategy rlperi needs a checkpoint");
    return std::make_shared<RlPeriStrategy>(std::move(net));
  }
  throw BadRequestError("unknown strategy '" + r.strategy + "'");
}

nlohmann::json SessionManager::create(const SessionRequest& request) {
  if (!(request.sigma_stop > 0.0)) throw BadRequestError("sigma_stop must be positive");
  auto strategy = make_strategy(request);
  ZestConfig zest = options_.zest;
  zest.sigma_stop = request.sigma_stop;

  auto s = std::make_shared<Session>();
  s->request = request;
  if (s->request.strategy.empty()) s->request.strategy = options_.default_strategy;
  s->test = std::make_unique<PerimetryTest>(std::move(strategy), options_.prior, zest, request.seed);

  {
    std::unique_lock lock(map_mutex_);
    std::ostringstream id;
    id << "s" << std::hex << std::setw(6) << std::setfill('0') << next_id_++;
    s->id = id.str();
    sessions_.emplace(s->id, s);
  }

  if (options_.transcript_dir) {
    s->log.emplace(*options_.transcript_dir / (s->id + ".jsonl"));
    if (!*s->log) throw std::runtime_error("cannot open transcript file for " + s->id);
  }
  s->append({{"event", "create"},
             {"id", s->id},
             {"strategy", s->request.strategy},
             {"seed", request.seed},
             {"sigma_stop", request.sigma_stop},
             {"timestamp_ms", options_.clock()}});

  nlohmann::json reply{{"id", s->id}, {"phase", to_string(s->phase())}, {"proposal", to_json(s->test->current())}};
  return reply;
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::shared_lock lock(map_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("no session " + id);
  return it->second;
}

nlohmann::json SessionManager::respond(const std::string& id, bool seen, std::optional<int> turn) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);

  const int answered = static_cast<int>(s->test->transcript().size());
  if (turn && *turn == answered && answered > 0) return s->last_reply;
  if (s->test->complete()) throw ProtocolError("session " + id + " is complete");
  const Proposal p = s->test->current();
  if (turn && *turn != p.turn) {
    throw ProtocolError("turn " + std::to_string(*turn) + " does not match outstanding turn " + std::to_string(p.turn));
  }

  const SubmitOutcome out = s->test->submit(seen);
  const std::int64_t ts = options_.clock();
  s->timestamps.push_back(ts);
  nlohmann::json event = entry_json(s->test->transcript().back(), ts);
  event["event"] = "response";
  s->append(event);

  nlohmann::json reply{{"id", id}, {"phase", to_string(s->phase())}, {"answered_turn", p.turn}};
  if (out.location_complete) {
    reply["location_complete"] = {{"location", out.location}, {"estimate", out.estimate}};
    s->append({{"event", "location_complete"}, {"location", out.location}, {"estimate", out.estimate}});
  }
  if (out.test_complete) {
    const auto r = s->test->report();
    reply["summary"] = {{"reconstruction", r.reconstructed.values()}, {"total_stimuli", r.total_stimuli}};
    s->append({{"event", "complete"}, {"total_stimuli", r.total_stimuli}, {"reconstruction", r.reconstructed.values()}});
  } else {
    reply["proposal"] = to_json(s->test->current());
  }
  s->last_reply = reply;
  return reply;
}

nlohmann::json SessionManager::status(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  nlohmann::json j{{"id", id},
                   {"strategy", s->request.strategy},
                   {"sigma_stop", s->request.sigma_stop},
                   {"phase", to_string(s->phase())},
                   {"tested", s->test->state().tested_count()},
                   {"total_stimuli", s->test->total_stimuli()}};
  j["proposal"] = s->test->complete() ? nlohmann::json(nullptr) : to_json(s->test->current());
  return j;
}

nlohmann::json SessionManager::result(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  const auto& state = s->test->state();
  const auto r = s->test->report();
  nlohmann::json recon = nlohmann::json::array();
  for (int l = 0; l < kNumLocations; ++l) {
    recon.push_back(state.tested(l) ? nlohmann::json(state.pred(l)) : nlohmann::json(nullptr));
  }
  nlohmann::json transcript = nlohmann::json::array();
  const auto& entries = s->test->transcript();
  for (std::size_t i = 0; i < entries.size(); ++i) transcript.push_back(entry_json(entries[i], s->timestamps[i]));
  return {{"id", id},
          {"phase", to_string(s->phase())},
          {"complete", s->test->complete()},
          {"tested", state.tested_count()},
          {"total_stimuli", r.total_stimuli},
          {"reconstruction", recon},
          {"stimuli_per_location", r.stimuli_per_location},
          {"initial_values", r.initial_values},
          {"order", r.order},
          {"transcript", transcript}};
}

std::size_t SessionManager::size() const {
  std::shared_lock lock(map_mutex_);
  return sessions_.size();
}

std::vector<TranscriptEntry> transcript_from_json(const nlohmann::json& array) {
  std::vector<TranscriptEntry> out;
  for (const auto& e : array) {
    out.push_back({e.at("turn").get<int>(), e.at("location").get<int>(), e.at("stimulus_db").get<int>(),
                   e.at("seen").get<bool>()});
  }
  return out;
}

std::vector<TranscriptEntry> read_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open transcript " + path.string());
  std::vector<TranscriptEntry> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("transcript line " + std::to_string(row) + ": " + e.what());
    }
    if (j.value("event", "") != "response") continue;
    out.push_back({j.at("turn").get<int>(), j.at("location").get<int>(), j.at("stimulus_db").get<int>(),
                   j.at("seen").get<bool>()});
  }
  return out;
}

}  // namespace rlperi
