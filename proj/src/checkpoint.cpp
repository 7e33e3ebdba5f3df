#include "rlperi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "rlperi/errors.hpp"

namespace rlperi {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'L', 'P', 'E', 'R', 'I', 'C', 'K'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("checkpoint truncated");
  return v;
}

std::string get_bytes(std::istream& in, std::uint32_t n) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw ParseError("checkpoint truncated");
  return s;
}

nlohmann::json config_to_json(const NetworkConfig& c) {
  return {{"state_mode", to_string(c.state_mode)},
          {"lifted_channels", c.lifted_channels},
          {"spatial_groups", c.spatial_groups},
          {"pointwise_groups", c.pointwise_groups},
          {"trunk", c.trunk},
          {"dropout", c.dropout},
          {"layer_norm_eps", c.layer_norm_eps}};
}

NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.state_mode = state_mode_from_string(j.at("state_mode").get<std::string>());
  c.lifted_channels = j.at("lifted_channels").get<int>();
  c.spatial_groups = j.at("spatial_groups").get<int>();
  c.pointwise_groups = j.at("pointwise_groups").get<int>();
  c.trunk = j.at("trunk").get<std::vector<int>>();
  c.dropout = j.at("dropout").get<double>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  c.validate();
  return c;
}

}  // namespace

Checkpoint Checkpoint::from_network(const PolicyNetwork& net, std::optional<ZestPrior> prior) {
  Checkpoint ck;
  ck.network = net.config();
  ck.parameters.assign(net.parameters().begin(), net.parameters().end());
  ck.prior = std::move(prior);
  return ck;
}

PolicyNetwork Checkpoint::make_network() const {
  PolicyNetwork net(network);
  net.set_parameters(parameters);
  net.check_finite();
  return net;
}

void Checkpoint::write(std::ostream& out) const {
  const ParamLayout layout(network);
  if (parameters.size() != layout.total()) throw DomainError("parameter count does not match network config");

  nlohmann::json header;
  header["network"] = config_to_json(network);
  header["metadata"] = nlohmann::json::parse(metadata_json);
  if (prior) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : prior->pdfs()) rows.push_back(std::vector<double>(p.begin(), p.end()));
    header["prior"] = rows;
  }
  const std::string text = header.dump();

  out.write(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(out, static_cast<std::uint32_t>(layout.specs().size()));
  for (const auto& s : layout.specs()) {
    put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    put_u32(out, static_cast<std::uint32_t>(s.rows));
    put_u32(out, static_cast<std::uint32_t>(s.cols));
    out.write(reinterpret_cast<const char*>(parameters.data() + s.offset),
              static_cast<std::streamsize>(s.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

Checkpoint Checkpoint::read(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(get_bytes(in, get_u32(in)));
    ck.network = config_from_json(header.at("network"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  ck.metadata_json = header.value("metadata", nlohmann::json::object()).dump();
  if (header.contains("prior")) {
    std::array<Pdf, kNumLocations> pdfs{};
    const auto& rows = header["prior"];
    if (!rows.is_array() || rows.size() != kNumLocations) throw ParseError("checkpoint prior must have 54 rows");
    for (std::size_t l = 0; l < kNumLocations; ++l) {
      const auto v = rows[l].get<std::vector<double>>();
      if (v.size() != kNumStimuli) throw ParseError("checkpoint prior rows must have 41 entries");
      std::copy(v.begin(), v.end(), pdfs[l].begin());
    }
    ck.prior = ZestPrior(pdfs);
  }

  const ParamLayout layout(ck.network);
  const std::uint32_t count = get_u32(in);
  if (count != layout.specs().size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) + " arrays, config expects " +
                     std::to_string(layout.specs().size()));
  }
  ck.parameters.assign(layout.total(), 0.0f);
  for (const auto& s : layout.specs()) {
    const std::string name = get_bytes(in, get_u32(in));
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    if (name != s.name || rows != static_cast<std::uint32_t>(s.rows) || cols != static_cast<std::uint32_t>(s.cols)) {
      throw ParseError("checkpoint array '" + name + "' (" + std::to_string(rows) + "x" + std::to_string(cols) +
                       ") does not match expected '" + s.name + "' (" + std::to_string(s.rows) + "x" +
                       std::to_string(s.cols) + ")");
    }
    if (!in.read(reinterpret_cast<char*>(ck.parameters.data() + s.offset),
                 static_cast<std::streamsize>(s.size() * sizeof(float)))) {
      throw ParseError("checkpoint truncated in array " + s.name);
    }
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  write(out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read(in);
}

}  // namespace rlperi
