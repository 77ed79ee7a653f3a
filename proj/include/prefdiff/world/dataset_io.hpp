#pragma once

// JSON Lines scenario datasets. Line 1 is a header object
// {"schema","version","seed",...}; every following line is one scenario
// {"id","style","world","obs","gt"} with gt an array of [x, y] pairs.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefdiff/world/types.hpp"

namespace prefdiff {

using Json = nlohmann::ordered_json;

inline constexpr int kScenarioSchemaVersion = 1;
inline constexpr const char* kScenarioSchema = "prefdiff.scenarios";

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Json trajectory_to_json(const Trajectory& t) {
  Json arr = Json::array();
  for (const Vec2& p : t.waypoints) arr.push_back(Json::array({p.x, p.y}));
  return arr;
}

inline Trajectory trajectory_from_json(const Json& j) {
  if (!j.is_array() || j.size() != kHorizon) throw DatasetError("trajectory must be an array of 8 [x,y] pairs");
  Trajectory t;
  for (std::size_t l = 0; l < kHorizon; ++l) {
    if (!j[l].is_array() || j[l].size() != 2) throw DatasetError("waypoint must be an [x,y] pair");
    t[l] = {j[l][0].get<double>(), j[l][1].get<double>()};
  }
  t.validate();
  return t;
}

inline Json world_to_json(const WorldState& w) {
  Json agents = Json::array();
  for (const Agent& a : w.agents) {
    agents.push_back(Json{{"x", a.position.x},
                          {"y", a.position.y},
                          {"vx", a.velocity.x},
                          {"vy", a.velocity.y},
                          {"kind", to_string(a.kind)}});
  }
  Json j{{"lane_width", w.lane_width}, {"ego_speed", w.ego_speed}};
  j["intersection_distance"] = w.intersection_distance ? Json(*w.intersection_distance) : Json(nullptr);
  j["agents"] = std::move(agents);
  return j;
}

inline WorldState world_from_json(const Json& j) {
  WorldState w;
  w.lane_width = j.at("lane_width").get<double>();
  w.ego_speed = j.at("ego_speed").get<double>();
  if (j.contains("intersection_distance") && !j["intersection_distance"].is_null()) {
    w.intersection_distance = j["intersection_distance"].get<double>();
  }
  for (const Json& a : j.at("agents")) {
    w.agents.push_back({{a.at("x").get<double>(), a.at("y").get<double>()},
                        {a.at("vx").get<double>(), a.at("vy").get<double>()},
                        parse_agent_kind(a.at("kind").get<std::string>())});
  }
  w.validate();
  return w;
}

inline Json observation_to_json(const Observation& o) { return Json(std::vector<double>(o.begin(), o.end())); }

inline Observation observation_from_json(const Json& j) {
  if (!j.is_array() || j.size() != kObsWidth) {
    throw DatasetError("obs must have " + std::to_string(kObsWidth) + " entries");
  }
  Observation o{};
  for (std::size_t i = 0; i < kObsWidth; ++i) o[i] = j[i].get<double>();
  return o;
}

inline Json scenario_to_json(const Scenario& s) {
  return Json{{"id", s.id},
              {"style", to_string(s.style)},
              {"world", world_to_json(s.world)},
              {"obs", observation_to_json(s.obs)},
              {"gt", trajectory_to_json(s.gt)}};
}

inline Scenario scenario_from_json(const Json& j) {
  Scenario s;
  s.id = j.at("id").get<std::string>();
  s.style = parse_style(j.at("style").get<std::string>());
  s.world = world_from_json(j.at("world"));
  s.obs = observation_from_json(j.at("obs"));
  s.gt = trajectory_from_json(j.at("gt"));
  return s;
}

struct ScenarioFile {
  Json header;
  std::vector<Scenario> scenarios;
};

inline void write_lines(const std::filesystem::path& path, const Json& header, const std::vector<Json>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DatasetError("cannot write '" + tmp + "'");
    out << header.dump() << '\n';
    for (const Json& r : rows) out << r.dump() << '\n';
    if (!out) throw DatasetError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

/// Reads a JSON Lines file; returns header and body rows.
inline std::pair<Json, std::vector<Json>> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open '" + path.string() + "'");
  std::string line;
  Json header;
  std::vector<Json> rows;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const std::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (first) {
      header = std::move(j);
      first = false;
    } else {
      rows.push_back(std::move(j));
    }
  }
  if (first) throw DatasetError("'" + path.string() + "' is empty (missing header line)");
  return {std::move(header), std::move(rows)};
}

inline void write_scenarios(const std::filesystem::path& path, const std::vector<Scenario>& scenarios, Json header) {
  header["schema"] = kScenarioSchema;
  header["version"] = kScenarioSchemaVersion;
  header["count"] = scenarios.size();
  std::vector<Json> rows;
  rows.reserve(scenarios.size());
  for (const Scenario& s : scenarios) rows.push_back(scenario_to_json(s));
  write_lines(path, header, rows);
}

inline ScenarioFile read_scenarios(const std::filesystem::path& path) {
  auto [header, rows] = read_lines(path);
  if (header.value("schema", std::string{}) != kScenarioSchema) {
    throw DatasetError("'" + path.string() + "' is not a scenario dataset");
  }
  if (header.value("version", -1) != kScenarioSchemaVersion) {
    throw DatasetError("'" + path.string() + "' has unsupported schema version");
  }
  ScenarioFile f;
  f.header = std::move(header);
  for (const Json& r : rows) f.scenarios.push_back(scenario_from_json(r));
  return f;
}

}  // namespace prefdiff
