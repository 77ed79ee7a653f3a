#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prefdiff/diffusion/sampler.hpp"
#include "prefdiff/world/dataset_io.hpp"

namespace prefdiff {

enum class Provenance { raw, reconstructed, live_annotated };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::raw: return "raw";
    case Provenance::reconstructed: return "reconstructed";
    case Provenance::live_annotated: return "live-annotated";
  }
  return "raw";
}
inline Provenance parse_provenance(const std::string& s) {
  if (s == "raw") return Provenance::raw;
  if (s == "reconstructed") return Provenance::reconstructed;
  if (s == "live-annotated") return Provenance::live_annotated;
  throw DatasetError("unknown provenance '" + s + "'");
}

/// (o; x_c, x_i): x_c preferred over x_i.
struct PreferencePair {
  std::string id;
  Observation obs{};
  Trajectory chosen;
  Trajectory ignored;
  Provenance provenance = Provenance::raw;
};

inline constexpr const char* kPairSchema = "prefdiff.pairs";
inline constexpr int kPairSchemaVersion = 1;

inline Json pair_to_json(const PreferencePair& p) {
  return Json{{"id", p.id},
              {"obs", observation_to_json(p.obs)},
              {"chosen", trajectory_to_json(p.chosen)},
              {"ignored", trajectory_to_json(p.ignored)},
              {"provenance", to_string(p.provenance)}};
}

inline PreferencePair pair_from_json(const Json& j) {
  PreferencePair p;
  try {
    p.id = j.at("id").get<std::string>();
    p.obs = observation_from_json(j.at("obs"));
    p.chosen = trajectory_from_json(j.at("chosen"));
    p.ignored = trajectory_from_json(j.at("ignored"));
    p.provenance = parse_provenance(j.at("provenance").get<std::string>());
  } catch (const Json::exception& e) {
    throw DatasetError(std::string("preference pair: ") + e.what());
  }
  return p;
}

inline void write_pairs(const std::filesystem::path& path, std::span<const PreferencePair> pairs, Json header = Json::object()) {
  header["schema"] = kPairSchema;
  header["version"] = kPairSchemaVersion;
  header["count"] = pairs.size();
  std::vector<Json> rows;
  rows.reserve(pairs.size());
  for (const PreferencePair& p : pairs) rows.push_back(pair_to_json(p));
  write_lines(path, header, rows);
}

inline std::vector<PreferencePair> read_pairs(const std::filesystem::path& path) {
  auto [header, rows] = read_lines(path);
  if (header.value("schema", std::string{}) != kPairSchema || header.value("version", -1) != kPairSchemaVersion) {
    throw DatasetError("'" + path.string() + "' is not a version " + std::to_string(kPairSchemaVersion) + " pair dataset");
  }
  std::vector<PreferencePair> out;
  out.reserve(rows.size());
  for (const Json& r : rows) out.push_back(pair_from_json(r));
  return out;
}

using Reconstructor = std::function<ActionSequence(const ActionSequence&)>;

/// For each preference scenario, q policy samples are re-rendered by
/// `reconstruct` and paired against the scenario's gt. A reconstruction that
/// breaks the trajectory invariants falls back to the raw sample.
inline std::vector<PreferencePair> synthesize_pairs(std::span<const Scenario> preference_set, const DiffusionPolicy& policy,
                                                    const Reconstructor& reconstruct, std::size_t q, std::uint64_t seed) {
  std::vector<PreferencePair> out;
  out.reserve(q * preference_set.size());
  for (std::size_t j = 0; j < preference_set.size(); ++j) {
    const Scenario& s = preference_set[j];
    const auto samples = sample_trajectories(policy, s.obs, q, derive_seed(seed, {j}));
    for (std::size_t k = 0; k < samples.size(); ++k) {
      PreferencePair p;
      p.id = s.id + "#" + std::to_string(k);
      p.obs = s.obs;
      p.chosen = s.gt;
      p.ignored = to_states(reconstruct(to_actions(samples[k])));
      p.provenance = Provenance::reconstructed;
      if (!p.ignored.valid()) {
        p.ignored = samples[k];
        p.provenance = Provenance::raw;
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace prefdiff
