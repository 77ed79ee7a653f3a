#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "prefdiff/eval/style_score.hpp"
#include "prefdiff/world/dataset_io.hpp"

namespace prefdiff {

/// One judgement of A against B on one scenario: h = 1 if A is better,
/// -1 if B is better, 0 for a tie.
struct ComparisonRecord {
  std::string scenario_id;
  std::string a_src;
  std::string b_src;
  int h = 0;
  std::string evaluator = "oracle";

  bool operator==(const ComparisonRecord&) const = default;
};

inline Json comparison_to_json(const ComparisonRecord& r) {
  return Json{{"scenario_id", r.scenario_id}, {"a_src", r.a_src}, {"b_src", r.b_src}, {"h", r.h}, {"evaluator", r.evaluator}};
}

inline ComparisonRecord comparison_from_json(const Json& j) {
  ComparisonRecord r;
  try {
    r.scenario_id = j.at("scenario_id").get<std::string>();
    r.a_src = j.at("a_src").get<std::string>();
    r.b_src = j.at("b_src").get<std::string>();
    r.h = j.at("h").get<int>();
    r.evaluator = j.at("evaluator").get<std::string>();
  } catch (const Json::exception& e) {
    throw DatasetError(std::string("comparison record: ") + e.what());
  }
  if (r.h < -1 || r.h > 1) throw DatasetError("comparison record: h must be one of -1, 0, 1");
  return r;
}

struct BoeResult {
  double boe_a = 0.0;
  double boe_b = 0.0;
  std::size_t scenarios = 0;
  std::map<std::string, int> per_scenario;  // aggregated h
};

/// Averages h over evaluators per scenario, takes the sign outside the tie
/// band, then BOE_A = |{h >= 0}| / N and BOE_B = |{h <= 0}| / N.
inline BoeResult boe_compute(std::span<const ComparisonRecord> records, double tie_band = 0.2) {
  if (records.empty()) throw std::invalid_argument("boe_compute: no comparison records");
  std::map<std::string, std::pair<double, int>> sums;
  for (const ComparisonRecord& r : records) {
    auto& [s, n] = sums[r.scenario_id];
    s += r.h;
    ++n;
  }
  BoeResult out;
  std::size_t a = 0, b = 0;
  for (const auto& [id, sn] : sums) {
    const double mean = sn.first / sn.second;
    const int h = mean >= tie_band ? 1 : (mean <= -tie_band ? -1 : 0);
    out.per_scenario[id] = h;
    if (h >= 0) ++a;
    if (h <= 0) ++b;
  }
  out.scenarios = sums.size();
  out.boe_a = static_cast<double>(a) / static_cast<double>(out.scenarios);
  out.boe_b = static_cast<double>(b) / static_cast<double>(out.scenarios);
  return out;
}

/// The style oracle as an evaluator.
inline int simulated_h(Style style, const WorldState& world, const Trajectory& a, const Trajectory& b,
                       double tie_band = 0.05, const StyleScoreParams& p = StyleScoreParams{}) {
  const double d = style_score(style, world, a, p) - style_score(style, world, b, p);
  if (d > tie_band) return 1;
  if (d < -tie_band) return -1;
  return 0;
}

}  // namespace prefdiff
