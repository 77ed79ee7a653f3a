#pragma once

// Blind A/B annotation session. Each pair shows the model's and the
// baseline's plan for one scenario in a per-pair random left/right order;
// the order stays on the server until export. Choices are appended to a
// JSON Lines log and flushed to disk before they are acknowledged, and a
// restarted session replays the log.

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "prefdiff/pipeline/stages.hpp"

namespace prefdiff {

struct AnnotationPair {
  std::string pair_id;
  std::string scenario_id;
  WorldState world;
  Trajectory left;   // shown as "A"
  Trajectory right;  // shown as "B"
  bool left_is_model = true;
};

/// One pair per scenario from the two policies' EM plans, with the
/// presentation order drawn from `seed`.
inline std::vector<AnnotationPair> build_annotation_pairs(const DiffusionPolicy& model, const DiffusionPolicy& baseline,
                                                          std::span<const Scenario> split, const RunConfig& c,
                                                          std::uint64_t seed) {
  const std::uint64_t sample_seed = derive_seed(c.seed, {0xE7A});
  std::vector<AnnotationPair> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto a = sample_trajectories(model, split[i].obs, c.eval_samples, derive_seed(sample_seed, {i}));
    const auto b = sample_trajectories(baseline, split[i].obs, c.eval_samples, derive_seed(sample_seed, {i}));
    Rng coin(derive_seed(seed, {i}));
    AnnotationPair p;
    p.pair_id = "pair-" + std::to_string(i);
    p.scenario_id = split[i].id;
    p.world = split[i].world;
    p.left_is_model = uniform(coin, 0.0, 1.0) < 0.5;
    const Trajectory pm = aggregate(a, c.em()), pb = aggregate(b, c.em());
    p.left = p.left_is_model ? pm : pb;
    p.right = p.left_is_model ? pb : pm;
    out.push_back(std::move(p));
  }
  return out;
}

/// What the client may see: geometry and the two unlabeled plans.
inline Json pair_payload(const AnnotationPair& p, Style style) {
  Json agents = Json::array();
  for (const Agent& a : p.world.agents) {
    agents.push_back(Json{{"x", a.position.x},
                          {"y", a.position.y},
                          {"vx", a.velocity.x},
                          {"vy", a.velocity.y},
                          {"kind", to_string(a.kind)}});
  }
  return Json{{"pair_id", p.pair_id},
              {"style", to_string(style)},
              {"scenario", Json{{"agents", agents},
                                {"lane", Json{{"width", p.world.lane_width}, {"ego_speed", p.world.ego_speed}}}}},
              {"traj_a", trajectory_to_json(p.left)},
              {"traj_b", trajectory_to_json(p.right)}};
}

enum class ChoiceStatus { accepted, duplicate, unknown_pair, bad_request, closed };

inline constexpr const char* kChoiceLogSchema = "prefdiff.choices";

class AnnotationSession {
 public:
  /// Opens (or resumes) the session whose choice log lives at `log_path`.
  AnnotationSession(std::vector<AnnotationPair> pairs, Style style, std::filesystem::path log_path)
      : pairs_(std::move(pairs)), style_(style), log_path_(std::move(log_path)) {
    for (std::size_t i = 0; i < pairs_.size(); ++i) index_[pairs_[i].pair_id] = i;
    if (std::filesystem::exists(log_path_)) {
      replay();
    } else {
      if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
      append(Json{{"schema", kChoiceLogSchema}, {"version", 1}, {"style", to_string(style_)}, {"pairs", pairs_.size()}});
    }
  }

  Style style() const { return style_; }

  /// Next pair the evaluator has not answered, in queue order.
  std::optional<Json> next_pair(const std::string& evaluator) const {
    std::lock_guard lock(mu_);
    for (const AnnotationPair& p : pairs_) {
      if (!answered_.count({p.pair_id, evaluator})) return pair_payload(p, style_);
    }
    return std::nullopt;
  }

  ChoiceStatus submit(const std::string& pair_id, const std::string& evaluator, const std::string& choice) {
    if (evaluator.empty() || (choice != "A" && choice != "B" && choice != "tie")) return ChoiceStatus::bad_request;
    std::lock_guard lock(mu_);
    if (closed_) return ChoiceStatus::closed;
    if (!index_.count(pair_id)) return ChoiceStatus::unknown_pair;
    if (answered_.count({pair_id, evaluator})) return ChoiceStatus::duplicate;
    append(Json{{"pair_id", pair_id}, {"evaluator", evaluator}, {"choice", choice}});
    record(pair_id, evaluator, choice);
    return ChoiceStatus::accepted;
  }

  Json stats() const {
    std::lock_guard lock(mu_);
    Json s{{"pairs_total", pairs_.size()}, {"pairs_done", choices_.size()}, {"closed", closed_}};
    s["provisional_boe"] = choices_.empty() ? Json(nullptr) : Json(boe_compute(records_locked()).boe_a);
    return s;
  }

  void close() {
    std::lock_guard lock(mu_);
    if (closed_) return;
    append(Json{{"event", "close"}});
    closed_ = true;
  }
  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

  /// Unblinded records, model as A. Only after close.
  std::optional<std::vector<ComparisonRecord>> export_records() const {
    std::lock_guard lock(mu_);
    if (!closed_) return std::nullopt;
    return records_locked();
  }

  struct Choice {
    std::string pair_id;
    std::string evaluator;
    std::string choice;
  };
  std::vector<Choice> raw_choices() const {
    std::lock_guard lock(mu_);
    return choices_;
  }

  /// h in the model-vs-baseline orientation for a blinded choice.
  static int unblind(const AnnotationPair& p, const std::string& choice) {
    if (choice == "tie") return 0;
    const bool picked_left = choice == "A";
    return picked_left == p.left_is_model ? 1 : -1;
  }

 private:
  std::vector<ComparisonRecord> records_locked() const {
    std::vector<ComparisonRecord> out;
    for (const Choice& c : choices_) {
      const AnnotationPair& p = pairs_[index_.at(c.pair_id)];
      ComparisonRecord r;
      r.scenario_id = p.scenario_id;
      r.a_src = "model";
      r.b_src = "baseline";
      r.h = unblind(p, c.choice);
      r.evaluator = c.evaluator;
      out.push_back(r);
    }
    return out;
  }

  void record(const std::string& pair_id, const std::string& evaluator, const std::string& choice) {
    answered_.insert({pair_id, evaluator});
    choices_.push_back({pair_id, evaluator, choice});
  }

  // write + fsync; the caller acknowledges only after this returns
  void append(const Json& line) {
    const std::string s = line.dump() + "\n";
    const int fd = ::open(log_path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw ArtifactError("cannot open choice log '" + log_path_.string() + "'");
    const bool ok = ::write(fd, s.data(), s.size()) == static_cast<ssize_t>(s.size()) && ::fsync(fd) == 0;
    ::close(fd);
    if (!ok) throw ArtifactError("append to choice log '" + log_path_.string() + "' failed");
  }

  void replay() {
    std::string text;
    {
      std::ifstream in(log_path_, std::ios::binary);
      text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    bool header = true;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const std::size_t nl = text.find('\n', pos);
      const std::size_t end = nl == std::string::npos ? text.size() : nl;
      const std::string line = text.substr(pos, end - pos);
      Json j;
      try {
        if (!line.empty()) j = Json::parse(line);
      } catch (const Json::parse_error&) {
        if (nl != std::string::npos && text.find_first_not_of("\n", nl) != std::string::npos) {
          throw ArtifactError("choice log '" + log_path_.string() + "' is corrupt before its last line");
        }
        // torn final line from a crash mid-write; it was never acknowledged, so
        // drop it before anything is appended after it
        std::filesystem::resize_file(log_path_, pos);
        break;
      }
      pos = nl == std::string::npos ? text.size() : nl + 1;
      if (line.empty()) continue;
      if (header) {
        if (j.value("schema", std::string{}) != kChoiceLogSchema) {
          throw ArtifactError("'" + log_path_.string() + "' is not a choice log");
        }
        if (j.value("pairs", std::size_t{0}) != pairs_.size()) {
          throw ArtifactError("choice log '" + log_path_.string() + "' belongs to a session with a different pair set");
        }
        header = false;
        continue;
      }
      if (j.value("event", std::string{}) == "close") {
        closed_ = true;
        continue;
      }
      const std::string pid = j.at("pair_id").get<std::string>();
      const std::string ev = j.at("evaluator").get<std::string>();
      if (!index_.count(pid) || answered_.count({pid, ev})) continue;
      record(pid, ev, j.at("choice").get<std::string>());
    }
    if (header) {
      // crashed before the header was complete
      std::filesystem::resize_file(log_path_, 0);
      append(Json{{"schema", kChoiceLogSchema}, {"version", 1}, {"style", to_string(style_)}, {"pairs", pairs_.size()}});
    }
  }

  std::vector<AnnotationPair> pairs_;
  Style style_;
  std::filesystem::path log_path_;
  std::map<std::string, std::size_t> index_;
  std::set<std::pair<std::string, std::string>> answered_;
  std::vector<Choice> choices_;
  bool closed_ = false;
  mutable std::mutex mu_;
};

}  // namespace prefdiff
