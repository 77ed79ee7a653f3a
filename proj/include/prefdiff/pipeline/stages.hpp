#pragma once

// The workflow as functions over a run directory. Each stage reads its
// inputs from the layout, writes its outputs there, and returns a JSON
// summary; the CLI is a thin shell around these.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "prefdiff/eval/boe.hpp"
#include "prefdiff/eval/metrics.hpp"
#include "prefdiff/pipeline/config.hpp"
#include "prefdiff/world/generate.hpp"

namespace prefdiff {

class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path data(const std::string& name) const { return root / "data" / name; }
  std::filesystem::path train() const { return data("train.jsonl"); }
  std::filesystem::path pool(Style s) const { return data(std::string("pool_") + to_string(s) + ".jsonl"); }
  std::filesystem::path normal_eval() const { return data("eval_normal.jsonl"); }
  std::filesystem::path pref_train(Style s) const { return data(std::string("pref_") + to_string(s) + "_train.jsonl"); }
  std::filesystem::path pref_eval(Style s) const { return data(std::string("pref_") + to_string(s) + "_eval.jsonl"); }
  std::filesystem::path pairs(Style s) const { return data(std::string("pairs_") + to_string(s) + ".jsonl"); }
  std::filesystem::path pretrained() const { return root / "models" / "pretrained.ckpt"; }
  std::filesystem::path autoencoder(Style s) const { return root / "models" / (std::string("ae_") + to_string(s) + ".ckpt"); }
  std::filesystem::path reward(Style s) const { return root / "models" / (std::string("reward_") + to_string(s) + ".ckpt"); }
  std::filesystem::path report(const std::string& name) const { return root / "reports" / name; }
  std::filesystem::path finetune_dir(const std::string& tag) const { return root / "finetune" / tag; }
  std::filesystem::path finetuned(const std::string& tag) const { return finetune_dir(tag) / "final.ckpt"; }
  std::filesystem::path sweep_dir(const std::string& kind) const { return root / "sweep" / kind; }
};

struct StageContext {
  RunConfig cfg;
  RunLayout layout;
  std::ostream* log = &std::cerr;

  void say(const std::string& msg) const {
    if (log) *log << msg << std::endl;
  }
};

inline void require_artifact(const std::filesystem::path& p, const std::string& what, const std::string& producer) {
  if (!std::filesystem::exists(p)) {
    throw ArtifactError("missing " + what + " at '" + p.string() + "'; run `" + producer + "` first");
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ArtifactError("cannot write '" + tmp + "'");
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open '" + path.string() + "'");
  return Json::parse(in);
}

inline std::string format_value(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// ---- loaders with named prerequisites ---------------------------------------

inline std::vector<Scenario> load_split(const std::filesystem::path& p, const std::string& what, const std::string& producer) {
  require_artifact(p, what, producer);
  return read_scenarios(p).scenarios;
}

inline DiffusionPolicy load_pretrained(const StageContext& ctx) {
  require_artifact(ctx.layout.pretrained(), "pretrained policy", "pretrain");
  return load_policy(ctx.layout.pretrained());
}

/// The first ceil(fraction * n) scenarios of the mined training split.
inline std::vector<Scenario> preference_subset(const StageContext& ctx, Style s, double fraction) {
  auto all = load_split(ctx.layout.pref_train(s), std::string(to_string(s)) + " preference set", "mine");
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(all.size()) - 1e-9));
  all.resize(std::clamp<std::size_t>(n, 1, all.size()));
  return all;
}

// ---- gen-data ----------------------------------------------------------------

inline Json stage_gen_data(const StageContext& ctx) {
  const RunConfig& c = ctx.cfg;
  Json header{{"seed", c.seed}};
  const auto train = generate_scenarios(derive_seed(c.seed, {1}), c.train_scenarios, c.mixture(), "train");
  write_scenarios(ctx.layout.train(), train, header);
  Json summary{{"train", train.size()}};
  for (Style s : {Style::aggressive, Style::defensive}) {
    MixtureWeights w{0.0, s == Style::aggressive ? 1.0 : 0.0, s == Style::defensive ? 1.0 : 0.0};
    const auto pool = generate_scenarios(derive_seed(c.seed, {2, static_cast<std::uint64_t>(s)}), c.mining_pool, w,
                                         std::string("pool_") + to_string(s));
    write_scenarios(ctx.layout.pool(s), pool, header);
    summary[std::string("pool_") + to_string(s)] = pool.size();
  }
  const auto normal = generate_scenarios(derive_seed(c.seed, {3}), std::max<std::size_t>(c.normal_eval_scenarios, 1),
                                         MixtureWeights{1.0, 0.0, 0.0}, "normal");
  write_scenarios(ctx.layout.normal_eval(), normal, header);
  summary["eval_normal"] = normal.size();
  ctx.say("gen-data: " + summary.dump());
  return summary;
}

// ---- pretrain ------------------------------------------------------------------

inline Json stage_pretrain(const StageContext& ctx) {
  const RunConfig& c = ctx.cfg;
  const auto train = load_split(ctx.layout.train(), "training scenarios", "gen-data");
  std::vector<Observation> obs;
  std::vector<Trajectory> gt;
  std::vector<ActionSequence> acts;
  for (const Scenario& s : train) {
    obs.push_back(s.obs);
    gt.push_back(s.gt);
    acts.push_back(to_actions(s.gt));
  }
  DiffusionPolicy policy = DiffusionPolicy::create(c.denoiser(), c.schedule(), ActionNormalizer::fit(acts), c.sigma_min,
                                                   derive_seed(c.seed, {0x9E1}));
  const auto samples = make_denoising_samples(policy.normalizer, obs, gt);
  const double initial = estimate_denoising_loss(policy, samples, derive_seed(c.seed, {0x9E2}), 1);
  const auto losses = train_denoiser(policy, samples, c.pretrain_config());
  save_policy(policy, ctx.layout.pretrained());
  Json summary{{"scenarios", train.size()}, {"epochs", losses.size()}, {"initial_loss", initial},
               {"final_epoch_loss", losses.empty() ? initial : losses.back()}, {"epoch_losses", losses}};
  write_json(ctx.layout.report("pretrain.json"), summary);
  ctx.say("pretrain: loss " + format_value(initial) + " -> " + format_value(summary["final_epoch_loss"].get<double>()));
  return summary;
}

// ---- mine ------------------------------------------------------------------------

inline Json stage_mine(const StageContext& ctx, Style style) {
  const RunConfig& c = ctx.cfg;
  const auto pool = load_split(ctx.layout.pool(style), std::string(to_string(style)) + " mining pool", "gen-data");
  const DiffusionPolicy policy = load_pretrained(ctx);
  const MiningReport rep = mine_preference_set(pool, policy, style, c.mining_config());
  const std::size_t n = rep.records.size();
  if (n < 2) throw ArtifactError("mine: " + (rep.message.empty() ? "fewer than 2 scenarios survived" : rep.message));
  const std::size_t n_eval = std::min(c.pref_eval_scenarios, n / 2);
  const std::size_t n_train = std::min(c.pref_scenarios, n - n_eval);
  std::vector<Scenario> train, held;
  for (std::size_t i = 0; i < n_train; ++i) train.push_back(rep.records[i].scenario);
  for (std::size_t i = n - n_eval; i < n; ++i) held.push_back(rep.records[i].scenario);
  const Json header{{"seed", c.seed}, {"style", to_string(style)}};
  write_scenarios(ctx.layout.pref_train(style), train, header);
  write_scenarios(ctx.layout.pref_eval(style), held, header);
  Json summary{{"style", to_string(style)},
               {"considered", rep.considered},
               {"after_scenario_mining", rep.after_scenario_mining},
               {"after_key_frames", rep.after_key_frames},
               {"after_model_rejection", n},
               {"train", train.size()},
               {"eval", held.size()}};
  write_json(ctx.layout.report(std::string("mine_") + to_string(style) + ".json"), summary);
  ctx.say("mine: " + summary.dump());
  return summary;
}

// ---- build-pairs -------------------------------------------------------------------

inline Json stage_build_pairs(const StageContext& ctx, Style style) {
  const RunConfig& c = ctx.cfg;
  const auto dp = load_split(ctx.layout.pref_train(style), std::string(to_string(style)) + " preference set", "mine");
  const DiffusionPolicy policy = load_pretrained(ctx);
  const std::uint64_t pair_seed = derive_seed(c.seed, {0xB1, static_cast<std::uint64_t>(style)});
  // the autoencoder sees the very raw samples it will later re-render
  std::vector<ActionSequence> raw, chosen;
  for (std::size_t j = 0; j < dp.size(); ++j) {
    for (const Trajectory& t : sample_trajectories(policy, dp[j].obs, c.pairs_per_scenario, derive_seed(pair_seed, {j}))) {
      raw.push_back(to_actions(t));
      chosen.push_back(to_actions(dp[j].gt));
    }
  }
  StyleAutoencoder ae = StyleAutoencoder::create(derive_seed(c.seed, {0xAE1}));
  const AeTrainReport ae_rep = train_style_autoencoder(ae, raw, chosen, c.ae_config());
  if (ae_rep.aborted) throw std::runtime_error("build-pairs: " + ae_rep.message);
  write_checkpoint(autoencoder_checkpoint(ae), ctx.layout.autoencoder(style));
  const auto pairs = synthesize_pairs(dp, policy, [&](const ActionSequence& a) { return ae.reconstruct(a); },
                                      c.pairs_per_scenario, pair_seed);
  write_pairs(ctx.layout.pairs(style), pairs, Json{{"seed", c.seed}, {"style", to_string(style)}});
  std::size_t reconstructed = 0;
  for (const PreferencePair& p : pairs) reconstructed += p.provenance == Provenance::reconstructed;
  Json summary{{"style", to_string(style)},         {"pairs", pairs.size()},
               {"reconstructed", reconstructed},    {"ae_initial_loss", ae_rep.initial_loss},
               {"ae_final_loss", ae_rep.epoch_losses.empty() ? ae_rep.initial_loss : ae_rep.epoch_losses.back()}};
  write_json(ctx.layout.report(std::string("pairs_") + to_string(style) + ".json"), summary);
  ctx.say("build-pairs: " + summary.dump());
  return summary;
}

// ---- train-reward --------------------------------------------------------------------

inline Json stage_train_reward(const StageContext& ctx, Style style) {
  const RunConfig& c = ctx.cfg;
  require_artifact(ctx.layout.pairs(style), std::string(to_string(style)) + " pair dataset", "build-pairs");
  const auto pairs = read_pairs(ctx.layout.pairs(style));
  RewardModel m = RewardModel::create(c.reward_net(), derive_seed(c.seed, {0x4E1, static_cast<std::uint64_t>(style)}));
  const RewardTrainReport rep = train_reward_model(m, pairs, c.reward_config());
  write_checkpoint(reward_checkpoint(m), ctx.layout.reward(style));
  Json summary{{"style", to_string(style)},         {"train_pairs", rep.train_pairs},
               {"heldout_pairs", rep.heldout_pairs}, {"accuracy", rep.accuracy},
               {"best_epoch", rep.best_epoch},       {"epochs_run", rep.epochs_run},
               {"train_losses", rep.train_losses},   {"validation_losses", rep.validation_losses},
               {"flagged", rep.flagged}};
  write_json(ctx.layout.report(std::string("reward_") + to_string(style) + ".json"), summary);
  ctx.say("train-reward: " + std::string(to_string(style)) + " held-out accuracy " + format_value(rep.accuracy));
  if (rep.flagged) throw std::runtime_error("train-reward: " + rep.message);
  return summary;
}

inline RewardModel load_reward(const StageContext& ctx, Style style) {
  require_artifact(ctx.layout.reward(style), std::string(to_string(style)) + " reward model", "train-reward");
  return reward_from_checkpoint(read_checkpoint(ctx.layout.reward(style)));
}

inline GroupScorer reward_scorer(const RewardModel& m) {
  return [&m](const Observation& obs, std::span<const Trajectory> trajs) { return m.score(obs, trajs); };
}

// ---- finetune (resumable) ----------------------------------------------------------------

inline Json epoch_metrics_to_json(const EpochMetrics& m) {
  return Json{{"epoch", m.epoch},       {"mean_reward", m.mean_reward}, {"mean_abs_advantage", m.mean_abs_advantage},
              {"rl_loss", m.rl_loss},   {"bc_loss", m.bc_loss},         {"steps", m.steps},
              {"skipped", m.skipped}};
}

inline std::string finetune_tag(Style style, double alpha, double fraction) {
  return std::string(to_string(style)) + "_a" + format_value(alpha) + "_f" + format_value(fraction);
}

inline std::filesystem::path epoch_checkpoint(const std::filesystem::path& dir, std::size_t epochs_done) {
  std::ostringstream name;
  name << "epoch_" << std::setw(4) << std::setfill('0') << epochs_done << ".ckpt";
  return dir / name.str();
}

/// Latest "epoch_NNNN.ckpt" in dir, as the number of completed epochs.
inline std::size_t latest_epoch_checkpoint(const std::filesystem::path& dir) {
  std::size_t best = 0;
  if (!std::filesystem::exists(dir)) return 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.size() == 15 && n.rfind("epoch_", 0) == 0 && n.ends_with(".ckpt")) {
      best = std::max<std::size_t>(best, static_cast<std::size_t>(std::stoul(n.substr(6, 4))));
    }
  }
  return best;
}

/// DPGRPO on the style's preference set, then the supervised refresh.
/// Checkpoints (with Adam state) every `checkpoint_every` epochs; a rerun
/// resumes from the latest one and reproduces the uninterrupted result.
inline Json stage_finetune(const StageContext& ctx, Style style, bool run_refresh = true) {
  const RunConfig& c = ctx.cfg;
  const std::string tag = finetune_tag(style, c.alpha, c.data_fraction);
  const auto dir = ctx.layout.finetune_dir(tag);
  std::filesystem::create_directories(dir);
  const auto dp = preference_subset(ctx, style, c.data_fraction);
  const RewardModel reward = load_reward(ctx, style);
  const DiffusionPolicy reference = load_pretrained(ctx);
  const FinetuneConfig fc = c.finetune_config();
  write_json(dir / "config.json", config_to_json(c));

  DiffusionPolicy policy = reference;
  std::size_t done = latest_epoch_checkpoint(dir);
  if (done > 0) {
    const Checkpoint ck = read_checkpoint(epoch_checkpoint(dir, done));
    policy = policy_from_checkpoint(ck);
    ctx.say("finetune " + tag + ": resuming after epoch " + std::to_string(done));
  }
  // metrics.jsonl keeps the rows of completed epochs only
  std::vector<Json> rows;
  if (done > 0 && std::filesystem::exists(dir / "metrics.jsonl")) {
    std::ifstream in(dir / "metrics.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Json j = Json::parse(line);
      if (j.at("epoch").get<std::size_t>() < done) rows.push_back(std::move(j));
    }
  }
  auto flush_metrics = [&] {
    std::ofstream out(dir / "metrics.jsonl", std::ios::trunc);
    for (const Json& r : rows) out << r.dump() << '\n';
  };
  flush_metrics();
  const GroupScorer score = reward_scorer(reward);
  for (std::size_t e = done; e < fc.epochs; ++e) {
    const EpochMetrics m = dpgrpo_epoch(policy, reference, score, dp, fc, e);
    Json row = epoch_metrics_to_json(m);
    row["alpha"] = c.alpha;
    row["data_fraction"] = c.data_fraction;
    rows.push_back(row);
    flush_metrics();
    ctx.say("finetune " + tag + ": " + row.dump());
    if (c.checkpoint_every > 0 && ((e + 1) % c.checkpoint_every == 0 || e + 1 == fc.epochs)) {
      save_policy(policy, epoch_checkpoint(dir, e + 1), true);
    }
  }
  save_policy(policy, dir / "rl.ckpt");
  Json summary{{"tag", tag}, {"style", to_string(style)}, {"alpha", c.alpha}, {"data_fraction", c.data_fraction},
               {"scenarios", dp.size()}, {"epochs", fc.epochs}};
  if (run_refresh) {
    const auto losses = supervised_refresh(policy, dp, fc);
    save_policy(policy, ctx.layout.finetuned(tag));
    summary["refresh_epochs"] = losses.size();
    summary["refresh_final_loss"] = losses.empty() ? Json(nullptr) : Json(losses.back());
  }
  write_json(dir / "summary.json", summary);
  return summary;
}

/// Supervised refresh of an existing RL checkpoint (the `refresh` command).
inline Json stage_refresh(const StageContext& ctx, Style style) {
  const RunConfig& c = ctx.cfg;
  const std::string tag = finetune_tag(style, c.alpha, c.data_fraction);
  const auto rl = ctx.layout.finetune_dir(tag) / "rl.ckpt";
  require_artifact(rl, "RL checkpoint for " + tag, "finetune");
  DiffusionPolicy policy = load_policy(rl);
  const auto dp = preference_subset(ctx, style, c.data_fraction);
  const auto losses = supervised_refresh(policy, dp, c.finetune_config());
  save_policy(policy, ctx.layout.finetuned(tag));
  Json summary{{"tag", tag}, {"refresh_epochs", losses.size()}};
  ctx.say("refresh: " + summary.dump());
  return summary;
}

// ---- eval -----------------------------------------------------------------------------

struct PolicyEvaluation {
  DisplacementMetrics displacement;  // averaged over scenarios
  std::optional<double> diversity;
  double style_score = 0.0;  // of the EM plan, averaged
  double mean_speed = 0.0;   // over every step of every sample
  VelocityHistogram velocity;
  std::vector<Trajectory> plans;
  std::size_t scenarios = 0;
  std::size_t samples = 0;
};

/// K independent samples per scenario (x_T not shared), EM plan for the
/// style and BOE checks. Seeds depend only on (seed, scenario index), so two
/// identical policies see identical samples.
inline PolicyEvaluation evaluate_policy(const DiffusionPolicy& policy, std::span<const Scenario> split, Style style,
                                        const RunConfig& c, std::uint64_t seed) {
  if (split.empty()) throw std::invalid_argument("evaluate_policy: empty split");
  PolicyEvaluation ev;
  ev.scenarios = split.size();
  ev.samples = c.eval_samples;
  std::vector<Trajectory> all;
  double div_sum = 0.0;
  std::size_t div_n = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto cands = sample_trajectories(policy, split[i].obs, c.eval_samples, derive_seed(seed, {i}));
    const DisplacementMetrics d = displacement_metrics(cands, split[i].gt);
    ev.displacement.min_ade += d.min_ade;
    ev.displacement.mean_ade += d.mean_ade;
    ev.displacement.min_fde += d.min_fde;
    ev.displacement.mean_fde += d.mean_fde;
    if (const auto dv = diversity(cands)) {
      div_sum += *dv;
      ++div_n;
    }
    ev.plans.push_back(aggregate(cands, c.em()));
    ev.style_score += style_score(style, split[i].world, ev.plans.back());
    all.insert(all.end(), cands.begin(), cands.end());
  }
  const double n = static_cast<double>(split.size());
  ev.displacement.min_ade /= n;
  ev.displacement.mean_ade /= n;
  ev.displacement.min_fde /= n;
  ev.displacement.mean_fde /= n;
  if (div_n) ev.diversity = div_sum / static_cast<double>(div_n);
  ev.style_score /= n;
  ev.velocity = velocity_profile(all);
  ev.mean_speed = ev.velocity.mean_speed;
  return ev;
}

inline Json evaluation_to_json(const PolicyEvaluation& ev) {
  return Json{{"scenarios", ev.scenarios},
              {"samples", ev.samples},
              {"min_ade", ev.displacement.min_ade},
              {"mean_ade", ev.displacement.mean_ade},
              {"min_fde", ev.displacement.min_fde},
              {"mean_fde", ev.displacement.mean_fde},
              {"diversity", ev.diversity ? Json(*ev.diversity) : Json(nullptr)},
              {"style_score", ev.style_score},
              {"mean_speed", ev.mean_speed},
              {"velocity_histogram", Json{{"edges", ev.velocity.edges}, {"densities", ev.velocity.densities}}}};
}

struct Comparison {
  PolicyEvaluation model;
  PolicyEvaluation baseline;
  std::vector<ComparisonRecord> records;
  BoeResult boe;
};

inline Comparison compare_policies(const DiffusionPolicy& model, const DiffusionPolicy& baseline,
                                   std::span<const Scenario> split, Style style, const RunConfig& c) {
  const std::uint64_t seed = derive_seed(c.seed, {0xE7A});
  Comparison cmp;
  cmp.model = evaluate_policy(model, split, style, c, seed);
  cmp.baseline = evaluate_policy(baseline, split, style, c, seed);
  for (std::size_t i = 0; i < split.size(); ++i) {
    ComparisonRecord r;
    r.scenario_id = split[i].id;
    r.a_src = "model";
    r.b_src = "baseline";
    r.h = simulated_h(style, split[i].world, cmp.model.plans[i], cmp.baseline.plans[i], c.sim_tie_band);
    cmp.records.push_back(r);
  }
  cmp.boe = boe_compute(cmp.records);
  return cmp;
}

inline Json comparison_to_report(const Comparison& cmp, const std::string& split_name, Style style) {
  const auto delta = [&](double a, double b) { return a - b; };
  return Json{{"split", split_name},
              {"style", to_string(style)},
              {"model", evaluation_to_json(cmp.model)},
              {"baseline", evaluation_to_json(cmp.baseline)},
              {"boe_model", cmp.boe.boe_a},
              {"boe_baseline", cmp.boe.boe_b},
              {"delta", Json{{"min_ade", delta(cmp.model.displacement.min_ade, cmp.baseline.displacement.min_ade)},
                             {"mean_ade", delta(cmp.model.displacement.mean_ade, cmp.baseline.displacement.mean_ade)},
                             {"min_fde", delta(cmp.model.displacement.min_fde, cmp.baseline.displacement.min_fde)},
                             {"mean_fde", delta(cmp.model.displacement.mean_fde, cmp.baseline.displacement.mean_fde)},
                             {"mean_speed", delta(cmp.model.mean_speed, cmp.baseline.mean_speed)}}}};
}

/// Model vs baseline on the style's held-out split and on the normal split.
inline Json stage_eval(const StageContext& ctx, Style style, const std::filesystem::path& model_path,
                       const std::filesystem::path& baseline_path, const std::filesystem::path& out_path) {
  require_artifact(model_path, "model checkpoint", "finetune");
  require_artifact(baseline_path, "baseline checkpoint", "pretrain");
  const DiffusionPolicy model = load_policy(model_path);
  const DiffusionPolicy baseline = load_policy(baseline_path);
  const auto held = load_split(ctx.layout.pref_eval(style), std::string(to_string(style)) + " held-out split", "mine");
  const auto normal = load_split(ctx.layout.normal_eval(), "normal split", "gen-data");
  const Comparison on_style = compare_policies(model, baseline, held, style, ctx.cfg);
  const Comparison on_normal = compare_policies(model, baseline, normal, Style::normal, ctx.cfg);
  Json report{{"model_path", model_path.filename().string()},
              {"baseline_path", baseline_path.filename().string()},
              {"style_split", comparison_to_report(on_style, "pref_eval", style)},
              {"normal_split", comparison_to_report(on_normal, "eval_normal", Style::normal)}};
  write_json(out_path, report);
  std::vector<Json> rows;
  for (const ComparisonRecord& r : on_style.records) rows.push_back(comparison_to_json(r));
  write_lines(out_path.parent_path() / (out_path.stem().string() + "_comparisons.jsonl"),
              Json{{"schema", "prefdiff.comparisons"}, {"version", 1}, {"style", to_string(style)}}, rows);
  ctx.say("eval: BOE " + format_value(on_style.boe.boe_a) + " minADE " +
          format_value(on_style.model.displacement.min_ade) + " (baseline " +
          format_value(on_style.baseline.displacement.min_ade) + ")");
  return report;
}

// ---- sweep --------------------------------------------------------------------------------

/// Finetune + refresh + eval for each α or each data fraction; one metrics
/// file per value with the value recorded inside.
inline Json stage_sweep(const StageContext& ctx, Style style, const std::string& kind) {
  if (kind != "alpha" && kind != "fraction") throw std::invalid_argument("sweep kind must be 'alpha' or 'fraction'");
  const std::vector<double>& values = kind == "alpha" ? ctx.cfg.sweep_alphas : ctx.cfg.sweep_fractions;
  Json index = Json::array();
  for (double v : values) {
    StageContext sub = ctx;
    if (kind == "alpha") {
      sub.cfg.alpha = v;
    } else {
      sub.cfg.data_fraction = v;
    }
    sub.cfg.validate();
    stage_finetune(sub, style);
    const std::string tag = finetune_tag(style, sub.cfg.alpha, sub.cfg.data_fraction);
    const auto out = ctx.layout.sweep_dir(kind) / (kind + "_" + format_value(v) + ".json");
    Json report = stage_eval(sub, style, ctx.layout.finetuned(tag), ctx.layout.pretrained(), out);
    report[kind] = v;
    report["alpha"] = sub.cfg.alpha;
    report["data_fraction"] = sub.cfg.data_fraction;
    write_json(out, report);
    index.push_back(Json{{kind, v}, {"metrics", out.filename().string()}});
  }
  write_json(ctx.layout.sweep_dir(kind) / "index.json", index);
  return index;
}

// ---- everything ---------------------------------------------------------------------------

inline Json stage_all(const StageContext& ctx) {
  Json out;
  out["gen_data"] = stage_gen_data(ctx);
  out["pretrain"] = stage_pretrain(ctx);
  for (Style s : {Style::aggressive, Style::defensive}) {
    const std::string name = to_string(s);
    out[name]["mine"] = stage_mine(ctx, s);
    out[name]["pairs"] = stage_build_pairs(ctx, s);
    out[name]["reward"] = stage_train_reward(ctx, s);
    out[name]["finetune"] = stage_finetune(ctx, s);
    const std::string tag = finetune_tag(s, ctx.cfg.alpha, ctx.cfg.data_fraction);
    const Json rep = stage_eval(ctx, s, ctx.layout.finetuned(tag), ctx.layout.pretrained(),
                                ctx.layout.report("eval_" + tag + ".json"));
    out[name]["boe"] = rep["style_split"]["boe_model"];
  }
  return out;
}

}  // namespace prefdiff
