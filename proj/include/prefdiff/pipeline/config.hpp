#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "prefdiff/dpgrpo/dpgrpo.hpp"
#include "prefdiff/reward/autoencoder.hpp"
#include "prefdiff/reward/model.hpp"
#include "prefdiff/world/dataset_io.hpp"
#include "prefdiff/world/mining.hpp"

namespace prefdiff {

/// Every knob of a run in one flat JSON object. Missing keys take the
/// defaults below; unknown keys are an error so typos do not pass silently.
struct RunConfig {
  std::uint64_t seed = 0;

  // data
  std::size_t train_scenarios = 5000;
  double mixture_normal = 0.8;
  double mixture_aggressive = 0.1;
  double mixture_defensive = 0.1;
  std::size_t mining_pool = 2000;          // style-labelled scenarios screened per style
  std::size_t pref_scenarios = 500;        // D_p size cap per style
  std::size_t pref_eval_scenarios = 100;   // held-out mined scenarios per style
  std::size_t normal_eval_scenarios = 200;

  // diffusion
  int steps = 10;
  double beta_start = 1e-4;
  double beta_end = 0.2;
  double sigma_min = 1e-3;
  std::size_t denoiser_hidden = 256;
  std::size_t denoiser_layers = 2;
  std::size_t pretrain_epochs = 100;
  std::size_t pretrain_batch = 64;
  double pretrain_lr = 1e-3;

  // mining
  double mining_score_threshold = 0.2;
  double mining_speed_change = 1.0;
  double mining_heading_change_deg = 5.0;
  double mining_rejection_ade = 0.5;
  std::size_t mining_samples = 8;

  // EM aggregation
  std::size_t em_iterations = 25;
  double em_radius = 2.0;
  double em_floor = 1e-4;

  // pairs and reward
  double ae_delta = 0.3;
  std::size_t ae_epochs = 60;
  double ae_lr = 1e-3;
  std::size_t pairs_per_scenario = 3;  // q
  std::size_t reward_hidden = 256;
  std::size_t reward_layers = 2;
  std::size_t reward_epochs = 30;
  std::size_t reward_batch = 32;
  double reward_lr = 2e-5;
  double reward_margin = 1.0;
  std::size_t reward_patience = 4;

  // finetuning
  std::size_t group_size = 8;
  double gamma = 0.99;
  double alpha = 0.1;
  double finetune_lr = 5e-5;
  std::size_t finetune_epochs = 20;
  std::size_t bc_rollouts = 4;
  std::size_t refresh_epochs = 100;
  std::size_t refresh_batch = 64;
  double refresh_lr = 1e-4;
  std::size_t checkpoint_every = 5;
  double data_fraction = 1.0;

  // evaluation
  std::size_t eval_samples = 8;
  double sim_tie_band = 0.05;
  std::vector<double> sweep_alphas{1.0, 0.5, 0.1, 0.01, 0.001};
  std::vector<double> sweep_fractions{0.1, 0.5, 1.0};

  std::string style = "aggressive";
  std::string out = "runs/default";

  MixtureWeights mixture() const { return {mixture_normal, mixture_aggressive, mixture_defensive}; }
  NoiseSchedule schedule() const { return build_schedule(steps, beta_start, beta_end); }
  DenoiserConfig denoiser() const { return {denoiser_hidden, denoiser_layers, Activation::relu}; }
  EmConfig em() const { return {em_radius, static_cast<int>(em_iterations), em_floor}; }
  Style target_style() const { return parse_style(style); }

  SupervisedConfig pretrain_config() const {
    SupervisedConfig c;
    c.epochs = pretrain_epochs;
    c.batch_size = pretrain_batch;
    c.adam.lr = pretrain_lr;
    c.seed = derive_seed(seed, {0x9E7});
    return c;
  }
  MiningConfig mining_config() const {
    MiningConfig c;
    c.score_threshold = mining_score_threshold;
    c.speed_change = mining_speed_change;
    c.heading_change_deg = mining_heading_change_deg;
    c.rejection_ade = mining_rejection_ade;
    c.samples = mining_samples;
    c.seed = derive_seed(seed, {0x313E});
    c.em = em();
    return c;
  }
  AeTrainConfig ae_config() const {
    AeTrainConfig c;
    c.delta = ae_delta;
    c.epochs = ae_epochs;
    c.adam.lr = ae_lr;
    c.seed = derive_seed(seed, {0xAE});
    return c;
  }
  RewardConfig reward_net() const { return {reward_hidden, reward_layers}; }
  RewardTrainConfig reward_config() const {
    RewardTrainConfig c;
    c.epochs = reward_epochs;
    c.batch_size = reward_batch;
    c.adam.lr = reward_lr;
    c.margin = reward_margin;
    c.patience = reward_patience;
    c.seed = derive_seed(seed, {0x4E3});
    return c;
  }
  FinetuneConfig finetune_config() const {
    FinetuneConfig c;
    c.group_size = group_size;
    c.gamma = gamma;
    c.bc_weight = alpha;
    c.adam.lr = finetune_lr;
    c.epochs = finetune_epochs;
    c.refresh_epochs = refresh_epochs;
    c.refresh_batch = refresh_batch;
    c.refresh_adam.lr = refresh_lr;
    c.bc_rollouts = bc_rollouts;
    c.seed = derive_seed(seed, {0xF1});
    return c;
  }

  void validate() const {
    mixture().validate();
    (void)target_style();
    finetune_config().validate();
    if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
    if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw std::invalid_argument("config: data_fraction must lie in (0, 1]");
    if (train_scenarios < 1 || mining_pool < 1) throw std::invalid_argument("config: dataset sizes must be >= 1");
    if (eval_samples < 1) throw std::invalid_argument("config: eval_samples must be >= 1");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    RunConfig, seed, train_scenarios, mixture_normal, mixture_aggressive, mixture_defensive, mining_pool,
    pref_scenarios, pref_eval_scenarios, normal_eval_scenarios, steps, beta_start, beta_end, sigma_min, denoiser_hidden,
    denoiser_layers, pretrain_epochs, pretrain_batch, pretrain_lr, mining_score_threshold, mining_speed_change,
    mining_heading_change_deg, mining_rejection_ade, mining_samples, em_iterations, em_radius, em_floor, ae_delta,
    ae_epochs, ae_lr, pairs_per_scenario, reward_hidden, reward_layers, reward_epochs, reward_batch, reward_lr,
    reward_margin, reward_patience, group_size, gamma, alpha, finetune_lr, finetune_epochs, bc_rollouts,
    refresh_epochs, refresh_batch, refresh_lr, checkpoint_every, data_fraction, eval_samples, sim_tie_band,
    sweep_alphas, sweep_fractions, style, out)

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline RunConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json defaults = RunConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig cfg;
  try {
    cfg = nlohmann::json::parse(j.dump()).get<RunConfig>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const Json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

inline Json config_to_json(const RunConfig& cfg) { return Json::parse(nlohmann::json(cfg).dump()); }

}  // namespace prefdiff
