// prefdiff <command> --config <path> [--seed N] [--out DIR] [command options]

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "prefdiff/pipeline/server.hpp"

using namespace prefdiff;

namespace {

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string style;
  std::optional<double> alpha;
  std::optional<double> fraction;
  std::string model;
  std::string baseline;
  std::string report;
  std::string kind = "alpha";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string log;
};

StageContext make_context(const Options& o) {
  StageContext ctx;
  ctx.cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) ctx.cfg.seed = *o.seed;
  if (!o.out.empty()) ctx.cfg.out = o.out;
  if (!o.style.empty()) ctx.cfg.style = o.style;
  if (o.alpha) ctx.cfg.alpha = *o.alpha;
  if (o.fraction) ctx.cfg.data_fraction = *o.fraction;
  ctx.cfg.validate();
  ctx.layout.root = ctx.cfg.out;
  return ctx;
}

int serve(const StageContext& ctx, const Options& o) {
  const Style style = ctx.cfg.target_style();
  const std::string tag = finetune_tag(style, ctx.cfg.alpha, ctx.cfg.data_fraction);
  const std::filesystem::path model_path = o.model.empty() ? ctx.layout.finetuned(tag) : std::filesystem::path(o.model);
  const std::filesystem::path base_path = o.baseline.empty() ? ctx.layout.pretrained() : std::filesystem::path(o.baseline);
  require_artifact(model_path, "model checkpoint", "finetune");
  require_artifact(base_path, "baseline checkpoint", "pretrain");
  const auto split = load_split(ctx.layout.pref_eval(style), std::string(to_string(style)) + " held-out split", "mine");
  auto pairs = build_annotation_pairs(load_policy(model_path), load_policy(base_path), split, ctx.cfg,
                                      derive_seed(ctx.cfg.seed, {0xB11D}));
  const std::filesystem::path log_path =
      o.log.empty() ? ctx.layout.root / "annotation" / ("choices_" + tag + ".jsonl") : std::filesystem::path(o.log);
  AnnotationSession session(std::move(pairs), style, log_path);
  httplib::Server server;
  mount_annotation_api(server, session);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  ctx.say("serving " + std::to_string(split.size()) + " pairs on http://" + o.host + ":" + std::to_string(o.port) +
          " (log " + log_path.string() + ")");
  if (!server.listen(o.host, o.port)) {
    std::cerr << "serve: cannot listen on " << o.host << ":" << o.port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-aligned diffusion planner pipeline"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "flat JSON run config (missing keys take defaults)");
    c->add_option("--seed", o.seed, "override the config seed");
    c->add_option("--out", o.out, "run directory");
  };
  auto styled = [&](CLI::App* c) {
    c->add_option("--style", o.style, "aggressive | defensive")->check(CLI::IsMember({"aggressive", "defensive"}));
  };
  auto tuned = [&](CLI::App* c) {
    c->add_option("--alpha", o.alpha, "BC weight");
    c->add_option("--fraction", o.fraction, "fraction of the preference set used");
  };

  auto* gen = app.add_subcommand("gen-data", "generate training, mining-pool and evaluation scenarios");
  auto* pre = app.add_subcommand("pretrain", "train the diffusion policy on the training scenarios");
  auto* mine = app.add_subcommand("mine", "mine the preference set for a style");
  auto* pairs = app.add_subcommand("build-pairs", "train the style autoencoder and synthesize preference pairs");
  auto* rew = app.add_subcommand("train-reward", "train the reward model on the pair dataset");
  auto* ft = app.add_subcommand("finetune", "DPGRPO finetuning followed by the supervised refresh (resumable)");
  auto* ref = app.add_subcommand("refresh", "supervised refresh of an existing RL checkpoint");
  auto* ev = app.add_subcommand("eval", "metrics and simulated BOE of a model against a baseline");
  auto* sw = app.add_subcommand("sweep", "finetune+eval over the configured alphas or data fractions");
  auto* srv = app.add_subcommand("serve", "blind A/B annotation service");
  auto* all = app.add_subcommand("all", "the whole pipeline for both styles");
  for (auto* c : {gen, pre, mine, pairs, rew, ft, ref, ev, sw, srv, all}) common(c);
  for (auto* c : {mine, pairs, rew, ft, ref, ev, sw, srv}) styled(c);
  for (auto* c : {ft, ref, ev, srv}) tuned(c);
  ev->add_option("--model", o.model, "model checkpoint (default: this style's finetuned model)");
  ev->add_option("--baseline", o.baseline, "baseline checkpoint (default: the pretrained model)");
  ev->add_option("--report", o.report, "report path (default: reports/eval_<tag>.json)");
  sw->add_option("--kind", o.kind, "alpha | fraction")->check(CLI::IsMember({"alpha", "fraction"}));
  srv->add_option("--model", o.model, "model checkpoint");
  srv->add_option("--baseline", o.baseline, "baseline checkpoint");
  srv->add_option("--host", o.host, "bind address");
  srv->add_option("--port", o.port, "port");
  srv->add_option("--log", o.log, "choice log path");

  CLI11_PARSE(app, argc, argv);

  try {
    const StageContext ctx = make_context(o);
    const Style style = ctx.cfg.target_style();
    Json result;
    if (gen->parsed()) {
      result = stage_gen_data(ctx);
    } else if (pre->parsed()) {
      result = stage_pretrain(ctx);
    } else if (mine->parsed()) {
      result = stage_mine(ctx, style);
    } else if (pairs->parsed()) {
      result = stage_build_pairs(ctx, style);
    } else if (rew->parsed()) {
      result = stage_train_reward(ctx, style);
    } else if (ft->parsed()) {
      result = stage_finetune(ctx, style);
    } else if (ref->parsed()) {
      result = stage_refresh(ctx, style);
    } else if (ev->parsed()) {
      const std::string tag = finetune_tag(style, ctx.cfg.alpha, ctx.cfg.data_fraction);
      const std::filesystem::path model = o.model.empty() ? ctx.layout.finetuned(tag) : std::filesystem::path(o.model);
      const std::filesystem::path base = o.baseline.empty() ? ctx.layout.pretrained() : std::filesystem::path(o.baseline);
      const std::filesystem::path out =
          o.report.empty() ? ctx.layout.report("eval_" + tag + ".json") : std::filesystem::path(o.report);
      result = stage_eval(ctx, style, model, base, out);
    } else if (sw->parsed()) {
      result = stage_sweep(ctx, style, o.kind);
    } else if (srv->parsed()) {
      return serve(ctx, o);
    } else if (all->parsed()) {
      result = stage_all(ctx);
    }
    std::cout << result.dump(2) << std::endl;
  } catch (const ArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
