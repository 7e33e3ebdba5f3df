// Command-line front end: synthetic data, training, evaluation, serving.

#include <CLI11.hpp>
#include <csignal>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "rlperi/checkpoint.hpp"
#include "rlperi/evaluation.hpp"
#include "rlperi/field.hpp"
#include "rlperi/session.hpp"
#include "rlperi/session_server.hpp"
#include "rlperi/trainer.hpp"

using namespace rlperi;

namespace {

// "synthetic:N" or "synthetic" (N = default_n), otherwise a CSV path.
std::vector<VisualField> read_field_source(const std::string& source, std::uint64_t seed, int default_n) {
  const std::string prefix = "synthetic";
  if (source.rfind(prefix, 0) == 0) {
    int n = default_n;
    if (source.size() > prefix.size()) {
      if (source[prefix.size()] != ':') throw CLI::ValidationError("--fields", "expected synthetic:N");
      n = std::stoi(source.substr(prefix.size() + 1));
    }
    return generate_synthetic_fields(n, seed);
  }
  return load_fields(source);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  if (out.empty()) throw CLI::ValidationError("--seeds", "at least one seed required");
  return out;
}

ZestPrior resolve_prior(const std::string& prior_path, const std::optional<Checkpoint>& ck,
                        const std::string& prior_fields, std::uint64_t seed) {
  if (!prior_path.empty()) return ZestPrior::load(prior_path);
  if (ck && ck->prior) return *ck->prior;
  if (!prior_fields.empty()) {
    const auto fields = read_field_source(prior_fields, seed, 2000);
    return ZestPrior::from_fields(fields);
  }
  std::cerr << "warning: no prior given, using a flat prior\n";
  return ZestPrior::uniform();
}

std::vector<int> parse_widths(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

SessionServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement-learning visual field perimetry"};
  app.require_subcommand(1);

  // gen-fields
  auto* gen = app.add_subcommand("gen-fields", "Write synthetic ground-truth fields as CSV");
  int gen_n = 1000;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--n", gen_n, "Number of fields")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output CSV")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a policy");
  std::string tr_fields = "synthetic:2000";
  double tr_sigma = 2.0;
  std::string tr_reward = "shaping";
  std::string tr_state = "3d";
  std::uint64_t tr_seed = 1;
  std::string tr_out;
  std::string tr_log;
  std::string tr_prior_out;
  TrainerConfig tcfg;
  std::string tr_trunk = "512,256";
  std::string tr_loss = "combined";
  tr->add_option("--fields", tr_fields, "CSV path or synthetic:N");
  tr->add_option("--sigma-stop", tr_sigma, "ZEST stopping std (dB)")->check(CLI::IsMember({1.0, 2.0, 3.0}));
  tr->add_option("--reward-mode", tr_reward)->check(CLI::IsMember({"shaping", "num_stimuli", "reconstruction"}));
  tr->add_option("--state", tr_state)->check(CLI::IsMember({"3d", "2d"}));
  tr->add_option("--seed", tr_seed);
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--log", tr_log, "Training log (JSON lines); stdout if empty");
  tr->add_option("--prior-out", tr_prior_out, "Also write the ZEST prior as CSV");
  tr->add_option("--episodes", tcfg.episodes);
  tr->add_option("--batch", tcfg.batch_size);
  tr->add_option("--lr", tcfg.learning_rate);
  tr->add_option("--gamma", tcfg.gamma);
  tr->add_option("--epsilon-decay", tcfg.epsilon_decay);
  tr->add_option("--target-refresh", tcfg.target_refresh_updates);
  tr->add_option("--replay", tcfg.replay_capacity);
  tr->add_option("--updates-per-episode", tcfg.updates_per_episode);
  tr->add_option("--eval-every", tcfg.eval_every_episodes);
  tr->add_option("--channels", tcfg.network.lifted_channels);
  tr->add_option("--trunk", tr_trunk, "Comma-separated trunk widths");
  tr->add_option("--dropout", tcfg.network.dropout);
  tr->add_option("--loss", tr_loss)->check(CLI::IsMember({"combined", "per_branch"}));
  tr->add_option("--max-grad-norm", tcfg.max_grad_norm);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a strategy");
  std::string ev_strategy = "random";
  std::string ev_checkpoint;
  std::string ev_fields = "synthetic:200";
  std::vector<double> ev_sigmas = {2.0};
  std::string ev_seeds = "1,2,3,4,5";
  std::string ev_out;
  std::string ev_prior;
  std::string ev_prior_fields;
  std::vector<std::size_t> ev_panels;
  std::uint64_t ev_field_seed = 99;
  ev->add_option("--strategy", ev_strategy)->check(CLI::IsMember({"rlperi", "random", "raster", "neighbor"}));
  ev->add_option("--checkpoint", ev_checkpoint);
  ev->add_option("--fields", ev_fields, "CSV path or synthetic:N");
  ev->add_option("--field-seed", ev_field_seed, "Seed for synthetic evaluation fields");
  ev->add_option("--sigma-stop", ev_sigmas)->check(CLI::IsMember({1.0, 2.0, 3.0}));
  ev->add_option("--seeds", ev_seeds);
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--prior", ev_prior, "Prior CSV (54 x 41)");
  ev->add_option("--prior-fields", ev_prior_fields, "Build the prior from these fields (CSV or synthetic:N)");
  ev->add_option("--panels", ev_panels, "Field indices to dump as grids");

  // serve
  auto* sv = app.add_subcommand("serve", "Serve live sessions over HTTP");
  std::string sv_checkpoint;
  std::string sv_strategy = "rlperi";
  int sv_port = 8080;
  std::string sv_host = "127.0.0.1";
  std::string sv_prior;
  std::string sv_transcripts;
  sv->add_option("--checkpoint", sv_checkpoint);
  sv->add_option("--strategy", sv_strategy, "Default strategy for sessions that do not name one")
      ->check(CLI::IsMember({"rlperi", "random", "raster", "neighbor"}));
  sv->add_option("--port", sv_port);
  sv->add_option("--host", sv_host);
  sv->add_option("--prior", sv_prior);
  sv->add_option("--transcripts", sv_transcripts, "Directory for per-session transcript files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      save_fields(gen_out, generate_synthetic_fields(gen_n, gen_seed));
      return 0;
    }

    if (tr->parsed()) {
      const auto all = read_field_source(tr_fields, tr_seed, 2000);
      const auto split = split_dataset(all, tr_seed);
      const auto prior = ZestPrior::from_fields(split.train);
      if (!tr_prior_out.empty()) prior.save(tr_prior_out);

      tcfg.seed = tr_seed;
      tcfg.reward_mode = reward_mode_from_string(tr_reward);
      tcfg.loss_form = tr_loss == "combined" ? LossForm::combined : LossForm::per_branch;
      tcfg.network.state_mode = state_mode_from_string(tr_state);
      tcfg.network.trunk = parse_widths(tr_trunk);
      tcfg.replay_capacity = std::max(tcfg.replay_capacity, static_cast<std::size_t>(tcfg.batch_size));
      ZestConfig zest;
      zest.sigma_stop = tr_sigma;

      std::ofstream log_file;
      if (!tr_log.empty()) log_file.open(tr_log);
      std::ostream& log = tr_log.empty() ? std::cout : log_file;
      const auto result = train(split.train, split.validation, prior, tcfg, zest,
                                [&](const TrainLogRecord& r) { log << r.to_json() << std::endl; });
      result.best.save(tr_out);
      std::cerr << "best checkpoint: episode " << result.best_record.episode << ", val stimuli "
                << result.best_record.val_stimuli << ", val mse " << result.best_record.val_mse << "\n";
      return 0;
    }

    if (ev->parsed()) {
      std::optional<Checkpoint> ck;
      if (!ev_checkpoint.empty()) ck = Checkpoint::load(ev_checkpoint);
      auto prior = std::make_shared<const ZestPrior>(resolve_prior(ev_prior, ck, ev_prior_fields, ev_field_seed + 1));
      const auto fields = read_field_source(ev_fields, ev_field_seed, 200);

      std::shared_ptr<const Strategy> strategy;
      if (ev_strategy == "rlperi") {
        if (!ck) throw std::runtime_error("--strategy rlperi needs --checkpoint");
        strategy = std::make_shared<RlPeriStrategy>(std::make_shared<const PolicyNetwork>(ck->make_network()));
      } else if (ev_strategy == "random") {
        strategy = std::make_shared<RandomStrategy>();
      } else if (ev_strategy == "raster") {
        strategy = std::make_shared<RasterStrategy>(*prior);
      } else {
        strategy = std::make_shared<NeighborStrategy>(*prior);
      }

      const auto seeds = parse_seeds(ev_seeds);
      std::vector<RunReport> reports;
      for (double sigma : ev_sigmas) {
        ZestConfig zest;
        zest.sigma_stop = sigma;
        EvalOptions opt;
        opt.keep_episodes = !ev_panels.empty();
        reports.push_back(evaluate(strategy, prior, fields, zest, seeds, opt));
      }
      render_report(reports, ev_out, fields, ev_panels);
      std::cout << render_table_text(reports);
      return 0;
    }

    if (sv->parsed()) {
      std::optional<Checkpoint> ck;
      SessionManagerOptions opt;
      if (!sv_checkpoint.empty()) {
        ck = Checkpoint::load(sv_checkpoint);
        opt.network = std::make_shared<const PolicyNetwork>(ck->make_network());
      }
      opt.prior = std::make_shared<const ZestPrior>(resolve_prior(sv_prior, ck, "", 0));
      if (!sv_transcripts.empty()) opt.transcript_dir = sv_transcripts;
      opt.default_strategy = sv_strategy;
      if (sv_strategy == "rlperi" && !opt.network) throw std::runtime_error("--strategy rlperi needs --checkpoint");

      SessionManager manager(std::move(opt));
      SessionServer server(manager);
      const int port = server.bind(sv_host, sv_port);
      if (port < 0) throw std::runtime_error("cannot bind " + sv_host + ":" + std::to_string(sv_port));
      std::cerr << "listening on http://" << sv_host << ":" << port << " (default strategy " << sv_strategy
                << ")\n";
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      server.run();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
