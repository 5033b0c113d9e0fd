// Command line front end. Exit codes: 0 success, 1 configuration error,
// 2 runtime failure.
#include <pthread.h>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "vdn/errors.hpp"
#include "vdn/harness.hpp"
#include "vdn/jsonl.hpp"
#include "vdn/server.hpp"
#include "vdn/session.hpp"

using namespace vdn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw InvalidConfig("output directory is empty");
  fs::create_directories(dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue navigation toolkit: environments, datasets, training, evaluation and the oracle session server"};
  app.require_subcommand(1);
  std::function<void()> action;

  // gen-env
  int env_count = 8;
  std::uint64_t env_seed = 1000;
  EnvConfig env_cfg;
  std::string env_out;
  auto* gen_env = app.add_subcommand("gen-env", "Generate procedural environments (JSONL, one graph per line)");
  gen_env->add_option("--count", env_count, "Number of environments")->check(CLI::PositiveNumber);
  gen_env->add_option("--seed", env_seed, "First seed; environment i uses seed + i");
  gen_env->add_option("--rooms", env_cfg.rooms, "Rooms per environment");
  gen_env->add_option("--nodes-per-room", env_cfg.nodes_per_room, "Viewpoints per room");
  gen_env->add_option("--feature-dim", env_cfg.feature_dim, "Observation feature dimension");
  gen_env->add_option("--extra-edge-prob", env_cfg.extra_edge_prob, "Probability of extra intra-room edges");
  gen_env->add_option("-o,--out", env_out, "Output JSONL")->required();
  gen_env->callback([&] {
    action = [&] {
      EnvironmentSet envs;
      for (int i = 0; i < env_count; ++i) {
        auto g = generate_environment(env_seed + static_cast<std::uint64_t>(i), env_cfg);
        envs.emplace(g.env_id(), std::move(g));
      }
      save_environments(env_out, envs);
      std::cout << "wrote " << envs.size() << " environments to " << env_out << "\n";
    };
  });

  // gen-episodes
  std::string envs_path;
  int episode_count = 200;
  std::uint64_t episode_seed = 0;
  std::string episodes_out;
  bool show_distances = false;
  auto* gen_eps = app.add_subcommand("gen-episodes", "Synthesize dialogue episodes over environments");
  gen_eps->add_option("--envs", envs_path, "Environments JSONL")->required();
  gen_eps->add_option("--count", episode_count, "Number of episodes")->check(CLI::PositiveNumber);
  gen_eps->add_option("--seed", episode_seed, "Dataset seed");
  gen_eps->add_option("-o,--out", episodes_out, "Output JSONL")->required();
  gen_eps->add_flag("--distances", show_distances, "Print the inter-turn distance histogram");
  gen_eps->callback([&] {
    action = [&] {
      const auto envs = load_environments(envs_path);
      const auto dataset = synthesize_dataset(envs, episode_count, episode_seed);
      save_episodes(episodes_out, dataset);
      std::size_t turns = 0;
      for (const auto& ep : dataset) turns += ep.dialogue.size();
      std::cout << "wrote " << dataset.size() << " episodes (" << turns << " dialogue turns) to " << episodes_out << "\n";
      if (show_distances) {
        const auto d = inter_turn_distances(dataset);
        std::map<int, int> hist;
        for (int v : d) ++hist[v];
        for (const auto& [k, n] : hist) std::cout << "distance " << k << ": " << n << "\n";
        if (!d.empty()) std::cout << "mode " << mode_of(d) << "\n";
      }
    };
  });

  // split-ndh
  std::string episodes_path;
  std::string supervision = "planner";
  std::string ndh_out;
  auto* split = app.add_subcommand("split-ndh", "Split episodes into one navigation instance per dialogue turn");
  split->add_option("--envs", envs_path, "Environments JSONL")->required();
  split->add_option("--episodes", episodes_path, "Episodes JSONL")->required();
  split->add_option("--supervision", supervision, "planner or player")->check(CLI::IsMember({"planner", "player"}));
  split->add_option("-o,--out", ndh_out, "Output JSONL")->required();
  split->callback([&] {
    action = [&] {
      const auto envs = load_environments(envs_path);
      const auto instances = split_ndh(load_episodes(episodes_path), envs, supervision_from_name(supervision));
      save_ndh(ndh_out, instances);
      std::cout << "wrote " << instances.size() << " instances to " << ndh_out << "\n";
    };
  });

  // augment
  std::string ndh_path;
  std::string backend = "template";
  std::string checkpoint;
  std::string vocab_path;
  std::uint64_t augment_seed = 0;
  std::string augment_out;
  auto* augment = app.add_subcommand("augment", "Double a split dataset with generated question/answer pairs");
  augment->add_option("--envs", envs_path, "Environments JSONL")->required();
  augment->add_option("--ndh", ndh_path, "Instances JSONL")->required();
  augment->add_option("--backend", backend, "template or toy")->check(CLI::IsMember({"template", "toy"}));
  augment->add_option("--checkpoint", checkpoint, "Toy decoder weights");
  augment->add_option("--vocab", vocab_path, "Vocabulary file");
  augment->add_option("--seed", augment_seed, "Generation seed");
  augment->add_option("-o,--out", augment_out, "Output JSONL")->required();
  augment->callback([&] {
    action = [&] {
      RunConfig rc;
      rc.backend = backend;
      rc.checkpoint = checkpoint;
      rc.vocabulary = vocab_path;
      rc.validate(true);
      const auto be = make_backend(rc);
      const auto envs = load_environments(envs_path);
      const auto out = augment_with_generated_dialogue(load_ndh(ndh_path), envs, *be, augment_seed);
      save_ndh(augment_out, out);
      std::cout << "wrote " << out.size() << " instances to " << augment_out << "\n";
    };
  });

  // train-dialogue
  std::string out_dir;
  int corpus_size = 200;
  DialogueTrainConfig dtrain;
  ToyDecoderConfig dcfg;
  std::uint64_t train_seed = 0;
  auto* tdial = app.add_subcommand("train-dialogue", "Train the toy dialogue decoder on recorded turns");
  tdial->add_option("--envs", envs_path, "Environments JSONL")->required();
  tdial->add_option("--episodes", episodes_path, "Episodes JSONL")->required();
  tdial->add_option("--out-dir", out_dir, "Directory for dialogue.json, vocab.txt, dialogue_loss.json")->required();
  tdial->add_option("--corpus", corpus_size, "Sequences to train on")->check(CLI::PositiveNumber);
  tdial->add_option("--epochs", dtrain.epochs, "Epochs");
  tdial->add_option("--lr", dtrain.lr, "Adam learning rate");
  tdial->add_option("--batch-size", dtrain.batch_size, "Minibatch size");
  tdial->add_option("--layers", dcfg.layers, "Decoder layers");
  tdial->add_option("--d-model", dcfg.d_model, "Model width");
  tdial->add_option("--heads", dcfg.heads, "Attention heads");
  tdial->add_option("--seed", train_seed, "Seed");
  tdial->callback([&] {
    action = [&] {
      ensure_dir(out_dir);
      const auto envs = load_environments(envs_path);
      const auto episodes = load_episodes(episodes_path);
      const auto vocab = Vocabulary::from_templates();
      dcfg.vocab_size = vocab.size();
      dcfg.validate();
      const auto corpus = dialogue_corpus(episodes, envs, vocab, static_cast<std::size_t>(dcfg.max_length),
                                          corpus_size, mix_seed(train_seed, 1));
      if (corpus.empty()) throw InvalidConfig("episodes carry no dialogue turns");
      auto model = ToyDecoder::initialized(dcfg, mix_seed(train_seed, 2));
      dtrain.seed = mix_seed(train_seed, 3);
      const auto res = train_dialogue_model(model, corpus, dtrain, [](int epoch, double loss) {
        if (epoch % 25 == 0) std::cerr << "epoch " << epoch << " loss " << loss << "\n";
      });
      const fs::path dir = out_dir;
      model.save((dir / "dialogue.json").string());
      write_text((dir / "vocab.txt").string(), vocab.to_text());
      write_json((dir / "dialogue_loss.json").string(), json{{"loss_curve", res.loss_curve}});
      std::cout << "loss " << res.loss_curve.front() << " -> " << res.loss_curve.back() << "\n";
    };
  });

  // train-navigator
  TeacherForcingConfig ncfg;
  auto* tnav = app.add_subcommand("train-navigator", "Teacher-force the linear navigator and log step entropies");
  tnav->add_option("--envs", envs_path, "Environments JSONL")->required();
  tnav->add_option("--ndh", ndh_path, "Instances JSONL")->required();
  tnav->add_option("--out-dir", out_dir, "Directory for navigator.json, entropy_log.jsonl, navigator_loss.json")
      ->required();
  tnav->add_option("--epochs", ncfg.epochs, "Epochs");
  tnav->add_option("--lr", ncfg.lr, "Learning rate");
  tnav->add_option("--ml-weight", ncfg.ml_weight, "Teacher-forcing loss weight");
  tnav->add_option("--sample-weight", ncfg.sample_weight, "Sampled-rollout loss weight");
  tnav->add_flag("!--no-rollouts", ncfg.sample_rollouts, "Disable sampled rollouts");
  tnav->add_option("--seed", train_seed, "Seed");
  tnav->callback([&] {
    action = [&] {
      ensure_dir(out_dir);
      const auto envs = load_environments(envs_path);
      ncfg.seed = mix_seed(train_seed, 5);
      const auto res = train_teacher_forcing(NavigatorPolicy::trainable(), load_ndh(ndh_path), envs, ncfg);
      const fs::path dir = out_dir;
      write_json((dir / "navigator.json").string(), res.policy.to_json());
      std::vector<json> lines;
      for (const auto& r : res.entropy_log) lines.push_back(entropy_record_to_json(r));
      write_jsonl((dir / "entropy_log.jsonl").string(), lines);
      write_json((dir / "navigator_loss.json").string(), json{{"loss_curve", res.loss_curve}});
      std::cout << "CE " << res.loss_curve.front() << " -> " << res.loss_curve.back() << "\n";
    };
  });

  // train-threshold
  std::string entropy_log;
  int threshold_epochs = 500;
  double threshold_lr = 0.5;
  std::string threshold_out;
  auto* tthr = app.add_subcommand("train-threshold", "Fit the ask threshold on an entropy log");
  tthr->add_option("--entropy-log", entropy_log, "Entropy log JSONL")->required();
  tthr->add_option("--epochs", threshold_epochs, "Gradient steps");
  tthr->add_option("--lr", threshold_lr, "Learning rate");
  tthr->add_option("-o,--out", threshold_out, "Output JSON")->required();
  tthr->callback([&] {
    action = [&] {
      std::vector<EntropyRecord> log;
      for (const auto& j : read_jsonl(entropy_log)) log.push_back(entropy_record_from_json(j));
      if (log.empty()) throw InvalidConfig("entropy log is empty");
      const auto res = train_threshold(log, threshold_epochs, threshold_lr);
      json out = {{"alpha", res.alpha}, {"loss_curve", res.loss_curve}};
      if (res.warning) {
        out["warning"] = *res.warning;
        std::cerr << "warning: " << *res.warning << "\n";
      }
      write_json(threshold_out, out);
      std::cout << "alpha " << res.alpha << "\n";
    };
  });

  // run
  std::string config_path;
  std::string pipeline_path;
  std::string log_out;
  std::string report_out;
  std::string csv_out;
  int threads = 0;
  bool timing = false;
  auto* run = app.add_subcommand("run", "Run an experiment (or train the full pipeline with --pipeline)");
  auto* run_cfg = run->add_option("-c,--config", config_path, "Run config JSON");
  run->add_option("--pipeline", pipeline_path, "Pipeline config JSON: train all three stages, then write a run config")
      ->excludes(run_cfg);
  run->add_option("--log", log_out, "Run log JSONL (one episode per line)");
  run->add_option("--report", report_out, "Metrics report JSON");
  run->add_option("--emit-csv", csv_out, "Per-episode metrics CSV");
  run->add_option("--threads", threads, "Worker threads (overrides the config)");
  run->add_flag("--timing", timing, "Include wall-clock times in the log");
  run->callback([&] {
    action = [&] {
      if (!pipeline_path.empty()) {
        json j;
        try {
          j = read_json(pipeline_path);
        } catch (const FormatError& e) {
          throw InvalidConfig(e.what());
        }
        const auto art = train_pipeline(PipelineConfig::from_json(j), [](const std::string& s) { std::cerr << s << "\n"; });
        std::cout << "alpha " << art.alpha << "\nrun config " << art.run_config << "\n";
        return;
      }
      if (config_path.empty()) throw InvalidConfig("run needs --config or --pipeline");
      auto cfg = load_run_config(config_path);
      if (threads > 0) cfg.threads = threads;
      if (cfg.backend == "human") throw InvalidConfig("the human backend runs through `serve`");
      cfg.validate(true);
      const auto envs = load_environments(cfg.environments);
      const auto dataset = load_episodes(cfg.dataset);
      const auto res = run_experiment(cfg, dataset, envs, make_backend(cfg));
      if (!log_out.empty()) {
        if (timing) {
          std::vector<json> lines;
          for (const auto& l : res.logs) lines.push_back(l.to_json(true));
          write_jsonl(log_out, lines);
        } else {
          write_run_log(log_out, res.logs);
        }
      }
      if (!report_out.empty()) write_json(report_out, res.report.to_json());
      if (!csv_out.empty()) write_text(csv_out, res.report.to_csv());
      const auto& r = res.report;
      std::cout << "episodes " << r.episodes().size() << " failed " << r.failures().size() << " GP "
                << r.goal_progress() << " SR " << r.success_rate() << " SPL " << r.spl() << " nDTW " << r.ndtw()
                << "\n";
      for (const auto& f : r.failures()) std::cerr << "failed " << f.episode_id << ": " << f.error << "\n";
    };
  });

  // eval-text
  std::string candidates_path;
  std::string references_path;
  auto* etext = app.add_subcommand("eval-text", "BLEU-1..4, ROUGE-L and CIDEr of line-aligned text files");
  etext->add_option("--candidates", candidates_path, "One generated text per line")->required();
  etext->add_option("--references", references_path, "One reference per line")->required();
  etext->add_option("-o,--out", report_out, "Report JSON (default: stdout)");
  etext->callback([&] {
    action = [&] {
      const auto cand = read_lines(candidates_path);
      const auto ref = read_lines(references_path);
      if (cand.size() != ref.size()) throw InvalidConfig("candidate and reference files differ in length");
      std::vector<Tokens> c;
      std::vector<Tokens> r;
      for (const auto& s : cand) c.push_back(tokenize(s));
      for (const auto& s : ref) r.push_back(tokenize(s));
      const auto rep = evaluate_text(c, r).to_json();
      if (report_out.empty()) {
        std::cout << rep.dump(2) << "\n";
      } else {
        write_json(report_out, rep);
      }
    };
  });

  // serve
  ServerOptions sopts;
  int idle_timeout = static_cast<int>(kDefaultIdleTimeout.count());
  auto* serve = app.add_subcommand("serve", "Serve human-oracle sessions over HTTP");
  serve->add_option("-c,--config", config_path, "Run config JSON (environments, dataset, navigator, ask)")->required();
  serve->add_option("--host", sopts.host, "Bind address");
  serve->add_option("--port", sopts.port, "Port (0 picks a free one)");
  serve->add_option("--threads", sopts.threads, "HTTP worker threads")->check(CLI::PositiveNumber);
  serve->add_option("--idle-timeout", idle_timeout, "Seconds before an idle session is dropped")
      ->check(CLI::PositiveNumber);
  serve->callback([&] {
    action = [&] {
      auto cfg = load_run_config(config_path);
      cfg.backend = "human";
      cfg.validate(true);
      const auto envs = load_environments(cfg.environments);
      std::vector<Episode> episodes;
      if (!cfg.dataset.empty()) episodes = load_episodes(cfg.dataset);
      auto sessions = std::make_shared<SessionManager>(envs, std::move(episodes), cfg, std::chrono::seconds(idle_timeout));

      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      SessionServer server(sessions, sopts);
      const int port = server.bind();
      std::cout << "listening on http://" << sopts.host << ":" << port << std::endl;
      std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
      });
      server.serve();
      // serve() only returns after stop(); wake the waiter if it is still blocked.
      pthread_kill(waiter.native_handle(), SIGTERM);
      waiter.join();
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }
  try {
    action();
    return 0;
  } catch (const InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
