// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// the number of failing criteria. `acceptance N...` runs a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "vdn/errors.hpp"
#include "vdn/harness.hpp"
#include "vdn/jsonl.hpp"

using namespace vdn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (failures.size() < 5) failures.push_back(what);
    }
  }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

EnvironmentSet environments(int count, std::uint64_t seed, const EnvConfig& cfg) {
  EnvironmentSet envs;
  for (int i = 0; i < count; ++i) {
    auto g = generate_environment(seed + static_cast<std::uint64_t>(i), cfg);
    envs.emplace(g.env_id(), std::move(g));
  }
  return envs;
}

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("vdn_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------------ 1

void shortest_paths(Outcome& o) {
  Rng rng(20240601);
  int pairs = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(8));
    const auto g = oracle::random_graph(rng, n);
    for (const auto& a : g.nodes()) {
      for (const auto& b : g.nodes()) {
        const auto got = dijkstra(g, a.id, b.id);
        const auto want = oracle::shortest_by_enumeration(g, a.id, b.id);
        o.expect(got.length == want.length, "length " + a.id + "->" + b.id);
        o.expect(geodesic_distance(g, a.id, b.id) == want.length, "geodesic " + a.id + "->" + b.id);
        // Ties may pick a different path of identical length; the tie rule
        // has its own unit test.
        double walk = 0.0;
        for (std::size_t i = 1; i < got.nodes.size(); ++i) {
          walk += euclidean(g.node(got.nodes[i - 1]).position, g.node(got.nodes[i]).position);
          o.expect(g.adjacent(got.nodes[i - 1], got.nodes[i]), "path uses a non-edge");
        }
        o.expect(walk == want.length, "path length recomputation");
        ++pairs;
      }
    }
  }
  o.detail << "200 graphs (1-8 nodes), " << pairs << " pairs, lengths equal exactly";
}

// ------------------------------------------------------------------ 2

void ask_trigger(Outcome& o) {
  Rng rng(77);
  double worst_mid = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-5.0, 5.0);
    worst_mid = std::max(worst_mid, std::abs(trigger_probability(a, a) - 0.5));
  }
  o.expect(worst_mid <= 1e-12, "q(H = alpha) != 0.5");
  o.expect(trigger_probability(1.0, 2.0) > trigger_probability(1.0, 1.5), "q not increasing in H");
  o.expect(trigger_probability(1.5, 2.0) < trigger_probability(1.0, 2.0), "q not decreasing in alpha");

  double worst_fd = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double alpha = rng.uniform(-3.0, 3.0);
    const double h = rng.uniform(0.0, 3.0);
    const int label = rng.bernoulli(0.5) ? 1 : 0;
    const auto r = bce_loss_and_gradient(alpha, h, label);
    const double q = 1.0 / (1.0 + std::exp(alpha - h));
    o.expect(std::abs(r.grad_alpha - (label - q)) <= 1e-12, "gradient != label - q");
    const double fd = oracle::central_difference(
        [&](const std::vector<double>& x) {
          // Independent BCE: -[y log q + (1-y) log(1-q)].
          const double qq = 1.0 / (1.0 + std::exp(x[0] - h));
          return -(label * std::log(qq) + (1 - label) * std::log(1.0 - qq));
        },
        {alpha}, 0, 1e-5);
    worst_fd = std::max(worst_fd, oracle::relative_error(r.grad_alpha, fd, 1e-9));
  }
  o.expect(worst_fd <= 1e-6, "finite-difference gradient mismatch " + fmt(worst_fd));

  Rng data(5);
  const auto train = oracle::separable_entropy_log<EntropyRecord>(data, 500);
  const auto held = oracle::separable_entropy_log<EntropyRecord>(data, 500);
  const auto trained = train_threshold(train, 500, 2.0);
  int correct = 0;
  for (const auto& r : held) correct += should_ask(AskPolicy::learnable(trained.alpha), r.entropy, 1) == (r.asked == 1);
  const double acc = correct / static_cast<double>(held.size());
  o.expect(acc >= 0.95, "held-out accuracy " + fmt(acc));
  o.detail << "|q(alpha,alpha)-0.5| max " << fmt(worst_mid, 2) << ", gradient vs FD worst rel " << fmt(worst_fd, 2)
           << " over 1000 triples, trained alpha " << fmt(trained.alpha) << " held-out accuracy " << fmt(acc);
}

// ------------------------------------------------------------------ 3

ToyDecoder randomized(const ToyDecoderConfig& cfg, std::uint64_t seed, double spread) {
  auto m = ToyDecoder::initialized(cfg, seed);
  Rng rng(seed + 1);
  for (auto& p : m.parameters()) p += spread * rng.normal();
  return m;
}

void sequence_layout(Outcome& o) {
  // Layout arithmetic over random span sizes.
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    DialogueContext ctx;
    const int k = static_cast<int>(rng.index(6));
    for (int i = 0; i <= k; ++i) ctx.future_obs.push_back(Feature(4, static_cast<float>(i)));
    ctx.current_obs = ctx.future_obs[0];
    std::vector<int> tgt(1 + rng.index(3), 10), q(1 + rng.index(6), 11), a(1 + rng.index(8), 12);
    const auto seq = build_sequence(ctx, tgt, q, a, 256);
    o.expect(seq.size() == tgt.size() + q.size() + a.size() + 6 + static_cast<std::size_t>(k + 2),
             "sequence length");
    const int mask = std::accumulate(seq.loss_mask.begin(), seq.loss_mask.end(), 0);
    o.expect(mask == static_cast<int>(q.size() + a.size() + 2), "mask sum");
  }

  const auto g = generate_environment(12, {.feature_dim = 8});
  const auto vocab = Vocabulary::from_templates();
  const ToyDecoderConfig cfg{.layers = 2, .d_model = 8, .heads = 2, .vocab_size = vocab.size(), .max_length = 96,
                             .feature_dim = 8};
  auto m = randomized(cfg, 7, 0.3);
  const auto& target = g.node(g.nodes_with_objects().front());
  const auto ctx = build_context(g, g.node(0).id, 0, target.id, target.objects.front(), 3);
  const auto seq = encode_dialogue(ctx, template_generate(ctx, 1), vocab, 96);

  std::vector<double> grad(m.parameter_count(), 0.0);
  ToyDecoder::Matrix dlogits;
  m.loss_and_gradient(seq, grad, 1.0, &dlogits);
  int masked = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!seq.loss_mask[i]) {
      ++masked;
      o.expect((dlogits.row(static_cast<Eigen::Index>(i)).array() == 0.0).all(), "masked logit gradient not zero");
    }
  }

  const auto base = m.forward(seq);
  Rng noise(2);
  for (std::size_t cut = 1; cut < seq.size(); ++cut) {
    auto altered = seq;
    for (std::size_t j = cut; j < altered.size(); ++j) {
      if (altered.is_image(j)) {
        for (auto& f : altered.images[altered.image_index[j]]) f = static_cast<float>(noise.normal());
      } else {
        altered.tokens[j] = static_cast<int>(4 + noise.index(vocab.size() - 4));
      }
    }
    o.expect(m.forward(altered).topRows(static_cast<Eigen::Index>(cut)) == base.topRows(static_cast<Eigen::Index>(cut)),
             "prefix logits changed at cut " + std::to_string(cut));
  }

  const double h = 1e-4;
  double worst = 0.0;
  auto& p = m.parameters();
  auto loss_at = [&](std::size_t i, double x) {
    const double saved = p[i];
    p[i] = x;
    const double l = m.loss(seq);
    p[i] = saved;
    return l;
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p[i];
    const double fd =
        (-loss_at(i, x + 2 * h) + 8 * loss_at(i, x + h) - 8 * loss_at(i, x - h) + loss_at(i, x - 2 * h)) / (12.0 * h);
    worst = std::max(worst, oracle::relative_error(fd, grad[i], 1e-6));
  }
  o.expect(worst <= 1e-4, "decoder gradient vs FD " + fmt(worst));
  o.detail << "200 random layouts, " << masked << " masked positions with zero gradient, " << seq.size() - 1
           << " causal cuts, full gradient of " << p.size() << " parameters vs FD worst rel " << fmt(worst, 2);
}

// ------------------------------------------------------------------ 4

void dialogue_training(Outcome& o) {
  const auto envs = environments(4, 400, {.rooms = 5, .nodes_per_room = 3, .feature_dim = 16});
  const auto episodes = synthesize_dataset(envs, 40, 11);
  const auto vocab = Vocabulary::from_templates();
  const ToyDecoderConfig cfg{.layers = 1, .d_model = 16, .heads = 2, .vocab_size = vocab.size(), .max_length = 128,
                             .feature_dim = 16};
  const auto corpus = dialogue_corpus(episodes, envs, vocab, 128, 50, 3);
  o.expect(corpus.size() == 50, "corpus size " + std::to_string(corpus.size()));
  auto model = ToyDecoder::initialized(cfg, 1);
  const auto run = train_dialogue_model(model, corpus, {.epochs = 40, .lr = 1e-2, .batch_size = 10, .seed = 2});
  const double ratio = run.loss_curve.back() / run.loss_curve.front();
  o.expect(ratio < 0.25, "final/initial loss " + fmt(ratio));

  // Single pair memorization.
  const auto& ep = episodes.front();
  const auto& turn = ep.dialogue.front();
  const auto& g = environment(envs, ep.env);
  const auto ctx = build_context(g, turn.node, turn.heading, ep.target_node, ep.target_object);
  auto single = ToyDecoder::initialized(cfg, 4);
  train_dialogue_model(single, {encode_dialogue(ctx, {turn.question, turn.answer}, vocab, 128)},
                       {.epochs = 150, .lr = 1e-2, .batch_size = 1, .seed = 5});
  const auto out = generate_qa(single, vocab, ctx);
  o.expect(out.question == turn.question && out.answer == turn.answer, "memorized pair not reproduced");

  // Questions depend on the target and current image only.
  Rng rng(9);
  int ablations = 0;
  for (const auto& e : episodes) {
    for (const auto& t : e.dialogue) {
      const auto c = build_context(environment(envs, e.env), t.node, t.heading, e.target_node, e.target_object);
      auto ablated = c;
      for (std::size_t i = 1; i < ablated.future_obs.size(); ++i) {
        for (auto& f : ablated.future_obs[i]) f = static_cast<float>(rng.normal());
      }
      o.expect(generate_qa(model, vocab, c, 16).question == generate_qa(model, vocab, ablated, 16).question,
               "question changed under future-image ablation");
      if (++ablations == 20) break;
    }
    if (ablations == 20) break;
  }
  o.detail << "50-sequence corpus loss " << fmt(run.loss_curve.front()) << " -> " << fmt(run.loss_curve.back())
           << " (ratio " << fmt(ratio, 3) << " < 0.25), single pair reproduced, " << ablations
           << " future-image ablations leave questions unchanged";
}

// ------------------------------------------------------------------ 5

void metrics(Outcome& o) {
  Rng rng(55);
  int compared = 0;
  for (int n = 1; n <= 5; ++n) {
    for (int m = 1; m <= 5; ++m) {
      for (int trial = 0; trial < 40; ++trial) {
        std::vector<Vec3> a(n), b(m);
        for (auto& p : a) p = {rng.uniform(0, 6), rng.uniform(0, 6), rng.uniform(0, 1)};
        for (auto& p : b) p = {rng.uniform(0, 6), rng.uniform(0, 6), rng.uniform(0, 1)};
        const double want = oracle::dtw_by_enumeration(a, b);
        o.expect(oracle::relative_error(dtw(a, b), want, 1e-12) <= 1e-12, "DTW vs enumeration");
        o.expect(oracle::relative_error(ndtw(a, b), std::exp(-want / (n * kSuccessRadius)), 1e-12) <= 1e-12,
                 "nDTW normalization");
        ++compared;
      }
    }
  }
  const std::vector<Vec3> r{{0, 0, 0}, {3, 0, 0}};
  const std::vector<Vec3> q{{0, 0, 0}, {0, 3, 0}};
  const double worked = ndtw(r, q);
  o.expect(std::abs(worked - 0.4931) <= 1e-3, "worked nDTW example " + fmt(worked));

  std::vector<Node> nodes(3);
  for (int i = 0; i < 3; ++i) {
    nodes[i].id = "p" + std::to_string(i);
    nodes[i].room = "hallway";
  }
  nodes[1].position = {6, 0, 0};
  nodes[2].position = {10, 0, 0};
  const NavGraph line("line", 4, nodes, {{"p0", "p1"}, {"p1", "p2"}});
  o.expect(spl(true, 5.0, 5.0) == 1.0 && spl(true, 5.0, 10.0) == 0.5 && spl(false, 5.0, 5.0) == 0.0, "SPL");
  o.expect(goal_progress(line, "p0", "p2", "p2") == 10.0 && goal_progress(line, "p0", "p0", "p2") == 0.0 &&
               goal_progress(line, "p0", "p1", "p2") == 6.0,
           "GP");
  const bool outcomes[] = {true, false, true, true};
  o.expect(success_rate(outcomes) == 0.75 && success(line, "p2", "p2") && !success(line, "p1", "p2"), "SR");

  // Hand-derived text metric values.
  const double bleu2 = std::exp(1.0 - 6.0 / 5.0) * std::sqrt(1.0 * 3.0 / 4.0);
  o.expect(std::abs(bleu(tokenize("the cat sat on mat"), tokenize("the cat sat on the mat"), 2) - bleu2) <= 1e-6,
           "BLEU-2");
  o.expect(std::abs(bleu(tokenize("go left now"), tokenize("go right now"), 1) - 2.0 / 3.0) <= 1e-6, "BLEU-1");
  const double p = 3.0 / 4.0, rr = 1.0, b2 = 1.2 * 1.2;
  o.expect(std::abs(rouge_l(tokenize("a b c d"), tokenize("a c d")) - (1 + b2) * p * rr / (rr + b2 * p)) <= 1e-6,
           "ROUGE-L");
  // Unigram bags identical (cos 1), one of two bigrams shared with equal
  // idf (cos 1/2), no shared 3- or 4-grams.
  const CiderScorer cider_scorer({tokenize("go left now"), tokenize("go right"), tokenize("stop here now")});
  o.expect(std::abs(cider_scorer.score(tokenize("here now stop"), tokenize("stop here now")) - 10.0 * (1.0 + 0.5) / 4.0) <=
               1e-6,
           "CIDEr");
  o.detail << "DTW DP equals enumeration on " << compared << " path pairs (sizes 1-5), worked nDTW " << fmt(worked, 6)
           << ", SPL/SR/GP exact, BLEU/ROUGE-L/CIDEr within 1e-6 of hand values";
}

// ------------------------------------------------------------------ 6

NavigatorPolicy wanderer() {
  auto p = NavigatorPolicy::trainable();
  p.weights = {0.4, 0.5, -1.0, 0.2, 0.0};
  p.stop_bias = -100.0;
  return p;
}

void episode_protocol(Outcome& o) {
  const auto envs = environments(3, 40, {.rooms = 5, .nodes_per_room = 3});
  const auto episodes = synthesize_dataset(envs, 40, 17);
  const auto backend = std::make_shared<TemplateBackend>();

  RunConfig periodic;
  periodic.navigator = wanderer();
  periodic.ask = AskPolicy::periodic(5);
  periodic.max_actions = 12;
  int periodic_ok = 0;
  for (const auto& ep : episodes) {
    const auto log = run_episode(periodic, ep, envs.at(ep.env), backend);
    bool ok = log.steps.size() == 12 && log.metrics.questions == 2;
    for (const auto& s : log.steps) ok = ok && s.asked == (s.t == 5 || s.t == 10);
    periodic_ok += ok;
  }
  o.expect(periodic_ok == static_cast<int>(episodes.size()), "periodic k=5 over 12 steps");

  // Every trigger: pre/post entropy logged, instruction strictly longer.
  int triggers = 0;
  int max_seen = 0;
  for (int rounds : {1, 2, 3}) {
    RunConfig cfg;
    cfg.navigator = wanderer();
    cfg.ask = AskPolicy::fixed(0.0);
    cfg.max_rounds = rounds;
    cfg.max_actions = 6;
    for (std::size_t e = 0; e < 5; ++e) {
      const auto& ep = episodes[e];
      EpisodeRunner runner(cfg, ep, envs.at(ep.env), nullptr);
      while (runner.advance() == EpisodeRunner::Status::AwaitingAnswer) {
        const auto before = instruction_tokens(ep.target_object, runner.instruction()).size();
        const auto utterances = runner.instruction().size();
        const auto& ctx = runner.pending()->context;
        runner.answer(template_answer(ctx));
        o.expect(runner.instruction().size() == utterances + 2, "instruction did not gain a question and answer");
        o.expect(instruction_tokens(ep.target_object, runner.instruction()).size() > before,
                 "instruction tokens did not grow");
        ++triggers;
      }
      for (const auto& s : runner.log().steps) {
        o.expect(s.asked && s.entropy_post.has_value(), "trigger without post entropy");
        max_seen = std::max(max_seen, static_cast<int>(s.exchanges.size()));
        o.expect(static_cast<int>(s.exchanges.size()) <= rounds, "max rounds exceeded");
      }
    }
  }
  o.expect(max_seen == 3, "max rounds never reached");

  // Player walks with backtracking replayed through the action interface.
  int backtracks = 0;
  int replayed = 0;
  for (const auto& ep : episodes) {
    const auto& g = envs.at(ep.env);
    auto s = AgentState::start(g, ep.start, ep.start_heading);
    const auto instr = Instruction::from_tokens(instruction_tokens(ep.target_object, {}), g.feature_dim());
    try {
      for (std::size_t i = 1; i < ep.player_path.nodes.size(); ++i) {
        const auto& next = ep.player_path.nodes[i];
        if (std::find(s.visited.begin(), s.visited.end(), next) != s.visited.end()) ++backtracks;
        const auto dist = score(NavigatorPolicy::keyword_match(), s, g, instr);
        dist.index_of(next);  // throws IllegalAction if the revisit is masked
        s = execute(s, g, next).state;
      }
      o.expect(s.visited == ep.player_path.nodes, "replayed walk differs");
      ++replayed;
    } catch (const IllegalAction& e) {
      o.expect(false, std::string("IllegalAction: ") + e.what());
    }
  }
  o.expect(backtracks > 0, "no backtracking in the corpus");
  o.detail << periodic_ok << "/" << episodes.size() << " 12-step episodes asked exactly at t=5,10; " << triggers
           << " triggers grew the instruction with pre/post entropy, rounds <= max_rounds (reached " << max_seen
           << "); " << replayed << " player walks with " << backtracks << " backtracks replayed without IllegalAction";
}

// ------------------------------------------------------------------ 7

void end_to_end(Outcome& o) {
  const EnvConfig ec{.rooms = 6, .nodes_per_room = 3};
  const auto train_envs = environments(8, 1000, ec);
  const auto test_envs = environments(8, 2000, ec);
  const auto train = synthesize_dataset(train_envs, 400, 1);
  const auto test = synthesize_dataset(test_envs, 200, 2);
  const auto backend = std::make_shared<TemplateBackend>();

  RunConfig greedy;
  greedy.threads = 2;
  const auto gres = run_experiment(greedy, test, test_envs, backend);
  int short_eps = 0;
  int short_ok = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i].planner_path.nodes.size() - 1 > 15) continue;
    ++short_eps;
    short_ok += gres.report.episodes()[i].success;
  }
  o.expect(short_eps > 0 && short_ok == short_eps, "greedy SR on short episodes");

  const auto dir = scratch_dir("e2e");
  save_environments((dir / "envs.jsonl").string(), train_envs);
  save_episodes((dir / "train.jsonl").string(), train);
  PipelineConfig pc;
  pc.environments = (dir / "envs.jsonl").string();
  pc.train_episodes = (dir / "train.jsonl").string();
  pc.out_dir = dir.string();
  pc.dialogue.epochs = 60;
  pc.seed = 7;
  const auto art = train_pipeline(pc);
  auto learned = load_run_config(art.run_config);
  learned.threads = 2;
  const auto with_asking = run_experiment(learned, test, test_envs, backend);
  auto never = learned;
  never.ask = AskPolicy::never();
  const auto without = run_experiment(never, test, test_envs, backend);
  auto deterministic = learned;
  deterministic.ask = AskPolicy::learnable(art.alpha, false);
  const auto det = run_experiment(deterministic, test, test_envs, backend);

  int questions = 0;
  for (const auto& m : with_asking.report.episodes()) questions += m.questions;
  const double gain = with_asking.report.goal_progress() - without.report.goal_progress();
  o.expect(gain >= 0.5, "GP gain " + fmt(gain) + " m below +0.5 m");
  o.detail << "greedy SR " << short_ok << "/" << short_eps << " on planner length <= 15; learned alpha "
           << fmt(art.alpha) << ", Bernoulli(q) asking GP " << fmt(with_asking.report.goal_progress()) << " m vs never "
           << fmt(without.report.goal_progress()) << " m (gain " << fmt(gain, 3) << " m, "
           << fmt(questions / static_cast<double>(test.size()), 3) << " questions/episode); q>0.5 rule GP "
           << fmt(det.report.goal_progress()) << " m";
  fs::remove_all(dir);
}

// ------------------------------------------------------------------ 8

void dataset_ops(Outcome& o) {
  const auto envs = environments(4, 60, {.rooms = 5, .nodes_per_room = 3});
  const auto data = synthesize_dataset(envs, 120, 9);
  std::size_t turns = 0;
  for (const auto& ep : data) turns += ep.dialogue.size();
  const auto planner = split_ndh(data, envs, Supervision::Planner);
  const auto player = split_ndh(data, envs, Supervision::Player);
  o.expect(planner.size() == turns && player.size() == turns, "split count");
  const auto augmented = augment_with_generated_dialogue(planner, envs, TemplateBackend{}, 4);
  o.expect(augmented.size() == 2 * planner.size(), "augmentation does not double");
  std::size_t synthetic = 0;
  for (const auto& i : augmented) synthetic += i.synthetic;
  o.expect(synthetic == planner.size(), "synthetic count");

  const auto big = environments(8, 100, {.rooms = 8, .nodes_per_room = 4});
  const auto corpus = synthesize_dataset(big, 1000, 5);
  const auto gaps = inter_turn_distances(corpus);
  const int mode = mode_of(gaps);
  o.expect(mode >= 5 && mode <= 6, "inter-turn distance mode " + std::to_string(mode));
  o.detail << turns << " dialogue turns -> " << planner.size() << " instances, augmented to " << augmented.size()
           << "; inter-turn distance mode " << mode << " over " << gaps.size() << " gaps";
}

// ------------------------------------------------------------------ 9

void determinism(Outcome& o) {
  const auto envs = environments(3, 500, {.rooms = 5, .nodes_per_room = 3});
  const auto data = synthesize_dataset(envs, 30, 8);
  RunConfig cfg;
  cfg.navigator = NavigatorPolicy::keyword_match(0.7);
  cfg.ask = AskPolicy::learnable(0.9, true);
  cfg.selection = ActionSelection::Sample;
  cfg.max_rounds = 2;
  cfg.seed = 42;
  const auto backend = std::make_shared<TemplateBackend>();
  const auto dir = scratch_dir("determinism");
  std::vector<std::string> bytes;
  std::vector<ExperimentResult> runs;
  for (int threads : {1, 1, 3}) {
    cfg.threads = threads;
    runs.push_back(run_experiment(cfg, data, envs, backend));
    const auto path = (dir / ("run" + std::to_string(bytes.size()) + ".jsonl")).string();
    write_run_log(path, runs.back().logs);
    bytes.push_back(read_bytes(path));
  }
  o.expect(!bytes[0].empty() && bytes[0] == bytes[1], "same seed, different bytes");
  o.expect(bytes[0] == bytes[2], "thread count changed the log");
  const auto logs = read_run_log((dir / "run0.jsonl").string());
  int replayed = 0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto& ep = data[i];
    const auto again = replay(logs[i], ep, envs.at(ep.env));
    o.expect(again.metrics == logs[i].metrics && again.trajectory == logs[i].trajectory, "replay mismatch " + ep.id);
    ++replayed;
  }
  int asked = 0;
  for (const auto& l : logs) asked += l.metrics.questions;
  o.detail << "3 runs (1, 1, 3 threads) wrote byte-identical logs of " << bytes[0].size() << " bytes; " << replayed
           << " episodes replayed with identical metrics (" << asked << " questions, sampled actions)";
  fs::remove_all(dir);
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "shortest paths equal exhaustive enumeration", 10.0, shortest_paths},
      {2, "ask trigger probability, gradient and threshold training", 30.0, ask_trigger},
      {3, "dialogue sequence layout, masking, causality and decoder gradients", 120.0, sequence_layout},
      {4, "toy dialogue training", 600.0, dialogue_training},
      {5, "navigation and text metrics", 60.0, metrics},
      {6, "episode loop protocol", 60.0, episode_protocol},
      {7, "end-to-end toy benchmark", 600.0, end_to_end},
      {8, "dataset operations", 60.0, dataset_ops},
      {9, "determinism and replay", 60.0, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    if (secs > c.budget_s) {
      o.pass = false;
      o.failures.push_back("runtime " + fmt(secs) + " s over the " + fmt(c.budget_s) + " s budget");
    }
    std::cout << "criterion " << c.id << ": " << (o.pass ? "PASS" : "FAIL") << " | " << c.name << " | "
              << o.detail.str() << " | " << fmt(secs, 3) << " s";
    for (const auto& f : o.failures) std::cout << " | failed: " << f;
    std::cout << std::endl;
    failed += !o.pass;
  }
  return failed;
}
