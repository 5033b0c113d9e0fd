#include <algorithm>
#include <filesystem>
#include <fstream>

#include "vdn/errors.hpp"
#include "vdn/harness.hpp"
#include "vdn/jsonl.hpp"
#include "vdn/vocabulary.hpp"

namespace vdn {

using nlohmann::json;
namespace fs = std::filesystem;

json PipelineConfig::to_json() const {
  return {{"environments", environments},
          {"train_episodes", train_episodes},
          {"out_dir", out_dir},
          {"supervision", supervision_name(supervision)},
          {"augment", augment},
          {"dialogue_corpus", dialogue_corpus},
          {"decoder", decoder.to_json()},
          {"dialogue", {{"epochs", dialogue.epochs}, {"lr", dialogue.lr}, {"batch_size", dialogue.batch_size}}},
          {"navigator",
           {{"epochs", navigator.epochs},
            {"lr", navigator.lr},
            {"ml_weight", navigator.ml_weight},
            {"sample_weight", navigator.sample_weight},
            {"sample_rollouts", navigator.sample_rollouts}}},
          {"threshold_epochs", threshold_epochs},
          {"threshold_lr", threshold_lr},
          {"seed", seed}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  try {
    PipelineConfig c;
    c.environments = j.at("environments").get<std::string>();
    c.train_episodes = j.at("train_episodes").get<std::string>();
    c.out_dir = j.at("out_dir").get<std::string>();
    c.supervision = supervision_from_name(j.value("supervision", "planner"));
    c.augment = j.value("augment", c.augment);
    c.dialogue_corpus = j.value("dialogue_corpus", c.dialogue_corpus);
    if (j.contains("decoder")) {
      auto d = j.at("decoder");
      if (!d.contains("vocab_size")) d["vocab_size"] = 4;  // replaced by the real vocabulary
      c.decoder = ToyDecoderConfig::from_json(d);
    }
    if (j.contains("dialogue")) {
      const auto& d = j.at("dialogue");
      c.dialogue.epochs = d.value("epochs", c.dialogue.epochs);
      c.dialogue.lr = d.value("lr", c.dialogue.lr);
      c.dialogue.batch_size = d.value("batch_size", c.dialogue.batch_size);
    }
    if (j.contains("navigator")) {
      const auto& n = j.at("navigator");
      c.navigator.epochs = n.value("epochs", c.navigator.epochs);
      c.navigator.lr = n.value("lr", c.navigator.lr);
      c.navigator.ml_weight = n.value("ml_weight", c.navigator.ml_weight);
      c.navigator.sample_weight = n.value("sample_weight", c.navigator.sample_weight);
      c.navigator.sample_rollouts = n.value("sample_rollouts", c.navigator.sample_rollouts);
    }
    c.threshold_epochs = j.value("threshold_epochs", c.threshold_epochs);
    c.threshold_lr = j.value("threshold_lr", c.threshold_lr);
    c.seed = j.value("seed", c.seed);
    return c;
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("pipeline config: ") + e.what());
  }
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

}  // namespace

std::vector<DialogueSequence> dialogue_corpus(const std::vector<Episode>& episodes, const EnvironmentSet& envs,
                                              const Vocabulary& vocab, std::size_t max_length, int count,
                                              std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> turns;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    for (std::size_t k = 0; k < episodes[e].dialogue.size(); ++k) turns.emplace_back(e, k);
  }
  Rng rng(seed);
  rng.shuffle(turns);
  std::vector<DialogueSequence> corpus;
  for (const auto& [e, k] : turns) {
    if (static_cast<int>(corpus.size()) >= count) break;
    const auto& ep = episodes[e];
    const auto& turn = ep.dialogue[k];
    const auto& g = environment(envs, ep.env);
    const auto ctx = build_context(g, turn.node, turn.heading, ep.target_node, ep.target_object);
    corpus.push_back(encode_dialogue(ctx, {turn.question, turn.answer}, vocab, max_length));
  }
  return corpus;
}

PipelineArtifacts train_pipeline(const PipelineConfig& config, const std::function<void(const std::string&)>& log) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  if (config.out_dir.empty()) throw InvalidConfig("pipeline needs an output directory");
  if (config.dialogue_corpus < 1) throw InvalidConfig("dialogue corpus must be non-empty");
  fs::create_directories(config.out_dir);
  const fs::path out = config.out_dir;
  const auto envs = load_environments(config.environments);
  const auto episodes = load_episodes(config.train_episodes);
  if (episodes.empty()) throw InvalidConfig("no training episodes");

  PipelineArtifacts art;
  art.checkpoint = (out / "dialogue.json").string();
  art.vocabulary = (out / "vocab.txt").string();
  art.policy = (out / "navigator.json").string();
  art.entropy_log = (out / "entropy_log.jsonl").string();
  art.threshold = (out / "threshold.json").string();
  art.run_config = (out / "run_config.json").string();

  // Stage 1: dialogue model on the recorded (context, question, answer) turns.
  const auto vocab = Vocabulary::from_templates();
  auto dcfg = config.decoder;
  dcfg.vocab_size = vocab.size();
  dcfg.validate();
  const auto corpus =
      dialogue_corpus(episodes, envs, vocab, dcfg.max_length, config.dialogue_corpus, mix_seed(config.seed, 1));
  auto model = ToyDecoder::initialized(dcfg, mix_seed(config.seed, 2));
  auto dtrain = config.dialogue;
  dtrain.seed = mix_seed(config.seed, 3);
  say("stage 1: training dialogue model on " + std::to_string(corpus.size()) + " sequences");
  const auto dres = train_dialogue_model(model, corpus, dtrain, [&](int epoch, double loss) {
    if (epoch % 25 == 0) say("  epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
  });
  model.save(art.checkpoint);
  write_text(art.vocabulary, vocab.to_text());
  write_json((out / "dialogue_loss.json").string(), json{{"loss_curve", dres.loss_curve}});
  say("stage 1: loss " + std::to_string(dres.loss_curve.front()) + " -> " + std::to_string(dres.loss_curve.back()));

  // Stage 2: navigator with teacher forcing, on dialogue-augmented instances.
  auto instances = split_ndh(episodes, envs, config.supervision);
  if (config.augment) {
    auto shared = std::make_shared<const ToyDecoder>(std::move(model));
    const ToyBackend backend(shared, vocab);
    instances = augment_with_generated_dialogue(instances, envs, backend, mix_seed(config.seed, 4));
  }
  auto ncfg = config.navigator;
  ncfg.seed = mix_seed(config.seed, 5);
  say("stage 2: teacher forcing on " + std::to_string(instances.size()) + " instances");
  const auto nres = train_teacher_forcing(NavigatorPolicy::trainable(), instances, envs, ncfg);
  write_json(art.policy, nres.policy.to_json());
  {
    std::vector<json> lines;
    lines.reserve(nres.entropy_log.size());
    for (const auto& r : nres.entropy_log) lines.push_back(entropy_record_to_json(r));
    write_jsonl(art.entropy_log, lines);
  }
  write_json((out / "navigator_loss.json").string(), json{{"loss_curve", nres.loss_curve}});
  say("stage 2: CE " + std::to_string(nres.loss_curve.front()) + " -> " + std::to_string(nres.loss_curve.back()));

  // Stage 3: ask threshold from the teacher-forcing entropy log.
  const auto tres = train_threshold(nres.entropy_log, config.threshold_epochs, config.threshold_lr);
  art.alpha = tres.alpha;
  json tj = {{"alpha", tres.alpha}, {"loss_curve", tres.loss_curve}};
  if (tres.warning) tj["warning"] = *tres.warning;
  write_json(art.threshold, tj);
  say("stage 3: alpha " + std::to_string(tres.alpha));

  RunConfig run;
  run.environments = fs::absolute(config.environments).string();
  run.navigator = nres.policy;
  // Bernoulli(q) triggering; see the notes on the deterministic q > 0.5 rule.
  run.ask = AskPolicy::learnable(tres.alpha, true);
  run.backend = "toy";
  run.checkpoint = fs::absolute(art.checkpoint).string();
  run.vocabulary = fs::absolute(art.vocabulary).string();
  run.seed = config.seed;
  write_json(art.run_config, run.to_json());
  return art;
}

}  // namespace vdn
