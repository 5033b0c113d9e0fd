#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "vdn/errors.hpp"
#include "vdn/random.hpp"
#include "vdn/toy_decoder.hpp"

using namespace vdn;

namespace {

struct Sample {
  DialogueContext context;
  QAPair qa;
};

std::vector<Sample> samples(const NavGraph& g, int count, std::uint64_t seed, int max_future) {
  Rng rng(seed);
  const auto targets = g.nodes_with_objects();
  std::vector<Sample> out;
  while (static_cast<int>(out.size()) < count) {
    const auto start = rng.index(g.size());
    const auto& t = g.node(targets[rng.index(targets.size())]);
    const auto ctx = build_context(g, g.node(start).id, static_cast<int>(rng.index(kSectors)), t.id,
                                   t.objects.front(), max_future);
    out.push_back({ctx, template_generate(ctx, rng.next())});
  }
  return out;
}

ToyDecoder randomized(const ToyDecoderConfig& cfg, std::uint64_t seed, double spread) {
  auto m = ToyDecoder::initialized(cfg, seed);
  Rng rng(seed + 1);
  for (auto& p : m.parameters()) p += spread * rng.normal();
  return m;
}

double gelu_ref(double u) {
  return 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
}

using Rows = std::vector<std::vector<double>>;

Rows layer_norm_ref(const Rows& x, const ToyDecoder::ConstTensorMap& g,
                    const ToyDecoder::ConstTensorMap& b) {
  Rows out = x;
  for (std::size_t t = 0; t < x.size(); ++t) {
    double mu = 0.0, var = 0.0;
    for (double v : x[t]) mu += v;
    mu /= x[t].size();
    for (double v : x[t]) var += (v - mu) * (v - mu);
    var /= x[t].size();
    for (std::size_t i = 0; i < x[t].size(); ++i)
      out[t][i] = (x[t][i] - mu) / std::sqrt(var + 1e-5) * g(0, i) + b(0, i);
  }
  return out;
}

Rows affine_ref(const Rows& x, const ToyDecoder::ConstTensorMap& w,
                const ToyDecoder::ConstTensorMap& b) {
  Rows out(x.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (Eigen::Index i = 0; i < w.rows(); ++i) s += x[t][i] * w(i, j);
      out[t][j] = s;
    }
  return out;
}

// Step-by-step forward pass with scalar loops; prints the attention weights
// of the first layer.
Rows forward_ref(const ToyDecoder& m, const DialogueSequence& seq, bool print) {
  const auto& cfg = m.config();
  const int d = cfg.d_model, H = cfg.heads, dh = d / H;
  const std::size_t T = seq.size();
  Rows x(T, std::vector<double>(d, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    for (int j = 0; j < d; ++j) {
      double v = 0.0;
      if (seq.is_image(t)) {
        const auto& f = seq.images[seq.image_index[t]];
        v = m.tensor("img_b")(0, j);
        for (std::size_t i = 0; i < f.size(); ++i) v += f[i] * m.tensor("img_w")(i, j);
      } else {
        v = m.tensor("tok_emb")(seq.tokens[t], j);
      }
      x[t][j] = v + m.tensor("pos_emb")(t, j) + m.tensor("seg_emb")(static_cast<int>(seq.segments[t]), j);
    }
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    const auto h = layer_norm_ref(x, m.tensor(p + "ln1_g"), m.tensor(p + "ln1_b"));
    const auto q = affine_ref(h, m.tensor(p + "wq"), m.tensor(p + "bq"));
    const auto k = affine_ref(h, m.tensor(p + "wk"), m.tensor(p + "bk"));
    const auto v = affine_ref(h, m.tensor(p + "wv"), m.tensor(p + "bv"));
    Rows o(T, std::vector<double>(d, 0.0));
    for (int head = 0; head < H; ++head) {
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> w(i + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (int c = 0; c < dh; ++c) s += q[i][head * dh + c] * k[j][head * dh + c];
          w[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (auto& wj : w) z += (wj = std::exp(wj - mx));
        for (auto& wj : w) wj /= z;
        if (print && l == 0) {
          std::string line = "attention head " + std::to_string(head) + " row " + std::to_string(i) + ":";
          for (double wj : w) line += " " + std::to_string(wj);
          MESSAGE(line);
        }
        for (std::size_t j = 0; j <= i; ++j)
          for (int c = 0; c < dh; ++c) o[i][head * dh + c] += w[j] * v[j][head * dh + c];
      }
    }
    const auto proj = affine_ref(o, m.tensor(p + "wo"), m.tensor(p + "bo"));
    for (std::size_t t = 0; t < T; ++t)
      for (int j = 0; j < d; ++j) x[t][j] += proj[t][j];
    const auto h2 = layer_norm_ref(x, m.tensor(p + "ln2_g"), m.tensor(p + "ln2_b"));
    auto u = affine_ref(h2, m.tensor(p + "w1"), m.tensor(p + "b1"));
    for (auto& row : u)
      for (auto& val : row) val = gelu_ref(val);
    const auto f = affine_ref(u, m.tensor(p + "w2"), m.tensor(p + "b2"));
    for (std::size_t t = 0; t < T; ++t)
      for (int j = 0; j < d; ++j) x[t][j] += f[t][j];
  }
  const auto hf = layer_norm_ref(x, m.tensor("lnf_g"), m.tensor("lnf_b"));
  return affine_ref(hf, m.tensor("out_w"), m.tensor("out_b"));
}

}  // namespace

TEST_CASE("zero parameters give uniform logits") {
  const ToyDecoder m({.layers = 2, .d_model = 8, .heads = 2, .vocab_size = 12, .max_length = 32,
                      .feature_dim = 16});
  const auto g = generate_environment(3, {.feature_dim = 16});
  DialogueContext ctx = build_context(g, g.node(0).id, 0, g.node(5).id, "sofa", 3);
  const auto seq = build_sequence(ctx, {4}, {5, 6}, {7, 8, 9}, 32);
  const auto logits = m.forward(seq);
  CHECK(logits.rows() == static_cast<Eigen::Index>(seq.size()));
  CHECK(logits.cols() == 12);
  CHECK((logits.array() == logits(0, 0)).all());
  CHECK(m.loss(seq) == doctest::Approx(std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("forward matches a step-by-step recomputation on four positions") {
  const ToyDecoderConfig cfg{.layers = 1, .d_model = 4, .heads = 2, .vocab_size = 6,
                             .max_length = 8, .feature_dim = 3};
  const auto m = randomized(cfg, 17, 0.5);
  DialogueSequence seq;
  seq.push_token(Vocabulary::kBos, Segment::Target);
  seq.push_token(5, Segment::Target);
  seq.push_image({0.5f, -0.25f, 1.0f});
  seq.push_token(4, Segment::QuestionText);
  compute_loss_mask(seq);
  const auto got = m.forward(seq);
  const auto want = forward_ref(m, seq, true);
  for (std::size_t t = 0; t < 4; ++t)
    for (int v = 0; v < 6; ++v) CHECK(got(t, v) == doctest::Approx(want[t][v]).epsilon(1e-12));
}

TEST_CASE("forward matches the recomputation on a full dialogue sequence") {
  const auto g = generate_environment(8, {.feature_dim = 8});
  const auto vocab = Vocabulary::from_templates();
  const ToyDecoderConfig cfg{.layers = 2, .d_model = 8, .heads = 2, .vocab_size = vocab.size(),
                             .max_length = 96, .feature_dim = 8};
  const auto m = randomized(cfg, 5, 0.3);
  const auto s = samples(g, 1, 4, 4).front();
  const auto seq = encode_dialogue(s.context, s.qa, vocab, 96);
  const auto got = m.forward(seq);
  const auto want = forward_ref(m, seq, false);
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (int v = 0; v < vocab.size(); ++v) CHECK(got(t, v) == doctest::Approx(want[t][v]).epsilon(1e-10));
}

TEST_CASE("causality") {
  const auto g = generate_environment(8, {.feature_dim = 8});
  const auto vocab = Vocabulary::from_templates();
  const ToyDecoderConfig cfg{.layers = 2, .d_model = 8, .heads = 2, .vocab_size = vocab.size(),
                             .max_length = 96, .feature_dim = 8};
  const auto m = randomized(cfg, 6, 0.3);
  const auto s = samples(g, 1, 9, 5).front();
  const auto seq = encode_dialogue(s.context, s.qa, vocab, 96);
  const auto base = m.forward(seq);
  Rng rng(2);
  for (std::size_t cut = 1; cut < seq.size(); cut += 3) {
    auto altered = seq;
    for (std::size_t j = cut; j < altered.size(); ++j) {
      if (altered.is_image(j)) {
        for (auto& f : altered.images[altered.image_index[j]]) f = static_cast<float>(rng.normal());
      } else {
        altered.tokens[j] = static_cast<int>(4 + rng.index(vocab.size() - 4));
      }
    }
    const auto other = m.forward(altered);
    CHECK(other.topRows(cut) == base.topRows(cut));
  }
}

TEST_CASE("masked positions receive exactly zero logit gradient") {
  const auto g = generate_environment(8, {.feature_dim = 8});
  const auto vocab = Vocabulary::from_templates();
  const ToyDecoderConfig cfg{.layers = 2, .d_model = 8, .heads = 2, .vocab_size = vocab.size(),
                             .max_length = 96, .feature_dim = 8};
  const auto m = randomized(cfg, 6, 0.3);
  for (const auto& s : samples(g, 10, 21, 6)) {
    const auto seq = encode_dialogue(s.context, s.qa, vocab, 96);
    std::vector<double> grad(m.parameter_count(), 0.0);
    ToyDecoder::Matrix dlogits;
    m.loss_and_gradient(seq, grad, 1.0, &dlogits);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (!seq.loss_mask[i]) CHECK((dlogits.row(i).array() == 0.0).all());
      else CHECK(dlogits.row(i).cwiseAbs().sum() > 0.0);
    }
  }
}

TEST_CASE("full parameter gradient matches central finite differences") {
  const auto g = generate_environment(12, {.feature_dim = 8});
  const auto vocab = Vocabulary::from_templates();
  const ToyDecoderConfig cfg{.layers = 2, .d_model = 8, .heads = 2, .vocab_size = vocab.size(),
                             .max_length = 96, .feature_dim = 8};
  auto m = randomized(cfg, 7, 0.3);
  const auto s = samples(g, 1, 13, 3).front();
  const auto seq = encode_dialogue(s.context, s.qa, vocab, 96);

  std::vector<double> grad(m.parameter_count(), 0.0);
  m.loss_and_gradient(seq, grad);
  const double h = 1e-4;
  double worst = 0.0;
  int compared = 0;
  auto& p = m.parameters();
  auto loss_at = [&](std::size_t i, double x) {
    const double saved = p[i];
    p[i] = x;
    const double l = m.loss(seq);
    p[i] = saved;
    return l;
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    // Fourth-order central stencil.
    const double x = p[i];
    const double fd = (-loss_at(i, x + 2 * h) + 8 * loss_at(i, x + h) - 8 * loss_at(i, x - h) +
                       loss_at(i, x - 2 * h)) / (12.0 * h);
    // Relative error with a 1e-6 floor on the magnitude: entries whose true
    // gradient is ~0 are compared absolutely.
    const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, rel);
    ++compared;
  }
  MESSAGE("compared " << compared << " parameters, worst relative error " << worst);
  CHECK(compared == static_cast<int>(m.parameter_count()));
  CHECK(worst <= 1e-4);
}

TEST_CASE("training reduces loss and a single pair can be memorized") {
  const auto g = generate_environment(21, {.feature_dim = 16});
  const auto vocab = Vocabulary::from_templates();
  const ToyDecoderConfig cfg{.layers = 1, .d_model = 16, .heads = 2, .vocab_size = vocab.size(),
                             .max_length = 128, .feature_dim = 16};
  auto m = ToyDecoder::initialized(cfg, 1);
  const auto s = samples(g, 1, 2, 6).front();
  const std::vector<DialogueSequence> corpus{encode_dialogue(s.context, s.qa, vocab, 128)};
  const auto run = train_dialogue_model(m, corpus, {.epochs = 150, .lr = 1e-2, .batch_size = 1, .seed = 3});
  CHECK(run.loss_curve.size() == 151);
  CHECK(run.loss_curve.back() < 0.05 * run.loss_curve.front());
  const auto out = generate_qa(m, vocab, s.context);
  CHECK(out.question == s.qa.question);
  CHECK(out.answer == s.qa.answer);
  CHECK(out.question_terminated);
  CHECK(out.answer_terminated);
}

TEST_CASE("question generation ignores future observations") {
  const auto g = generate_environment(30, {.feature_dim = 8});
  const auto vocab = Vocabulary::from_templates();
  const ToyDecoderConfig cfg{.layers = 2, .d_model = 8, .heads = 2, .vocab_size = vocab.size(),
                             .max_length = 128, .feature_dim = 8};
  const auto m = randomized(cfg, 8, 0.4);
  Rng rng(4);
  for (const auto& s : samples(g, 8, 40, 6)) {
    auto ablated = s.context;
    for (std::size_t i = 1; i < ablated.future_obs.size(); ++i)
      for (auto& f : ablated.future_obs[i]) f = static_cast<float>(rng.normal());
    const auto a = generate_qa(m, vocab, s.context, 12);
    const auto b = generate_qa(m, vocab, ablated, 12);
    CHECK(a.question == b.question);
    CHECK(a.question.size() <= 12);
    CHECK(a.answer.size() <= 12);
  }
}

TEST_CASE("checkpoint round trip and errors") {
  const ToyDecoderConfig cfg{.layers = 1, .d_model = 4, .heads = 2, .vocab_size = 6,
                             .max_length = 8, .feature_dim = 3};
  const auto m = randomized(cfg, 1, 0.1);
  const auto path = std::filesystem::temp_directory_path() / "vdn_toy_ckpt.json";
  m.save(path.string());
  const auto back = ToyDecoder::load(path.string());
  CHECK(back.config() == m.config());
  CHECK(back.parameters() == m.parameters());
  std::filesystem::remove(path);

  auto j = m.to_json();
  j["tensors"][0]["shape"][0] = 7;
  CHECK_THROWS_AS(ToyDecoder::from_json(j), FormatError);
  CHECK_THROWS_AS(ToyDecoder({.layers = 1, .d_model = 6, .heads = 4, .vocab_size = 6}), InvalidConfig);

  DialogueSequence seq;
  seq.push_token(Vocabulary::kBos, Segment::Target);
  seq.push_image({1.0f, 2.0f});
  compute_loss_mask(seq);
  CHECK_THROWS_AS(m.forward(seq), DimensionMismatch);
}
