#include "vdn/toy_decoder.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "vdn/errors.hpp"
#include "vdn/random.hpp"

namespace vdn {

using nlohmann::json;
using Matrix = ToyDecoder::Matrix;
using RowVec = Eigen::RowVectorXd;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr int kCheckpointVersion = 1;

struct LnCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

Matrix layer_norm(const Matrix& x, const Eigen::Ref<const RowVec>& g,
                  const Eigen::Ref<const RowVec>& b, LnCache& c) {
  const auto n = x.rows(), d = x.cols();
  c.xhat.resize(n, d);
  c.rstd.resize(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double mu = x.row(t).mean();
    const RowVec centered = x.row(t).array() - mu;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    c.rstd(t) = 1.0 / std::sqrt(var + kLnEps);
    c.xhat.row(t) = centered * c.rstd(t);
  }
  Matrix out = c.xhat.array().rowwise() * g.array();
  out.rowwise() += b;
  return out;
}

Matrix layer_norm_backward(const Matrix& dy, const LnCache& c, const Eigen::Ref<const RowVec>& g,
                           Eigen::Ref<RowVec> dg, Eigen::Ref<RowVec> db, double scale) {
  dg += scale * (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += scale * dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * g.array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const double m1 = dxhat.row(t).mean();
    const double m2 = dxhat.row(t).dot(c.xhat.row(t)) / static_cast<double>(dy.cols());
    dx.row(t) = c.rstd(t) * (dxhat.row(t).array() - m1 - c.xhat.row(t).array() * m2).matrix();
  }
  return dx;
}

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

double gelu_grad(double u) {
  const double th = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

std::string layer_name(int l, const char* what) { return "l" + std::to_string(l) + "." + what; }

}  // namespace

void ToyDecoderConfig::validate() const {
  if (layers < 1 || d_model < 1 || heads < 1) throw InvalidConfig("layers, d_model and heads must be >= 1");
  if (d_model % heads != 0) throw InvalidConfig("d_model must be divisible by heads");
  if (vocab_size < 4) throw InvalidConfig("vocab_size must cover the special tokens");
  if (max_length < 8) throw InvalidConfig("max_length too small");
  if (feature_dim < 1) throw InvalidConfig("feature_dim must be >= 1");
}

json ToyDecoderConfig::to_json() const {
  return {{"layers", layers},         {"d_model", d_model},       {"heads", heads},
          {"vocab_size", vocab_size}, {"max_length", max_length}, {"feature_dim", feature_dim}};
}

ToyDecoderConfig ToyDecoderConfig::from_json(const json& j) {
  ToyDecoderConfig c;
  c.layers = j.value("layers", c.layers);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_length = j.value("max_length", c.max_length);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  return c;
}

struct ToyDecoder::Cache {
  struct Layer {
    Matrix x_in;
    LnCache ln1;
    Matrix h1, q, k, v;
    std::vector<Matrix> attn;
    Matrix concat;
    Matrix x_mid;
    LnCache ln2;
    Matrix h2, u, g;
  };
  std::vector<Layer> layers;
  Matrix x_out;
  LnCache lnf;
  Matrix hf;
};

ToyDecoder::ToyDecoder(const ToyDecoderConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.d_model, ff = 4 * d;
  std::size_t total = 0;
  auto add = [&](std::string name, int rows, int cols) {
    tensors_.push_back({std::move(name), rows, cols, total});
    total += static_cast<std::size_t>(rows) * cols;
  };
  add("tok_emb", config_.vocab_size, d);
  add("img_w", config_.feature_dim, d);
  add("img_b", 1, d);
  add("pos_emb", config_.max_length, d);
  add("seg_emb", kSegments, d);
  for (int l = 0; l < config_.layers; ++l) {
    add(layer_name(l, "ln1_g"), 1, d);
    add(layer_name(l, "ln1_b"), 1, d);
    add(layer_name(l, "wq"), d, d);
    add(layer_name(l, "bq"), 1, d);
    add(layer_name(l, "wk"), d, d);
    add(layer_name(l, "bk"), 1, d);
    add(layer_name(l, "wv"), d, d);
    add(layer_name(l, "bv"), 1, d);
    add(layer_name(l, "wo"), d, d);
    add(layer_name(l, "bo"), 1, d);
    add(layer_name(l, "ln2_g"), 1, d);
    add(layer_name(l, "ln2_b"), 1, d);
    add(layer_name(l, "w1"), d, ff);
    add(layer_name(l, "b1"), 1, ff);
    add(layer_name(l, "w2"), ff, d);
    add(layer_name(l, "b2"), 1, d);
  }
  add("lnf_g", 1, d);
  add("lnf_b", 1, d);
  add("out_w", d, config_.vocab_size);
  add("out_b", 1, config_.vocab_size);
  params_.assign(total, 0.0);
}

ToyDecoder ToyDecoder::initialized(const ToyDecoderConfig& config, std::uint64_t seed) {
  ToyDecoder m(config);
  Rng rng(seed);
  for (const auto& t : m.tensors_) {
    const auto& n = t.name;
    const bool gain = n.ends_with("_g");
    const bool bias = t.rows == 1 && !gain;
    auto* p = m.params_.data() + t.offset;
    for (std::size_t i = 0; i < static_cast<std::size_t>(t.rows) * t.cols; ++i) {
      p[i] = gain ? 1.0 : bias ? 0.0 : 0.02 * rng.normal();
    }
  }
  return m;
}

std::size_t ToyDecoder::offset(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t.offset;
  throw InvalidConfig("no tensor named '" + name + "'");
}

ToyDecoder::TensorMap ToyDecoder::tensor(const std::string& name) {
  for (const auto& t : tensors_)
    if (t.name == name) return TensorMap(params_.data() + t.offset, t.rows, t.cols);
  throw InvalidConfig("no tensor named '" + name + "'");
}

ToyDecoder::ConstTensorMap ToyDecoder::tensor(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return ConstTensorMap(params_.data() + t.offset, t.rows, t.cols);
  throw InvalidConfig("no tensor named '" + name + "'");
}

void ToyDecoder::check_sequence(const DialogueSequence& seq) const {
  if (seq.size() == 0) throw DimensionMismatch("empty sequence");
  if (seq.size() > static_cast<std::size_t>(config_.max_length)) {
    throw SequenceTooLong("sequence of " + std::to_string(seq.size()) + " elements exceeds " +
                          std::to_string(config_.max_length));
  }
  if (seq.image_index.size() != seq.size() || seq.segments.size() != seq.size() ||
      seq.loss_mask.size() != seq.size()) {
    throw DimensionMismatch("sequence fields have inconsistent lengths");
  }
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.is_image(i)) {
      const auto idx = static_cast<std::size_t>(seq.image_index[i]);
      if (idx >= seq.images.size() ||
          seq.images[idx].size() != static_cast<std::size_t>(config_.feature_dim)) {
        throw DimensionMismatch("image slot " + std::to_string(i) + " has dimension " +
                                std::to_string(idx < seq.images.size() ? seq.images[idx].size() : 0) +
                                ", expected " + std::to_string(config_.feature_dim));
      }
    } else if (seq.tokens[i] < 0 || seq.tokens[i] >= config_.vocab_size) {
      throw DimensionMismatch("token id " + std::to_string(seq.tokens[i]) + " outside vocabulary");
    }
  }
}

Matrix ToyDecoder::forward_impl(const DialogueSequence& seq, Cache* cache) const {
  check_sequence(seq);
  const int d = config_.d_model, H = config_.heads, dh = d / H;
  const auto T = static_cast<Eigen::Index>(seq.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto P = [this](const std::string& name) { return tensor(name); };
  auto R = [this](const std::string& name) {
    return Eigen::Map<const RowVec>(params_.data() + offset(name), config_.d_model);
  };

  const auto tok = P("tok_emb"), img_w = P("img_w"), img_b = P("img_b"), pos = P("pos_emb"),
             seg = P("seg_emb");
  Matrix x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (seq.is_image(t)) {
      const auto& f = seq.images[seq.image_index[t]];
      const RowVec v = Eigen::Map<const Eigen::RowVectorXf>(f.data(), f.size()).cast<double>();
      x.row(t) = v * img_w + img_b;
    } else {
      x.row(t) = tok.row(seq.tokens[t]);
    }
    x.row(t) += pos.row(t) + seg.row(static_cast<int>(seq.segments[t]));
  }

  Cache local;
  Cache& c = cache ? *cache : local;
  c.layers.assign(config_.layers, {});
  for (int l = 0; l < config_.layers; ++l) {
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.h1 = layer_norm(x, R(layer_name(l, "ln1_g")), R(layer_name(l, "ln1_b")), lc.ln1);
    lc.q = lc.h1 * P(layer_name(l, "wq"));
    lc.q.rowwise() += R(layer_name(l, "bq"));
    lc.k = lc.h1 * P(layer_name(l, "wk"));
    lc.k.rowwise() += R(layer_name(l, "bk"));
    lc.v = lc.h1 * P(layer_name(l, "wv"));
    lc.v.rowwise() += R(layer_name(l, "bv"));
    lc.concat.resize(T, d);
    lc.attn.resize(H);
    for (int h = 0; h < H; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      Matrix a = (qh * kh.transpose()) * scale;
      for (Eigen::Index i = 0; i < T; ++i) {
        const double m = a.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          a(i, j) = std::exp(a(i, j) - m);
          z += a(i, j);
        }
        a.row(i).head(i + 1) /= z;
        a.row(i).tail(T - i - 1).setZero();
      }
      lc.concat.middleCols(h * dh, dh) = a * vh;
      lc.attn[h] = std::move(a);
    }
    x += lc.concat * P(layer_name(l, "wo"));
    x.rowwise() += R(layer_name(l, "bo"));
    lc.x_mid = x;
    lc.h2 = layer_norm(x, R(layer_name(l, "ln2_g")), R(layer_name(l, "ln2_b")), lc.ln2);
    lc.u = lc.h2 * P(layer_name(l, "w1"));
    lc.u.rowwise() += Eigen::Map<const RowVec>(params_.data() + offset(layer_name(l, "b1")), 4 * d);
    lc.g = lc.u.unaryExpr([](double u) { return gelu(u); });
    x += lc.g * P(layer_name(l, "w2"));
    x.rowwise() += R(layer_name(l, "b2"));
  }
  c.x_out = x;
  c.hf = layer_norm(x, R("lnf_g"), R("lnf_b"), c.lnf);
  Matrix logits = c.hf * P("out_w");
  logits.rowwise() += Eigen::Map<const RowVec>(params_.data() + offset("out_b"), config_.vocab_size);
  return logits;
}

Matrix ToyDecoder::forward(const DialogueSequence& seq) const { return forward_impl(seq, nullptr); }

namespace {

// Masked mean cross-entropy and its gradient with respect to the logits.
double masked_cross_entropy(const DialogueSequence& seq, const Matrix& logits, Matrix& dlogits) {
  dlogits.setZero(logits.rows(), logits.cols());
  const auto count = std::accumulate(seq.loss_mask.begin(), seq.loss_mask.end(), 0);
  if (count == 0) return 0.0;
  double loss = 0.0;
  for (Eigen::Index t = 0; t + 1 < logits.rows(); ++t) {
    if (!seq.loss_mask[t]) continue;
    const int y = seq.tokens[t + 1];
    const double m = logits.row(t).maxCoeff();
    const RowVec e = (logits.row(t).array() - m).exp();
    const double z = e.sum();
    loss += std::log(z) + m - logits(t, y);
    dlogits.row(t) = e / z;
    dlogits(t, y) -= 1.0;
  }
  dlogits /= count;
  return loss / count;
}

}  // namespace

double ToyDecoder::loss(const DialogueSequence& seq) const {
  const Matrix logits = forward(seq);
  Matrix dlogits;
  return masked_cross_entropy(seq, logits, dlogits);
}

double ToyDecoder::loss_and_gradient(const DialogueSequence& seq, std::vector<double>& grad,
                                     double scale, Matrix* dlogits_out) const {
  if (grad.size() != params_.size()) throw DimensionMismatch("gradient buffer has wrong size");
  Cache cache;
  const Matrix logits = forward_impl(seq, &cache);
  Matrix dlogits;
  const double loss = masked_cross_entropy(seq, logits, dlogits);
  if (dlogits_out) *dlogits_out = dlogits;
  backward(seq, cache, dlogits, grad, scale);
  return loss;
}

void ToyDecoder::backward(const DialogueSequence& seq, const Cache& c, const Matrix& dlogits,
                          std::vector<double>& grad, double scale) const {
  const int d = config_.d_model, H = config_.heads, dh = d / H, ff = 4 * d;
  const auto T = dlogits.rows();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto P = [this](const std::string& name) { return tensor(name); };
  auto R = [this](const std::string& name, int n) {
    return Eigen::Map<const RowVec>(params_.data() + offset(name), n);
  };
  auto G = [&](const std::string& name) {
    for (const auto& t : tensors_)
      if (t.name == name) return TensorMap(grad.data() + t.offset, t.rows, t.cols);
    throw InvalidConfig("no tensor named '" + name + "'");
  };
  auto GR = [&](const std::string& name, int n) {
    return Eigen::Map<RowVec>(grad.data() + offset(name), n);
  };

  G("out_w").noalias() += scale * (c.hf.transpose() * dlogits);
  GR("out_b", config_.vocab_size) += scale * dlogits.colwise().sum();
  Matrix dx = layer_norm_backward(dlogits * P("out_w").transpose(), c.lnf, R("lnf_g", d),
                                  GR("lnf_g", d), GR("lnf_b", d), scale);

  for (int l = config_.layers - 1; l >= 0; --l) {
    const auto& lc = c.layers[l];
    // x_out = x_mid + gelu(LN2(x_mid) W1 + b1) W2 + b2
    G(layer_name(l, "w2")).noalias() += scale * (lc.g.transpose() * dx);
    GR(layer_name(l, "b2"), d) += scale * dx.colwise().sum();
    const Matrix dg = dx * P(layer_name(l, "w2")).transpose();
    const Matrix du = dg.array() * lc.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
    G(layer_name(l, "w1")).noalias() += scale * (lc.h2.transpose() * du);
    GR(layer_name(l, "b1"), ff) += scale * du.colwise().sum();
    const Matrix dh2 = du * P(layer_name(l, "w1")).transpose();
    Matrix dmid = dx + layer_norm_backward(dh2, lc.ln2, R(layer_name(l, "ln2_g"), d),
                                           GR(layer_name(l, "ln2_g"), d),
                                           GR(layer_name(l, "ln2_b"), d), scale);

    // x_mid = x_in + attn(LN1(x_in)) Wo + bo
    G(layer_name(l, "wo")).noalias() += scale * (lc.concat.transpose() * dmid);
    GR(layer_name(l, "bo"), d) += scale * dmid.colwise().sum();
    const Matrix dconcat = dmid * P(layer_name(l, "wo")).transpose();
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < H; ++h) {
      const auto& a = lc.attn[h];
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      const auto doh = dconcat.middleCols(h * dh, dh);
      const Matrix da = doh * vh.transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * doh;
      const Eigen::VectorXd rows = (da.array() * a.array()).rowwise().sum();
      const Matrix ds = a.array() * (da.colwise() - rows).array();
      dq.middleCols(h * dh, dh) = (ds * kh) * att_scale;
      dk.middleCols(h * dh, dh) = (ds.transpose() * qh) * att_scale;
    }
    G(layer_name(l, "wq")).noalias() += scale * (lc.h1.transpose() * dq);
    G(layer_name(l, "wk")).noalias() += scale * (lc.h1.transpose() * dk);
    G(layer_name(l, "wv")).noalias() += scale * (lc.h1.transpose() * dv);
    GR(layer_name(l, "bq"), d) += scale * dq.colwise().sum();
    GR(layer_name(l, "bk"), d) += scale * dk.colwise().sum();
    GR(layer_name(l, "bv"), d) += scale * dv.colwise().sum();
    const Matrix dh1 = dq * P(layer_name(l, "wq")).transpose() +
                       dk * P(layer_name(l, "wk")).transpose() +
                       dv * P(layer_name(l, "wv")).transpose();
    dx = dmid + layer_norm_backward(dh1, lc.ln1, R(layer_name(l, "ln1_g"), d),
                                    GR(layer_name(l, "ln1_g"), d), GR(layer_name(l, "ln1_b"), d),
                                    scale);
  }

  auto gtok = G("tok_emb"), gimg = G("img_w"), gpos = G("pos_emb"), gseg = G("seg_emb");
  auto gimg_b = GR("img_b", d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const RowVec row = scale * dx.row(t);
    if (seq.is_image(t)) {
      const auto& f = seq.images[seq.image_index[t]];
      const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXf>(f.data(), f.size()).cast<double>();
      gimg.noalias() += v * row;
      gimg_b += row;
    } else {
      gtok.row(seq.tokens[t]) += row;
    }
    gpos.row(t) += row;
    gseg.row(static_cast<int>(seq.segments[t])) += row;
  }
}

json ToyDecoder::to_json() const {
  json tensors = json::array();
  for (const auto& t : tensors_) {
    const auto begin = params_.begin() + static_cast<std::ptrdiff_t>(t.offset);
    tensors.push_back({{"name", t.name},
                       {"shape", {t.rows, t.cols}},
                       {"data", std::vector<double>(begin, begin + t.rows * t.cols)}});
  }
  return {{"format", "vdn-toy-decoder"},
          {"version", kCheckpointVersion},
          {"config", config_.to_json()},
          {"tensors", std::move(tensors)}};
}

ToyDecoder ToyDecoder::from_json(const json& j) {
  try {
    if (j.at("format") != "vdn-toy-decoder" || j.at("version") != kCheckpointVersion)
      throw FormatError("not a version-1 toy decoder checkpoint");
    ToyDecoder m(ToyDecoderConfig::from_json(j.at("config")));
    const auto& tensors = j.at("tensors");
    if (tensors.size() != m.tensors_.size()) throw FormatError("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& info = m.tensors_[i];
      const auto& t = tensors[i];
      const auto data = t.at("data").get<std::vector<double>>();
      if (t.at("name") != info.name || t.at("shape")[0] != info.rows ||
          t.at("shape")[1] != info.cols || data.size() != static_cast<std::size_t>(info.rows) * info.cols) {
        throw FormatError("checkpoint tensor '" + info.name + "' has wrong name or shape");
      }
      std::copy(data.begin(), data.end(), m.params_.begin() + static_cast<std::ptrdiff_t>(info.offset));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void ToyDecoder::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InvalidConfig("cannot write checkpoint '" + path + "'");
  out << to_json().dump() << '\n';
}

ToyDecoder ToyDecoder::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read checkpoint '" + path + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

double corpus_loss(const ToyDecoder& model, const std::vector<DialogueSequence>& corpus) {
  if (corpus.empty()) throw EmptyCorpus("dialogue corpus is empty");
  double total = 0.0;
  for (const auto& s : corpus) total += model.loss(s);
  return total / static_cast<double>(corpus.size());
}

DialogueTraining train_dialogue_model(ToyDecoder& model, const std::vector<DialogueSequence>& corpus,
                                      const DialogueTrainConfig& cfg,
                                      const std::function<void(int, double)>& on_epoch) {
  if (corpus.empty()) throw EmptyCorpus("dialogue corpus is empty");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0.0))
    throw InvalidConfig("need epochs >= 0, batch_size >= 1 and lr > 0");

  DialogueTraining out;
  out.loss_curve.push_back(corpus_loss(model, corpus));
  auto& p = model.parameters();
  const std::size_t n = p.size();
  std::vector<double> m(n, 0.0), v(n, 0.0), grad(n);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        epoch_loss += model.loss_and_gradient(corpus[order[i]], grad, w);
      }
      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        p[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
      }
    }
    epoch_loss /= static_cast<double>(corpus.size());
    if (!std::isfinite(epoch_loss)) {
      throw DivergedLoss("dialogue loss became non-finite at epoch " + std::to_string(epoch));
    }
    out.loss_curve.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return out;
}

namespace {

// Greedy next token; the padding and BOS ids are never emitted.
int greedy_next(const ToyDecoder& model, const DialogueSequence& seq) {
  const Matrix logits = model.forward(seq);
  const auto last = logits.row(logits.rows() - 1);
  int best = Vocabulary::kEos;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(last.size()); ++i) {
    if (i == Vocabulary::kPad || i == Vocabulary::kBos) continue;
    if (last(i) > best_v) {
      best_v = last(i);
      best = i;
    }
  }
  return best;
}

// Decodes one span into `seq`, always closing it with EOS. Returns true when
// the model emitted EOS itself.
bool decode_span(const ToyDecoder& model, DialogueSequence& seq, Segment segment, int cap,
                 std::vector<int>& out) {
  for (int i = 0; i < cap; ++i) {
    if (seq.size() >= static_cast<std::size_t>(model.config().max_length)) break;
    const int next = greedy_next(model, seq);
    if (next == Vocabulary::kEos) {
      seq.push_token(Vocabulary::kEos, segment);
      return true;
    }
    seq.push_token(next, segment);
    out.push_back(next);
  }
  seq.push_token(Vocabulary::kEos, segment);
  return false;
}

}  // namespace

QAPair generate_qa(const ToyDecoder& model, const Vocabulary& vocab, const DialogueContext& context,
                   int cap) {
  if (cap < 1) throw InvalidConfig("generation cap must be >= 1");
  auto seq = question_prompt(context, vocab.encode(tokenize(context.target_object)));
  const std::size_t budget = seq.size() + 2 * cap + context.future_obs.size() + 3;
  if (budget > static_cast<std::size_t>(model.config().max_length)) {
    throw SequenceTooLong("generation needs up to " + std::to_string(budget) +
                          " positions, model allows " + std::to_string(model.config().max_length));
  }
  QAPair qa;
  std::vector<int> q, a;
  qa.question_terminated = decode_span(model, seq, Segment::QuestionText, cap, q);
  for (const auto& f : context.future_obs) seq.push_image(f);
  seq.push_token(Vocabulary::kBos, Segment::AnswerText);
  qa.answer_terminated = decode_span(model, seq, Segment::AnswerText, cap, a);
  qa.question = vocab.decode(q);
  qa.answer = vocab.decode(a);
  return qa;
}

DialogueSequence encode_dialogue(const DialogueContext& context, const QAPair& qa,
                                 const Vocabulary& vocab, std::size_t max_length) {
  return build_sequence(context, vocab.encode(tokenize(context.target_object)),
                        vocab.encode(qa.question), vocab.encode(qa.answer), max_length);
}

}  // namespace vdn
