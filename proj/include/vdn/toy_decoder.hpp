#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vdn/dialogue.hpp"
#include "vdn/vocabulary.hpp"

namespace vdn {

struct ToyDecoderConfig {
  int layers = 2;
  int d_model = 64;
  int heads = 2;
  int vocab_size = 0;
  int max_length = 160;
  int feature_dim = kDefaultFeatureDim;

  void validate() const;  // throws InvalidConfig
  nlohmann::json to_json() const;
  static ToyDecoderConfig from_json(const nlohmann::json& j);
  bool operator==(const ToyDecoderConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  int rows;
  int cols;
  std::size_t offset;
};

// Pre-LayerNorm causal transformer decoder over interleaved token / image
// sequences, with hand-written backward pass. All parameters live in one
// flat double buffer; `tensor()` gives named views into it.
class ToyDecoder {
 public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using TensorMap = Eigen::Map<Matrix>;
  using ConstTensorMap = Eigen::Map<const Matrix>;

  ToyDecoder() = default;
  // All parameters zero.
  explicit ToyDecoder(const ToyDecoderConfig& config);
  // Normal(0, 0.02) weights, unit LayerNorm gains, zero biases.
  static ToyDecoder initialized(const ToyDecoderConfig& config, std::uint64_t seed);

  const ToyDecoderConfig& config() const { return config_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  TensorMap tensor(const std::string& name);
  ConstTensorMap tensor(const std::string& name) const;

  // Logits, one row per element.
  Matrix forward(const DialogueSequence& seq) const;

  // Mean cross-entropy of element i+1 at positions with loss_mask[i] = 1.
  double loss(const DialogueSequence& seq) const;
  // Adds scale * dLoss/dparams into `grad` (sized parameter_count()).
  // `dlogits`, when given, receives dLoss/dlogits (unscaled).
  double loss_and_gradient(const DialogueSequence& seq, std::vector<double>& grad,
                           double scale = 1.0, Matrix* dlogits = nullptr) const;

  nlohmann::json to_json() const;
  static ToyDecoder from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static ToyDecoder load(const std::string& path);

 private:
  struct Cache;
  Matrix forward_impl(const DialogueSequence& seq, Cache* cache) const;
  void backward(const DialogueSequence& seq, const Cache& cache, const Matrix& dlogits,
                std::vector<double>& grad, double scale) const;
  std::size_t offset(const std::string& name) const;
  void check_sequence(const DialogueSequence& seq) const;

  ToyDecoderConfig config_;
  std::vector<TensorInfo> tensors_;
  std::vector<double> params_;
};

struct DialogueTrainConfig {
  int epochs = 300;
  double lr = 3e-3;
  int batch_size = 10;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct DialogueTraining {
  // Entry 0 is the corpus loss before any update; entry e > 0 is the mean
  // minibatch loss seen during epoch e.
  std::vector<double> loss_curve;
};

DialogueTraining train_dialogue_model(ToyDecoder& model, const std::vector<DialogueSequence>& corpus,
                                      const DialogueTrainConfig& config,
                                      const std::function<void(int, double)>& on_epoch = {});

double corpus_loss(const ToyDecoder& model, const std::vector<DialogueSequence>& corpus);

// Greedy decoding: question from [BOS tgt EOS v_t BOS], then the future
// images and the answer. Each span stops at EOS or `cap` tokens.
QAPair generate_qa(const ToyDecoder& model, const Vocabulary& vocab, const DialogueContext& context,
                   int cap = kSpanTokenCap);

// Training sequence for a (context, QA) pair.
DialogueSequence encode_dialogue(const DialogueContext& context, const QAPair& qa,
                                 const Vocabulary& vocab, std::size_t max_length);

class ToyBackend final : public DialogueBackend {
 public:
  ToyBackend(std::shared_ptr<const ToyDecoder> model, Vocabulary vocab)
      : model_(std::move(model)), vocab_(std::move(vocab)) {}
  QAPair generate(const DialogueContext& context, std::uint64_t) const override {
    return generate_qa(*model_, vocab_, context);
  }
  std::string name() const override { return "toy"; }

 private:
  std::shared_ptr<const ToyDecoder> model_;
  Vocabulary vocab_;
};

}  // namespace vdn
