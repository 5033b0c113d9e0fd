#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace vdn {

// q = 1 / (1 + exp(alpha - H)) = sigmoid(H - alpha). Entropies are in nats.
double trigger_probability(double alpha, double entropy);

struct BceResult {
  double loss;
  double grad_alpha;  // dL/d(alpha) = label - q
};

// Binary cross-entropy of q against label, evaluated as softplus(z) - label*z
// with z = H - alpha so it stays finite for saturated q.
BceResult bce_loss_and_gradient(double alpha, double entropy, int label);

enum class AskVariant { Never, Fixed, Periodic, Learnable };

struct AskPolicy {
  AskVariant variant = AskVariant::Never;
  double threshold = 1.0;  // alpha (fixed) or learned alpha-hat (learnable)
  int period = 5;          // k for periodic
  bool stochastic = false; // learnable only: draw Bernoulli(q) instead of q > 0.5

  static AskPolicy never();
  static AskPolicy fixed(double alpha);
  static AskPolicy periodic(int k);
  static AskPolicy learnable(double alpha_hat, bool stochastic = false);

  // Ablation presets: fixed-0.9, fixed-1.0, fixed-1.1, every-4, every-5, every-6.
  static AskPolicy preset(const std::string& name);
  static std::vector<std::string> preset_names();

  std::string name() const;
  nlohmann::json to_json() const;
  static AskPolicy from_json(const nlohmann::json& j);
};

// Decision at time step t >= 1. `uniform` is consumed only by the stochastic
// learnable variant and must lie in [0, 1).
bool should_ask(const AskPolicy& policy, double entropy, int t, double uniform = 0.5);

struct EntropyRecord {
  double entropy = 0.0;
  int asked = 0;
  std::string episode;
  int t = 0;
};

nlohmann::json entropy_record_to_json(const EntropyRecord& r);
EntropyRecord entropy_record_from_json(const nlohmann::json& j);

struct ThresholdTraining {
  double alpha = 0.0;
  std::vector<double> loss_curve;  // mean BCE before each epoch's update, then final
  std::optional<std::string> warning;  // set for single-label logs
};

// Full-batch gradient descent on mean BCE. alpha starts at the mean entropy
// of the log. A log with a single label value returns the matching extreme of
// the observed entropy range and a warning instead of training.
ThresholdTraining train_threshold(const std::vector<EntropyRecord>& log, int epochs, double lr);

}  // namespace vdn
