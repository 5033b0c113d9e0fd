#include "vdn/askpolicy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vdn/errors.hpp"

namespace vdn {

using nlohmann::json;

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw InvalidConfig(std::string(what) + " must be finite");
}

}  // namespace

double trigger_probability(double alpha, double entropy) { return sigmoid(entropy - alpha); }

BceResult bce_loss_and_gradient(double alpha, double entropy, int label) {
  if (label != 0 && label != 1) throw InvalidConfig("BCE label must be 0 or 1");
  const double z = entropy - alpha;
  const double q = sigmoid(z);
  return {softplus(z) - label * z, static_cast<double>(label) - q};
}

AskPolicy AskPolicy::never() { return {}; }

AskPolicy AskPolicy::fixed(double alpha) {
  require_finite(alpha, "threshold");
  return {AskVariant::Fixed, alpha, 5, false};
}

AskPolicy AskPolicy::periodic(int k) {
  if (k < 1) throw InvalidConfig("period must be >= 1");
  return {AskVariant::Periodic, 1.0, k, false};
}

AskPolicy AskPolicy::learnable(double alpha_hat, bool stochastic) {
  require_finite(alpha_hat, "learned threshold");
  return {AskVariant::Learnable, alpha_hat, 5, stochastic};
}

std::vector<std::string> AskPolicy::preset_names() {
  return {"fixed-0.9", "fixed-1.0", "fixed-1.1", "every-4", "every-5", "every-6"};
}

AskPolicy AskPolicy::preset(const std::string& name) {
  if (name == "fixed-0.9") return fixed(0.9);
  if (name == "fixed-1.0") return fixed(1.0);
  if (name == "fixed-1.1") return fixed(1.1);
  if (name == "every-4") return periodic(4);
  if (name == "every-5") return periodic(5);
  if (name == "every-6") return periodic(6);
  if (name == "never") return never();
  throw InvalidConfig("unknown ask-policy preset '" + name + "'");
}

std::string AskPolicy::name() const {
  std::ostringstream out;
  switch (variant) {
    case AskVariant::Never: return "never";
    case AskVariant::Fixed: out << "fixed(" << threshold << ")"; break;
    case AskVariant::Periodic: out << "every-" << period; break;
    case AskVariant::Learnable: out << "learnable(" << threshold << ")"; break;
  }
  return out.str();
}

json AskPolicy::to_json() const {
  switch (variant) {
    case AskVariant::Never: return {{"variant", "never"}};
    case AskVariant::Fixed: return {{"variant", "fixed"}, {"alpha", threshold}};
    case AskVariant::Periodic: return {{"variant", "periodic"}, {"k", period}};
    case AskVariant::Learnable:
      return {{"variant", "learnable"}, {"alpha", threshold}, {"stochastic", stochastic}};
  }
  return {};
}

AskPolicy AskPolicy::from_json(const json& j) {
  if (j.is_string()) return preset(j.get<std::string>());
  const auto v = j.value("variant", std::string("never"));
  if (v == "never") return never();
  if (v == "fixed") return fixed(j.at("alpha").get<double>());
  if (v == "periodic") return periodic(j.at("k").get<int>());
  if (v == "learnable") return learnable(j.at("alpha").get<double>(), j.value("stochastic", false));
  if (v == "preset") return preset(j.at("name").get<std::string>());
  throw InvalidConfig("unknown ask-policy variant '" + v + "'");
}

bool should_ask(const AskPolicy& policy, double entropy, int t, double uniform) {
  if (t < 1) throw InvalidConfig("time steps start at 1");
  switch (policy.variant) {
    case AskVariant::Never: return false;
    case AskVariant::Fixed: return entropy > policy.threshold;
    case AskVariant::Periodic: return t % policy.period == 0;
    case AskVariant::Learnable: {
      const double q = trigger_probability(policy.threshold, entropy);
      return policy.stochastic ? uniform < q : q > 0.5;
    }
  }
  return false;
}

json entropy_record_to_json(const EntropyRecord& r) {
  return {{"H", r.entropy}, {"asked", r.asked}, {"episode", r.episode}, {"t", r.t}};
}

EntropyRecord entropy_record_from_json(const json& j) {
  EntropyRecord r;
  r.entropy = j.at("H").get<double>();
  r.asked = j.at("asked").get<int>();
  r.episode = j.value("episode", std::string{});
  r.t = j.value("t", 0);
  if (r.asked != 0 && r.asked != 1) throw FormatError("entropy record 'asked' must be 0 or 1");
  return r;
}

ThresholdTraining train_threshold(const std::vector<EntropyRecord>& log, int epochs, double lr) {
  if (log.empty()) throw InvalidConfig("entropy log is empty");
  if (epochs < 0 || !(lr > 0.0)) throw InvalidConfig("need epochs >= 0 and lr > 0");

  ThresholdTraining out;
  double lo = log.front().entropy, hi = lo, sum = 0.0;
  int positives = 0;
  for (const auto& r : log) {
    require_finite(r.entropy, "entropy");
    lo = std::min(lo, r.entropy);
    hi = std::max(hi, r.entropy);
    sum += r.entropy;
    positives += r.asked;
  }
  if (positives == 0 || positives == static_cast<int>(log.size())) {
    // All "never asked": put the boundary above every entropy; all "asked":
    // at the bottom of the range.
    out.alpha = positives == 0 ? hi : lo;
    out.warning = "DegenerateLabels: entropy log has a single label value (" +
                  std::to_string(positives == 0 ? 0 : 1) + "); threshold set to " +
                  std::to_string(out.alpha);
    return out;
  }

  const double n = static_cast<double>(log.size());
  auto mean_loss_and_grad = [&](double alpha) {
    double loss = 0.0, grad = 0.0;
    for (const auto& r : log) {
      const auto b = bce_loss_and_gradient(alpha, r.entropy, r.asked);
      loss += b.loss;
      grad += b.grad_alpha;
    }
    return std::pair{loss / n, grad / n};
  };

  out.alpha = sum / n;
  for (int e = 0; e < epochs; ++e) {
    const auto [loss, grad] = mean_loss_and_grad(out.alpha);
    if (!std::isfinite(loss)) throw DivergedLoss("threshold BCE became non-finite");
    out.loss_curve.push_back(loss);
    out.alpha -= lr * grad;
  }
  out.loss_curve.push_back(mean_loss_and_grad(out.alpha).first);
  return out;
}

}  // namespace vdn
