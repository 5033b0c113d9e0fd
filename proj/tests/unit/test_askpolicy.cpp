#include <doctest.h>

#include "oracles.hpp"
#include "vdn/askpolicy.hpp"
#include "vdn/errors.hpp"

using namespace vdn;

TEST_CASE("trigger probability") {
  CHECK(trigger_probability(1.0, 1.0) == 0.5);
  CHECK(trigger_probability(-3.7, -3.7) == 0.5);
  CHECK(trigger_probability(1.0, 2.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(trigger_probability(1.0, -1e6) < 1e-300);
  CHECK(trigger_probability(1.0, 1e6) == 1.0);
  // Sign convention: increasing in H, decreasing in alpha.
  for (double h = -2.0; h < 2.0; h += 0.25) {
    CHECK(trigger_probability(0.3, h + 0.1) > trigger_probability(0.3, h));
    CHECK(trigger_probability(h + 0.1, 0.3) < trigger_probability(h, 0.3));
  }
}

TEST_CASE("bce loss and gradient") {
  const auto pos = bce_loss_and_gradient(0.8, 0.8, 1);
  CHECK(pos.loss == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(pos.grad_alpha == 0.5);
  CHECK(bce_loss_and_gradient(0.8, 0.8, 0).grad_alpha == -0.5);
  // Saturated inputs stay finite.
  CHECK(std::isfinite(bce_loss_and_gradient(0.0, 800.0, 0).loss));
  CHECK(std::isfinite(bce_loss_and_gradient(0.0, -800.0, 1).loss));
  CHECK_THROWS_AS(bce_loss_and_gradient(0.0, 0.0, 2), InvalidConfig);

  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double alpha = rng.uniform(-3, 3), h = rng.uniform(-3, 3);
    const int label = static_cast<int>(rng.index(2));
    const auto b = bce_loss_and_gradient(alpha, h, label);
    CHECK(std::abs(b.grad_alpha - (label - trigger_probability(alpha, h))) <= 1e-12);
    const double fd = oracle::central_difference(
        [&](const std::vector<double>& x) { return bce_loss_and_gradient(x[0], h, label).loss; },
        {alpha}, 0, 1e-5);
    CHECK(oracle::relative_error(fd, b.grad_alpha) < 1e-6);
  }
}

TEST_CASE("should_ask variants") {
  CHECK(should_ask(AskPolicy::fixed(1.0), 1.3863, 1));
  CHECK_FALSE(should_ask(AskPolicy::fixed(1.0), 1.0, 1));
  CHECK_FALSE(should_ask(AskPolicy::learnable(1.0), 0.2, 3));
  CHECK(should_ask(AskPolicy::learnable(1.0), 1.2, 3));
  CHECK_FALSE(should_ask(AskPolicy::never(), 100.0, 3));

  std::vector<int> fired;
  for (int t = 1; t <= 12; ++t) {
    if (should_ask(AskPolicy::periodic(5), 0.0, t)) fired.push_back(t);
  }
  CHECK(fired == std::vector<int>{5, 10});

  // Learnable boundary is exactly H > alpha-hat.
  Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(-2, 2), h = rng.uniform(-2, 2);
    CHECK(should_ask(AskPolicy::learnable(a), h, 1) == (h > a));
  }
  // Stochastic mode draws against q.
  const auto s = AskPolicy::learnable(1.0, true);
  CHECK(should_ask(s, 1.0, 1, 0.49));
  CHECK_FALSE(should_ask(s, 1.0, 1, 0.51));

  CHECK_THROWS_AS(should_ask(AskPolicy::never(), 0.0, 0), InvalidConfig);
  CHECK_THROWS_AS(AskPolicy::periodic(0), InvalidConfig);
}

TEST_CASE("presets and serialization") {
  CHECK(AskPolicy::preset("fixed-0.9").threshold == 0.9);
  CHECK(AskPolicy::preset("fixed-1.1").variant == AskVariant::Fixed);
  CHECK(AskPolicy::preset("every-6").period == 6);
  CHECK(AskPolicy::preset_names().size() == 6);
  CHECK_THROWS_AS(AskPolicy::preset("every-7"), InvalidConfig);
  for (const auto& p : {AskPolicy::never(), AskPolicy::fixed(0.9), AskPolicy::periodic(4),
                        AskPolicy::learnable(1.25, true)}) {
    const auto back = AskPolicy::from_json(p.to_json());
    CHECK(back.variant == p.variant);
    CHECK(back.name() == p.name());
    CHECK(back.stochastic == p.stochastic);
  }
}

TEST_CASE("train_threshold") {
  Rng rng(21);
  const auto train = oracle::separable_entropy_log<EntropyRecord>(rng, 400);
  const auto held_out = oracle::separable_entropy_log<EntropyRecord>(rng, 400);
  const auto trained = train_threshold(train, 500, 2.0);
  CHECK_FALSE(trained.warning.has_value());
  int correct = 0;
  for (const auto& r : held_out) {
    correct += should_ask(AskPolicy::learnable(trained.alpha), r.entropy, 1) == (r.asked == 1);
  }
  CHECK(correct >= 380);
  CHECK(trained.loss_curve.back() < trained.loss_curve.front());
  CHECK(train_threshold(train, 500, 2.0).alpha == trained.alpha);

  // Convex two-point log: small steps never increase the loss.
  const std::vector<EntropyRecord> two{{0.5, 0, "e", 1}, {1.5, 1, "e", 2}};
  const auto curve = train_threshold(two, 200, 0.5).loss_curve;
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i] <= curve[i - 1]);

  std::vector<EntropyRecord> zeros{{0.4, 0, "e", 1}, {1.7, 0, "e", 2}};
  const auto degenerate = train_threshold(zeros, 10, 0.1);
  REQUIRE(degenerate.warning.has_value());
  CHECK(degenerate.alpha == 1.7);
  std::vector<EntropyRecord> ones{{0.4, 1, "e", 1}, {1.7, 1, "e", 2}};
  CHECK(train_threshold(ones, 10, 0.1).alpha == 0.4);
  CHECK_THROWS_AS(train_threshold({}, 10, 0.1), InvalidConfig);
}

TEST_CASE("entropy record JSON") {
  const EntropyRecord r{1.25, 1, "ep-3", 4};
  const auto back = entropy_record_from_json(entropy_record_to_json(r));
  CHECK(back.entropy == r.entropy);
  CHECK(back.asked == 1);
  CHECK(back.episode == "ep-3");
  CHECK(back.t == 4);
  CHECK_THROWS_AS(entropy_record_from_json({{"H", 1.0}, {"asked", 3}}), FormatError);
}
