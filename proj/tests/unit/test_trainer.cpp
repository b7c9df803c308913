#include <cmath>
#include <vector>

#include "ddr/errors.hpp"
#include "ddr/trainer.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace ddr;
using namespace ddr::testing;

namespace {

double margin_of(const ToyPolicyParams& p, const ReferenceSnapshot& ref, std::span<const TokenizedPair> batch,
                 double beta) {
  double z = 0.0;
  for (const auto& pair : batch) z += dpo_margin(p, ref, pair, beta);
  return z / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("preference probability") {
  CHECK(preference_prob({0.5}, {0.5}) == 0.5);
  CHECK(preference_prob({1.0}, {0.0}) == doctest::Approx(0.731059).epsilon(1e-6));
  for (double a : {0.0, 0.3, 1.0})
    for (double b : {0.0, 0.7, 1.0}) CHECK(preference_prob({a}, {b}) + preference_prob({b}, {a}) == doctest::Approx(1.0));
}

TEST_CASE("stable log-sigmoid") {
  CHECK(neg_log_sigmoid(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(neg_log_sigmoid(700.0) >= 0.0);
  CHECK(neg_log_sigmoid(700.0) < 1e-300);
  CHECK(neg_log_sigmoid(-700.0) == doctest::Approx(700.0));
  CHECK(std::isfinite(neg_log_sigmoid(-1e6)));
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
}

TEST_CASE("policy equal to reference gives ln 2 per pair") {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto params = random_params(rng, 8);
    const ReferenceSnapshot ref(params);
    const std::vector<TokenizedPair> batch = {random_pair(rng, 8), random_pair(rng, 8)};
    CHECK(std::abs(dpo_loss(params, ref, batch, 0.1) - std::log(2.0)) <= 1e-12);
    CHECK(dpo_margin(params, ref, batch[0], 0.1) == 0.0);
  }
}

TEST_CASE("hand-computed margin on a three-token vocabulary") {
  // ids 0..2 only; prompt [0, 0], chosen [0], rejected [1]
  ToyPolicyParams p(3, 0.5);
  p.at(1, 0) = 1.0;
  p.at(1, 1) = -1.0;
  p.at(0, 2) = 2.0;
  p.at(1, 2) = 0.5;
  const ToyPolicyParams r(3, 0.5);
  const TokenizedPair pair{{0, 0}, {0}, {1}};
  // copy feature adds 0.5 * 2 to token 0 everywhere
  auto lse = [](double a, double b, double c) { return std::log(std::exp(a) + std::exp(b) + std::exp(c)); };
  const double pi_pos = (1.0 + 1.0 - lse(2.0, -1.0, 0.5)) + (2.0 - lse(1.0, 0.0, 2.0));
  const double pi_neg = (-1.0 - lse(2.0, -1.0, 0.5)) + (0.5 - lse(2.0, -1.0, 0.5));
  const double ref_pos = (1.0 - lse(1.0, 0.0, 0.0)) + (0.0 - lse(1.0, 0.0, 0.0));
  const double ref_neg = (0.0 - lse(1.0, 0.0, 0.0)) + (0.0 - lse(1.0, 0.0, 0.0));
  const double z = 0.1 * ((pi_pos - ref_pos) - (pi_neg - ref_neg));
  const ReferenceSnapshot ref(r);
  CHECK(dpo_margin(p, ref, pair, 0.1) == doctest::Approx(z).epsilon(1e-12));
  const std::vector<TokenizedPair> batch = {pair};
  CHECK(dpo_loss(p, ref, batch, 0.1) == doctest::Approx(std::log1p(std::exp(-z))).epsilon(1e-12));
}

TEST_CASE("gradient scale at zero margin") {
  Rng rng(5);
  const auto params = random_params(rng, 6);
  const ReferenceSnapshot ref(params);
  const auto pair = random_pair(rng, 6);
  const std::vector<TokenizedPair> batch = {pair};
  auto expect = grad_sequence_logprob(params, pair.prompt, pair.chosen);
  expect.axpy(-1.0, grad_sequence_logprob(params, pair.prompt, pair.rejected));
  const auto g = dpo_grad(params, ref, batch, 0.1);
  for (std::size_t i = 0; i < g.parameter_count(); ++i)
    CHECK(g.flat(i) == doctest::Approx(-0.05 * expect.flat(i)).epsilon(1e-12));
}

TEST_CASE("identical completions give zero gradient") {
  Rng rng(6);
  const auto params = random_params(rng, 6);
  const ReferenceSnapshot ref(random_params(rng, 6));
  auto pair = random_pair(rng, 6);
  pair.rejected = pair.chosen;
  const std::vector<TokenizedPair> batch = {pair};
  const auto g = dpo_grad(params, ref, batch, 0.1);
  for (double w : g.W) CHECK(w == doctest::Approx(0.0));
  CHECK(g.w_copy == doctest::Approx(0.0));
}

TEST_CASE("large margins drive the loss to zero") {
  const ToyPolicyParams r(4);
  ToyPolicyParams p(4);
  p.at(Vocab::kBos, 3) = 500.0;
  const std::vector<TokenizedPair> batch = {{{3}, {3}, {0}}};
  const double loss = dpo_loss(p, ReferenceSnapshot(r), batch, 1.0);
  CHECK(std::isfinite(loss));
  CHECK(loss < 1e-100);
}

TEST_CASE("loss is invariant to shifting a logit row") {
  Rng rng(8);
  auto params = random_params(rng, 6);
  const ReferenceSnapshot ref(random_params(rng, 6));
  const std::vector<TokenizedPair> batch = {random_pair(rng, 6), random_pair(rng, 6)};
  const double before = dpo_loss(params, ref, batch, 0.1);
  for (TokenId v = 0; v < 6; ++v) params.at(Vocab::kBos, v) += 3.25;
  CHECK(dpo_loss(params, ref, batch, 0.1) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central differences on a six-token vocabulary") {
  Rng rng(11);
  for (int config = 0; config < 5; ++config) {
    const auto params = random_params(rng, 6, 0.5);
    const ReferenceSnapshot ref(random_params(rng, 6, 0.5));
    std::vector<TokenizedPair> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_pair(rng, 6));
    const auto loss = [&](const ToyPolicyParams& p) { return dpo_loss(p, ref, batch, 0.1); };
    const auto grad = dpo_grad(params, ref, batch, 0.1);
    const auto report = finite_diff_check(params, loss, grad, 1e-6);
    CHECK(report.passed);
    CHECK(report.checked == params.parameter_count());
    CHECK(report.max_error <= 1e-6);

    auto corrupted = grad;
    std::size_t big = 0;
    for (std::size_t i = 0; i < grad.parameter_count(); ++i)
      if (std::abs(grad.flat(i)) > std::abs(grad.flat(big))) big = i;
    corrupted.flat(big) *= 2.0;
    const auto bad = finite_diff_check(params, loss, corrupted, 1e-6);
    CHECK_FALSE(bad.passed);
    CHECK(bad.worst_index == big);
  }
}

TEST_CASE("finite differences fall back to absolute error near zero") {
  ToyPolicyParams p(3);
  auto tiny = p.zeros_like();
  tiny.flat(0) = 1e-10;
  const auto report = finite_diff_check(p, [](const ToyPolicyParams&) { return 1.0; }, tiny, 1e-6);
  CHECK(report.passed);
  CHECK(report.max_error == doctest::Approx(1e-10));
  tiny.flat(0) = 1e-8;
  CHECK_FALSE(finite_diff_check(p, [](const ToyPolicyParams&) { return 1.0; }, tiny, 1e-9).passed);
}

TEST_CASE("SFT loss and its descent") {
  const ToyPolicyParams uniform(4);
  const std::vector<TokenizedExample> one = {{{3}, {3}}};
  CHECK(sft_loss(uniform, one) == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));

  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 10;
  const auto result = train_sft(uniform, one, cfg);
  REQUIRE(result.trace.size() == 10);
  for (std::size_t i = 1; i < result.trace.size(); ++i) CHECK(result.trace[i].loss < result.trace[i - 1].loss);
  CHECK(sft_loss(result.params, one) > 0.0);
  CHECK_FALSE(result.trace[0].mean_margin.has_value());

  Rng rng(4);
  const auto params = random_params(rng, 6);
  const std::vector<TokenizedExample> ex = {{random_ids(rng, 6, 1, 4), random_ids(rng, 6, 1, 3)}};
  CHECK(finite_diff_check(params, [&](const ToyPolicyParams& p) { return sft_loss(p, ex); }, sft_grad(params, ex), 1e-6)
            .passed);
}

TEST_CASE("SFT and DPO both raise the chosen log-probability on a fresh policy") {
  Rng rng(21);
  const ToyPolicyParams fresh(6);
  const auto pair = random_pair(rng, 6);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  const std::vector<TokenizedPair> pairs = {pair};
  const std::vector<TokenizedExample> ex = {{pair.prompt, pair.chosen}};
  const double before = sequence_logprob(fresh, pair.prompt, pair.chosen);
  CHECK(sequence_logprob(train_dpo(fresh, pairs, cfg).params, pair.prompt, pair.chosen) > before);
  CHECK(sequence_logprob(train_sft(fresh, ex, cfg).params, pair.prompt, pair.chosen) > before);
}

TEST_CASE("DPO training loop") {
  Rng rng(13);
  const auto initial = random_params(rng, 6);
  std::vector<TokenizedPair> pairs;
  for (int i = 0; i < 6; ++i) pairs.push_back(random_pair(rng, 6));

  SUBCASE("zero epochs leave the parameters unchanged") {
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto r = train_dpo(initial, pairs, cfg);
    CHECK(r.params == initial);
    CHECK(r.trace.empty());
  }
  SUBCASE("one small step raises the margin of a single pair") {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    const std::vector<TokenizedPair> one = {pairs[0]};
    const auto r = train_dpo(initial, one, cfg);
    REQUIRE(r.trace.size() == 1);
    CHECK(r.trace[0].loss == doctest::Approx(std::log(2.0)));
    CHECK(*r.trace[0].mean_margin == 0.0);
    CHECK(dpo_margin(r.params, ReferenceSnapshot(initial), pairs[0], cfg.beta) > 0.0);
  }
  SUBCASE("mini-batches are seeded and the run is reproducible") {
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = 9;
    const auto a = train_dpo(initial, pairs, cfg);
    const auto b = train_dpo(initial, pairs, cfg);
    CHECK(a.params == b.params);
    CHECK(a.trace.size() == 9);
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].step == i);
      CHECK(serialize_trace_entry(a.trace[i]) == serialize_trace_entry(b.trace[i]));
    }
    cfg.seed = 10;
    CHECK_FALSE(train_dpo(initial, pairs, cfg).params == a.params);
  }
  SUBCASE("full-batch descent raises the mean margin") {
    TrainConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.epochs = 20;
    const auto r = train_dpo(initial, pairs, cfg);
    const ReferenceSnapshot ref(initial);
    CHECK(margin_of(r.params, ref, pairs, cfg.beta) > 0.0);
    CHECK(r.trace.back().loss < r.trace.front().loss);
  }
  SUBCASE("invalid settings") {
    TrainConfig cfg;
    cfg.beta = 0.0;
    CHECK_THROWS_AS(train_dpo(initial, pairs, cfg), ConfigError);
    cfg = {};
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(train_dpo(initial, pairs, cfg), ConfigError);
    CHECK_THROWS_AS(train_dpo(initial, {}, TrainConfig{}), std::invalid_argument);
  }
}

TEST_CASE("non-finite log-probabilities name the pair") {
  ToyPolicyParams p(4);
  p.at(Vocab::kBos, 3) = std::numeric_limits<double>::infinity();
  const std::vector<TokenizedPair> batch = {{{3}, {0}, {3}}, {{3}, {3}, {0}}};
  try {
    dpo_loss(p, ReferenceSnapshot(ToyPolicyParams(4)), batch, 0.1);
    FAIL("no error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("pair 0") != std::string::npos);
  }
}

TEST_CASE("trace entries serialize in a fixed field order") {
  CHECK(serialize_trace_entry({3, 0.5, 0.25}) == R"({"step":3,"loss":0.5,"mean_margin":0.25})");
  CHECK(serialize_trace_entry({0, 1.0, std::nullopt}) == R"({"step":0,"loss":1.0,"mean_margin":null})");
}

TEST_CASE("text pairs tokenize against the vocabulary") {
  const auto vocab = Vocab::build(std::vector<std::string>{"a b c"});
  const auto t = tokenize(vocab, PreferencePair{"q", "a b", "c", "a"});
  CHECK(t.prompt == std::vector<TokenId>{vocab.id("a"), vocab.id("b")});
  CHECK(t.chosen == std::vector<TokenId>{vocab.id("c")});
  CHECK_THROWS(tokenize(vocab, PreferencePair{"q", "a", "", "a"}));
  const auto e = tokenize(vocab, LabeledExample{"a", "b c"});
  CHECK(e.target.size() == 2);
}
