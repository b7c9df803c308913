#include "ddr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddr/errors.hpp"
#include "ddr/util.hpp"
#include "json.hpp"

namespace ddr {

void TrainConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
}

TokenizedPair tokenize(const Vocab& vocab, const PreferencePair& pair) {
  TokenizedPair t{vocab.encode(pair.context), vocab.encode(pair.chosen), vocab.encode(pair.rejected)};
  if (t.chosen.empty() || t.rejected.empty())
    throw std::invalid_argument("preference pair for '" + pair.query_id + "' has an empty completion");
  return t;
}

TokenizedExample tokenize(const Vocab& vocab, const LabeledExample& example) {
  TokenizedExample t{vocab.encode(example.context), vocab.encode(example.target)};
  if (t.target.empty()) throw std::invalid_argument("labeled example has an empty target");
  return t;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double neg_log_sigmoid(double z) {
  // softplus(-z) = max(-z, 0) + log1p(exp(-|z|))
  return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double preference_prob(RewardScore positive, RewardScore negative) {
  return sigmoid(positive.value - negative.value);
}

namespace {

struct PairLogprobs {
  double chosen = 0.0;
  double rejected = 0.0;
};

PairLogprobs pair_logprobs(const ToyPolicyParams& params, const TokenizedPair& pair, std::size_t index) {
  PairLogprobs lp{sequence_logprob(params, pair.prompt, pair.chosen),
                  sequence_logprob(params, pair.prompt, pair.rejected)};
  if (!std::isfinite(lp.chosen) || !std::isfinite(lp.rejected))
    throw NumericError("non-finite log-probability in pair " + std::to_string(index));
  return lp;
}

double margin_from(const PairLogprobs& policy, const PairLogprobs& ref, double beta) {
  return beta * ((policy.chosen - ref.chosen) - (policy.rejected - ref.rejected));
}

// Loss and gradient for a batch given cached reference log-probabilities.
double dpo_step(const ToyPolicyParams& policy, std::span<const TokenizedPair> pairs,
                std::span<const PairLogprobs> ref, std::span<const std::size_t> batch, double beta,
                ToyPolicyParams* grad, double* mean_margin) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0, margin_sum = 0.0;
  for (std::size_t idx : batch) {
    const auto& pair = pairs[idx];
    const PairLogprobs lp = pair_logprobs(policy, pair, idx);
    const double z = margin_from(lp, ref[idx], beta);
    if (grad) {
      // d/dtheta of -log sigma(z) = -sigma(-z) * dz/dtheta
      const double coeff = -sigmoid(-z) * beta * inv;
      accumulate_logprob_grad(policy, pair.prompt, pair.chosen, coeff, *grad);
      accumulate_logprob_grad(policy, pair.prompt, pair.rejected, -coeff, *grad);
    }
    loss += neg_log_sigmoid(z);
    margin_sum += z;
  }
  if (mean_margin) *mean_margin = margin_sum * inv;
  return loss * inv;
}

std::vector<PairLogprobs> reference_logprobs(const ToyPolicyParams& ref, std::span<const TokenizedPair> pairs) {
  std::vector<PairLogprobs> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back(pair_logprobs(ref, pairs[i], i));
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

double dpo_margin(const ToyPolicyParams& policy, const ReferenceSnapshot& reference,
                  const TokenizedPair& pair, double beta) {
  return margin_from(pair_logprobs(policy, pair, 0), pair_logprobs(reference.params(), pair, 0), beta);
}

double dpo_loss(const ToyPolicyParams& policy, const ReferenceSnapshot& reference,
                std::span<const TokenizedPair> batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const auto ref = reference_logprobs(reference.params(), batch);
  const auto idx = all_indices(batch.size());
  return dpo_step(policy, batch, ref, idx, beta, nullptr, nullptr);
}

ToyPolicyParams dpo_grad(const ToyPolicyParams& policy, const ReferenceSnapshot& reference,
                         std::span<const TokenizedPair> batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const auto ref = reference_logprobs(reference.params(), batch);
  const auto idx = all_indices(batch.size());
  auto grad = policy.zeros_like();
  dpo_step(policy, batch, ref, idx, beta, &grad, nullptr);
  return grad;
}

namespace {
double sft_step(const ToyPolicyParams& policy, std::span<const TokenizedExample> examples,
                std::span<const std::size_t> batch, ToyPolicyParams* grad) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t idx : batch) {
    const auto& ex = examples[idx];
    const double lp = grad ? accumulate_logprob_grad(policy, ex.prompt, ex.target, -inv, *grad)
                           : sequence_logprob(policy, ex.prompt, ex.target);
    if (!std::isfinite(lp)) throw NumericError("non-finite log-probability in example " + std::to_string(idx));
    loss -= lp;
  }
  return loss * inv;
}
}  // namespace

double sft_loss(const ToyPolicyParams& policy, std::span<const TokenizedExample> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const auto idx = all_indices(batch.size());
  return sft_step(policy, batch, idx, nullptr);
}

ToyPolicyParams sft_grad(const ToyPolicyParams& policy, std::span<const TokenizedExample> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const auto idx = all_indices(batch.size());
  auto grad = policy.zeros_like();
  sft_step(policy, batch, idx, &grad);
  return grad;
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const TrainConfig& config, int epoch) {
  auto order = all_indices(n);
  const std::size_t size = config.batch_size == 0 ? n : std::min(config.batch_size, n);
  if (size < n) {
    Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + size)));
  return batches;
}

void check_loss(double loss, std::size_t step) {
  if (!std::isfinite(loss)) throw NumericError("loss is not finite at step " + std::to_string(step));
}

}  // namespace

TrainResult train_dpo(const ToyPolicyParams& initial, std::span<const TokenizedPair> pairs,
                      const TrainConfig& config) {
  config.validate();
  if (pairs.empty()) throw std::invalid_argument("training set is empty");
  const ReferenceSnapshot reference(initial);
  const auto ref = reference_logprobs(reference.params(), pairs);

  TrainResult result{initial, {}};
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(pairs.size(), config, epoch)) {
      auto grad = result.params.zeros_like();
      double margin = 0.0;
      const double loss = dpo_step(result.params, pairs, ref, batch, config.beta, &grad, &margin);
      check_loss(loss, step);
      result.trace.push_back({step, loss, margin});
      result.params.axpy(-config.learning_rate, grad);
      if (!result.params.all_finite())
        throw NumericError("parameters became non-finite at step " + std::to_string(step));
      ++step;
    }
  }
  return result;
}

TrainResult train_sft(const ToyPolicyParams& initial, std::span<const TokenizedExample> examples,
                      const TrainConfig& config) {
  config.validate();
  if (examples.empty()) throw std::invalid_argument("training set is empty");
  TrainResult result{initial, {}};
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(examples.size(), config, epoch)) {
      auto grad = result.params.zeros_like();
      const double loss = sft_step(result.params, examples, batch, &grad);
      check_loss(loss, step);
      result.trace.push_back({step, loss, std::nullopt});
      result.params.axpy(-config.learning_rate, grad);
      ++step;
    }
  }
  return result;
}

std::string serialize_trace_entry(const TraceEntry& entry) {
  nlohmann::ordered_json obj;
  obj["step"] = entry.step;
  obj["loss"] = entry.loss;
  obj["mean_margin"] = entry.mean_margin ? nlohmann::ordered_json(*entry.mean_margin) : nullptr;
  return obj.dump();
}

FiniteDiffReport finite_diff_check(const ToyPolicyParams& params,
                                   const std::function<double(const ToyPolicyParams&)>& loss,
                                   const ToyPolicyParams& analytic_grad, double tolerance,
                                   double step) {
  constexpr double kAbsFloor = 1e-9;
  FiniteDiffReport report;
  ToyPolicyParams probe = params;
  for (std::size_t i = 0; i < params.parameter_count(); ++i) {
    const double x = params.flat(i);
    const double h = step * std::max(1.0, std::abs(x));
    probe.flat(i) = x + h;
    const double up = loss(probe);
    probe.flat(i) = x - h;
    const double down = loss(probe);
    probe.flat(i) = x;
    const double fd = (up - down) / (2.0 * h);
    const double g = analytic_grad.flat(i);
    const double scale = std::max(std::abs(fd), std::abs(g));
    const double err = scale < kAbsFloor ? std::abs(fd - g) : std::abs(fd - g) / scale;
    if (err > report.max_error) {
      report.max_error = err;
      report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = report.max_error <= tolerance;
  return report;
}

}  // namespace ddr
