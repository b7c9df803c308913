#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddr/metrics.hpp"
#include "ddr/toy_policy.hpp"

namespace ddr {

struct TrainConfig {
  double beta = 0.1;
  double learning_rate = 5e-5;
  int epochs = 1;
  /// 0 means full batch.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A context with a preferred and a dispreferred completion.
struct PreferencePair {
  std::string query_id;
  std::string context;
  std::string chosen;
  std::string rejected;
};

/// A context with a supervised target, for the SFT baseline.
struct LabeledExample {
  std::string context;
  std::string target;
};

struct TokenizedPair {
  std::vector<TokenId> prompt;
  std::vector<TokenId> chosen;
  std::vector<TokenId> rejected;
};

struct TokenizedExample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> target;
};

TokenizedPair tokenize(const Vocab& vocab, const PreferencePair& pair);
TokenizedExample tokenize(const Vocab& vocab, const LabeledExample& example);

/// sigma(r+ - r-)
double preference_prob(RewardScore positive, RewardScore negative);

double sigmoid(double x);
/// -log(sigmoid(z)) without overflow.
double neg_log_sigmoid(double z);

/// z = beta * [(log pi(y+) - log ref(y+)) - (log pi(y-) - log ref(y-))]
double dpo_margin(const ToyPolicyParams& policy, const ReferenceSnapshot& reference,
                  const TokenizedPair& pair, double beta);

/// Mean of -log sigma(z) over the batch. Throws NumericError naming the pair
/// when a log-probability is not finite.
double dpo_loss(const ToyPolicyParams& policy, const ReferenceSnapshot& reference,
                std::span<const TokenizedPair> batch, double beta);

/// Gradient of dpo_loss with respect to the policy parameters.
ToyPolicyParams dpo_grad(const ToyPolicyParams& policy, const ReferenceSnapshot& reference,
                         std::span<const TokenizedPair> batch, double beta);

/// Mean negative log-likelihood of the targets.
double sft_loss(const ToyPolicyParams& policy, std::span<const TokenizedExample> batch);
ToyPolicyParams sft_grad(const ToyPolicyParams& policy, std::span<const TokenizedExample> batch);

struct TraceEntry {
  std::size_t step = 0;
  double loss = 0.0;
  /// Batch-mean DPO margin before the step; empty for SFT.
  std::optional<double> mean_margin;
};

struct TrainResult {
  ToyPolicyParams params;
  std::vector<TraceEntry> trace;
};

/// Plain gradient descent. For DPO the reference is the incoming params.
/// Batches are drawn in a seeded shuffled order when batch_size is set.
TrainResult train_dpo(const ToyPolicyParams& initial, std::span<const TokenizedPair> pairs,
                      const TrainConfig& config);
TrainResult train_sft(const ToyPolicyParams& initial, std::span<const TokenizedExample> examples,
                      const TrainConfig& config);

/// {"step":..,"loss":..,"mean_margin":..}
std::string serialize_trace_entry(const TraceEntry& entry);

struct FiniteDiffReport {
  double max_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Central differences with step 1e-4 * max(1, |theta_i|) over every
/// parameter. Per entry the error is |fd - g| / max(|fd|, |g|), falling back
/// to the absolute error when both magnitudes are below 1e-9.
FiniteDiffReport finite_diff_check(const ToyPolicyParams& params,
                                   const std::function<double(const ToyPolicyParams&)>& loss,
                                   const ToyPolicyParams& analytic_grad, double tolerance,
                                   double step = 1e-4);

}  // namespace ddr
