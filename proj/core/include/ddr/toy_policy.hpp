#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ddr {

using TokenId = int;

/// Token <-> id mapping. Ids 0..2 are reserved for <unk>, <s> and </s>;
/// corpus tokens follow in lexicographic order so that a vocabulary built
/// from the same token set always gets the same ids.
class Vocab {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr std::size_t kReserved = 3;

  Vocab();
  /// Builds from whitespace tokens of the given texts.
  static Vocab build(std::span<const std::string> texts);
  /// Takes an explicit id order; reserved entries must come first.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::vector<TokenId> encode(std::string_view text) const;
  /// Joins tokens with single spaces; stops at the first </s>.
  std::string decode(std::span<const TokenId> ids) const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Bigram logit table plus a capped copy-count feature:
///   logit(v | prev, ctx) = W[prev, v] + w_copy * min(count_ctx(v), count_cap)
/// The same struct doubles as the gradient type.
struct ToyPolicyParams {
  std::size_t vocab_size = 0;
  std::vector<double> W;  // row-major, vocab_size x vocab_size
  double w_copy = 0.0;
  int count_cap = 8;

  ToyPolicyParams() = default;
  explicit ToyPolicyParams(std::size_t n, double copy = 0.0, int cap = 8)
      : vocab_size(n), W(n * n, 0.0), w_copy(copy), count_cap(cap) {}

  double& at(TokenId row, TokenId col) { return W[static_cast<std::size_t>(row) * vocab_size + col]; }
  double at(TokenId row, TokenId col) const {
    return W[static_cast<std::size_t>(row) * vocab_size + col];
  }
  /// Number of scalar parameters (W entries plus w_copy).
  std::size_t parameter_count() const noexcept { return W.size() + 1; }
  /// Flat access: indices < W.size() address W, the last one w_copy.
  double& flat(std::size_t i) { return i < W.size() ? W[i] : w_copy; }
  double flat(std::size_t i) const { return i < W.size() ? W[i] : w_copy; }

  bool all_finite() const;
  ToyPolicyParams zeros_like() const { return ToyPolicyParams(vocab_size, 0.0, count_cap); }
  /// this += scale * other
  void axpy(double scale, const ToyPolicyParams& other);

  friend bool operator==(const ToyPolicyParams&, const ToyPolicyParams&) = default;
};

/// Sparse token counts of a prompt, sorted by id.
class ContextCounts {
 public:
  ContextCounts() = default;
  explicit ContextCounts(std::span<const TokenId> prompt);
  static ContextCounts from_pairs(std::vector<std::pair<TokenId, int>> pairs);

  int count(TokenId id) const;
  const std::vector<std::pair<TokenId, int>>& entries() const noexcept { return entries_; }

 private:
  std::vector<std::pair<TokenId, int>> entries_;
};

std::vector<double> token_logits(const ToyPolicyParams& params, TokenId prev,
                                 const ContextCounts& context);

/// log-softmax of logits/temperature, max-shifted.
std::vector<double> log_softmax(std::span<const double> logits, double temperature = 1.0);

/// Sum of per-token log-probabilities of `completion` followed by </s>.
/// Throws std::invalid_argument for an empty completion.
double sequence_logprob(const ToyPolicyParams& params, std::span<const TokenId> prompt,
                        std::span<const TokenId> completion,
                        std::vector<double>* token_logprobs = nullptr);

/// Adds scale * d(logprob)/d(params) into `grad` and returns the logprob.
double accumulate_logprob_grad(const ToyPolicyParams& params, std::span<const TokenId> prompt,
                               std::span<const TokenId> completion, double scale,
                               ToyPolicyParams& grad);

ToyPolicyParams grad_sequence_logprob(const ToyPolicyParams& params,
                                      std::span<const TokenId> prompt,
                                      std::span<const TokenId> completion);

/// Ancestral sampling; deterministic for a fixed argument tuple. The
/// returned ids exclude the terminating </s>.
std::vector<TokenId> sample_ids(const ToyPolicyParams& params, std::span<const TokenId> prompt,
                                double temperature, int max_tokens, std::uint64_t seed);

/// Argmax decoding, ties to the lowest id.
std::vector<TokenId> greedy_ids(const ToyPolicyParams& params, std::span<const TokenId> prompt,
                                int max_tokens);

/// Vocabulary plus parameters: the text-level face of a toy agent.
class ToyPolicy {
 public:
  ToyPolicy() = default;
  ToyPolicy(Vocab vocab, ToyPolicyParams params);

  const Vocab& vocab() const noexcept { return vocab_; }
  const ToyPolicyParams& params() const noexcept { return params_; }
  ToyPolicyParams& mutable_params() noexcept { return params_; }

  double sequence_logprob(std::string_view prompt, std::string_view completion,
                          std::vector<double>* token_logprobs = nullptr) const;
  ToyPolicyParams grad_sequence_logprob(std::string_view prompt, std::string_view completion) const;
  std::string sample(std::string_view prompt, double temperature, int max_tokens,
                     std::uint64_t seed) const;
  std::string greedy_decode(std::string_view prompt, int max_tokens) const;

  /// Encodes a completion and rejects empty ones.
  std::vector<TokenId> encode_completion(std::string_view completion) const;

  friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;

 private:
  Vocab vocab_;
  ToyPolicyParams params_;
};

/// Frozen copy of a policy's parameters.
class ReferenceSnapshot {
 public:
  explicit ReferenceSnapshot(const ToyPolicyParams& params)
      : params_(std::make_shared<const ToyPolicyParams>(params)) {}
  const ToyPolicyParams& params() const noexcept { return *params_; }

 private:
  std::shared_ptr<const ToyPolicyParams> params_;
};

/// Text checkpoint: header, vocabulary (one token per line), count cap,
/// then w_copy and W in C99 hex-float notation so that load(save(p)) == p
/// bit for bit.
void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy);
ToyPolicy load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_string(const ToyPolicy& policy);
ToyPolicy checkpoint_from_string(std::string_view text);

}  // namespace ddr
