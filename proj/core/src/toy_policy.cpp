#include "ddr/toy_policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ddr/errors.hpp"
#include "ddr/util.hpp"

namespace ddr {

namespace {
const std::vector<std::string> kReservedTokens = {"<unk>", "<s>", "</s>"};
}

Vocab::Vocab() {
  tokens_ = kReservedTokens;
  reindex();
}

void Vocab::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || split_whitespace(tokens_[i]).size() != 1 ||
        split_whitespace(tokens_[i]).front() != tokens_[i])
      throw std::invalid_argument("vocabulary token '" + tokens_[i] + "' is not a single token");
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved ||
      !std::equal(kReservedTokens.begin(), kReservedTokens.end(), tokens.begin()))
    throw std::invalid_argument("vocabulary must start with the reserved tokens");
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.reindex();
  return v;
}

Vocab Vocab::build(std::span<const std::string> texts) {
  std::set<std::string> unique;
  for (const auto& t : texts)
    for (auto& tok : split_whitespace(t)) unique.insert(std::move(tok));
  std::vector<std::string> tokens = kReservedTokens;
  for (const auto& tok : unique) {
    if (std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) == kReservedTokens.end())
      tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& tok : split_whitespace(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

// ---------------------------------------------------------------------------

bool ToyPolicyParams::all_finite() const {
  return std::isfinite(w_copy) &&
         std::all_of(W.begin(), W.end(), [](double x) { return std::isfinite(x); });
}

void ToyPolicyParams::axpy(double scale, const ToyPolicyParams& other) {
  if (other.vocab_size != vocab_size) throw std::invalid_argument("parameter shape mismatch");
  for (std::size_t i = 0; i < W.size(); ++i) W[i] += scale * other.W[i];
  w_copy += scale * other.w_copy;
}

ContextCounts::ContextCounts(std::span<const TokenId> prompt) {
  std::vector<TokenId> sorted(prompt.begin(), prompt.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    entries_.emplace_back(sorted[i], static_cast<int>(j - i));
    i = j;
  }
}

ContextCounts ContextCounts::from_pairs(std::vector<std::pair<TokenId, int>> pairs) {
  std::map<TokenId, int> merged;
  for (auto [id, c] : pairs) {
    if (c < 0) throw std::invalid_argument("context counts must be non-negative");
    merged[id] += c;
  }
  ContextCounts out;
  for (auto [id, c] : merged)
    if (c > 0) out.entries_.emplace_back(id, c);
  return out;
}

int ContextCounts::count(TokenId id) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), std::make_pair(id, 0));
  return it != entries_.end() && it->first == id ? it->second : 0;
}

namespace {

void check_id(const ToyPolicyParams& params, TokenId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= params.vocab_size)
    throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocab size " +
                            std::to_string(params.vocab_size));
}

double capped(const ToyPolicyParams& params, int count) {
  return static_cast<double>(std::min(count, params.count_cap));
}

void fill_logits(const ToyPolicyParams& params, TokenId prev, const ContextCounts& context,
                 std::vector<double>& out) {
  const std::size_t n = params.vocab_size;
  out.assign(params.W.begin() + static_cast<std::ptrdiff_t>(prev * n),
             params.W.begin() + static_cast<std::ptrdiff_t>((prev + 1) * n));
  for (auto [id, c] : context.entries()) {
    if (static_cast<std::size_t>(id) < n) out[static_cast<std::size_t>(id)] += params.w_copy * capped(params, c);
  }
}

// log-sum-exp of logits/temperature
double log_partition(std::span<const double> logits, double temperature) {
  double mx = -INFINITY;
  for (double l : logits) mx = std::max(mx, l / temperature);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l / temperature - mx);
  return mx + std::log(sum);
}

}  // namespace

std::vector<double> token_logits(const ToyPolicyParams& params, TokenId prev,
                                 const ContextCounts& context) {
  check_id(params, prev);
  for (auto [id, c] : context.entries()) check_id(params, id);
  std::vector<double> out;
  fill_logits(params, prev, context, out);
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  const double lz = log_partition(logits, temperature);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lz;
  return out;
}

double sequence_logprob(const ToyPolicyParams& params, std::span<const TokenId> prompt,
                        std::span<const TokenId> completion, std::vector<double>* token_logprobs) {
  if (completion.empty()) throw std::invalid_argument("completion is empty");
  ContextCounts ctx(prompt);
  for (auto [id, c] : ctx.entries()) check_id(params, id);
  std::vector<double> logits;
  double total = 0.0;
  TokenId prev = Vocab::kBos;
  if (token_logprobs) token_logprobs->clear();
  for (std::size_t step = 0; step <= completion.size(); ++step) {
    const TokenId actual = step < completion.size() ? completion[step] : Vocab::kEos;
    check_id(params, actual);
    fill_logits(params, prev, ctx, logits);
    const double lp = logits[static_cast<std::size_t>(actual)] - log_partition(logits, 1.0);
    if (token_logprobs) token_logprobs->push_back(lp);
    total += lp;
    prev = actual;
  }
  return total;
}

double accumulate_logprob_grad(const ToyPolicyParams& params, std::span<const TokenId> prompt,
                               std::span<const TokenId> completion, double scale,
                               ToyPolicyParams& grad) {
  if (completion.empty()) throw std::invalid_argument("completion is empty");
  if (grad.vocab_size != params.vocab_size) throw std::invalid_argument("gradient shape mismatch");
  ContextCounts ctx(prompt);
  for (auto [id, c] : ctx.entries()) check_id(params, id);
  const std::size_t n = params.vocab_size;
  std::vector<double> logits;
  double total = 0.0;
  TokenId prev = Vocab::kBos;
  for (std::size_t step = 0; step <= completion.size(); ++step) {
    const TokenId actual = step < completion.size() ? completion[step] : Vocab::kEos;
    check_id(params, actual);
    fill_logits(params, prev, ctx, logits);
    const double lz = log_partition(logits, 1.0);
    total += logits[static_cast<std::size_t>(actual)] - lz;

    double* row = grad.W.data() + static_cast<std::size_t>(prev) * n;
    double expected_count = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      const double p = std::exp(logits[v] - lz);
      row[v] -= scale * p;
    }
    for (auto [id, c] : ctx.entries())
      expected_count += std::exp(logits[static_cast<std::size_t>(id)] - lz) * capped(params, c);
    row[actual] += scale;
    grad.w_copy += scale * (capped(params, ctx.count(actual)) - expected_count);
    prev = actual;
  }
  return total;
}

ToyPolicyParams grad_sequence_logprob(const ToyPolicyParams& params,
                                      std::span<const TokenId> prompt,
                                      std::span<const TokenId> completion) {
  auto grad = params.zeros_like();
  accumulate_logprob_grad(params, prompt, completion, 1.0, grad);
  return grad;
}

std::vector<TokenId> sample_ids(const ToyPolicyParams& params, std::span<const TokenId> prompt,
                                double temperature, int max_tokens, std::uint64_t seed) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  ContextCounts ctx(prompt);
  for (auto [id, c] : ctx.entries()) check_id(params, id);
  Rng rng(seed);
  std::vector<double> logits;
  std::vector<TokenId> out;
  TokenId prev = Vocab::kBos;
  for (int step = 0; step < max_tokens; ++step) {
    fill_logits(params, prev, ctx, logits);
    const double lz = log_partition(logits, temperature);
    const double u = rng.uniform();
    double cum = 0.0;
    TokenId chosen = static_cast<TokenId>(logits.size() - 1);
    for (std::size_t v = 0; v < logits.size(); ++v) {
      cum += std::exp(logits[v] / temperature - lz);
      if (u < cum) {
        chosen = static_cast<TokenId>(v);
        break;
      }
    }
    if (chosen == Vocab::kEos) break;
    out.push_back(chosen);
    prev = chosen;
  }
  return out;
}

std::vector<TokenId> greedy_ids(const ToyPolicyParams& params, std::span<const TokenId> prompt,
                                int max_tokens) {
  ContextCounts ctx(prompt);
  for (auto [id, c] : ctx.entries()) check_id(params, id);
  std::vector<double> logits;
  std::vector<TokenId> out;
  TokenId prev = Vocab::kBos;
  for (int step = 0; step < max_tokens; ++step) {
    fill_logits(params, prev, ctx, logits);
    // max_element returns the first maximum, i.e. the lowest id on ties
    const auto best = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == Vocab::kEos) break;
    out.push_back(best);
    prev = best;
  }
  return out;
}

// ---------------------------------------------------------------------------

ToyPolicy::ToyPolicy(Vocab vocab, ToyPolicyParams params)
    : vocab_(std::move(vocab)), params_(std::move(params)) {
  if (params_.vocab_size != vocab_.size() || params_.W.size() != vocab_.size() * vocab_.size())
    throw std::invalid_argument("parameter shape does not match vocabulary size");
}

std::vector<TokenId> ToyPolicy::encode_completion(std::string_view completion) const {
  auto ids = vocab_.encode(completion);
  if (ids.empty()) throw std::invalid_argument("completion is empty after tokenization");
  return ids;
}

double ToyPolicy::sequence_logprob(std::string_view prompt, std::string_view completion,
                                   std::vector<double>* token_logprobs) const {
  return ddr::sequence_logprob(params_, vocab_.encode(prompt), encode_completion(completion),
                               token_logprobs);
}

ToyPolicyParams ToyPolicy::grad_sequence_logprob(std::string_view prompt,
                                                 std::string_view completion) const {
  return ddr::grad_sequence_logprob(params_, vocab_.encode(prompt), encode_completion(completion));
}

std::string ToyPolicy::sample(std::string_view prompt, double temperature, int max_tokens,
                              std::uint64_t seed) const {
  return vocab_.decode(sample_ids(params_, vocab_.encode(prompt), temperature, max_tokens, seed));
}

std::string ToyPolicy::greedy_decode(std::string_view prompt, int max_tokens) const {
  return vocab_.decode(greedy_ids(params_, vocab_.encode(prompt), max_tokens));
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kMagic = "ddr-toy-policy 1";

std::string hexfloat(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw Error("checkpoint: bad number '" + s + "'");
  return v;
}
}  // namespace

std::string checkpoint_to_string(const ToyPolicy& policy) {
  const auto& p = policy.params();
  std::string out(kMagic);
  out += "\nvocab " + std::to_string(policy.vocab().size()) + "\n";
  for (const auto& tok : policy.vocab().tokens()) out += tok + "\n";
  out += "count_cap " + std::to_string(p.count_cap) + "\n";
  out += "w_copy " + hexfloat(p.w_copy) + "\n";
  out += "W\n";
  for (std::size_t r = 0; r < p.vocab_size; ++r) {
    for (std::size_t c = 0; c < p.vocab_size; ++c) {
      if (c) out += ' ';
      out += hexfloat(p.W[r * p.vocab_size + c]);
    }
    out += '\n';
  }
  return out;
}

ToyPolicy checkpoint_from_string(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw Error("checkpoint: bad header");
  std::string key;
  std::size_t n = 0;
  if (!(in >> key >> n) || key != "vocab") throw Error("checkpoint: missing vocab size");
  std::getline(in, line);
  std::vector<std::string> tokens(n);
  for (auto& tok : tokens)
    if (!std::getline(in, tok)) throw Error("checkpoint: truncated vocabulary");
  int cap = 0;
  if (!(in >> key >> cap) || key != "count_cap") throw Error("checkpoint: missing count_cap");
  std::string num;
  if (!(in >> key >> num) || key != "w_copy") throw Error("checkpoint: missing w_copy");
  ToyPolicyParams params(n, parse_double(num), cap);
  if (!(in >> key) || key != "W") throw Error("checkpoint: missing W");
  for (auto& w : params.W) {
    if (!(in >> num)) throw Error("checkpoint: truncated W");
    w = parse_double(num);
  }
  return ToyPolicy(Vocab::from_tokens(std::move(tokens)), std::move(params));
}

void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out << checkpoint_to_string(policy);
}

ToyPolicy load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace ddr
