#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ddr/toy_policy.hpp"

namespace ddr {

/// temperature == 0 selects greedy decoding.
struct GenerateRequest {
  std::string prompt;
  double temperature = 0.0;
  int max_tokens = 32;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const GenerateRequest&, const GenerateRequest&) = default;
};

struct LogprobRequest {
  std::string prompt;
  std::string completion;

  void validate() const;
  friend bool operator==(const LogprobRequest&, const LogprobRequest&) = default;
};

struct LogprobResult {
  double logprob = 0.0;
  std::vector<double> token_logprobs;
  friend bool operator==(const LogprobResult&, const LogprobResult&) = default;
};

// ---------------------------------------------------------------------------
// Line protocol. One JSON object per line:
//   {"op":"generate","prompt":..,"temperature":..,"max_tokens":..,"seed":..}
//   {"op":"logprob","prompt":..,"completion":..}
// replies:
//   {"text":..} | {"logprob":..,"token_logprobs":[..]} | {"error":..}

namespace protocol {

using Request = std::variant<GenerateRequest, LogprobRequest>;

struct TextReply {
  std::string text;
  friend bool operator==(const TextReply&, const TextReply&) = default;
};
struct ErrorReply {
  std::string error;
  friend bool operator==(const ErrorReply&, const ErrorReply&) = default;
};
using Reply = std::variant<TextReply, LogprobResult, ErrorReply>;

/// Prefix of error replies that mean "operation not supported".
inline constexpr std::string_view kUnsupported = "unsupported";

std::string encode_request(const Request& request);
std::string encode_reply(const Reply& reply);
/// Throw TransportError (with the raw line as payload) on malformed input.
Request decode_request(std::string_view line);
Reply decode_reply(std::string_view line);

/// Serves one request line against a policy (or the echo stub when `policy`
/// is null). Never throws; problems become error replies.
std::string handle_line(const ToyPolicy* policy, std::string_view line);

}  // namespace protocol

/// Uniform generate/logprob surface over in-process and external models.
class Adapter {
 public:
  virtual ~Adapter() = default;
  virtual std::string generate(const GenerateRequest& request) = 0;
  /// Throws CapabilityError when the backend cannot score text.
  virtual LogprobResult logprob(const LogprobRequest& request) = 0;
  virtual std::string describe() const = 0;
  /// Non-null only for adapters whose parameters can be trained in-process.
  virtual const ToyPolicy* toy_policy() const { return nullptr; }
};

class InProcessAdapter final : public Adapter {
 public:
  explicit InProcessAdapter(std::shared_ptr<const ToyPolicy> policy);
  std::string generate(const GenerateRequest& request) override;
  LogprobResult logprob(const LogprobRequest& request) override;
  std::string describe() const override { return "toy(in-process)"; }
  const ToyPolicy* toy_policy() const override { return policy_.get(); }

 private:
  std::shared_ptr<const ToyPolicy> policy_;
};

/// Talks the line protocol to a child process over its standard streams.
/// Requests are strictly serialized.
class ExternalAdapter final : public Adapter {
 public:
  explicit ExternalAdapter(std::vector<std::string> command,
                           std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~ExternalAdapter() override;
  ExternalAdapter(const ExternalAdapter&) = delete;
  ExternalAdapter& operator=(const ExternalAdapter&) = delete;

  std::string generate(const GenerateRequest& request) override;
  LogprobResult logprob(const LogprobRequest& request) override;
  std::string describe() const override;

  /// Sends one raw line and returns the raw reply line (no parsing).
  std::string roundtrip(const std::string& line);

 private:
  protocol::Reply call(const protocol::Request& request);
  std::string read_line();
  void shutdown();

  std::vector<std::string> command_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::mutex mutex_;
};

}  // namespace ddr
